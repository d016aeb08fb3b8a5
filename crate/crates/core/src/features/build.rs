use log::warn;
use serde::{Deserialize, Serialize};

use super::stats::{
    csi_drift, csi_entropy, neighbor_stats, DerivedStats, DerivedStatsPlan, LinkChannels, F_NBR,
    NEIGHBOR_STAT_NAMES,
};
use crate::error::{Error, Result};
use crate::split::{Split, SplitBoundaries};
use crate::telemetry::{Dataset, NodeSeries};
use crate::topology::{metadata_vector, star_subgraph, METADATA_DIM};

pub const RAW_NAMES: [&str; 11] = [
    "csi_amp_mean",
    "csi_amp_std",
    "csi_drift",
    "csi_entropy",
    "snr_db",
    "snr_delta",
    "latency_smoothed",
    "per",
    "per_delta",
    "tx_count",
    "time_since_last_tx",
];
pub const F_BASE: usize = RAW_NAMES.len();

/// Raw columns that get shape statistics, by index into [`RAW_NAMES`].
pub const DERIVED_CHANNELS: [usize; 5] = [0, 4, 6, 7, 2];
pub const F_DERIVED: usize = DERIVED_CHANNELS.len() * 5;

/// Input ablation switches. Disabled blocks are dropped, not zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureFlags {
    pub derived: bool,
    pub neighbor: bool,
    pub metadata: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        FeatureFlags {
            derived: true,
            neighbor: true,
            metadata: true,
        }
    }
}

impl FeatureFlags {
    pub fn f_raw(&self) -> usize {
        if self.derived {
            F_BASE + F_DERIVED
        } else {
            F_BASE
        }
    }

    pub fn f_meta(&self) -> usize {
        if self.metadata {
            METADATA_DIM
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Window length `W`.
    pub window: usize,
    /// Trailing length for shape and neighbor statistics.
    pub stats_window: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub entropy_bins: usize,
    pub entropy_eps: f64,
    pub latency_smoothing: usize,
    pub flags: FeatureFlags,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 9,
            stats_window: 9,
            train_stride: 1,
            eval_stride: 1,
            entropy_bins: 16,
            entropy_eps: 1e-9,
            latency_smoothing: 5,
            flags: FeatureFlags::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("features: {m}")));
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.stats_window < 4 {
            return bad("stats_window must be at least 4");
        }
        if self.train_stride < 1 || self.eval_stride < 1 {
            return bad("strides must be at least 1");
        }
        if self.entropy_bins < 2 || self.entropy_eps <= 0.0 {
            return bad("entropy needs at least 2 bins and eps > 0");
        }
        if self.latency_smoothing < 1 {
            return bad("latency_smoothing must be at least 1");
        }
        Ok(())
    }

    pub fn stride(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_stride,
            Split::Val | Split::Test => self.eval_stride,
        }
    }
}

/// Unnormalized `T x 11` base features of one node, timestep-major.
pub fn base_features(s: &NodeSeries, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let total = s.len();
    let mut out = Vec::with_capacity(total * F_BASE);
    let mut lat_sum = 0.0;
    let mut amps = vec![0.0; s.n_sub];
    for t in 0..total {
        let h = s.csi_at(t);
        for (a, c) in amps.iter_mut().zip(h) {
            *a = c.norm();
        }
        let n = amps.len() as f64;
        let mean = amps.iter().sum::<f64>() / n;
        let std = (amps.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        let drift = if t == 0 { 0.0 } else { csi_drift(h, s.csi_at(t - 1))? };
        let entropy = csi_entropy(&amps, cfg.entropy_bins, cfg.entropy_eps)?;
        lat_sum += s.latency_ms[t];
        if t >= cfg.latency_smoothing {
            lat_sum -= s.latency_ms[t - cfg.latency_smoothing];
        }
        let lat_smoothed = lat_sum / (t + 1).min(cfg.latency_smoothing) as f64;
        let prev = t.saturating_sub(1);
        out.extend_from_slice(&[
            mean,
            std,
            drift,
            entropy,
            s.snr_db[t],
            s.snr_db[t] - s.snr_db[prev],
            lat_smoothed,
            s.per[t],
            s.per[t] - s.per[prev],
            s.tx_count[t],
            s.time_since_last_tx[t] as f64,
        ]);
    }
    Ok(out)
}

/// `T x 25` shape statistics over trailing windows of the selected base
/// columns, grouped by channel.
pub fn derived_features(base: &[f64], total: usize, stats_window: usize) -> Result<Vec<f64>> {
    let mut plan = DerivedStatsPlan::new(stats_window)?;
    let mut out = vec![0.0; total * F_DERIVED];
    let mut win = Vec::with_capacity(stats_window);
    for (c, &col) in DERIVED_CHANNELS.iter().enumerate() {
        let series: Vec<f64> = (0..total).map(|t| base[t * F_BASE + col]).collect();
        for t in 0..total {
            super::stats::trailing(&series, t, stats_window, &mut win);
            let st = plan.compute(&win)?.to_array();
            out[t * F_DERIVED + c * 5..t * F_DERIVED + c * 5 + 5].copy_from_slice(&st);
        }
    }
    Ok(out)
}

fn link_channels(base: &[f64], total: usize) -> LinkChannels {
    let col = |c: usize| (0..total).map(|t| base[t * F_BASE + c]).collect();
    LinkChannels {
        latency: col(6),
        snr: col(4),
        per: col(7),
        csi_drift: col(2),
    }
}

pub fn raw_column_names(flags: &FeatureFlags) -> Vec<String> {
    let mut names: Vec<String> = RAW_NAMES.iter().map(|s| s.to_string()).collect();
    if flags.derived {
        for &c in &DERIVED_CHANNELS {
            for st in DerivedStats::NAMES {
                names.push(format!("{}_{st}", RAW_NAMES[c]));
            }
        }
    }
    names
}

pub fn neighbor_column_names(k: usize) -> Vec<String> {
    (0..k)
        .flat_map(|j| NEIGHBOR_STAT_NAMES.iter().map(move |n| format!("nbr{j}_{n}")))
        .collect()
}

/// Per-column affine map fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    /// Fits on the rows listed in `rows` of a `n x width` row-major matrix.
    /// Flat columns get unit scale.
    pub fn fit(data: &[f64], width: usize, rows: impl Iterator<Item = usize> + Clone) -> Self {
        let mut mean = vec![0.0; width];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&data[r * width..(r + 1) * width]) {
                *m += v;
            }
            n += 1;
        }
        let nf = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(&data[r * width..(r + 1) * width]) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / nf).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        ZScore { mean, std }
    }

    pub fn apply(&self, data: &mut [f64]) {
        let w = self.mean.len();
        for row in data.chunks_mut(w) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// All model inputs of one federated client over the full timeline,
/// normalized with statistics from its own training segment.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    pub ego: usize,
    /// Neighbor ids in star order; empty when the neighbor block is off.
    pub neighbors: Vec<usize>,
    pub total: usize,
    pub f_raw: usize,
    /// `T x f_raw`.
    pub raw: Vec<f64>,
    /// `T x K x F_NBR`.
    pub nbr: Vec<f64>,
    pub meta: Vec<f64>,
    pub labels: Vec<u8>,
    pub window: usize,
    pub bounds: SplitBoundaries,
    /// Window start steps per split.
    pub starts: [Vec<usize>; 3],
    pub raw_norm: ZScore,
    pub nbr_norm: ZScore,
}

/// One model input, materialized from a [`ClientData`].
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub ego: usize,
    pub start: usize,
    pub split: Split,
    pub w: usize,
    pub k: usize,
    pub f_raw: usize,
    /// `W x f_raw`.
    pub x_raw: Vec<f64>,
    /// `W x K x F_NBR`.
    pub x_nbr: Vec<f64>,
    pub meta: Vec<f64>,
    pub labels: Vec<u8>,
}

impl WindowSample {
    pub fn seq_label(&self) -> u8 {
        self.labels.iter().any(|&l| l == 1) as u8
    }
}

fn split_index(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

impl ClientData {
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    pub fn starts(&self, split: Split) -> &[usize] {
        &self.starts[split_index(split)]
    }

    pub fn n_windows(&self, split: Split) -> usize {
        self.starts(split).len()
    }

    pub fn raw_row(&self, t: usize) -> &[f64] {
        &self.raw[t * self.f_raw..(t + 1) * self.f_raw]
    }

    /// Features of neighbor `j` at step `t`.
    pub fn nbr_row(&self, t: usize, j: usize) -> &[f64] {
        let k = self.k();
        let o = (t * k + j) * F_NBR;
        &self.nbr[o..o + F_NBR]
    }

    pub fn sample(&self, split: Split, start: usize) -> WindowSample {
        let w = self.window;
        let k = self.k();
        WindowSample {
            ego: self.ego,
            start,
            split,
            w,
            k,
            f_raw: self.f_raw,
            x_raw: self.raw[start * self.f_raw..(start + w) * self.f_raw].to_vec(),
            x_nbr: self.nbr[start * k * F_NBR..(start + w) * k * F_NBR].to_vec(),
            meta: self.meta.clone(),
            labels: self.labels[start..start + w].to_vec(),
        }
    }

    pub fn samples(&self, split: Split) -> Vec<WindowSample> {
        self.starts(split).iter().map(|&s| self.sample(split, s)).collect()
    }

    /// Labels of the training timesteps covered by windows, each once.
    pub fn train_labels(&self) -> &[u8] {
        match (self.starts(Split::Train).first(), self.starts(Split::Train).last()) {
            (Some(&a), Some(&b)) => &self.labels[a..b + self.window],
            _ => &[],
        }
    }
}

fn window_starts(seg: std::ops::Range<usize>, w: usize, stride: usize, ego: usize, split: Split) -> Vec<usize> {
    if seg.len() < w {
        warn!(
            "node {ego}: {} segment has {} steps, shorter than the window {w}; no windows",
            split.label(),
            seg.len()
        );
        return Vec::new();
    }
    (seg.start..=seg.end - w).step_by(stride).collect()
}

/// Per-node unnormalized base and derived features, shared by all clients
/// that read a node as ego or neighbor.
pub struct NodeFeatures {
    pub base: Vec<f64>,
    pub derived: Vec<f64>,
    pub links: LinkChannels,
}

pub fn node_features(s: &NodeSeries, cfg: &FeatureConfig) -> Result<NodeFeatures> {
    let base = base_features(s, cfg)?;
    let derived = if cfg.flags.derived {
        derived_features(&base, s.len(), cfg.stats_window)?
    } else {
        Vec::new()
    };
    let links = link_channels(&base, s.len());
    Ok(NodeFeatures {
        base,
        derived,
        links,
    })
}

pub fn build_client(
    ds: &Dataset,
    nodes: &[NodeFeatures],
    ego: usize,
    cfg: &FeatureConfig,
) -> Result<ClientData> {
    cfg.validate()?;
    let total = ds.timesteps();
    let star = star_subgraph(&ds.topology, ego)?;
    let bounds = ds.split.boundaries(total)?;
    let flags = cfg.flags;
    let f_raw = flags.f_raw();

    let me = &nodes[ego];
    let mut raw = Vec::with_capacity(total * f_raw);
    for t in 0..total {
        raw.extend_from_slice(&me.base[t * F_BASE..(t + 1) * F_BASE]);
        if flags.derived {
            raw.extend_from_slice(&me.derived[t * F_DERIVED..(t + 1) * F_DERIVED]);
        }
    }
    let neighbors = if flags.neighbor {
        star.neighbors.clone()
    } else {
        Vec::new()
    };
    let k = neighbors.len();
    let mut nbr = Vec::with_capacity(total * k * F_NBR);
    for t in 0..total {
        for &j in &neighbors {
            nbr.extend_from_slice(&neighbor_stats(
                &me.links,
                &[&nodes[j].links],
                t,
                cfg.stats_window,
            ));
        }
    }

    let raw_norm = ZScore::fit(&raw, f_raw, bounds.train.clone());
    raw_norm.apply(&mut raw);
    // Neighbor columns share one scaler across neighbor slots.
    let nbr_rows = bounds.train.clone().flat_map(|t| (0..k).map(move |j| t * k + j));
    let nbr_norm = ZScore::fit(&nbr, F_NBR, nbr_rows);
    nbr_norm.apply(&mut nbr);

    let meta = if flags.metadata {
        metadata_vector(ds.topology.node(ego)?).to_vec()
    } else {
        Vec::new()
    };
    let w = cfg.window;
    let starts = Split::ALL.map(|s| window_starts(bounds.segment(s), w, cfg.stride(s), ego, s));
    let data = ClientData {
        ego,
        neighbors,
        total,
        f_raw,
        raw,
        nbr,
        meta,
        labels: ds.series[ego].label.clone(),
        window: w,
        bounds,
        starts,
        raw_norm,
        nbr_norm,
    };
    for v in data.raw.iter().chain(&data.nbr) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("features of node {ego}")));
        }
    }
    Ok(data)
}

/// Client data for every wireless node, ascending by id.
pub fn build_clients(ds: &Dataset, cfg: &FeatureConfig) -> Result<Vec<ClientData>> {
    let nodes = ds
        .series
        .iter()
        .map(|s| node_features(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    ds.topology
        .wireless_nodes()
        .into_iter()
        .map(|ego| build_client(ds, &nodes, ego, cfg))
        .collect()
}

/// All windows of all clients, sorted by node id then start.
pub fn make_windows(ds: &Dataset, cfg: &FeatureConfig) -> Result<Vec<WindowSample>> {
    let clients = build_clients(ds, cfg)?;
    let mut out = Vec::new();
    for c in &clients {
        let mut per_client: Vec<WindowSample> =
            Split::ALL.iter().flat_map(|&s| c.samples(s)).collect();
        per_client.sort_by_key(|w| w.start);
        out.extend(per_client);
    }
    Ok(out)
}

const _: () = assert!(F_BASE + F_DERIVED == 36);
