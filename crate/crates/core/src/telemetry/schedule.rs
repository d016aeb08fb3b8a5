use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;
use rand_distr::Exp1;
use rand_chacha::ChaCha8Rng;

use super::config::{AttackConfig, BenignConfig};
use crate::error::{Error, Result};
use crate::split::SplitBoundaries;
use crate::topology::{star_subgraph, GridTopology, Layer, Role};

/// One attack on one node. `end` is exclusive; the first `ramp` steps of
/// the window ramp the perturbation linearly up to full strength.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttackWindow {
    pub node: usize,
    pub start: usize,
    pub end: usize,
    pub ramp: usize,
}

impl AttackWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Perturbation intensity in `[0, 1]` at absolute step `t`.
    pub fn intensity(&self, t: usize) -> f64 {
        if t < self.start || t >= self.end {
            0.0
        } else {
            ((t - self.start + 1) as f64 / self.ramp as f64).min(1.0)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttackSchedule {
    /// Sorted by node, then start.
    pub windows: Vec<AttackWindow>,
}

impl AttackSchedule {
    pub fn for_node(&self, node: usize) -> impl Iterator<Item = &AttackWindow> {
        self.windows.iter().filter(move |w| w.node == node)
    }

    pub fn targeted_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.windows.iter().map(|w| w.node).collect();
        v.dedup();
        v
    }

    pub fn intensity(&self, node: usize, t: usize) -> f64 {
        self.for_node(node).map(|w| w.intensity(t)).fold(0.0, f64::max)
    }

    pub fn label(&self, node: usize, t: usize) -> u8 {
        self.for_node(node).any(|w| (w.start..w.end).contains(&t)) as u8
    }

    pub fn intensity_series(&self, node: usize, total: usize) -> Vec<f64> {
        let mut r = vec![0.0; total];
        for w in self.for_node(node) {
            for (t, v) in r.iter_mut().enumerate().take(w.end.min(total)).skip(w.start) {
                *v = w.intensity(t);
            }
        }
        r
    }

    /// Fraction of labeled cells over the timelines of targeted nodes.
    pub fn coverage(&self, total: usize) -> f64 {
        let nodes = self.targeted_nodes();
        if nodes.is_empty() {
            return 0.0;
        }
        let cells: usize = self.windows.iter().map(|w| w.len()).sum();
        cells as f64 / (nodes.len() * total) as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("node\tstart\tend\tramp\n");
        for w in &self.windows {
            writeln!(s, "{}\t{}\t{}\t{}", w.node, w.start, w.end, w.ramp).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("node\tstart\tend\tramp") {
            return Err(Error::Format("schedule header missing".into()));
        }
        let mut windows = Vec::new();
        for line in lines {
            let f: Vec<usize> = line
                .split('\t')
                .map(|v| v.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("bad schedule record {line:?}")))?;
            let [node, start, end, ramp] = f[..] else {
                return Err(Error::Format(format!("bad schedule record {line:?}")));
            };
            if end <= start || ramp == 0 {
                return Err(Error::Format(format!("bad schedule record {line:?}")));
            }
            windows.push(AttackWindow {
                node,
                start,
                end,
                ramp,
            });
        }
        Ok(AttackSchedule { windows })
    }
}

/// Splits `total` into `n` parts of at least `floor`, proportional to random
/// weights. Irregular weights are exponential, otherwise uniform in [0.5, 1.5).
fn random_parts(rng: &mut ChaCha8Rng, total: usize, n: usize, floor: usize, irregular: bool) -> Vec<usize> {
    debug_assert!(n * floor <= total);
    let spare = total - n * floor;
    let weights: Vec<f64> = (0..n)
        .map(|_| if irregular { rng.sample(Exp1) } else { rng.random_range(0.5..1.5) })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut parts: Vec<usize> = weights
        .iter()
        .map(|w| floor + (spare as f64 * w / wsum).floor() as usize)
        .collect();
    let mut rest = total - parts.iter().sum::<usize>();
    let mut i = 0;
    while rest > 0 {
        parts[i % n] += 1;
        rest -= 1;
        i += 1;
    }
    parts
}

/// Places attack windows inside one segment so that exactly
/// `round(fraction * len)` steps are covered.
fn schedule_segment(
    rng: &mut ChaCha8Rng,
    node: usize,
    seg: Range<usize>,
    fraction: f64,
    cfg: &AttackConfig,
) -> Vec<AttackWindow> {
    let len = seg.len();
    let target = ((fraction * len as f64).round() as usize).min(len);
    if target == 0 {
        return Vec::new();
    }
    let mean_len = (cfg.min_len + cfg.max_len) as f64 / 2.0;
    let free = len - target;
    // Interior gaps must be at least one step so windows never merge.
    let mut n = ((target as f64 / mean_len).round() as usize).max(1);
    n = n.min(target).min(free + 1);
    let floor = cfg.min_len.min(target / n);
    let lengths = random_parts(rng, target, n, floor, false);
    // n + 1 gaps: leading, n - 1 interior (each >= 1), trailing.
    // Exponential gap weights keep window positions independent across nodes.
    let extra = random_parts(rng, free - (n - 1), n + 1, 0, true);
    let mut windows = Vec::with_capacity(n);
    let mut t = seg.start + extra[0];
    for (i, &l) in lengths.iter().enumerate() {
        windows.push(AttackWindow {
            node,
            start: t,
            end: t + l,
            ramp: cfg.ramp_len.min(l),
        });
        t += l + 1 + extra[i + 1];
    }
    windows
}

/// Attack windows on every wireless node, confined to the train, val and
/// test segments so the buffers stay attack-free.
pub fn schedule_attacks(
    topo: &GridTopology,
    cfg: &AttackConfig,
    bounds: &SplitBoundaries,
    total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AttackSchedule> {
    // Buffers hold no attacks, so segments are filled a little denser to
    // hit the target over the whole timeline.
    let segments = [bounds.train.clone(), bounds.val.clone(), bounds.test.clone()];
    let usable: usize = segments.iter().map(|s| s.len()).sum();
    let fraction = (cfg.coverage * total as f64 / usable as f64).min(1.0);
    let mut windows = Vec::new();
    for node in topo.wireless_nodes() {
        for seg in segments.iter().cloned() {
            windows.extend(schedule_segment(rng, node, seg, fraction, cfg));
        }
    }
    let schedule = AttackSchedule { windows };
    let got = schedule.coverage(total);
    if (got - cfg.coverage).abs() > 0.05 {
        return Err(Error::Schedule(format!(
            "coverage {got:.3} is out of reach of target {:.3} with {total} steps",
            cfg.coverage
        )));
    }
    Ok(schedule)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenignKind {
    /// Common-mode noise-floor rise over a neighborhood.
    Interference,
    /// Backhaul congestion on an aggregation node.
    Congestion,
    /// Moving scatterer near a HAN device.
    Scatter,
}

impl BenignKind {
    pub fn label(self) -> &'static str {
        match self {
            BenignKind::Interference => "interference",
            BenignKind::Congestion => "congestion",
            BenignKind::Scatter => "scatter",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "interference" => Ok(BenignKind::Interference),
            "congestion" => Ok(BenignKind::Congestion),
            "scatter" => Ok(BenignKind::Scatter),
            _ => Err(Error::Format(format!("unknown event kind {s:?}"))),
        }
    }
}

/// A benign disturbance with trapezoidal envelope. Never labeled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenignEvent {
    pub kind: BenignKind,
    /// Affected nodes, ascending.
    pub nodes: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub ramp: usize,
}

impl BenignEvent {
    pub fn envelope(&self, t: usize) -> f64 {
        if t < self.start || t >= self.end {
            return 0.0;
        }
        let up = (t - self.start + 1) as f64 / self.ramp as f64;
        let down = (self.end - t) as f64 / self.ramp as f64;
        up.min(down).min(1.0)
    }
}

fn poisson_events(
    rng: &mut ChaCha8Rng,
    rate_per_1000: f64,
    total: usize,
    cfg: &BenignConfig,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if rate_per_1000 <= 0.0 {
        return out;
    }
    let p = (rate_per_1000 / 1000.0).min(1.0);
    let mut t = 0;
    while t < total {
        if rng.random::<f64>() < p {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let end = (t + len).min(total);
            out.push((t, end));
            t = end + 1;
        } else {
            t += 1;
        }
    }
    out
}

pub fn schedule_benign(
    topo: &GridTopology,
    cfg: &BenignConfig,
    total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BenignEvent>> {
    let mut events = Vec::new();
    let ramp = cfg.ramp_len.max(1);
    for center in topo.wireless_nodes() {
        let star = star_subgraph(topo, center)?;
        let mut nodes = vec![center];
        nodes.extend(star.neighbors.iter().copied());
        nodes.sort_unstable();
        for (start, end) in poisson_events(rng, cfg.interference_rate, total, cfg) {
            events.push(BenignEvent {
                kind: BenignKind::Interference,
                nodes: nodes.clone(),
                start,
                end,
                ramp,
            });
        }
        let node = topo.node(center)?;
        if matches!(
            node.role,
            Role::NeighborhoodGateway | Role::SubstationController
        ) {
            for (start, end) in poisson_events(rng, cfg.congestion_rate, total, cfg) {
                events.push(BenignEvent {
                    kind: BenignKind::Congestion,
                    nodes: vec![center],
                    start,
                    end,
                    ramp,
                });
            }
        }
        if node.layer == Layer::Han {
            for (start, end) in poisson_events(rng, cfg.scatter_rate, total, cfg) {
                events.push(BenignEvent {
                    kind: BenignKind::Scatter,
                    nodes: vec![center],
                    start,
                    end,
                    ramp,
                });
            }
        }
    }
    Ok(events)
}

pub fn events_to_text(events: &[BenignEvent]) -> String {
    let mut s = String::from("kind\tnodes\tstart\tend\tramp\n");
    for e in events {
        let nodes: Vec<String> = e.nodes.iter().map(|n| n.to_string()).collect();
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            e.kind.label(),
            nodes.join(","),
            e.start,
            e.end,
            e.ramp
        )
        .unwrap();
    }
    s
}

pub fn events_from_text(text: &str) -> Result<Vec<BenignEvent>> {
    let mut lines = text.lines();
    if lines.next() != Some("kind\tnodes\tstart\tend\tramp") {
        return Err(Error::Format("event header missing".into()));
    }
    let bad = |l: &str| Error::Format(format!("bad event record {l:?}"));
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(line));
        }
        let nodes = f[1]
            .split(',')
            .map(|v| v.parse())
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| bad(line))?;
        out.push(BenignEvent {
            kind: BenignKind::parse(f[0])?,
            nodes,
            start: f[2].parse().map_err(|_| bad(line))?,
            end: f[3].parse().map_err(|_| bad(line))?,
            ramp: f[4].parse().map_err(|_| bad(line))?,
        });
    }
    Ok(out)
}
