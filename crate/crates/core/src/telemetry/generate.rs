use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::GeneratorConfig;
use super::formulas::{per_from_ber, phase_drift, snr_db};
use super::schedule::{schedule_attacks, schedule_benign, AttackSchedule, BenignEvent, BenignKind};
use crate::error::Result;
use crate::split::SplitSpec;
use crate::topology::GridTopology;

const SCHEDULE_STREAM: u64 = 0;
const BENIGN_STREAM: u64 = 1;
const SIGNAL_STREAM_BASE: u64 = 16;

/// Complex per-subcarrier channel plus the oscillator terms that rotate it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub h: Vec<Complex64>,
    pub f_off_hz: f64,
    pub t_symb: f64,
}

impl ChannelState {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.h.iter().map(|c| c.norm()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.h.iter().map(|c| wrap_phase(c.arg())).collect()
    }
}

/// Maps an angle onto `[-pi, pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// One node, one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryFrame {
    pub node: usize,
    pub t: usize,
    pub csi: ChannelState,
    pub snr_db: f64,
    pub latency_ms: f64,
    pub per: f64,
    pub tx_count: f64,
    pub time_since_last_tx: u32,
    pub label: u8,
}

/// Column-oriented frames of a single node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSeries {
    pub node: usize,
    pub n_sub: usize,
    pub f_off_hz: f64,
    pub t_symb: f64,
    /// `T * n_sub`, timestep-major.
    pub csi: Vec<Complex64>,
    pub snr_db: Vec<f64>,
    pub latency_ms: Vec<f64>,
    pub per: Vec<f64>,
    pub tx_count: Vec<f64>,
    pub time_since_last_tx: Vec<u32>,
    pub label: Vec<u8>,
}

impl NodeSeries {
    pub fn len(&self) -> usize {
        self.snr_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr_db.is_empty()
    }

    pub fn csi_at(&self, t: usize) -> &[Complex64] {
        &self.csi[t * self.n_sub..(t + 1) * self.n_sub]
    }

    pub fn frame(&self, t: usize) -> TelemetryFrame {
        TelemetryFrame {
            node: self.node,
            t,
            csi: ChannelState {
                h: self.csi_at(t).to_vec(),
                f_off_hz: self.f_off_hz,
                t_symb: self.t_symb,
            },
            snr_db: self.snr_db[t],
            latency_ms: self.latency_ms[t],
            per: self.per[t],
            tx_count: self.tx_count[t],
            time_since_last_tx: self.time_since_last_tx[t],
            label: self.label[t],
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = TelemetryFrame> + '_ {
        (0..self.len()).map(|t| self.frame(t))
    }
}

/// Everything one generator run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub topology: GridTopology,
    pub config: GeneratorConfig,
    pub split: SplitSpec,
    pub schedule: AttackSchedule,
    pub events: Vec<BenignEvent>,
    /// Indexed by node id.
    pub series: Vec<NodeSeries>,
}

impl Dataset {
    pub fn timesteps(&self) -> usize {
        self.config.timesteps
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Envelopes of the benign events touching `node`, summed per kind.
struct BenignEnvelopes {
    interference: Vec<f64>,
    congestion: Vec<f64>,
    scatter: Vec<f64>,
}

fn benign_envelopes(events: &[BenignEvent], node: usize, total: usize) -> BenignEnvelopes {
    let mut env = BenignEnvelopes {
        interference: vec![0.0; total],
        congestion: vec![0.0; total],
        scatter: vec![0.0; total],
    };
    for e in events.iter().filter(|e| e.nodes.contains(&node)) {
        let series = match e.kind {
            BenignKind::Interference => &mut env.interference,
            BenignKind::Congestion => &mut env.congestion,
            BenignKind::Scatter => &mut env.scatter,
        };
        for (t, v) in series.iter_mut().enumerate().take(e.end.min(total)).skip(e.start) {
            *v = v.max(e.envelope(t));
        }
    }
    env
}

/// Generates one dataset. Schedules, benign events and each node's signal
/// noise come from separate seeded streams, so the noise a node sees does
/// not depend on whether or how strongly it is attacked.
pub fn simulate(topo: &GridTopology, cfg: &GeneratorConfig, split: &SplitSpec) -> Result<Dataset> {
    cfg.validate()?;
    let total = cfg.timesteps;
    let bounds = split.boundaries(total)?;
    let schedule = schedule_attacks(
        topo,
        &cfg.attack,
        &bounds,
        total,
        &mut stream(cfg.seed, SCHEDULE_STREAM),
    )?;
    let events = schedule_benign(topo, &cfg.benign, total, &mut stream(cfg.seed, BENIGN_STREAM))?;
    let series = topo
        .nodes()
        .iter()
        .map(|n| simulate_node(topo, cfg, &schedule, &events, n.id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        topology: topo.clone(),
        config: cfg.clone(),
        split: split.clone(),
        schedule,
        events,
        series,
    })
}

fn simulate_node(
    topo: &GridTopology,
    cfg: &GeneratorConfig,
    schedule: &AttackSchedule,
    events: &[BenignEvent],
    id: usize,
) -> Result<NodeSeries> {
    let node = topo.node(id)?;
    let prof = cfg.tech.get(node.technology);
    let att = &cfg.attack;
    let ben = &cfg.benign;
    let total = cfg.timesteps;
    let n_sub = cfg.n_sub;
    let mut rng = stream(cfg.seed, SIGNAL_STREAM_BASE + id as u64);

    let attack = if node.wireless {
        schedule.intensity_series(id, total)
    } else {
        vec![0.0; total]
    };
    let env = if node.wireless {
        benign_envelopes(events, id, total)
    } else {
        benign_envelopes(&[], id, total)
    };

    // Static frequency-selective line-of-sight profile, unit mean amplitude.
    let ripple_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let los: Vec<Complex64> = (0..n_sub)
        .map(|k| {
            let amp = 1.0 + 0.15 * (2.0 * PI * k as f64 / n_sub as f64 + ripple_phase).cos();
            Complex64::from_polar(amp, rng.random_range(-PI..PI))
        })
        .collect();
    let los_power = los.iter().map(|c| c.norm_sqr()).sum::<f64>() / n_sub as f64;
    let scatter_sd = (los_power / cfg.rician_k / 2.0).sqrt();
    let innov = (1.0 - cfg.fading * cfg.fading).sqrt();
    let mut scatter: Vec<Complex64> = (0..n_sub)
        .map(|_| Complex64::new(normal(&mut rng), normal(&mut rng)) * scatter_sd)
        .collect();
    let extra_delay: f64 = rng.random_range(0.5..3.0);
    let benign_delay: f64 = rng.random_range(0.5..3.0);
    let mut doppler_phase: f64 = rng.random_range(-PI..PI);
    let mut benign_phase: f64 = rng.random_range(-PI..PI);
    let benign_doppler: f64 = rng.random_range(0.2..0.6);
    let mut cfo_phase: f64 = rng.random_range(-PI..PI);
    let mut wander = normal(&mut rng) * prof.snr_wander_db;
    let mut lat_state = normal(&mut rng);
    let p0 = 10f64.powf(prof.snr_db / 10.0);

    let mut out = NodeSeries {
        node: id,
        n_sub,
        f_off_hz: prof.f_off_hz,
        t_symb: cfg.t_symb,
        csi: Vec::with_capacity(total * n_sub),
        snr_db: Vec::with_capacity(total),
        latency_ms: Vec::with_capacity(total),
        per: Vec::with_capacity(total),
        tx_count: Vec::with_capacity(total),
        time_since_last_tx: Vec::with_capacity(total),
        label: Vec::with_capacity(total),
    };
    let mut since = 0u32;
    let mut uniforms = vec![0.0f64; prof.packets as usize];
    for t in 0..total {
        let r = attack[t];
        // Noise draws: fixed count and order per step.
        for s in scatter.iter_mut() {
            let z = Complex64::new(normal(&mut rng), normal(&mut rng));
            *s = *s * cfg.fading + z * (innov * scatter_sd);
        }
        let wander_innov = normal(&mut rng);
        let meas = normal(&mut rng);
        let lat_innov = normal(&mut rng);
        let tx_draw: f64 = rng.random();
        let cpe = normal(&mut rng) * cfg.cpe_std_rad;

        if t > 0 {
            cfo_phase = wrap_phase(
                cfo_phase + phase_drift(prof.f_off_hz + att.f_off_bias_hz * r, cfg.t_symb),
            );
        }
        doppler_phase = wrap_phase(doppler_phase + att.csi_doppler);
        benign_phase = wrap_phase(benign_phase + benign_doppler);
        let rot = Complex64::from_polar(1.0, cfo_phase + cpe);
        let extra_amp = att.csi_extra_path * r;
        let benign_amp = ben.scatter_amplitude * env.scatter[t];
        let mut sig_power = 0.0;
        for k in 0..n_sub {
            let base = los[k] + scatter[k];
            sig_power += base.norm_sqr();
            let kk = k as f64 / n_sub as f64;
            let extra = Complex64::from_polar(extra_amp, doppler_phase + 2.0 * PI * kk * extra_delay)
                + Complex64::from_polar(benign_amp, benign_phase + 2.0 * PI * kk * benign_delay);
            out.csi.push(rot * (base + extra));
        }
        sig_power = p0 * sig_power / n_sub as f64;

        wander = 0.99 * wander + (1.0 - 0.99f64 * 0.99).sqrt() * prof.snr_wander_db * wander_innov;
        let noise_db = wander
            + att.snr_drop_db * r
            + ben.interference_snr_drop_db * env.interference[t];
        let true_snr = snr_db(sig_power, 10f64.powf(noise_db / 10.0))?;
        out.snr_db.push(true_snr + prof.snr_noise_db * meas);

        lat_state = 0.6 * lat_state + 0.8 * lat_innov;
        let sigma = prof.latency_jitter
            * (1.0 + att.latency_jitter * r + ben.congestion_jitter * env.congestion[t]);
        let mean = prof.latency_ms
            * (1.0
                + att.latency_shift * r
                + ben.congestion_latency_shift * env.congestion[t]
                + ben.interference_latency_shift * env.interference[t]);
        out.latency_ms.push(mean * (sigma * lat_state - 0.5 * sigma * sigma).exp());

        let ber_scale = 10f64.powf((prof.snr_db - true_snr) / 10.0)
            * (1.0 + (att.ber_multiplier - 1.0) * r)
            * (1.0 + (ben.interference_ber_multiplier - 1.0) * env.interference[t])
            * (1.0 + (ben.congestion_ber_multiplier - 1.0) * env.congestion[t]);
        let ber = (prof.ber * ber_scale).min(0.5);
        let per_true = per_from_ber(ber, cfg.packet_bits);
        for u in uniforms.iter_mut() {
            *u = rng.random();
        }
        let errors = uniforms.iter().filter(|&&u| u < per_true).count();
        out.per.push(errors as f64 / prof.packets as f64);
        let mut attempts = 0.0;
        for _ in 0..prof.packets {
            // (0, 1]; one draw per packet whatever the error rate.
            let v = 1.0 - rng.random::<f64>();
            let a = if per_true <= 0.0 {
                1.0
            } else {
                (1.0 + (v.ln() / per_true.ln()).floor()).min(cfg.max_attempts as f64)
            };
            attempts += a;
        }
        out.tx_count.push(attempts / prof.packets as f64);

        since = if t == 0 || tx_draw < prof.tx_prob { 0 } else { since + 1 };
        out.time_since_last_tx.push(since);
        out.label.push((r > 0.0) as u8);
    }
    Ok(out)
}
