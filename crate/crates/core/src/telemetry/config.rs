use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::Technology;

/// Baseline channel and traffic behavior of one link technology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechProfile {
    /// Mean SNR in dB.
    pub snr_db: f64,
    /// Standard deviation of the slow noise-floor wander, dB.
    pub snr_wander_db: f64,
    /// Per-step SNR estimation noise, dB.
    pub snr_noise_db: f64,
    pub latency_ms: f64,
    /// Log-normal latency jitter (standard deviation of the log).
    pub latency_jitter: f64,
    /// Bit error rate at the mean SNR.
    pub ber: f64,
    /// Packets sent per timestep, `N_t`.
    pub packets: u32,
    /// Probability that the node reports in a given timestep.
    pub tx_prob: f64,
    /// Residual carrier-frequency offset, Hz.
    pub f_off_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TechProfiles {
    pub zigbee: TechProfile,
    pub plc: TechProfile,
    pub lte: TechProfile,
    pub fiber: TechProfile,
}

impl TechProfiles {
    pub fn get(&self, tech: Technology) -> &TechProfile {
        match tech {
            Technology::ZigBee => &self.zigbee,
            Technology::Plc => &self.plc,
            Technology::Lte => &self.lte,
            Technology::FiberEthernet => &self.fiber,
        }
    }
}

impl Default for TechProfiles {
    fn default() -> Self {
        TechProfiles {
            zigbee: TechProfile {
                snr_db: 18.0,
                snr_wander_db: 0.8,
                snr_noise_db: 0.8,
                latency_ms: 40.0,
                latency_jitter: 0.08,
                ber: 1e-4,
                packets: 24,
                tx_prob: 0.7,
                f_off_hz: 200.0,
            },
            plc: TechProfile {
                snr_db: 14.0,
                snr_wander_db: 1.0,
                snr_noise_db: 0.8,
                latency_ms: 12.0,
                latency_jitter: 0.05,
                ber: 2e-4,
                packets: 30,
                tx_prob: 1.0,
                f_off_hz: 0.0,
            },
            lte: TechProfile {
                snr_db: 22.0,
                snr_wander_db: 0.8,
                snr_noise_db: 0.6,
                latency_ms: 25.0,
                latency_jitter: 0.06,
                ber: 4e-5,
                packets: 40,
                tx_prob: 0.95,
                f_off_hz: 120.0,
            },
            fiber: TechProfile {
                snr_db: 35.0,
                snr_wander_db: 0.3,
                snr_noise_db: 0.3,
                latency_ms: 2.0,
                latency_jitter: 0.03,
                ber: 1e-5,
                packets: 60,
                tx_prob: 1.0,
                f_off_hz: 0.0,
            },
        }
    }
}

/// Eavesdropper side effects at full intensity, plus window scheduling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub snr_drop_db: f64,
    /// Extra scattering path amplitude relative to the mean line-of-sight
    /// amplitude.
    pub csi_extra_path: f64,
    /// Phase advance of the extra path per timestep, radians.
    pub csi_doppler: f64,
    /// Added carrier-frequency offset, Hz.
    pub f_off_bias_hz: f64,
    /// Relative increase of mean latency.
    pub latency_shift: f64,
    /// Relative increase of latency jitter.
    pub latency_jitter: f64,
    /// BER is scaled by `1 + (ber_multiplier - 1) * r` at intensity `r`.
    pub ber_multiplier: f64,
    pub ramp_len: usize,
    /// Fraction of each targeted timeline covered by attack windows.
    pub coverage: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            snr_drop_db: 1.5,
            csi_extra_path: 0.05,
            csi_doppler: 1.1,
            f_off_bias_hz: 60.0,
            latency_shift: 0.10,
            latency_jitter: 0.5,
            ber_multiplier: 3.0,
            ramp_len: 10,
            coverage: 0.30,
            min_len: 30,
            max_len: 120,
        }
    }
}

impl AttackConfig {
    /// Same schedule, no side effects.
    pub fn without_effects(&self) -> Self {
        AttackConfig {
            snr_drop_db: 0.0,
            csi_extra_path: 0.0,
            f_off_bias_hz: 0.0,
            latency_shift: 0.0,
            latency_jitter: 0.0,
            ber_multiplier: 1.0,
            ..self.clone()
        }
    }
}

/// Benign disturbances that resemble attacks in some channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenignConfig {
    /// Expected interference events per 1000 steps centered on each wireless
    /// node. An event hits the center and all of its wireless neighbors.
    pub interference_rate: f64,
    pub interference_snr_drop_db: f64,
    pub interference_ber_multiplier: f64,
    pub interference_latency_shift: f64,
    /// Expected backhaul congestion events per 1000 steps on each gateway or
    /// substation controller.
    pub congestion_rate: f64,
    pub congestion_latency_shift: f64,
    pub congestion_jitter: f64,
    pub congestion_ber_multiplier: f64,
    /// Expected moving-scatterer events per 1000 steps on each wireless
    /// HAN device.
    pub scatter_rate: f64,
    pub scatter_amplitude: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Onset and release length of every benign event.
    pub ramp_len: usize,
}

impl Default for BenignConfig {
    fn default() -> Self {
        BenignConfig {
            interference_rate: 2.0,
            interference_snr_drop_db: 1.5,
            interference_ber_multiplier: 2.5,
            interference_latency_shift: 0.05,
            congestion_rate: 1.5,
            congestion_latency_shift: 0.08,
            congestion_jitter: 0.4,
            congestion_ber_multiplier: 2.0,
            scatter_rate: 3.0,
            scatter_amplitude: 0.05,
            min_len: 20,
            max_len: 80,
            ramp_len: 5,
        }
    }
}

impl BenignConfig {
    pub fn none() -> Self {
        BenignConfig {
            interference_rate: 0.0,
            congestion_rate: 0.0,
            scatter_rate: 0.0,
            ..BenignConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_sub: usize,
    pub timesteps: usize,
    pub seed: u64,
    pub packet_bits: u32,
    /// AR(1) coefficient of the per-subcarrier scattered component.
    pub fading: f64,
    /// Power ratio of line-of-sight to scattered components.
    pub rician_k: f64,
    /// Symbol duration, seconds.
    pub t_symb: f64,
    /// Retransmission cap per packet.
    pub max_attempts: u32,
    /// Standard deviation of the random common phase offset of each CSI
    /// snapshot, radians.
    pub cpe_std_rad: f64,
    pub tech: TechProfiles,
    pub attack: AttackConfig,
    pub benign: BenignConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_sub: 16,
            timesteps: 5000,
            seed: 7,
            packet_bits: 1024,
            fading: 0.95,
            rician_k: 10.0,
            t_symb: 1e-4,
            max_attempts: 8,
            cpe_std_rad: 0.0,
            tech: TechProfiles::default(),
            attack: AttackConfig::default(),
            benign: BenignConfig::default(),
        }
    }
}

fn check(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("generator: {what}")))
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.n_sub >= 1, "n_sub must be at least 1")?;
        check(self.timesteps >= 1, "timesteps must be positive")?;
        check(self.packet_bits >= 1, "packet_bits must be at least 1")?;
        check((0.0..1.0).contains(&self.fading), "fading must lie in [0, 1)")?;
        check(self.rician_k > 0.0, "rician_k must be positive")?;
        check(self.t_symb > 0.0, "t_symb must be positive")?;
        check(self.max_attempts >= 1, "max_attempts must be at least 1")?;
        check(self.cpe_std_rad >= 0.0, "cpe_std_rad must be nonnegative")?;
        for (name, p) in [
            ("zigbee", &self.tech.zigbee),
            ("plc", &self.tech.plc),
            ("lte", &self.tech.lte),
            ("fiber", &self.tech.fiber),
        ] {
            check(p.snr_db.is_finite(), &format!("{name}.snr_db must be finite"))?;
            check(
                p.snr_wander_db >= 0.0 && p.snr_noise_db >= 0.0,
                &format!("{name} SNR noise must be nonnegative"),
            )?;
            check(p.latency_ms > 0.0, &format!("{name}.latency_ms must be positive"))?;
            check(p.latency_jitter >= 0.0, &format!("{name}.latency_jitter must be nonnegative"))?;
            check((0.0..=0.5).contains(&p.ber), &format!("{name}.ber must lie in [0, 0.5]"))?;
            check(p.packets >= 1, &format!("{name}.packets must be at least 1"))?;
            check(
                p.tx_prob > 0.0 && p.tx_prob <= 1.0,
                &format!("{name}.tx_prob must lie in (0, 1]"),
            )?;
        }
        let a = &self.attack;
        check(
            [a.snr_drop_db, a.csi_extra_path, a.f_off_bias_hz, a.latency_shift, a.latency_jitter]
                .iter()
                .all(|v| *v >= 0.0 && v.is_finite()),
            "attack magnitudes must be nonnegative",
        )?;
        check(a.ber_multiplier >= 1.0, "attack.ber_multiplier must be at least 1")?;
        check(a.ramp_len >= 1, "attack.ramp_len must be at least 1")?;
        check(a.coverage > 0.0 && a.coverage < 1.0, "attack.coverage must lie in (0, 1)")?;
        check(
            a.min_len >= 1 && a.min_len <= a.max_len,
            "attack window lengths must satisfy 1 <= min_len <= max_len",
        )?;
        let b = &self.benign;
        check(
            [
                b.interference_rate,
                b.interference_snr_drop_db,
                b.interference_latency_shift,
                b.congestion_rate,
                b.congestion_latency_shift,
                b.congestion_jitter,
                b.scatter_rate,
                b.scatter_amplitude,
            ]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite()),
            "benign magnitudes must be nonnegative",
        )?;
        check(
            b.interference_ber_multiplier >= 1.0 && b.congestion_ber_multiplier >= 1.0,
            "benign BER multipliers must be at least 1",
        )?;
        check(
            b.min_len >= 1 && b.min_len <= b.max_len,
            "benign event lengths must satisfy 1 <= min_len <= max_len",
        )?;
        Ok(())
    }
}
