use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Mean modulus of the per-subcarrier change between two CSI snapshots.
pub fn csi_drift(h_t: &[Complex64], h_prev: &[Complex64]) -> Result<f64> {
    if h_t.len() != h_prev.len() || h_t.is_empty() {
        return Err(Error::Shape(format!(
            "csi_drift: {} vs {} subcarriers",
            h_t.len(),
            h_prev.len()
        )));
    }
    let total: f64 = h_t.iter().zip(h_prev).map(|(a, b)| (a - b).norm()).sum();
    Ok(total / h_t.len() as f64)
}

/// Histogram counts over `bins` equal-width bins spanning `[min, max]`.
/// An all-equal input lands in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let i = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1.0;
    }
    counts
}

/// Shannon entropy in bits of smoothed histogram probabilities
/// `(c_i + eps) / sum_j (c_j + eps)`.
pub fn entropy_from_counts(counts: &[f64], eps: f64) -> f64 {
    let z: f64 = counts.iter().map(|c| c + eps).sum();
    -counts
        .iter()
        .map(|c| {
            let p = (c + eps) / z;
            if p > 0.0 {
                p * p.log2()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

pub fn csi_entropy(amplitudes: &[f64], bins: usize, eps: f64) -> Result<f64> {
    if bins < 2 || eps <= 0.0 || amplitudes.is_empty() {
        return Err(Error::Domain(
            "csi_entropy needs at least 2 bins, eps > 0 and a nonempty input".into(),
        ));
    }
    Ok(entropy_from_counts(&histogram(amplitudes, bins), eps))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedStats {
    pub skew: f64,
    pub kurtosis: f64,
    pub slope: f64,
    pub drift: f64,
    pub flatness: f64,
}

impl DerivedStats {
    pub const NAMES: [&'static str; 5] = ["skew", "kurt", "slope", "drift", "flatness"];

    pub fn to_array(self) -> [f64; 5] {
        [self.skew, self.kurtosis, self.slope, self.drift, self.flatness]
    }
}

/// Population variance below this fraction of the squared scale counts as
/// zero.
const VARIANCE_FLOOR: f64 = 1e-24;

/// Shape statistics of a short window. Holds an FFT plan for its length.
pub struct DerivedStatsPlan {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl DerivedStatsPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len < 4 {
            return Err(Error::Domain(format!(
                "derived statistics need a window of at least 4, got {len}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        Ok(DerivedStatsPlan {
            len,
            fft,
            buf: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sample skewness `m3 / m2^1.5`, excess kurtosis `m4 / m2^2 - 3`
    /// (both zero for a flat series), least-squares slope against
    /// `0..W`, `last - first` and the spectral flatness of the magnitude
    /// spectrum without the DC bin (one for a flat series).
    pub fn compute(&mut self, x: &[f64]) -> Result<DerivedStats> {
        if x.len() != self.len {
            return Err(Error::Shape(format!(
                "derived statistics planned for {} values, got {}",
                self.len,
                x.len()
            )));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in x {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let flat = m2 <= VARIANCE_FLOOR * scale * scale;
        let (skew, kurtosis) = if flat {
            (0.0, 0.0)
        } else {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        };

        let t_mean = (n - 1.0) / 2.0;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for (i, &v) in x.iter().enumerate() {
            let dt = i as f64 - t_mean;
            sxy += dt * (v - mean);
            sxx += dt * dt;
        }
        let slope = if flat { 0.0 } else { sxy / sxx };
        let drift = x[x.len() - 1] - x[0];

        let flatness = if flat {
            1.0
        } else {
            for (b, &v) in self.buf.iter_mut().zip(x) {
                *b = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut self.buf);
            let mags: Vec<f64> = self.buf[1..=self.len / 2].iter().map(|c| c.norm()).collect();
            let arith = mags.iter().sum::<f64>() / mags.len() as f64;
            if arith <= 0.0 {
                1.0
            } else {
                let log_geo = mags.iter().map(|m| m.ln()).sum::<f64>() / mags.len() as f64;
                (log_geo.exp() / arith).clamp(0.0, 1.0)
            }
        };
        Ok(DerivedStats {
            skew,
            kurtosis,
            slope,
            drift,
            flatness,
        })
    }
}

/// One-shot form of [`DerivedStatsPlan::compute`].
pub fn derived_stats(series: &[f64]) -> Result<DerivedStats> {
    DerivedStatsPlan::new(series.len())?.compute(series)
}

/// Pearson correlation, zero when either side is flat.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_b = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if saa <= VARIANCE_FLOOR * n * scale_a * scale_a || sbb <= VARIANCE_FLOOR * n * scale_b * scale_b
    {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Population standard deviation.
pub fn pop_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// `W` trailing values ending at `t`, repeating the first sample before the
/// start of the timeline.
pub fn trailing(series: &[f64], t: usize, w: usize, out: &mut Vec<f64>) {
    out.clear();
    for j in 0..w {
        let idx = (t + j + 1).saturating_sub(w);
        out.push(series[idx]);
    }
}

/// The per-node series the neighbor statistics read.
#[derive(Clone, Debug)]
pub struct LinkChannels {
    pub latency: Vec<f64>,
    pub snr: Vec<f64>,
    pub per: Vec<f64>,
    pub csi_drift: Vec<f64>,
}

pub const NEIGHBOR_STAT_NAMES: [&str; 8] = [
    "mean_latency",
    "mean_snr",
    "mean_per",
    "mean_csi_drift",
    "latency_corr",
    "snr_corr",
    "snr_dispersion",
    "latency_dispersion",
];

pub const F_NBR: usize = 8;

/// Statistics of `nbrs` as seen from `ego` at step `t`. Means are taken
/// across neighbors at `t`; correlations compare the ego series with the
/// neighbor-mean series over the trailing window; dispersions are the
/// population spread of all neighbor samples in that window.
pub fn neighbor_stats(ego: &LinkChannels, nbrs: &[&LinkChannels], t: usize, w: usize) -> [f64; F_NBR] {
    fn lat(c: &LinkChannels) -> &[f64] {
        &c.latency
    }
    fn snr(c: &LinkChannels) -> &[f64] {
        &c.snr
    }
    fn per(c: &LinkChannels) -> &[f64] {
        &c.per
    }
    fn drift(c: &LinkChannels) -> &[f64] {
        &c.csi_drift
    }
    if nbrs.is_empty() {
        return [0.0; F_NBR];
    }
    let k = nbrs.len() as f64;
    let mean_at = |f: fn(&LinkChannels) -> &[f64], s: usize| -> f64 {
        nbrs.iter().map(|n| f(n)[s]).sum::<f64>() / k
    };
    let idx: Vec<usize> = (0..w).map(|j| (t + j + 1).saturating_sub(w)).collect();
    let window = |f: fn(&LinkChannels) -> &[f64], c: &LinkChannels| -> Vec<f64> {
        idx.iter().map(|&s| f(c)[s]).collect()
    };
    let mean_window =
        |f: fn(&LinkChannels) -> &[f64]| -> Vec<f64> { idx.iter().map(|&s| mean_at(f, s)).collect() };
    let pooled = |f: fn(&LinkChannels) -> &[f64]| -> Vec<f64> {
        nbrs.iter().flat_map(|n| window(f, n)).collect()
    };
    [
        mean_at(lat, t),
        mean_at(snr, t),
        mean_at(per, t),
        mean_at(drift, t),
        pearson(&window(lat, ego), &mean_window(lat)),
        pearson(&window(snr, ego), &mean_window(snr)),
        pop_std(&pooled(snr)),
        pop_std(&pooled(lat)),
    ]
}
