use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::Batch;
use crate::error::{Error, Result};
use crate::numerics::{Graph, RowMix, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the timestep term.
    pub alpha: f64,
    /// Weight of the top-k sequence term.
    pub lambda_seq: f64,
    /// Upper bound on `k`; the effective value is `min(k_top, W)`.
    pub k_top: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.7,
            lambda_seq: 0.20,
            k_top: 3,
            weight_decay: 5e-5,
            clip_norm: 1.0,
            eps: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.lambda_seq >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "loss.alpha, loss.lambda_seq and loss.weight_decay must be non-negative".into(),
            ));
        }
        if self.k_top == 0 {
            return Err(Error::Config("loss.k_top must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("loss.clip_norm must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config("loss.eps must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn k(&self, w: usize) -> usize {
        self.k_top.min(w)
    }
}

/// Inverse-frequency weights `(w0, w1)` with `w_c = T / (2 T_c)`. A missing
/// class gets weight one and the returned warning.
pub fn class_weights(labels: &[u8]) -> Result<((f64, f64), Option<String>)> {
    if labels.is_empty() {
        return Err(Error::Config("class weights need at least one label".into()));
    }
    let total = labels.len() as f64;
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    let w = |count: usize| {
        if count == 0 {
            1.0
        } else {
            total / (2.0 * count as f64)
        }
    };
    let warning = match (zeros, ones) {
        (_, 0) => Some("no attack timesteps in the training labels; attack weight set to 1".to_string()),
        (0, _) => Some("no normal timesteps in the training labels; normal weight set to 1".to_string()),
        _ => None,
    };
    Ok(((w(zeros), w(ones)), warning))
}

/// Weighted cross-entropy over `B x W` probabilities, flattened in any
/// consistent order.
pub fn timestep_loss(p: &[f64], y: &[u8], w0: f64, w1: f64, eps: f64) -> f64 {
    let n = p.len() as f64;
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                w1 * p.ln()
            } else {
                w0 * (1.0 - p).ln()
            }
        })
        .sum();
    -total / n
}

/// Indices of the `k` largest values; ties keep the earlier index.
pub fn topk_indices(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn topk_pool(p: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > p.len() {
        return Err(Error::Domain(format!("top-k with k = {k} over {} values", p.len())));
    }
    Ok(topk_indices(p, k).iter().map(|&i| p[i]).sum::<f64>() / k as f64)
}

/// Mean binary cross-entropy of pooled window scores.
pub fn sequence_loss(p: &[f64], y: &[u8], eps: f64) -> f64 {
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    -total / p.len() as f64
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub timestep: Var,
    pub sequence: Var,
}

/// Cross-entropy of probabilities `p` against per-row targets with
/// coefficients `c1` on `log p` and `c0` on `log(1 - p)`.
fn weighted_bce(g: &mut Graph<'_>, p: Var, c1: Vec<f64>, c0: Vec<f64>, eps: f64) -> Result<Var> {
    let rows = g.value(p).rows();
    let pc = g.clamp(p, eps, 1.0 - eps);
    let lp = g.log(pc)?;
    let q = g.one_minus(pc);
    let lq = g.log(q)?;
    let a = g.mul_const(lp, Tensor::new(&[rows, 1], c1)?)?;
    let b = g.mul_const(lq, Tensor::new(&[rows, 1], c0)?)?;
    let sa = g.sum(a);
    let sb = g.sum(b);
    let s = g.add(sa, sb)?;
    Ok(g.scale(s, -1.0))
}

/// `alpha * L_t + lambda_seq * L_seq` on the graph, with `probs` laid out
/// as produced by the encoder for `batch`.
pub fn supervised_loss(
    g: &mut Graph<'_>,
    probs: Var,
    batch: &Batch,
    cfg: &LossConfig,
    weights: (f64, f64),
) -> Result<LossTerms> {
    let (w0, w1) = weights;
    let (b, w) = (batch.b, batch.w);
    let n = (b * w) as f64;
    let c1 = batch.labels.iter().map(|&y| if y == 1 { w1 / n } else { 0.0 }).collect();
    let c0 = batch.labels.iter().map(|&y| if y == 1 { 0.0 } else { w0 / n }).collect();
    let timestep = weighted_bce(g, probs, c1, c0, cfg.eps)?;

    let k = cfg.k(w);
    let values = g.value(probs).data().to_vec();
    let mut entries = Vec::with_capacity(b * k);
    for i in 0..b {
        let column: Vec<f64> = (0..w).map(|t| values[t * b + i]).collect();
        for t in topk_indices(&column, k) {
            entries.push((i, t * b + i, 1.0 / k as f64));
        }
    }
    let pool = Arc::new(RowMix::new(b * w, b, entries)?);
    let pooled = g.row_mix(probs, &pool)?;
    let bf = b as f64;
    let c1 = batch.seq_labels.iter().map(|&y| if y == 1 { 1.0 / bf } else { 0.0 }).collect();
    let c0 = batch.seq_labels.iter().map(|&y| if y == 1 { 0.0 } else { 1.0 / bf }).collect();
    let sequence = weighted_bce(g, pooled, c1, c0, cfg.eps)?;

    let a = g.scale(timestep, cfg.alpha);
    let s = g.scale(sequence, cfg.lambda_seq);
    let total = g.add(a, s)?;
    Ok(LossTerms {
        total,
        timestep,
        sequence,
    })
}
