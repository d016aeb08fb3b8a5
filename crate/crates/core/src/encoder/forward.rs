use std::sync::Arc;

use super::params::{EncoderParams, InputDims, Linear};
use crate::error::{Error, Result};
use crate::features::{WindowSample, F_NBR};
use crate::numerics::{gru_step, Graph, Mode, RowMix, Tensor, Var};

/// Symmetric normalization with self-loops, `D^-1/2 (A + I) D^-1/2`, as
/// row-mix entries over `n` nodes. Edges are directed `(src, dst)` pairs.
pub fn gcn_normalization(n: usize, edges: &[(usize, usize)]) -> Result<Vec<(usize, usize, f64)>> {
    let mut deg = vec![1.0; n];
    for &(s, d) in edges {
        if s >= n || d >= n {
            return Err(Error::Shape(format!("edge ({s},{d}) outside {n} nodes")));
        }
        deg[d] += 1.0;
    }
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0 / deg[i])).collect();
    for &(s, d) in edges {
        entries.push((d, s, 1.0 / (deg[s] * deg[d] as f64).sqrt()));
    }
    Ok(entries)
}

/// Star node matrix: row 0 is `[h_raw | 0]`, row `j` is `[0 | h_nbr[j-1]]`.
pub fn build_node_matrix(g: &mut Graph<'_>, h_raw: Var, h_nbr: Option<Var>) -> Result<Var> {
    let h = g.value(h_raw).cols();
    let zero = g.constant(Tensor::zeros(&[g.value(h_raw).rows(), h]));
    let ego = g.concat_cols(&[h_raw, zero])?;
    match h_nbr {
        None => Ok(ego),
        Some(nb) => {
            if g.value(nb).cols() != h {
                return Err(Error::Shape(format!(
                    "node matrix: ego width {h}, neighbor width {}",
                    g.value(nb).cols()
                )));
            }
            let zero = g.constant(Tensor::zeros(&[g.value(nb).rows(), h]));
            let leaves = g.concat_cols(&[zero, nb])?;
            g.concat_rows(&[ego, leaves])
        }
    }
}

/// `A_hat Z W (+ b)` over one graph; the caller applies any nonlinearity.
pub fn gcn_layer(
    g: &mut Graph<'_>,
    z: Var,
    edges: &[(usize, usize)],
    w: Var,
    b: Option<Var>,
) -> Result<Var> {
    let n = g.value(z).rows();
    let mix = Arc::new(RowMix::new(n, n, gcn_normalization(n, edges)?)?);
    propagate(g, z, &mix, w, b)
}

fn propagate(g: &mut Graph<'_>, z: Var, adj: &Arc<RowMix>, w: Var, b: Option<Var>) -> Result<Var> {
    let zw = g.matmul(z, w)?;
    let out = g.row_mix(zw, adj)?;
    match b {
        Some(b) => g.add(out, b),
        None => Ok(out),
    }
}

/// Minibatch of windows in timestep-major row order: row `t * B + b`
/// holds timestep `t` of window `b`. Neighbor rows follow the same order
/// with each window's `K` rows packed inside a timestep.
pub struct Batch {
    pub b: usize,
    pub w: usize,
    pub ks: Vec<usize>,
    x_raw: Tensor,
    x_nbr: Option<Tensor>,
    meta: Option<Tensor>,
    /// Timestep labels in row order.
    pub labels: Vec<u8>,
    /// Window labels.
    pub seq_labels: Vec<u8>,
    adjacency: Arc<RowMix>,
    pool: Arc<RowMix>,
    nbr_mean: Option<Arc<RowMix>>,
    meta_rows: Arc<RowMix>,
}

impl Batch {
    pub fn new(samples: &[&WindowSample], dims: &InputDims) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (nb, w) = (samples.len(), first.w);
        for s in samples {
            if s.w != w || s.f_raw != dims.f_raw || s.meta.len() != dims.f_meta {
                return Err(Error::Shape(format!(
                    "window at node {} step {}: W {} f_raw {} meta {}, batch expects W {w} f_raw {} meta {}",
                    s.ego,
                    s.start,
                    s.w,
                    s.f_raw,
                    s.meta.len(),
                    dims.f_raw,
                    dims.f_meta
                )));
            }
            if s.k > 0 && dims.f_nbr != F_NBR {
                return Err(Error::Shape(format!(
                    "window at node {} has neighbors but the encoder has no neighbor input",
                    s.ego
                )));
            }
        }
        let ks: Vec<usize> = samples.iter().map(|s| s.k).collect();
        let ksum: usize = ks.iter().sum();
        let mut prefix = Vec::with_capacity(nb);
        let mut acc = 0;
        for &k in &ks {
            prefix.push(acc);
            acc += k;
        }
        let n = w * nb;

        let mut raw = Vec::with_capacity(n * dims.f_raw);
        let mut labels = Vec::with_capacity(n);
        for t in 0..w {
            for s in samples {
                raw.extend_from_slice(&s.x_raw[t * s.f_raw..(t + 1) * s.f_raw]);
                labels.push(s.labels[t]);
            }
        }
        let x_raw = Tensor::new(&[n, dims.f_raw], raw)?;
        let x_nbr = if ksum > 0 {
            let mut data = Vec::with_capacity(w * ksum * F_NBR);
            for t in 0..w {
                for s in samples {
                    data.extend_from_slice(&s.x_nbr[t * s.k * F_NBR..(t + 1) * s.k * F_NBR]);
                }
            }
            Some(Tensor::new(&[w * ksum, F_NBR], data)?)
        } else {
            None
        };
        let meta = if dims.f_meta > 0 {
            let data = samples.iter().flat_map(|s| s.meta.iter().copied()).collect();
            Some(Tensor::new(&[nb, dims.f_meta], data)?)
        } else {
            None
        };

        let nodes = n + w * ksum;
        let leaf = |t: usize, b: usize, j: usize| n + t * ksum + prefix[b] + j;
        let mut adj = Vec::new();
        let mut pool = Vec::new();
        let mut nbr_mean = Vec::new();
        for t in 0..w {
            for (b, &k) in ks.iter().enumerate() {
                let ego = t * nb + b;
                let local: Vec<usize> = std::iter::once(ego).chain((0..k).map(|j| leaf(t, b, j))).collect();
                let edges: Vec<(usize, usize)> = (1..=k).flat_map(|j| [(0, j), (j, 0)]).collect();
                for (o, i, v) in gcn_normalization(k + 1, &edges)? {
                    adj.push((local[o], local[i], v));
                }
                let share = 1.0 / (k + 1) as f64;
                pool.extend(local.iter().map(|&u| (ego, u, share)));
                for j in 0..k {
                    nbr_mean.push((ego, t * ksum + prefix[b] + j, 1.0 / k as f64));
                }
            }
        }
        let meta_rows: Vec<usize> = (0..w).flat_map(|_| 0..nb).collect();
        Ok(Batch {
            b: nb,
            w,
            ks,
            x_raw,
            x_nbr,
            meta,
            labels,
            seq_labels: samples.iter().map(|s| s.seq_label()).collect(),
            adjacency: Arc::new(RowMix::new(nodes, nodes, adj)?),
            pool: Arc::new(RowMix::new(nodes, n, pool)?),
            nbr_mean: if ksum > 0 {
                Some(Arc::new(RowMix::new(w * ksum, n, nbr_mean)?))
            } else {
                None
            },
            meta_rows: Arc::new(RowMix::gather(nb, &meta_rows)?),
        })
    }

    pub fn rows(&self) -> usize {
        self.w * self.b
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `W B x 2`.
    pub logits: Var,
    /// `W B x 1`, attack-class probability.
    pub probs: Var,
}

fn linear(g: &mut Graph<'_>, x: Var, l: Linear) -> Result<Var> {
    let w = g.param(l.w)?;
    let b = g.param(l.b)?;
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

fn checked(g: &Graph<'_>, v: Var, label: &str) -> Result<Var> {
    g.check_finite(v, label)?;
    Ok(v)
}

/// Records the encoder on `g`, whose parameters must be `params.tensors()`.
pub fn forward(g: &mut Graph<'_>, params: &EncoderParams, batch: &Batch) -> Result<Forward> {
    let cfg = &params.config;
    let l = &params.layout;
    let h = cfg.hidden;
    let n = batch.rows();
    if batch.x_raw.cols() != params.dims.f_raw {
        return Err(Error::Shape("batch built for a different encoder".into()));
    }

    let x_raw = g.constant(batch.x_raw.clone());
    let raw_lin = linear(g, x_raw, l.raw)?;
    let raw = g.relu(raw_lin);
    checked(g, raw, "raw projection")?;

    let nbr = match (&batch.x_nbr, l.nbr) {
        (Some(x), Some(idx)) => {
            let x = g.constant(x.clone());
            let lin = linear(g, x, idx)?;
            let v = g.relu(lin);
            Some(checked(g, v, "neighbor projection")?)
        }
        _ => None,
    };
    let meta = match (&batch.meta, l.meta) {
        (Some(m), Some(idx)) => {
            let m = g.constant(m.clone());
            let lin = linear(g, m, idx)?;
            let v = g.relu(lin);
            checked(g, v, "metadata projection")?;
            Some(g.row_mix(v, &batch.meta_rows)?)
        }
        _ => None,
    };
    let nbr_avg = match (nbr, &batch.nbr_mean) {
        (Some(v), Some(mix)) => g.row_mix(v, mix)?,
        _ => g.constant(Tensor::zeros(&[n, h])),
    };

    let mut blocks = Vec::with_capacity(4);
    if let Some([g1, g2]) = l.gcn {
        let z = build_node_matrix(g, raw, nbr)?;
        let (w1, b1) = (g.param(g1.w)?, g.param(g1.b)?);
        let c1 = propagate(g, z, &batch.adjacency, w1, Some(b1))?;
        let a1 = g.relu(c1);
        let a1 = g.dropout(a1, cfg.dropout_gcn)?;
        checked(g, a1, "graph convolution 1")?;
        let (w2, b2) = (g.param(g2.w)?, g.param(g2.b)?);
        let c2 = propagate(g, a1, &batch.adjacency, w2, Some(b2))?;
        let a2 = g.relu(c2);
        let a2 = g.dropout(a2, cfg.dropout_gcn)?;
        checked(g, a2, "graph convolution 2")?;
        blocks.push(g.row_mix(a2, &batch.pool)?);
    }
    blocks.push(nbr_avg);
    blocks.extend(meta);
    blocks.push(raw);
    let fused = g.concat_cols(&blocks)?;
    let (gain, bias) = (g.param(l.ln_gain)?, g.param(l.ln_bias)?);
    let z = g.layernorm(fused, gain, bias, cfg.ln_eps)?;
    checked(g, z, "fusion layernorm")?;

    let mut seq = z;
    for (layer, dirs) in l.gru.iter().enumerate() {
        if layer > 0 {
            seq = g.dropout(seq, cfg.dropout_gru)?;
        }
        let mut outs: [Vec<Var>; 2] = [Vec::with_capacity(batch.w), Vec::with_capacity(batch.w)];
        for (d, idx) in dirs.iter().enumerate() {
            let (w_ih, b_ih) = (g.param(idx.w_ih)?, g.param(idx.b_ih)?);
            let (w_hh, b_hh) = (g.param(idx.w_hh)?, g.param(idx.b_hh)?);
            let xw = g.matmul(seq, w_ih)?;
            let xg = g.add(xw, b_ih)?;
            let mut state = g.constant(Tensor::zeros(&[batch.b, cfg.gru_hidden]));
            let mut hs = vec![state; batch.w];
            let order: Vec<usize> = if d == 0 {
                (0..batch.w).collect()
            } else {
                (0..batch.w).rev().collect()
            };
            for t in order {
                let xt = g.slice_rows(xg, t * batch.b, (t + 1) * batch.b)?;
                state = gru_step(g, xt, state, w_hh, b_hh)?;
                hs[t] = state;
            }
            outs[d] = hs;
        }
        let rows = (0..batch.w)
            .map(|t| g.concat_cols(&[outs[0][t], outs[1][t]]))
            .collect::<Result<Vec<_>>>()?;
        seq = g.concat_rows(&rows)?;
        checked(g, seq, &format!("recurrent layer {}", layer + 1))?;
    }

    let logits = linear(g, seq, l.head)?;
    checked(g, logits, "output head")?;
    let soft = g.softmax_rows(logits);
    let probs = g.slice_cols(soft, 1, 2)?;
    Ok(Forward { logits, probs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `W x 2`.
    pub logits: Tensor,
    /// Attack-class probability per timestep.
    pub probs: Vec<f64>,
}

pub fn encode_window(sample: &WindowSample, params: &EncoderParams, mode: Mode) -> Result<EncoderOutput> {
    let batch = Batch::new(&[sample], &params.dims)?;
    let mut g = Graph::new(params.tensors(), mode);
    let f = forward(&mut g, params, &batch)?;
    Ok(EncoderOutput {
        logits: g.value(f.logits).clone(),
        probs: g.value(f.probs).data().to_vec(),
    })
}

/// Eval-mode probabilities for every window, in input order.
pub fn predict(params: &EncoderParams, samples: &[WindowSample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::new(&refs, &params.dims)?;
        let mut g = Graph::new(params.tensors(), Mode::Eval);
        let f = forward(&mut g, params, &batch)?;
        let p = g.value(f.probs).data();
        for b in 0..batch.b {
            out.push((0..batch.w).map(|t| p[t * batch.b + b]).collect());
        }
    }
    Ok(out)
}
