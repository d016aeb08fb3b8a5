use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureFlags, F_NBR};
use crate::numerics::Tensor;

/// Architecture variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Graph convolution followed by the recurrent encoder.
    #[default]
    Full,
    /// No graph convolution; the averaged neighbor features stand in for
    /// the pooled graph vector.
    GruOnly,
    /// No recurrence; the head reads each fused timestep directly.
    GcnOnly,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Full, Arch::GruOnly, Arch::GcnOnly];

    pub fn label(self) -> &'static str {
        match self {
            Arch::Full => "full",
            Arch::GruOnly => "gru-only",
            Arch::GcnOnly => "gcn-only",
        }
    }

    pub fn uses_gcn(self) -> bool {
        self != Arch::GruOnly
    }

    pub fn uses_gru(self) -> bool {
        self != Arch::GcnOnly
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Projection width `H`.
    pub hidden: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dropout_gcn: f64,
    pub dropout_gru: f64,
    pub ln_eps: f64,
    pub init_seed: u64,
    pub arch: Arch,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 128,
            gru_hidden: 192,
            gru_layers: 2,
            dropout_gcn: 0.2,
            dropout_gru: 0.2,
            ln_eps: 1e-5,
            init_seed: 7,
            arch: Arch::Full,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return Err(Error::Config(
                "encoder.hidden, encoder.gru_hidden and encoder.gru_layers must be positive".into(),
            ));
        }
        for (name, rate) in [("dropout_gcn", self.dropout_gcn), ("dropout_gru", self.dropout_gru)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("encoder.{name} = {rate} outside [0, 1)")));
            }
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("encoder.ln_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Input widths fixed by the feature flags. A zero width drops the block
/// and its projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDims {
    pub f_raw: usize,
    pub f_nbr: usize,
    pub f_meta: usize,
}

impl InputDims {
    pub fn from_flags(flags: &FeatureFlags) -> Self {
        InputDims {
            f_raw: flags.f_raw(),
            f_nbr: if flags.neighbor { F_NBR } else { 0 },
            f_meta: flags.f_meta(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct GruIdx {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

/// Parameter indices for each block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub raw: Linear,
    pub nbr: Option<Linear>,
    pub meta: Option<Linear>,
    pub gcn: Option<[Linear; 2]>,
    pub ln_gain: usize,
    pub ln_bias: usize,
    /// `[forward, backward]` per layer.
    pub gru: Vec<[GruIdx; 2]>,
    pub head: Linear,
    pub fused_dim: usize,
}

struct Spec {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    /// Fan-in for uniform init; `None` marks LayerNorm gain (ones) and bias
    /// (zeros).
    fan_in: Vec<Option<usize>>,
}

impl Spec {
    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: Option<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.fan_in.push(fan_in);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{name}_w"), vec![d_in, d_out], Some(d_in)),
            b: self.push(format!("{name}_b"), vec![1, d_out], Some(d_in)),
        }
    }
}

fn plan(cfg: &EncoderConfig, dims: &InputDims) -> (Spec, Layout) {
    let h = cfg.hidden;
    let hg = cfg.gru_hidden;
    let mut s = Spec {
        names: Vec::new(),
        shapes: Vec::new(),
        fan_in: Vec::new(),
    };
    let raw = s.linear("raw", dims.f_raw, h);
    let nbr = (dims.f_nbr > 0).then(|| s.linear("nbr", dims.f_nbr, h));
    let meta = (dims.f_meta > 0).then(|| s.linear("meta", dims.f_meta, h));
    let gcn = cfg
        .arch
        .uses_gcn()
        .then(|| [s.linear("gcn1", 2 * h, 2 * h), s.linear("gcn2", 2 * h, h)]);
    let blocks = 2 + usize::from(cfg.arch.uses_gcn()) + usize::from(meta.is_some());
    let fused_dim = blocks * h;
    let ln_gain = s.push("ln_gain".into(), vec![1, fused_dim], None);
    let ln_bias = s.push("ln_bias".into(), vec![1, fused_dim], None);
    let mut gru = Vec::new();
    if cfg.arch.uses_gru() {
        for layer in 0..cfg.gru_layers {
            let d_in = if layer == 0 { fused_dim } else { 2 * hg };
            let mut dir = |tag: &str| GruIdx {
                w_ih: s.push(format!("gru_l{layer}_{tag}_w_ih"), vec![d_in, 3 * hg], Some(hg)),
                w_hh: s.push(format!("gru_l{layer}_{tag}_w_hh"), vec![hg, 3 * hg], Some(hg)),
                b_ih: s.push(format!("gru_l{layer}_{tag}_b_ih"), vec![1, 3 * hg], Some(hg)),
                b_hh: s.push(format!("gru_l{layer}_{tag}_b_hh"), vec![1, 3 * hg], Some(hg)),
            };
            let f = dir("fwd");
            let b = dir("bwd");
            gru.push([f, b]);
        }
    }
    let head_in = if cfg.arch.uses_gru() { 2 * hg } else { fused_dim };
    let head = s.linear("head", head_in, 2);
    let layout = Layout {
        raw,
        nbr,
        meta,
        gcn,
        ln_gain,
        ln_bias,
        gru,
        head,
        fused_dim,
    };
    (s, layout)
}

/// Named parameter tensors plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub dims: InputDims,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl EncoderParams {
    /// Uniform fan-in initialization: weights and biases from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, LayerNorm at identity.
    pub fn init(config: &EncoderConfig, dims: InputDims) -> Result<Self> {
        config.validate()?;
        if dims.f_raw == 0 {
            return Err(Error::Config("encoder needs at least one raw feature".into()));
        }
        let (spec, layout) = plan(config, &dims);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let tensors = spec
            .shapes
            .iter()
            .zip(&spec.fan_in)
            .zip(&spec.names)
            .map(|((shape, fan), name)| match fan {
                Some(f) => {
                    let bound = 1.0 / (*f as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape, data)
                }
                None if name == "ln_gain" => Ok(Tensor::full(shape, 1.0)),
                None => Ok(Tensor::zeros(shape)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderParams {
            config: config.clone(),
            dims,
            names: spec.names,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from tensors, which must match the planned
    /// shapes exactly.
    pub fn from_tensors(config: &EncoderConfig, dims: InputDims, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (spec, layout) = plan(config, &dims);
        if tensors.len() != spec.shapes.len() {
            return Err(Error::Shape(format!(
                "encoder expects {} parameter tensors, got {}",
                spec.shapes.len(),
                tensors.len()
            )));
        }
        for ((t, shape), name) in tensors.iter().zip(&spec.shapes).zip(&spec.names) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(EncoderParams {
            config: config.clone(),
            dims,
            names: spec.names,
            tensors,
            layout,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same configuration, dimensions and names; values may differ.
    pub fn same_layout(&self, other: &EncoderParams) -> bool {
        self.config == other.config
            && self.dims == other.dims
            && self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}
