//! Gated recurrent unit built from graph primitives.
//!
//! Gate blocks are laid out `[z | r | n]` along the columns of the input and
//! recurrent weights:
//!
//! ```text
//! z  = sigmoid(x W_z + b_iz + h U_z + b_hz)
//! r  = sigmoid(x W_r + b_ir + h U_r + b_hr)
//! n  = tanh(x W_n + b_in + r * (h U_n + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Graph handles for one cell's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    /// `d_in x 3 d_h`
    pub w_ih: Var,
    /// `d_h x 3 d_h`
    pub w_hh: Var,
    /// `3 d_h`
    pub b_ih: Var,
    /// `3 d_h`
    pub b_hh: Var,
}

/// One full cell update from raw input `x` (`rows x d_in`).
pub fn gru_cell(g: &mut Graph<'_>, x: Var, h: Var, w: &GruWeights) -> Result<Var> {
    let xw = g.matmul(x, w.w_ih)?;
    let xg = g.add(xw, w.b_ih)?;
    gru_step(g, xg, h, w.w_hh, w.b_hh)
}

/// Cell update from precomputed input gates `xg = x W_ih + b_ih`.
///
/// Lets a caller project an entire sequence with one matrix product and then
/// run only the recurrent part step by step.
pub fn gru_step(g: &mut Graph<'_>, xg: Var, h: Var, w_hh: Var, b_hh: Var) -> Result<Var> {
    let hd = g.value(h).cols();
    if g.value(xg).cols() != 3 * hd || g.value(w_hh).cols() != 3 * hd {
        return Err(Error::Shape(format!(
            "gru: hidden {hd}, input gates {:?}, recurrent weights {:?}",
            g.value(xg).shape(),
            g.value(w_hh).shape()
        )));
    }
    let hw = g.matmul(h, w_hh)?;
    let hg = g.add(hw, b_hh)?;

    let xz = g.slice_cols(xg, 0, hd)?;
    let xr = g.slice_cols(xg, hd, 2 * hd)?;
    let xn = g.slice_cols(xg, 2 * hd, 3 * hd)?;
    let hz = g.slice_cols(hg, 0, hd)?;
    let hr = g.slice_cols(hg, hd, 2 * hd)?;
    let hn = g.slice_cols(hg, 2 * hd, 3 * hd)?;

    let z_pre = g.add(xz, hz)?;
    let z = g.sigmoid(z_pre);
    let r_pre = g.add(xr, hr)?;
    let r = g.sigmoid(r_pre);
    let rhn = g.mul(r, hn)?;
    let n_pre = g.add(xn, rhn)?;
    let n = g.tanh(n_pre);

    let keep = g.one_minus(z);
    let fresh = g.mul(keep, n)?;
    let carried = g.mul(z, h)?;
    g.add(fresh, carried)
}
