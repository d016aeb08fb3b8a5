//! Server-side weighted averaging. Only [`ClientUpdate`] values reach this
//! code.

use std::cmp::Ordering;

use super::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Nonoverlapping expansion: an exact sum of doubles, smallest first.
#[derive(Default)]
struct Expansion(Vec<f64>);

impl Expansion {
    fn add(&mut self, b: f64) {
        let mut q = b;
        let mut out = Vec::with_capacity(self.0.len() + 1);
        for &e in &self.0 {
            let (s, err) = two_sum(q, e);
            if err != 0.0 {
                out.push(err);
            }
            q = s;
        }
        if q != 0.0 {
            out.push(q);
        }
        self.0 = out;
    }

    fn sign(&self) -> Ordering {
        match self.0.last() {
            None => Ordering::Equal,
            Some(&v) => v.partial_cmp(&0.0).unwrap_or(Ordering::Equal),
        }
    }

    fn approx(&self) -> f64 {
        self.0.iter().sum()
    }
}

fn next_up(x: f64) -> f64 {
    x.next_up()
}

fn next_down(x: f64) -> f64 {
    x.next_down()
}

/// `sum_i n_i x_i / sum_i n_i` rounded once to the nearest double (ties to
/// even), independent of term order.
pub fn exact_weighted_mean(terms: &[(u64, f64)]) -> Result<f64> {
    let total: u64 = terms.iter().map(|t| t.0).sum();
    if total == 0 || total > (1u64 << 53) {
        return Err(Error::Aggregation(format!("total weight {total} is unusable")));
    }
    let mut s = Expansion::default();
    for &(n, x) in terms {
        if !x.is_finite() {
            return Err(Error::NonFinite("client parameters".into()));
        }
        let (p, e) = two_prod(n as f64, x);
        s.add(p);
        s.add(e);
    }
    let nf = total as f64;
    let guess = s.approx() / nf;
    // |S - c N| for each candidate, compared exactly.
    let residual = |c: f64| {
        let mut r = Expansion(s.0.clone());
        let (p, e) = two_prod(c, nf);
        r.add(-p);
        r.add(-e);
        if r.sign() == Ordering::Less {
            r.0.iter_mut().for_each(|v| *v = -*v);
        }
        r
    };
    let mut best = guess;
    let mut best_r = residual(guess);
    let mut lo = guess;
    let mut hi = guess;
    for _ in 0..3 {
        lo = next_down(lo);
        hi = next_up(hi);
        for c in [lo, hi] {
            let r = residual(c);
            let mut diff = Expansion(r.0.clone());
            for &v in &best_r.0 {
                diff.add(-v);
            }
            let better = match diff.sign() {
                Ordering::Less => true,
                Ordering::Equal => c.to_bits() & 1 == 0 && best.to_bits() & 1 == 1,
                Ordering::Greater => false,
            };
            if better {
                best = c;
                best_r = r;
            }
        }
    }
    Ok(best)
}

/// New global parameters `sum n_i theta_i / sum n_i`, per element and
/// correctly rounded. Updates are reduced in client-id order; the result
/// does not depend on that order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<Vec<Tensor>> {
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client);
    let first = order
        .first()
        .ok_or_else(|| Error::Aggregation("no client updates".into()))?;
    for u in &order {
        if u.n_samples == 0 {
            return Err(Error::Aggregation(format!("client {} reported no samples", u.client)));
        }
        let same = u.params.len() == first.params.len()
            && u.params.iter().zip(&first.params).all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::Aggregation(format!(
                "client {} parameter manifest differs from client {}",
                u.client, first.client
            )));
        }
    }
    let mut out = Vec::with_capacity(first.params.len());
    let mut terms = Vec::with_capacity(order.len());
    for (p, shape) in first.params.iter().enumerate() {
        let mut data = Vec::with_capacity(shape.len());
        for e in 0..shape.len() {
            terms.clear();
            terms.extend(order.iter().map(|u| (u.n_samples as u64, u.params[p].data()[e])));
            // All clients agree: the mean is that value.
            let x0 = terms[0].1;
            if terms.iter().all(|t| t.1.to_bits() == x0.to_bits()) && x0.is_finite() {
                data.push(x0);
            } else {
                data.push(exact_weighted_mean(&terms)?);
            }
        }
        out.push(Tensor::new(shape.shape(), data)?);
    }
    Ok(out)
}
