use std::fmt::Write as _;

use super::metrics::{Confusion, WindowPrediction};
use super::rule::{decide_sequence, decide_timesteps, DecisionMode};
use crate::artifact::{fmt_f64, parse_f64};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub m: usize,
    pub mode: DecisionMode,
    pub sequence: Confusion,
    pub seq_f1: f64,
    pub seq_fpr: f64,
    pub seq_precision: f64,
    pub seq_recall: f64,
    pub timestep_f1: f64,
}

/// `0.40, 0.45, ..., 0.70`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..7).map(|i| (40 + 5 * i) as f64 / 100.0).collect()
}

pub fn default_m_grid() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

/// One row per `(tau, m)` from cached probabilities, `tau` outermost.
pub fn sweep(preds: &[WindowPrediction], taus: &[f64], ms: &[usize], mode: DecisionMode) -> Result<Vec<SweepRow>> {
    if taus.is_empty() || ms.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Config(format!("sweep tau {t} outside (0, 1)")));
    }
    if ms.contains(&0) {
        return Err(Error::Config("sweep m must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(taus.len() * ms.len());
    for &tau in taus {
        let decided: Vec<Vec<u8>> = preds.iter().map(|p| decide_timesteps(&p.probs, tau)).collect();
        let mut ts = Confusion::default();
        for (yhat, p) in decided.iter().zip(preds) {
            for (&a, &b) in yhat.iter().zip(&p.labels) {
                ts.add(a, b);
            }
        }
        for &m in ms {
            let mut seq = Confusion::default();
            for (yhat, p) in decided.iter().zip(preds) {
                seq.add(decide_sequence(yhat, m, mode), p.seq_label());
            }
            rows.push(SweepRow {
                tau,
                m,
                mode,
                sequence: seq,
                seq_f1: seq.f1(),
                seq_fpr: seq.fpr(),
                seq_precision: seq.precision(),
                seq_recall: seq.recall(),
                timestep_f1: ts.f1(),
            });
        }
    }
    Ok(rows)
}

/// Lists every grid point where sequence FPR rises with `tau` at fixed `m`
/// or, in consecutive mode, with `m` at fixed `tau`.
pub fn check_monotone(rows: &[SweepRow]) -> Result<()> {
    let mut bad = Vec::new();
    for a in rows {
        for b in rows {
            if a.mode != b.mode {
                continue;
            }
            let tau_step = a.m == b.m && b.tau > a.tau;
            let m_step = a.mode == DecisionMode::Consecutive && a.tau == b.tau && b.m > a.m;
            if (tau_step || m_step) && b.sequence.fp > a.sequence.fp {
                bad.push(format!("({}, {}) -> ({}, {})", a.tau, a.m, b.tau, b.m));
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!(
            "sequence FPR increases at {}",
            bad.join(", ")
        )))
    }
}

const CSV_HEADER: &str = "tau,m,mode,tp,fp,tn,fn,seq_precision,seq_recall,seq_f1,seq_fpr,timestep_f1";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.sequence;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.tau),
            r.m,
            r.mode,
            s.tp,
            s.fp,
            s.tn,
            s.fn_,
            fmt_f64(r.seq_precision),
            fmt_f64(r.seq_recall),
            fmt_f64(r.seq_f1),
            fmt_f64(r.seq_fpr),
            fmt_f64(r.timestep_f1)
        )
        .unwrap();
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("sweep table header mismatch".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("bad sweep row {line:?}"));
            if f.len() != 12 {
                return Err(bad());
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad());
            Ok(SweepRow {
                tau: parse_f64(f[0])?,
                m: f[1].parse().map_err(|_| bad())?,
                mode: f[2].parse()?,
                sequence: Confusion {
                    tp: int(f[3])?,
                    fp: int(f[4])?,
                    tn: int(f[5])?,
                    fn_: int(f[6])?,
                },
                seq_precision: parse_f64(f[7])?,
                seq_recall: parse_f64(f[8])?,
                seq_f1: parse_f64(f[9])?,
                seq_fpr: parse_f64(f[10])?,
                timestep_f1: parse_f64(f[11])?,
            })
        })
        .collect()
}
