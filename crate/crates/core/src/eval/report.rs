use std::fmt::Write as _;

use super::metrics::{MetricsReport, SectionMetrics};
use crate::error::{Error, Result};
use crate::flat::{from_flat, to_flat};

pub fn report_to_text(r: &MetricsReport) -> Result<String> {
    to_flat(r)
}

/// Parses a report and checks that every stored rate matches its counts.
pub fn report_from_text(text: &str) -> Result<MetricsReport> {
    let r: MetricsReport = from_flat(text)?;
    let sections = std::iter::once(("global", &r.global))
        .chain(r.clients.iter().map(|(k, v)| (k.as_str(), v)));
    for (name, s) in sections {
        if s.rates != s.derive_rates() {
            return Err(Error::Format(format!("report section {name}: rates do not match counts")));
        }
    }
    Ok(r)
}

fn row(out: &mut String, name: &str, s: &SectionMetrics) {
    let r = &s.rates;
    writeln!(
        out,
        "{name:<10} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        s.windows,
        r.timestep_accuracy,
        r.timestep_f1_attack,
        r.sequence_accuracy,
        r.sequence_precision,
        r.sequence_recall,
        r.sequence_f1,
        r.sequence_fpr,
    )
    .unwrap();
}

/// Human-readable summary with one row per client and a global row.
pub fn render_table(r: &MetricsReport) -> String {
    let mut out = format!(
        "operating point: tau = {}, m = {}, mode = {}\n",
        r.rule.tau, r.rule.m, r.rule.mode
    );
    writeln!(
        out,
        "{:<10} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "section", "windows", "ts_acc", "ts_f1", "seq_acc", "seq_p", "seq_r", "seq_f1", "seq_fpr"
    )
    .unwrap();
    for (k, s) in &r.clients {
        row(&mut out, k, s);
    }
    row(&mut out, "global", &r.global);
    let (t, s) = (&r.global.timestep, &r.global.sequence);
    writeln!(
        out,
        "timestep confusion: TP {} FP {} TN {} FN {}\nsequence confusion: TP {} FP {} TN {} FN {}\nexact match: {:.4}",
        t.tp, t.fp, t.tn, t.fn_, s.tp, s.fp, s.tn, s.fn_, r.global.rates.exact_match_rate
    )
    .unwrap();
    out
}
