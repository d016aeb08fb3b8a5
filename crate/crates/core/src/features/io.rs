use std::fmt::Write as _;

use super::build::{neighbor_column_names, raw_column_names, ClientData, FeatureFlags};
use super::stats::F_NBR;
use crate::artifact::fmt_f64;

/// Normalized features of one client, one row per timestep, in the frame
/// table layout.
pub fn client_to_text(c: &ClientData, flags: &FeatureFlags) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend(raw_column_names(flags));
    cols.extend(neighbor_column_names(c.k()));
    cols.extend((0..c.meta.len()).map(|i| format!("meta_{i}")));
    cols.push("label".into());
    let mut out = cols.join("\t");
    out.push('\n');
    for t in 0..c.total {
        write!(out, "{t}").unwrap();
        for v in c.raw_row(t) {
            write!(out, "\t{}", fmt_f64(*v)).unwrap();
        }
        for j in 0..c.k() {
            for v in &c.nbr_row(t, j)[..F_NBR] {
                write!(out, "\t{}", fmt_f64(*v)).unwrap();
            }
        }
        for v in &c.meta {
            write!(out, "\t{}", fmt_f64(*v)).unwrap();
        }
        writeln!(out, "\t{}", c.labels[t]).unwrap();
    }
    out
}
