use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::generate::{Dataset, NodeSeries};
use super::schedule::{events_from_text, events_to_text, AttackSchedule};
use crate::artifact::{fmt_f64, parse_f64, prepare_output_dir, read_verified, sha256_hex, write_checked};
use crate::error::{Error, Result};
use crate::flat::{from_flat, to_flat};
use crate::split::SplitSpec;
use crate::topology::{GridTopology, TOPOLOGY_VERSION};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub topology_version: u32,
    pub generator: GeneratorConfig,
    pub split: SplitSpec,
    /// File path (with `/` and `.` mapped to `_`) to SHA-256.
    pub files: BTreeMap<String, String>,
}

fn file_key(rel: &str) -> String {
    rel.replace(['/', '.'], "_")
}

pub fn node_file(node: usize) -> String {
    format!("frames/node_{node:02}.tsv")
}

pub fn frame_header(n_sub: usize) -> String {
    let mut h = String::from("t");
    for k in 0..n_sub {
        write!(h, "\tcsi_re_{k}\tcsi_im_{k}").unwrap();
    }
    h.push_str("\tsnr_db\tlatency_ms\tper\ttx_count\ttime_since_last_tx\tlabel");
    h
}

pub fn series_to_text(s: &NodeSeries) -> String {
    let mut out = frame_header(s.n_sub);
    out.push('\n');
    for t in 0..s.len() {
        write!(out, "{t}").unwrap();
        for c in s.csi_at(t) {
            write!(out, "\t{}\t{}", fmt_f64(c.re), fmt_f64(c.im)).unwrap();
        }
        writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t{}",
            fmt_f64(s.snr_db[t]),
            fmt_f64(s.latency_ms[t]),
            fmt_f64(s.per[t]),
            fmt_f64(s.tx_count[t]),
            s.time_since_last_tx[t],
            s.label[t]
        )
        .unwrap();
    }
    out
}

pub fn series_from_text(
    text: &str,
    node: usize,
    n_sub: usize,
    f_off_hz: f64,
    t_symb: f64,
) -> Result<NodeSeries> {
    let mut lines = text.lines();
    if lines.next() != Some(frame_header(n_sub).as_str()) {
        return Err(Error::Format(format!("node {node}: frame header mismatch")));
    }
    let mut s = NodeSeries {
        node,
        n_sub,
        f_off_hz,
        t_symb,
        csi: Vec::new(),
        snr_db: Vec::new(),
        latency_ms: Vec::new(),
        per: Vec::new(),
        tx_count: Vec::new(),
        time_since_last_tx: Vec::new(),
        label: Vec::new(),
    };
    let width = 1 + 2 * n_sub + 6;
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("node {node}: bad frame row {row}"));
        if f.len() != width || f[0].parse::<usize>().ok() != Some(row) {
            return Err(bad());
        }
        for k in 0..n_sub {
            s.csi
                .push(Complex64::new(parse_f64(f[1 + 2 * k])?, parse_f64(f[2 + 2 * k])?));
        }
        let o = 1 + 2 * n_sub;
        s.snr_db.push(parse_f64(f[o])?);
        s.latency_ms.push(parse_f64(f[o + 1])?);
        s.per.push(parse_f64(f[o + 2])?);
        s.tx_count.push(parse_f64(f[o + 3])?);
        s.time_since_last_tx.push(f[o + 4].parse().map_err(|_| bad())?);
        let label: u8 = f[o + 5].parse().map_err(|_| bad())?;
        if label > 1 {
            return Err(bad());
        }
        s.label.push(label);
    }
    Ok(s)
}

/// Writes the dataset directory and returns its manifest. The manifest
/// lists the SHA-256 of every other file.
pub fn write_dataset(ds: &Dataset, dir: &Path, force: bool) -> Result<DatasetManifest> {
    prepare_output_dir(dir, force)?;
    let mut files = BTreeMap::new();
    let mut put = |rel: &str, text: String| -> Result<()> {
        let sum = write_checked(&dir.join(rel), text.as_bytes())?;
        files.insert(file_key(rel), sum);
        Ok(())
    };
    put("topology.tsv", ds.topology.to_text())?;
    put("schedule.tsv", ds.schedule.to_text())?;
    put("events.tsv", events_to_text(&ds.events))?;
    for s in &ds.series {
        put(&node_file(s.node), series_to_text(s))?;
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        topology_version: TOPOLOGY_VERSION,
        generator: ds.config.clone(),
        split: ds.split.clone(),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), to_flat(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Precondition(format!("cannot read dataset manifest {}: {e}", path.display()))
    })?;
    let m: DatasetManifest = from_flat(&text)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {} is not supported",
            m.format_version
        )));
    }
    Ok(m)
}

/// Checksum of the manifest file, which pins every other file.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(dir.join(MANIFEST_FILE))?))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let load = |rel: &str| -> Result<String> {
        let sum = m
            .files
            .get(&file_key(rel))
            .ok_or_else(|| Error::Format(format!("manifest does not list {rel}")))?;
        String::from_utf8(read_verified(&dir.join(rel), sum)?)
            .map_err(|_| Error::Format(format!("{rel} is not UTF-8")))
    };
    let topology = GridTopology::from_text(&load("topology.tsv")?)?;
    let schedule = AttackSchedule::from_text(&load("schedule.tsv")?)?;
    let events = events_from_text(&load("events.tsv")?)?;
    let mut series = Vec::with_capacity(topology.len());
    for n in topology.nodes() {
        let prof = m.generator.tech.get(n.technology);
        let s = series_from_text(
            &load(&node_file(n.id))?,
            n.id,
            m.generator.n_sub,
            prof.f_off_hz,
            m.generator.t_symb,
        )?;
        if s.len() != m.generator.timesteps {
            return Err(Error::Format(format!(
                "node {} has {} frames, manifest says {}",
                n.id,
                s.len(),
                m.generator.timesteps
            )));
        }
        series.push(s);
    }
    Ok(Dataset {
        topology,
        config: m.generator,
        split: m.split,
        schedule,
        events,
        series,
    })
}
