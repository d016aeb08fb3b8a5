use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::RunConfig;
use super::manifest::RunManifest;
use crate::artifact::{prepare_output_dir, sha256_hex};
use crate::encoder::{read_checkpoint, write_checkpoint, EncoderParams, InputDims, CHECKPOINT_MANIFEST};
use crate::error::{Error, Result};
use crate::eval::{
    check_monotone, compute_metrics, render_table, report_from_text, report_to_text, sweep,
    sweep_to_csv, MetricsReport, SweepRow, WindowPrediction,
};
use crate::features::{build_clients, FeatureFlags, Split};
use crate::fedtrain::{predict_windows, prepare_clients, run_rounds, TrainOutcome};
use crate::flat::to_flat;
use crate::telemetry::{
    dataset_checksum, read_dataset, read_manifest, simulate, write_dataset, Dataset, DatasetManifest,
};
use crate::topology::GridTopology;

pub const ROUND_LOG: &str = "rounds.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TABLE_FILE: &str = "table.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.tsv";

/// Fixed layout of one run directory.
#[derive(Clone, Debug)]
pub struct RunDirs {
    pub root: PathBuf,
}

impl RunDirs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDirs { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn eval(&self, split: Split) -> PathBuf {
        self.root.join("eval").join(split.label())
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn ablate(&self) -> PathBuf {
        self.root.join("ablate")
    }
}

fn checked(cfg: &RunConfig) -> Result<RunConfig> {
    let c = cfg.resolved();
    c.validate()?;
    Ok(c)
}

/// Lines of `a` missing from `b`, keyed for error messages.
fn differing_keys(a: &str, b: &str) -> Vec<String> {
    let lines: std::collections::BTreeSet<&str> = b.lines().collect();
    a.lines()
        .filter(|l| !lines.contains(l))
        .filter_map(|l| l.split(" = ").next())
        .map(str::to_string)
        .collect()
}

pub fn cmd_generate(cfg: &RunConfig, run: &RunDirs, force: bool) -> Result<DatasetManifest> {
    let cfg = checked(cfg)?;
    let topo = GridTopology::default_grid();
    RunManifest::new("generate", &cfg, &topo, BTreeMap::new(), &run.root)?.write(&run.root, force)?;
    let ds = simulate(&topo, &cfg.generator, &cfg.split)?;
    let m = write_dataset(&ds, &run.dataset(), force)?;
    info!("wrote dataset to {}", run.dataset().display());
    Ok(m)
}

#[derive(serde::Serialize)]
struct DatasetSpec<'a> {
    generator: &'a crate::telemetry::GeneratorConfig,
    split: &'a crate::split::SplitSpec,
}

/// Reads a dataset after checking that it was generated by `cfg`.
pub fn load_dataset(cfg: &RunConfig, dir: &Path) -> Result<(Dataset, String)> {
    let cfg = cfg.resolved();
    let m = read_manifest(dir)?;
    let want = to_flat(&DatasetSpec {
        generator: &cfg.generator,
        split: &cfg.split,
    })?;
    let have = to_flat(&DatasetSpec {
        generator: &m.generator,
        split: &m.split,
    })?;
    if want != have {
        return Err(Error::Precondition(format!(
            "dataset {} was generated with a different config (differs at: {})",
            dir.display(),
            differing_keys(&want, &have).join(", ")
        )));
    }
    let sum = dataset_checksum(dir)?;
    Ok((read_dataset(dir)?, sum))
}

/// Federated (or centralized) training on an in-memory dataset.
pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    let cfg = checked(cfg)?;
    let clients = build_clients(ds, &cfg.features)?;
    let splits = prepare_clients(&clients, cfg.fed.mode)?;
    let init = EncoderParams::init(&cfg.encoder, InputDims::from_flags(&cfg.features.flags))?;
    info!(
        "training {} trainer(s), {} parameters, {} windows",
        splits.len(),
        init.num_scalars(),
        splits.iter().map(|s| s.train.len()).sum::<usize>()
    );
    run_rounds(init, &splits, &cfg.loss, &cfg.fed, &cfg.rule)
}

fn features_digest(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(to_flat(&cfg.resolved().features)?.as_bytes()))
}

fn save_outcome(cfg: &RunConfig, out: &TrainOutcome, dir: &Path, dataset_sum: &str) -> Result<()> {
    let mut notes = BTreeMap::new();
    notes.insert("best_round".into(), out.best_round.to_string());
    notes.insert("dataset_sha256".into(), dataset_sum.to_string());
    notes.insert("features_sha256".into(), features_digest(cfg)?);
    notes.insert("mode".into(), format!("{:?}", cfg.fed.mode).to_lowercase());
    write_checkpoint(&out.best, dir, notes)?;
    fs::write(dir.join(ROUND_LOG), out.log.to_text()?)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, run: &RunDirs, dataset: &Path, force: bool) -> Result<TrainOutcome> {
    let cfg = checked(cfg)?;
    let (ds, sum) = load_dataset(&cfg, dataset)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), sum.clone());
    RunManifest::new("train", &cfg, &ds.topology, inputs, &run.root)?.write(&run.root, force)?;
    prepare_output_dir(&run.train(), force)?;
    let out = train_on(&cfg, &ds)?;
    save_outcome(&cfg, &out, &run.train(), &sum)?;
    info!("best round {} written to {}", out.best_round, run.train().display());
    Ok(out)
}

/// Eval-mode predictions for every window of `split`.
pub fn predict_split(
    cfg: &RunConfig,
    params: &EncoderParams,
    ds: &Dataset,
    split: Split,
) -> Result<Vec<WindowPrediction>> {
    let cfg = checked(cfg)?;
    let clients = build_clients(ds, &cfg.features)?;
    let windows: Vec<_> = clients.iter().flat_map(|c| c.samples(split)).collect();
    if windows.is_empty() {
        return Err(Error::Precondition(format!("the {} split has no windows", split.label())));
    }
    predict_windows(params, &windows, cfg.fed.batch_size)
}

pub fn evaluate_on(cfg: &RunConfig, params: &EncoderParams, ds: &Dataset, split: Split) -> Result<MetricsReport> {
    compute_metrics(&predict_split(cfg, params, ds, split)?, &cfg.rule)
}

/// Loads a checkpoint and checks it against the config and dataset.
pub fn load_checkpoint(cfg: &RunConfig, dir: &Path, dataset_sum: &str) -> Result<EncoderParams> {
    if !dir.join(CHECKPOINT_MANIFEST).exists() {
        return Err(Error::Precondition(format!("no checkpoint in {}", dir.display())));
    }
    let (params, m) = read_checkpoint(dir)?;
    let cfg = cfg.resolved();
    if m.inputs != InputDims::from_flags(&cfg.features.flags) || m.encoder != cfg.encoder {
        return Err(Error::Precondition(format!(
            "checkpoint {} was trained with a different encoder or input set",
            dir.display()
        )));
    }
    if m.notes.get("features_sha256") != Some(&features_digest(&cfg)?) {
        return Err(Error::Precondition(format!(
            "checkpoint {} was trained with different feature settings",
            dir.display()
        )));
    }
    if m.notes.get("dataset_sha256").map(String::as_str) != Some(dataset_sum) {
        return Err(Error::Precondition(format!(
            "checkpoint {} was trained on a different dataset",
            dir.display()
        )));
    }
    Ok(params)
}

fn stage_inputs(dataset: &str, checkpoint: &Path) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), dataset.to_string());
    inputs.insert(
        "checkpoint".into(),
        sha256_hex(&fs::read(checkpoint.join(CHECKPOINT_MANIFEST))?),
    );
    Ok(inputs)
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    run: &RunDirs,
    dataset: &Path,
    checkpoint: &Path,
    split: Split,
    force: bool,
) -> Result<MetricsReport> {
    let cfg = checked(cfg)?;
    let (ds, sum) = load_dataset(&cfg, dataset)?;
    let params = load_checkpoint(&cfg, checkpoint, &sum)?;
    let stage = format!("evaluate_{}", split.label());
    RunManifest::new(&stage, &cfg, &ds.topology, stage_inputs(&sum, checkpoint)?, &run.root)?
        .write(&run.root, force)?;
    let dir = run.eval(split);
    prepare_output_dir(&dir, force)?;
    let report = evaluate_on(&cfg, &params, &ds, split)?;
    fs::write(dir.join(REPORT_FILE), report_to_text(&report)?)?;
    fs::write(dir.join(TABLE_FILE), render_table(&report))?;
    Ok(report)
}

/// The `(tau, m)` grid on the validation split, from one set of cached
/// probabilities. Fails if FPR is not monotone over the grid.
pub fn cmd_sweep(cfg: &RunConfig, run: &RunDirs, dataset: &Path, checkpoint: &Path, force: bool) -> Result<Vec<SweepRow>> {
    let cfg = checked(cfg)?;
    let (ds, sum) = load_dataset(&cfg, dataset)?;
    let params = load_checkpoint(&cfg, checkpoint, &sum)?;
    RunManifest::new("sweep", &cfg, &ds.topology, stage_inputs(&sum, checkpoint)?, &run.root)?
        .write(&run.root, force)?;
    prepare_output_dir(&run.sweep(), force)?;
    let preds = predict_split(&cfg, &params, &ds, Split::Val)?;
    let rows = sweep(&preds, &cfg.sweep.taus, &cfg.sweep.ms, cfg.sweep.mode)?;
    fs::write(run.sweep().join(SWEEP_FILE), sweep_to_csv(&rows))?;
    check_monotone(&rows)?;
    Ok(rows)
}

/// One row of the input-ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub flags: FeatureFlags,
    pub best_round: usize,
    pub report: MetricsReport,
}

/// The four input sets, full model first.
pub fn ablation_variants() -> [(&'static str, FeatureFlags); 4] {
    let all = FeatureFlags::default();
    [
        ("all_inputs", all),
        ("no_metadata", FeatureFlags { metadata: false, ..all }),
        ("no_derived", FeatureFlags { derived: false, ..all }),
        ("no_neighbor", FeatureFlags { neighbor: false, ..all }),
    ]
}

pub fn ablation_to_tsv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant\tderived\tneighbor\tmetadata\tbest_round\tseq_f1\tseq_fpr\tseq_accuracy\ttimestep_f1_attack\n",
    );
    for r in rows {
        let g = &r.report.global.rates;
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.variant,
            r.flags.derived,
            r.flags.neighbor,
            r.flags.metadata,
            r.best_round,
            g.sequence_f1,
            g.sequence_fpr,
            g.sequence_accuracy,
            g.timestep_f1_attack
        )
        .unwrap();
    }
    s
}

/// Retrains once per input set with identical seeds and rounds and scores
/// each on the test split.
pub fn cmd_ablate(cfg: &RunConfig, run: &RunDirs, dataset: &Path, force: bool) -> Result<Vec<AblationRow>> {
    let cfg = checked(cfg)?;
    let (ds, sum) = load_dataset(&cfg, dataset)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset".into(), sum.clone());
    RunManifest::new("ablate", &cfg, &ds.topology, inputs, &run.root)?.write(&run.root, force)?;
    prepare_output_dir(&run.ablate(), force)?;
    let mut rows = Vec::new();
    for (name, flags) in ablation_variants() {
        info!("ablation variant {name}");
        let mut c = cfg.clone();
        c.features.flags = flags;
        let out = train_on(&c, &ds)?;
        let dir = run.ablate().join(name);
        save_outcome(&c, &out, &dir, &sum)?;
        let report = evaluate_on(&c, &out.best, &ds, Split::Test)?;
        fs::write(dir.join(REPORT_FILE), report_to_text(&report)?)?;
        rows.push(AblationRow {
            variant: name.into(),
            flags,
            best_round: out.best_round,
            report,
        });
        fs::write(run.ablate().join(ABLATION_FILE), ablation_to_tsv(&rows))?;
    }
    Ok(rows)
}

/// Human-readable summary of whatever stages have finished in `run`.
pub fn cmd_report(run: &RunDirs) -> Result<String> {
    let mut out = String::new();
    for split in Split::ALL {
        let path = run.eval(split).join(REPORT_FILE);
        if path.exists() {
            let r = report_from_text(&fs::read_to_string(&path)?)?;
            writeln!(out, "== {} split ==\n{}", split.label(), render_table(&r)).unwrap();
        }
    }
    let rounds = run.train().join(ROUND_LOG);
    if rounds.exists() {
        let log = crate::fedtrain::RoundLog::from_text(&fs::read_to_string(&rounds)?)?;
        writeln!(out, "== training ==").unwrap();
        for (k, r) in &log.rounds {
            writeln!(
                out,
                "{k}  val_seq_acc {:.4}  val_seq_fpr {:.4}  best {}  {:.1}s",
                r.validation.sequence_accuracy, r.validation.sequence_fpr, r.best_round, r.wall_seconds
            )
            .unwrap();
        }
        out.push('\n');
    }
    let sweep_path = run.sweep().join(SWEEP_FILE);
    if sweep_path.exists() {
        let rows = crate::eval::sweep_from_csv(&fs::read_to_string(&sweep_path)?)?;
        writeln!(out, "== validation sweep ==\ntau\tm\tseq_f1\tseq_fpr").unwrap();
        for r in rows {
            writeln!(out, "{:.2}\t{}\t{:.4}\t{:.4}", r.tau, r.m, r.seq_f1, r.seq_fpr).unwrap();
        }
        out.push('\n');
    }
    let ablation = run.ablate().join(ABLATION_FILE);
    if ablation.exists() {
        writeln!(out, "== input ablation (test) ==\n{}", fs::read_to_string(&ablation)?).unwrap();
    }
    if out.is_empty() {
        return Err(Error::Precondition(format!(
            "{} holds no finished stages",
            run.root.display()
        )));
    }
    Ok(out)
}
