//! Resumable β × d_z × seed grids.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use varleak::data::{split, GrayDigits, LabeledDataset};
use varleak::leakage::complexity_estimate;
use varleak::models::ModelBundle;
use varleak::train::{arch_for, pretrain, Splits, TrainConfig, Trainer};

use crate::commands::sample_codes;
use crate::error::{Abort, CliError, CliResult};
use crate::records::{
    append_record, completed_hashes, config_hash, read_records, AdversaryResult, ComplexityTriple, ExperimentRecord,
    Status,
};
use crate::report::emit_report;
use crate::spec::{AttackSpec, DatasetSpec, MineSpec, SweepSpec, SCHEMA_VERSION};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const PLOTS_DIR: &str = "plots";

/// Everything that determines one point's result; its hash keys resumption.
#[derive(Serialize)]
struct PointConfig<'a> {
    schema: u32,
    dataset: &'a DatasetSpec,
    split: [f64; 3],
    train: &'a TrainConfig,
    attack: &'a AttackSpec,
    data_ratios: &'a [f64],
    mine: &'a MineSpec,
}

pub struct Point {
    pub beta: f64,
    pub dz: usize,
    pub seed: u64,
    pub cfg: TrainConfig,
    pub hash: String,
}

pub fn points(spec: &SweepSpec) -> CliResult<Vec<Point>> {
    let mut out = Vec::new();
    for &beta in &spec.betas {
        for &dz in &spec.dzs {
            for &seed in &spec.seeds {
                let cfg = spec.train_config(beta, dz, seed)?;
                let hash = config_hash(&PointConfig {
                    schema: SCHEMA_VERSION,
                    dataset: &spec.dataset,
                    split: spec.split,
                    train: &cfg,
                    attack: &spec.attack,
                    data_ratios: &spec.data_ratios,
                    mine: &spec.mine,
                });
                out.push(Point { beta, dz, seed, cfg, hash });
            }
        }
    }
    Ok(out)
}

/// Worker count from `VARLEAK_THREADS`, default 1.
pub fn worker_count() -> CliResult<usize> {
    match std::env::var("VARLEAK_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Validation(format!("VARLEAK_THREADS must be a positive integer, got `{v}`"))),
        },
    }
}

fn run_point(spec: &SweepSpec, ds: &LabeledDataset, p: &Point) -> CliResult<ExperimentRecord> {
    let start = Instant::now();
    let (train, val, test) = split(ds, spec.split, p.seed).aborted("cannot split dataset")?;
    let splits = Splits { train, val, test };
    let mut bundle = ModelBundle::init(arch_for(&p.cfg, &splits.train).aborted("architecture")?, p.seed);
    pretrain(&mut bundle, &splits.train, &p.cfg).aborted("warm-up")?;
    let mut trainer = Trainer::new(p.cfg.clone(), bundle, &splits).aborted("training")?;
    trainer.run().aborted("training")?;
    let last = trainer.history.last().cloned();
    let bundle = trainer.bundle;

    let mut adversary = Vec::new();
    for &ratio in &spec.data_ratios {
        let rep = varleak::leakage::train_adversary(&bundle, &splits.train, &splits.test, &spec.attack.config(ratio, p.seed))
            .aborted("attack")?;
        adversary.push(AdversaryResult { data_ratio: ratio, accuracy: rep.accuracy, cross_entropy: rep.cross_entropy });
    }
    let mine = spec.mine.config(p.seed);
    let (z, s, u) = sample_codes(&bundle, ds, spec.mine.samples, p.seed)?;
    let mi_sz = varleak::leakage::mine_estimate_labels(&z, &s, ds.n_s, &mine).aborted("MINE I(S;Z)")?;
    let mi_uz = varleak::leakage::mine_estimate_labels(&z, &u, ds.n_u, &mine).aborted("MINE I(U;Z)")?;
    let c = complexity_estimate(&bundle, &splits.test, p.seed).aborted("complexity estimate")?;

    Ok(ExperimentRecord {
        schema: SCHEMA_VERSION,
        config_hash: p.hash.clone(),
        status: Status::Ok,
        beta: p.beta,
        dz: p.dz,
        seed: p.seed,
        error: None,
        util_acc_train: last.as_ref().map(|r| r.util_acc_train),
        util_acc_val: last.as_ref().map(|r| r.util_acc_val),
        util_acc_test: last.as_ref().map(|r| r.util_acc_test),
        adversary,
        mi_sz: Some(mi_sz),
        mi_uz: Some(mi_uz),
        complexity: Some(ComplexityTriple { kl_upper: c.kl_upper, correction: c.correction, corrected: c.corrected }),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Outcome counts of one sweep invocation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepSummary {
    pub total: usize,
    pub skipped: usize,
    pub ok: usize,
    pub failed: usize,
}

pub fn run_sweep(spec_path: &std::path::Path) -> CliResult<SweepSummary> {
    let spec = SweepSpec::load(spec_path)?;
    let threads = worker_count()?;
    let digits: GrayDigits = spec.dataset.load_digits()?;
    let all = points(&spec)?;

    std::fs::create_dir_all(&spec.output).aborted("cannot create sweep output directory")?;
    let records_path: PathBuf = spec.output.join(RECORDS_FILE);
    let done = completed_hashes(&read_records(&records_path)?);
    let todo: Vec<&Point> = all.iter().filter(|p| !done.contains(&p.hash)).collect();
    let mut summary = SweepSummary { total: all.len(), skipped: all.len() - todo.len(), ..Default::default() };
    log::info!("{} points, {} already complete, {threads} worker(s)", all.len(), summary.skipped);

    // The colored dataset depends only on the seed; share it across points.
    let mut datasets: HashMap<u64, LabeledDataset> = HashMap::new();
    for p in &todo {
        if !datasets.contains_key(&p.seed) {
            datasets.insert(p.seed, spec.dataset.build(&digits, p.seed)?);
        }
    }

    let next = AtomicUsize::new(0);
    let counts = Mutex::new((0usize, 0usize));
    let io_error: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(todo.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = todo.get(i) else { break };
                let start = Instant::now();
                let outcome = catch_unwind(AssertUnwindSafe(|| run_point(&spec, &datasets[&p.seed], p)))
                    .unwrap_or_else(|_| Err(CliError::Runtime("worker panicked".into())));
                let record = match outcome {
                    Ok(r) => {
                        log::info!("β={} d_z={} seed={} done in {:.1}s", p.beta, p.dz, p.seed, r.wall_seconds);
                        counts.lock().unwrap().0 += 1;
                        r
                    }
                    Err(e) => {
                        log::warn!("β={} d_z={} seed={} failed: {e}", p.beta, p.dz, p.seed);
                        counts.lock().unwrap().1 += 1;
                        ExperimentRecord::failed(p.hash.clone(), p.beta, p.dz, p.seed, e.to_string(), start.elapsed().as_secs_f64())
                    }
                };
                if let Err(e) = append_record(&records_path, &record) {
                    *io_error.lock().unwrap() = Some(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    (summary.ok, summary.failed) = counts.into_inner().unwrap();
    emit_report(&records_path, &spec.output.join(PLOTS_DIR))?;
    Ok(summary)
}
