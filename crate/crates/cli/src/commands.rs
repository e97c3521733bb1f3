use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use varleak::data::{load_dataset, save_dataset, split, DiscreteJoint, LabeledDataset, Roles, COLOR_NAMES};
use varleak::gauss::standard_normal;
use varleak::leakage::{
    complexity_estimate, markov_identity_check, mine_estimate_labels, train_adversary, AttackConfig, Codes, MineConfig,
};
use varleak::models::{load_bundle, save_bundle, ModelBundle};
use varleak::train::{arch_for, pretrain, write_metrics_csv, Splits, TrainConfig, Trainer};
use varleak::compute::Tensor;

use crate::args::{
    AttackArgs, EncoderArgs, EstimateArgs, GenerateArgs, ModelArgs, OracleCommand, PretrainArgs, RolesArg, TrainArgs,
};
use crate::error::{Abort, CliError, CliResult, Validate};
use crate::records::{append_report, config_hash, ReportRow};
use crate::spec::{parse_fractions, parse_list, validate_ratios, DatasetSpec, Source, TrainOverrides, SCHEMA_VERSION};

/// What `train` leaves beside its checkpoint so later commands can
/// recover the split and β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub schema: u32,
    pub config_hash: String,
    pub data: PathBuf,
    pub split: [f64; 3],
    pub config: TrainConfig,
}

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.vlmb";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn generate(a: &GenerateArgs) -> CliResult<()> {
    let source = match (&a.source.mnist_dir, &a.source.images, a.source.synthetic) {
        (Some(path), _, _) => Source::MnistDir { path: path.clone() },
        (_, Some(images), _) => Source::Idx {
            images: images.clone(),
            labels: a.labels.clone().ok_or_else(|| CliError::Validation("--images needs --labels".into()))?,
        },
        (_, _, Some(count)) => Source::Synthetic { count, seed: a.seed },
        _ => return Err(CliError::Validation("no digit source given".into())),
    };
    let spec = DatasetSpec {
        source,
        colors: a.colors.clone(),
        roles: match a.roles {
            RolesArg::Digit => Roles::DigitUtility,
            RolesArg::Color => Roles::ColorUtility,
        },
        limit: a.limit,
        decouple_sensitive: a.decouple_sensitive,
    };
    spec.validate()?;
    let digits = spec.load_digits()?;
    let ds = spec.build(&digits, a.seed)?;
    save_dataset(&a.out, &ds).aborted("cannot write dataset")?;

    let colors = match spec.roles {
        Roles::DigitUtility => ds.s_frequencies(),
        Roles::ColorUtility => ds.u_frequencies(),
    };
    println!("wrote {} examples to {}", ds.len(), a.out.display());
    println!("|U| = {}, |S| = {}", ds.n_u, ds.n_s);
    let marginals: Vec<String> = COLOR_NAMES.iter().zip(&colors).map(|(n, f)| format!("{n} {f:.4}")).collect();
    println!("color marginals: {}", marginals.join(", "));
    Ok(())
}

struct Setup {
    cfg: TrainConfig,
    splits: Splits,
    fractions: [f64; 3],
}

fn setup(m: &ModelArgs) -> CliResult<Setup> {
    let fractions = parse_fractions(&m.split)?;
    let mut cfg = TrainConfig::preset(&m.preset, m.beta, m.dz, m.seed).invalid("bad --preset")?;
    TrainOverrides {
        iterations: m.iterations,
        batch: m.batch,
        warmup_iterations: m.warmup_iterations,
        warmup_batch: m.warmup_batch,
        eval_every: m.eval_every,
        patience: m.patience,
    }
    .apply(&mut cfg);
    cfg.validate().invalid("bad training settings")?;
    let ds = load_dataset(&m.data).invalid(&format!("cannot load {}", m.data.display()))?;
    let (train, val, test) = split(&ds, fractions, m.seed).invalid("cannot split dataset")?;
    let splits = Splits { train, val, test };
    arch_for(&cfg, &splits.train).invalid("preset does not fit the dataset")?;
    Ok(Setup { cfg, splits, fractions })
}

fn require_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::Validation(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

pub fn pretrain_cmd(a: &PretrainArgs) -> CliResult<()> {
    let s = setup(&a.model)?;
    require_parent(&a.out)?;
    let mut bundle = ModelBundle::init(arch_for(&s.cfg, &s.splits.train).aborted("architecture")?, s.cfg.seed);
    let losses = pretrain(&mut bundle, &s.splits.train, &s.cfg).aborted("warm-up aborted")?;
    save_bundle(&a.out, &bundle).aborted("cannot write checkpoint")?;
    match losses.last() {
        Some(l) => println!("warm-up: {} steps, final block-(1) loss {l:.4}", losses.len()),
        None => println!("warm-up: no steps configured"),
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let s = setup(&a.model)?;
    if a.checkpoint_every == Some(0) {
        return Err(CliError::Validation("--checkpoint-every must be positive".into()));
    }
    let arch = arch_for(&s.cfg, &s.splits.train).invalid("preset does not fit the dataset")?;
    let init = match &a.init {
        Some(path) => {
            let b = load_bundle(path).invalid(&format!("cannot load {}", path.display()))?;
            if b.arch != arch {
                return Err(CliError::Validation(format!(
                    "checkpoint {} was built for a different architecture (d_z {} vs {})",
                    path.display(),
                    b.arch.d_z,
                    arch.d_z
                )));
            }
            Some(b)
        }
        None => None,
    };

    fs::create_dir_all(&a.out_dir).aborted("cannot create output directory")?;
    let bundle = match init {
        Some(b) => b,
        None => {
            let mut b = ModelBundle::init(arch, s.cfg.seed);
            pretrain(&mut b, &s.splits.train, &s.cfg).aborted("warm-up aborted")?;
            b
        }
    };
    let mut trainer = Trainer::new(s.cfg.clone(), bundle, &s.splits).aborted("cannot start training")?;
    let every = a.checkpoint_every;
    let out_dir = a.out_dir.clone();
    trainer
        .run_with(|t| {
            if every.is_some_and(|k| t.iteration % k == 0) {
                save_bundle(&out_dir.join(format!("checkpoint-{:06}.vlmb", t.iteration)), &t.bundle)?;
            }
            Ok(())
        })
        .aborted("training aborted")?;

    save_bundle(&a.out_dir.join(CHECKPOINT_FILE), &trainer.bundle).aborted("cannot write checkpoint")?;
    let metrics = fs::File::create(a.out_dir.join(METRICS_FILE)).aborted("cannot write metrics")?;
    write_metrics_csv(metrics, &trainer.history).aborted("cannot write metrics")?;
    let info = RunInfo {
        schema: SCHEMA_VERSION,
        config_hash: config_hash(&(&s.cfg, &s.fractions, &a.model.data)),
        data: a.model.data.clone(),
        split: s.fractions,
        config: s.cfg,
    };
    fs::write(a.out_dir.join(RUN_FILE), serde_json::to_string_pretty(&info).expect("serializes"))
        .aborted("cannot write run description")?;
    if let Some(last) = trainer.history.last() {
        println!(
            "iteration {}: utility accuracy train {:.4} val {:.4} test {:.4}; kl_upper {:.4}, correction {:.4}",
            last.iter, last.util_acc_train, last.util_acc_val, last.util_acc_test, last.kl_upper, last.kl_correction
        );
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

struct Encoder {
    bundle: ModelBundle,
    data: LabeledDataset,
    splits: Splits,
    beta: Option<f64>,
}

fn load_encoder(e: &EncoderArgs) -> CliResult<Encoder> {
    let bundle = load_bundle(&e.checkpoint).invalid(&format!("cannot load {}", e.checkpoint.display()))?;
    if let Some(dz) = e.dz {
        if dz != bundle.arch.d_z {
            return Err(CliError::Validation(format!(
                "checkpoint has d_z = {} but the evaluation is configured for d_z = {dz}",
                bundle.arch.d_z
            )));
        }
    }
    let data = load_dataset(&e.data).invalid(&format!("cannot load {}", e.data.display()))?;
    let shape = data.input_shape(bundle.arch.layout());
    if shape != bundle.arch.input_shape() || data.n_u != bundle.arch.n_u || data.n_s != bundle.arch.n_s {
        return Err(CliError::Validation(format!(
            "dataset (inputs {shape:?}, |U| {}, |S| {}) does not match the checkpoint (inputs {:?}, |U| {}, |S| {})",
            data.n_u,
            data.n_s,
            bundle.arch.input_shape(),
            bundle.arch.n_u,
            bundle.arch.n_s
        )));
    }
    let run_path = e.run.clone().or_else(|| {
        let p = e.checkpoint.parent().unwrap_or(Path::new(".")).join(RUN_FILE);
        p.exists().then_some(p)
    });
    let (fractions, split_seed, beta) = match run_path {
        Some(p) => {
            let text = fs::read_to_string(&p).invalid(&format!("cannot read {}", p.display()))?;
            let info: RunInfo = serde_json::from_str(&text).invalid(&format!("bad run description {}", p.display()))?;
            (info.split, info.config.seed, Some(info.config.beta))
        }
        None => (parse_fractions(&e.split)?, e.split_seed, e.beta),
    };
    let (train, val, test) = split(&data, fractions, split_seed).invalid("cannot split dataset")?;
    require_parent(&e.report)?;
    Ok(Encoder { bundle, data, splits: Splits { train, val, test }, beta })
}

pub fn attack_cmd(a: &AttackArgs) -> CliResult<()> {
    let ratios = parse_list(&a.ratios, "ratio")?;
    validate_ratios(&ratios)?;
    AttackConfig { data_ratio: 1.0, epochs: a.epochs, batch: a.attack_batch, lr: a.lr, seed: a.encoder.seed }
        .validate()
        .invalid("bad attack settings")?;
    let enc = load_encoder(&a.encoder)?;
    let complexity = complexity_estimate(&enc.bundle, &enc.splits.test, a.encoder.seed).aborted("complexity estimate")?;
    let mut rows = Vec::new();
    for &ratio in &ratios {
        let cfg = AttackConfig { data_ratio: ratio, epochs: a.epochs, batch: a.attack_batch, lr: a.lr, seed: a.encoder.seed };
        let rep = train_adversary(&enc.bundle, &enc.splits.train, &enc.splits.test, &cfg).aborted("attack aborted")?;
        println!("data ratio {ratio}: adversary accuracy {:.4}, cross-entropy {:.4} nats", rep.accuracy, rep.cross_entropy);
        rows.push(ReportRow {
            beta: enc.beta,
            dz: enc.bundle.arch.d_z,
            data_ratio: Some(ratio),
            adv_acc: Some(rep.accuracy),
            adv_xent: Some(rep.cross_entropy),
            kl_upper: Some(complexity.kl_upper),
            kl_correction: Some(complexity.correction),
            ..Default::default()
        });
    }
    append_report(&a.encoder.report, &rows)
}

/// Draws codes `z = μ + σ ⊙ ε` for up to `samples` examples of `ds`.
pub fn sample_codes(bundle: &ModelBundle, ds: &LabeledDataset, samples: usize, seed: u64) -> CliResult<(Tensor, Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(samples);
    let sub = ds.subset(&idx, ds.split);
    let codes = Codes::from_bundle(bundle, &sub).aborted("encoding failed")?;
    let eps = standard_normal(codes.mu.shape(), &mut rng);
    let z: Vec<f64> = codes
        .mu
        .data()
        .iter()
        .zip(codes.sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    let z = Tensor::new(codes.mu.shape().to_vec(), z).aborted("encoding failed")?;
    Ok((z, sub.s.clone(), sub.u.clone()))
}

pub fn mine_pair(bundle: &ModelBundle, ds: &LabeledDataset, samples: usize, cfg: &MineConfig) -> CliResult<(f64, f64)> {
    let (z, s, u) = sample_codes(bundle, ds, samples, cfg.seed)?;
    let sz = mine_estimate_labels(&z, &s, ds.n_s, cfg).aborted("MINE on the sensitive attribute")?;
    let uz = mine_estimate_labels(&z, &u, ds.n_u, cfg).aborted("MINE on the utility attribute")?;
    Ok((sz.value, uz.value))
}

pub fn estimate_cmd(a: &EstimateArgs) -> CliResult<()> {
    if a.steps == 0 || a.samples < 2 {
        return Err(CliError::Validation("MINE needs at least one step and two samples".into()));
    }
    let enc = load_encoder(&a.encoder)?;
    let cfg = MineConfig { steps: a.steps, seed: a.encoder.seed, ..Default::default() };
    let (mi_sz, mi_uz) = mine_pair(&enc.bundle, &enc.data, a.samples, &cfg)?;
    let complexity = complexity_estimate(&enc.bundle, &enc.splits.test, a.encoder.seed).aborted("complexity estimate")?;
    println!("I(S;Z) ≈ {mi_sz:.4} nats, I(U;Z) ≈ {mi_uz:.4} nats (MINE, {} steps)", a.steps);
    println!(
        "complexity: kl_upper {:.4}, correction {:.4}, corrected {:.4}",
        complexity.kl_upper, complexity.correction, complexity.corrected
    );
    let row = ReportRow {
        beta: enc.beta,
        dz: enc.bundle.arch.d_z,
        mi_sz_mine: Some(mi_sz),
        mi_uz_mine: Some(mi_uz),
        kl_upper: Some(complexity.kl_upper),
        kl_correction: Some(complexity.correction),
        ..Default::default()
    };
    append_report(&a.encoder.report, &[row])
}

fn parse_table(text: &str) -> CliResult<DiscreteJoint> {
    let rows: Vec<Vec<f64>> = text.split(';').map(|r| parse_list(r, "table")).collect::<CliResult<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Validation("table rows must be non-empty and equally long".into()));
    }
    DiscreteJoint::new(vec![rows.len(), cols], rows.concat()).invalid("bad table")
}

fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2) + 1e-12).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

pub fn oracle_cmd(c: &OracleCommand) -> CliResult<()> {
    match c {
        OracleCommand::Mi { table } => {
            let joint = parse_table(table)?;
            let mi = varleak::leakage::exact_mi(&joint, &[0], &[1]).aborted("exact MI")?;
            println!("I(A;B) = {:.6} bits = {:.6} nats", mi.bits, mi.nats);
        }
        &OracleCommand::Markov { instances, max_alphabet, seed } => {
            if instances == 0 || !(1..=varleak::leakage::MAX_MARKOV_ALPHABET).contains(&max_alphabet) {
                return Err(CliError::Validation(format!(
                    "need at least one instance and alphabets in 1..={}",
                    varleak::leakage::MAX_MARKOV_ALPHABET
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut residual, mut margin) = (0.0f64, f64::INFINITY);
            for _ in 0..instances {
                let (ns, nx, nz) =
                    (rng.gen_range(1..=max_alphabet), rng.gen_range(1..=max_alphabet), rng.gen_range(1..=max_alphabet));
                let p_sx = DiscreteJoint::new(vec![ns, nx], random_simplex(ns * nx, &mut rng)).aborted("instance")?;
                let channel: Vec<Vec<f64>> = (0..nx).map(|_| random_simplex(nz, &mut rng)).collect();
                let r = markov_identity_check(&p_sx, &channel).aborted("identity check")?;
                residual = residual.max(r.residual.abs());
                margin = margin.min(r.dpi_margin);
            }
            println!("{instances} instances: max |residual| {residual:.3e}, min DPI margin {margin:.3e}");
            if residual > 1e-10 || margin < -1e-10 {
                return Err(CliError::Runtime("identity violated beyond 1e-10".into()));
            }
        }
    }
    Ok(())
}
