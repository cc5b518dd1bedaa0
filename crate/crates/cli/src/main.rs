use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use equinet::config::RunConfig;
use equinet::data::{gen_distance_sum, gen_two_dipole, load_dir, read_exclusion_list, split, write_dataset, Dataset, Manifest, Molecule, SplitKind};
use equinet::experiments::{ablate, check_equivariance, search, trials_csv};
use equinet::layers::Vocabulary;
use equinet::model::{build_model, ModelConfig, Variant};
use equinet::train::{evaluate, load_model, metrics_csv, save_model, MetricRecord, Trainer};

#[derive(Parser)]
#[command(name = "equinet", version, about = "Equivariant point-cloud networks for molecular property regression")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of `.xyz` files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Target column(s), comma separated; overrides the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    target: Vec<String>,
    /// Seed for weight initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Model variant (L1, L0, L0Deep, L0Outdeep, L0BothDeep, MultiTarget).
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and save it with its metrics.
    Train {
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Report errors of a saved model on a dataset split.
    Evaluate {
        /// Directory holding `model.bin` and `model.json`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Train several variants on the same split and compare them.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "L1,L0,L0Deep")]
        variants: Vec<Variant>,
    },
    /// Audit rotation, translation and permutation symmetry.
    CheckEquivariance {
        /// Saved model to audit; a freshly initialized one otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        transforms: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Molecules taken from `--data` when given.
        #[arg(long, default_value_t = 4)]
        molecules: usize,
    },
    /// Write a synthetic dataset.
    GenData {
        #[arg(value_enum)]
        kind: GenKind,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Atoms per distance-sum sample.
        #[arg(long, default_value_t = 4)]
        atoms: usize,
    },
    /// Random hyperparameter search with the multi-target loss.
    Search {
        #[arg(long, default_value_t = 40)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitKind::Train,
            SplitArg::Val => SplitKind::Val,
            SplitArg::Test => SplitKind::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    TwoDipole,
    DistanceSum,
}

struct Run {
    common: Common,
    cfg: RunConfig,
}

impl Run {
    fn new(common: Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = common.variant {
            cfg.model = cfg.model.for_variant(v);
        }
        if !common.target.is_empty() {
            cfg.model.targets = common.target.clone();
        }
        if let Some(s) = common.seed {
            cfg.train.seed = s;
        }
        Ok(Self { common, cfg })
    }

    fn seed(&self) -> u64 {
        self.cfg.train.seed
    }

    fn model_config(&self) -> ModelConfig {
        self.cfg.model_config()
    }

    fn dataset(&self) -> Result<Dataset> {
        let dir = self.common.data.as_ref().context("--data is required for this command")?;
        let exclude = self.cfg.data.exclude.as_deref().map(read_exclusion_list).transpose()?;
        let all = load_dir(dir, exclude.as_ref()).with_context(|| format!("loading {}", dir.display()))?;
        if all.is_empty() {
            bail!("no molecules found in {}", dir.display());
        }
        let (n_train, n_val) = self.cfg.data.split_sizes(all.len());
        Ok(split(&all, n_train, n_val, self.cfg.data.split_seed)?)
    }

    fn out(&self) -> Result<&Path> {
        fs::create_dir_all(&self.common.out).with_context(|| format!("creating {}", self.common.out.display()))?;
        Ok(&self.common.out)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out()?.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn write_manifest(&self, command: &str, extra: serde_json::Value) -> Result<()> {
        let manifest = json!({
            "command": command,
            "git": git_describe(),
            "data": self.common.data,
            "seeds": {
                "model": self.cfg.train.seed,
                "shuffle": self.cfg.train.seed,
                "split": self.cfg.data.split_seed,
            },
            "config": self.cfg,
            "details": extra,
        });
        self.write("manifest.json", serde_json::to_string_pretty(&manifest)?)
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn report_lines(split: SplitKind, epoch: usize, report: &equinet::train::EvalReport, lr: f64) -> Vec<MetricRecord> {
    report
        .mae
        .iter()
        .map(|(t, mae)| MetricRecord {
            epoch,
            split,
            target: t.clone(),
            mae: *mae,
            mse: report.mse[t],
            lr,
        })
        .collect()
}

const CHECKPOINT: &str = "checkpoint";

fn cmd_train(run: &Run, resume: bool) -> Result<()> {
    let ds = run.dataset()?;
    let out = run.out()?.to_path_buf();
    let mut trainer = if resume {
        Trainer::resume(&out, CHECKPOINT, &ds).context("resuming from checkpoint")?
    } else {
        let model = build_model(&run.model_config(), run.seed())?;
        eprintln!("{} with {} parameters", model.config.variant, model.parameter_count());
        Trainer::new(model, &ds, run.cfg.train.clone())?
    };
    run.write_manifest("train", json!({ "resume": resume, "molecules": ds.len() }))?;
    while let Some(s) = trainer.run_epoch()? {
        eprintln!(
            "epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}{}",
            s.epoch,
            s.train_loss,
            s.val_loss,
            s.lr,
            if s.improved { "  *" } else { "" }
        );
        trainer.save_checkpoint(&out, CHECKPOINT, run.seed())?;
    }
    trainer.restore_best()?;
    let mut history = trainer.state().history.clone();
    let last_lr = trainer.state().lr;
    let epoch = trainer.state().epoch;
    let model = trainer.into_model();
    let test = evaluate(&model, &ds, SplitKind::Test)?;
    history.extend(report_lines(SplitKind::Test, epoch, &test, last_lr));
    for (t, mae) in &test.mae {
        println!("test {t}: MAE {mae:.6} MSE {:.6e} over {} molecules", test.mse[t], test.n);
    }
    save_model(&out, &model, run.seed())?;
    run.write("metrics.csv", metrics_csv(&history))
}

fn cmd_evaluate(run: &Run, model_dir: &Path, split_arg: SplitArg) -> Result<()> {
    let model = load_model(model_dir).with_context(|| format!("loading model from {}", model_dir.display()))?;
    let ds = run.dataset()?;
    let kind: SplitKind = split_arg.into();
    let report = evaluate(&model, &ds, kind)?;
    for (t, mae) in &report.mae {
        println!("{kind} {t}: MAE {mae:.6} MSE {:.6e} over {} molecules", report.mse[t], report.n);
    }
    run.write_manifest("evaluate", json!({ "model": model_dir, "split": kind.to_string() }))?;
    run.write("metrics.csv", metrics_csv(&report_lines(kind, 0, &report, 0.0)))
}

fn cmd_ablate(run: &Run, variants: &[Variant]) -> Result<()> {
    let ds = run.dataset()?;
    let base = run.model_config();
    let result = ablate(&ds, &base, &run.cfg.train, variants, run.seed(), |v, s| {
        eprintln!("{v} epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}", s.epoch, s.train_loss, s.val_loss, s.lr);
    })?;
    for r in &result.runs {
        let dir = run.out()?.join(r.variant.name());
        save_model(&dir, &r.model, run.seed())?;
        let mut history = r.history.clone();
        let epoch = history.last().map_or(0, |h| h.epoch);
        history.extend(report_lines(SplitKind::Test, epoch, &r.test, 0.0));
        fs::write(dir.join("metrics.csv"), metrics_csv(&history))?;
        for (t, mae) in &r.test.mae {
            println!("{} ({} parameters) test {t}: MAE {mae:.6}", r.variant, r.parameters);
        }
    }
    run.write("metrics.csv", result.curves_csv())?;
    run.write("summary.csv", result.summary_csv())?;
    if let Some(table) = &result.table {
        run.write("table.csv", table.to_csv())?;
        println!(
            "mean %E(L1,L0) {:.4}  mean %E(Deep,L0) {:.4}",
            table.mean_pct_l1_l0, table.mean_pct_deep_l0
        );
    }
    let names: Vec<&str> = variants.iter().map(|v| v.name()).collect();
    run.write_manifest("ablate", json!({ "variants": names }))
}

/// Small fixed molecules used when no dataset is given.
fn sample_molecules(vocab: &Vocabulary) -> Result<Vec<Molecule>> {
    let symbols = vocab.symbols();
    let a = symbols.first().context("empty element vocabulary")?.clone();
    let b = symbols.get(1).unwrap_or(&a).clone();
    let shapes: [&[[f64; 3]]; 2] = [
        &[[0.0, 0.0, 0.11], [0.94, 0.0, -0.27], [-0.47, 0.83, -0.25], [-0.49, -0.80, -0.29]],
        &[[0.0, 0.0, 0.0], [1.1, 0.2, 0.0], [-0.3, 1.0, 0.4], [0.2, -0.5, 1.05], [-0.9, -0.6, -0.5]],
    ];
    shapes
        .iter()
        .map(|pos| {
            let els = (0..pos.len()).map(|i| if i == 0 { a.clone() } else { b.clone() }).collect();
            Ok(Molecule::new(els, pos.to_vec(), BTreeMap::new())?)
        })
        .collect()
}

fn cmd_check(run: &Run, model_dir: Option<&Path>, transforms: usize, tolerance: f64, count: usize) -> Result<bool> {
    let model = match model_dir {
        Some(d) => load_model(d).with_context(|| format!("loading model from {}", d.display()))?,
        None => build_model(&run.model_config(), run.seed())?,
    };
    let mols: Vec<Molecule> = match &run.common.data {
        Some(dir) => load_dir(dir, None)?.molecules.into_iter().take(count).collect(),
        None => sample_molecules(&model.config.elements)?,
    };
    if mols.is_empty() {
        bail!("no molecules to check");
    }
    let refs: Vec<&Molecule> = mols.iter().collect();
    let report = check_equivariance(&model, &refs, transforms, tolerance, run.seed())?;
    for c in &report.classes {
        println!(
            "{:<15} max deviation {:.3e}  tolerance {:.1e}  {}",
            c.class,
            c.max_deviation,
            c.tolerance,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    run.write("equivariance.json", serde_json::to_string_pretty(&report)?)?;
    run.write_manifest("check-equivariance", json!({ "model": model_dir, "molecules": mols.len(), "transforms": transforms }))?;
    Ok(report.passed())
}

fn cmd_gen(run: &Run, kind: GenKind, samples: usize, atoms: usize) -> Result<()> {
    let seed = run.seed();
    let (name, ds, elements, targets, params) = match kind {
        GenKind::TwoDipole => ("two-dipole", gen_two_dipole(samples, seed), vec!["+", "-"], vec!["p2"], json!({})),
        GenKind::DistanceSum => (
            "distance-sum",
            gen_distance_sum(samples, atoms, seed)?,
            vec!["C"],
            vec!["dsum"],
            json!({ "atoms": atoms }),
        ),
    };
    let mut parameters: BTreeMap<String, serde_json::Value> = serde_json::from_value(params)?;
    parameters.insert("samples".into(), json!(samples));
    let manifest = Manifest {
        generator: name.into(),
        seed,
        parameters,
        files: Vec::new(),
    };
    let out = run.out()?;
    write_dataset(out, &ds.molecules, manifest)?;
    // A starting configuration that matches the generated elements and target.
    let mut cfg = RunConfig::default();
    cfg.model.elements = Vocabulary::new(elements)?;
    cfg.model.targets = targets.into_iter().map(String::from).collect();
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    println!("wrote {} {name} samples to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_search(run: &Run, trials: usize, epochs: usize) -> Result<()> {
    let ds = run.dataset()?;
    let mut base = run.model_config();
    base.variant = Variant::MultiTarget;
    let result = search(&run.cfg.search, trials, epochs, &ds, &base, &run.cfg.train, run.seed())?;
    if let Some(best) = result.first() {
        match best.score {
            Some(s) => println!("best trial {} score {s:.6e} ({} parameters)", best.index, best.parameters),
            None => println!("every trial failed"),
        }
    }
    run.write("trials.csv", trials_csv(&result))?;
    run.write_manifest("search", json!({ "trials": trials, "epochs": epochs }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = Run::new(cli.common).and_then(|run| match &cli.command {
        Cmd::Train { resume } => cmd_train(&run, *resume).map(|_| true),
        Cmd::Evaluate { model, split } => cmd_evaluate(&run, model, *split).map(|_| true),
        Cmd::Ablate { variants } => cmd_ablate(&run, variants).map(|_| true),
        Cmd::CheckEquivariance {
            model,
            transforms,
            tolerance,
            molecules,
        } => cmd_check(&run, model.as_deref(), *transforms, *tolerance, *molecules),
        Cmd::GenData { kind, samples, atoms } => cmd_gen(&run, *kind, *samples, *atoms).map(|_| true),
        Cmd::Search { trials, epochs } => cmd_search(&run, *trials, *epochs).map(|_| true),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
