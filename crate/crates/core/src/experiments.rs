//! Symmetry audits, variant ablations and random hyperparameter search.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Dataset, Molecule, SplitKind};
use crate::error::{Error, Result};
use crate::irreps::{rotate_rows, Irreps, Rotation};
use crate::model::{build_model, metric_table, MetricTable, Model, ModelConfig, Variant};
use crate::train::{evaluate, EpochSummary, EvalReport, MetricRecord, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub transforms: usize,
    /// `max |Δ| / max |output|` over all transforms and molecules.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub classes: Vec<ClassReport>,
}

impl EquivarianceReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(|c| c.passed)
    }

    pub fn class(&self, name: &str) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == name)
    }
}

fn transformed(mol: &Molecule, f: impl Fn([f64; 3]) -> [f64; 3]) -> Molecule {
    let mut m = mol.clone();
    for p in &mut m.positions {
        *p = f(*p);
    }
    m
}

fn relative_deviation(base: &[Vec<f64>], other: &[Vec<f64>]) -> f64 {
    let scale = base.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let diff = base.iter().flatten().zip(other.iter().flatten()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    diff / scale
}

/// Output deviation under random rotations, translations (±10 Å) and atom
/// permutations, plus the transformation of every featurization block's
/// output under rotation.
pub fn check_equivariance(model: &Model, molecules: &[&Molecule], n_transforms: usize, tolerance: f64, seed: u64) -> Result<EquivarianceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = model.predict_many(molecules)?;
    let mut rot_dev: f64 = 0.0;
    let mut trans_dev: f64 = 0.0;
    let mut perm_dev: f64 = 0.0;
    let mut feat_dev: f64 = 0.0;
    for _ in 0..n_transforms {
        let r = Rotation::random(&mut rng);
        let rotated: Vec<Molecule> = molecules.iter().map(|m| transformed(m, |p| r.apply(p))).collect();
        rot_dev = rot_dev.max(relative_deviation(&base, &model.predict_many(&rotated.iter().collect::<Vec<_>>())?));
        for (m, mr) in molecules.iter().zip(&rotated) {
            feat_dev = feat_dev.max(feature_deviation(model, m, mr, &r)?);
        }

        let t: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
        let shifted: Vec<Molecule> = molecules.iter().map(|m| transformed(m, |p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])).collect();
        trans_dev = trans_dev.max(relative_deviation(&base, &model.predict_many(&shifted.iter().collect::<Vec<_>>())?));

        let permuted: Vec<Molecule> = molecules
            .iter()
            .map(|m| {
                let mut order: Vec<usize> = (0..m.num_atoms()).collect();
                order.shuffle(&mut rng);
                let mut p = (*m).clone();
                p.elements = order.iter().map(|&i| m.elements[i].clone()).collect();
                p.positions = order.iter().map(|&i| m.positions[i]).collect();
                p
            })
            .collect();
        perm_dev = perm_dev.max(relative_deviation(&base, &model.predict_many(&permuted.iter().collect::<Vec<_>>())?));
    }
    let class = |name: &str, dev: f64| ClassReport {
        class: name.to_string(),
        transforms: n_transforms,
        max_deviation: dev,
        tolerance,
        passed: dev < tolerance,
    };
    Ok(EquivarianceReport {
        classes: vec![
            class("rotation", rot_dev),
            class("translation", trans_dev),
            class("permutation", perm_dev),
            class("block-features", feat_dev),
        ],
    })
}

/// `max |F(R x) − D(R) F(x)| / max |F(x)|` over featurization blocks.
pub fn feature_deviation(model: &Model, mol: &Molecule, rotated: &Molecule, r: &Rotation) -> Result<f64> {
    let tape = Tape::new();
    let a = model.arch.trunk_features(&tape, &model.params, &model.batch(&[mol])?)?;
    let b = model.arch.trunk_features(&tape, &model.params, &model.batch(&[rotated])?)?;
    let mut worst: f64 = 0.0;
    for ((fa, fb), block) in a.iter().zip(&b).zip(model.arch.trunk()) {
        let irreps: Irreps = block.irreps_out();
        let expect = rotate_rows(r, &irreps, &fa.value())?;
        let scale = fa.value().max_abs().max(f64::MIN_POSITIVE);
        worst = worst.max(expect.max_abs_diff(&fb.value()) / scale);
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    pub parameters: usize,
    pub test: EvalReport,
    pub history: Vec<MetricRecord>,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct Ablation {
    pub runs: Vec<AblationRun>,
    /// Present when L1, L0 and L0Deep were all trained.
    pub table: Option<MetricTable>,
}

impl Ablation {
    pub fn run(&self, variant: Variant) -> Option<&AblationRun> {
        self.runs.iter().find(|r| r.variant == variant)
    }

    /// Validation curves of every variant.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("variant,epoch,split,target,mae,mse,lr\n");
        for run in &self.runs {
            for r in &run.history {
                s.push_str(&format!("{},{},{},{},{},{},{}\n", run.variant, r.epoch, r.split, r.target, r.mae, r.mse, r.lr));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("variant,parameters,target,test_mae,test_mse\n");
        for run in &self.runs {
            for (t, mae) in &run.test.mae {
                s.push_str(&format!("{},{},{},{},{}\n", run.variant, run.parameters, t, mae, run.test.mse[t]));
            }
        }
        s
    }
}

/// Trains each variant derived from `base` with the same seed and split,
/// then compares test errors.
pub fn ablate(
    dataset: &Dataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    seed: u64,
    mut on_epoch: impl FnMut(Variant, &EpochSummary),
) -> Result<Ablation> {
    let mut runs = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = base.for_variant(v);
        let model = build_model(&cfg, seed)?;
        let parameters = model.parameter_count();
        let mut trainer = Trainer::new(model, dataset, train_cfg.clone())?;
        trainer.run(|s| on_epoch(v, s))?;
        let history = trainer.state().history.clone();
        let model = trainer.into_model();
        let test = evaluate(&model, dataset, SplitKind::Test)?;
        runs.push(AblationRun {
            variant: v,
            parameters,
            test,
            history,
            model,
        });
    }
    let have = |v: Variant| runs.iter().any(|r| r.variant == v);
    let table = if have(Variant::L1) && have(Variant::L0) && have(Variant::L0Deep) {
        let maes: BTreeMap<String, BTreeMap<String, f64>> = runs.iter().map(|r| (r.variant.name().to_string(), r.test.mae.clone())).collect();
        Some(metric_table(&maes, &base.targets)?)
    } else {
        None
    };
    Ok(Ablation { runs, table })
}

/// Inclusive sampling ranges for the random search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_size: (usize, usize),
    /// Sampled log-uniformly.
    pub lr: (f64, f64),
    /// Featurization components `u₀ + 3u₁`.
    pub components: (usize, usize),
    pub conv_blocks: (usize, usize),
    pub num_basis: (usize, usize),
    pub r_max_angstrom: (f64, f64),
    pub mlp_layers: (usize, usize),
    pub mlp_neurons: (usize, usize),
    pub output_scalars: (usize, usize),
    pub output_blocks: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_size: (8, 25),
            lr: (1e-6, 3e-1),
            components: (80, 144),
            conv_blocks: (2, 5),
            num_basis: (25, 100),
            r_max_angstrom: (1.2, 30.0),
            mlp_layers: (1, 3),
            mlp_neurons: (80, 144),
            output_scalars: (64, 128),
            output_blocks: (1, 2),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            ("batch_size", self.batch_size),
            ("components", self.components),
            ("conv_blocks", self.conv_blocks),
            ("num_basis", self.num_basis),
            ("mlp_layers", self.mlp_layers),
            ("mlp_neurons", self.mlp_neurons),
            ("output_scalars", self.output_scalars),
            ("output_blocks", self.output_blocks),
        ];
        for (name, (lo, hi)) in ints {
            if lo > hi || lo == 0 {
                return Err(Error::Config(format!("search range {name} = [{lo}, {hi}] is empty or includes 0")));
            }
        }
        if self.num_basis.0 < 2 {
            return Err(Error::Config("search needs at least two radial bases".into()));
        }
        for (name, (lo, hi)) in [("lr", self.lr), ("r_max_angstrom", self.r_max_angstrom)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("search range {name} = [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }

    /// Draws one configuration. The component budget `C` is split as
    /// `u₁ ~ U{0, …, ⌊(C−1)/3⌋}`, `u₀ = C − 3u₁`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, base: &ModelConfig, base_train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let pick = |rng: &mut R, (lo, hi): (usize, usize)| rng.gen_range(lo..=hi);
        let mut m = base.clone();
        let c = pick(rng, self.components);
        let u1 = rng.gen_range(0..=(c - 1) / 3);
        m.hidden = Irreps::from_counts(c - 3 * u1, u1);
        m.feat_blocks = pick(rng, self.conv_blocks);
        m.radial.num_basis = pick(rng, self.num_basis);
        m.radial.r_max_angstrom = rng.gen_range(self.r_max_angstrom.0..=self.r_max_angstrom.1);
        m.mlp_layers = pick(rng, self.mlp_layers);
        m.mlp_neurons = pick(rng, self.mlp_neurons);
        m.output_scalars = pick(rng, self.output_scalars);
        m.output_blocks = pick(rng, self.output_blocks);
        let mut t = base_train.clone();
        t.batch_size = pick(rng, self.batch_size);
        let (lo, hi) = (self.lr.0.ln(), self.lr.1.ln());
        t.lr_init = rng.gen_range(lo..=hi).exp().clamp(self.lr.0, self.lr.1);
        (m, t)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trial {
    pub index: usize,
    pub model: ModelConfig,
    pub num_basis: usize,
    pub r_max_angstrom: f64,
    pub train: TrainConfig,
    pub parameters: usize,
    /// Best epoch's mean over targets of validation MSE / σ².
    pub score: Option<f64>,
    pub error: Option<String>,
}

/// Samples `n_samples` configurations, trains each for `epochs_per_trial`
/// epochs, and returns trials ranked by score (failed trials last).
pub fn search(
    space: &SearchSpace,
    n_samples: usize,
    epochs_per_trial: usize,
    dataset: &Dataset,
    base: &ModelConfig,
    base_train: &TrainConfig,
    seed: u64,
) -> Result<Vec<Trial>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let (mut m, mut t) = space.sample(&mut rng, base, base_train);
        m.variant = Variant::MultiTarget;
        t.max_epochs = epochs_per_trial;
        let mut trial = Trial {
            index,
            num_basis: m.radial.num_basis,
            r_max_angstrom: m.radial.r_max_angstrom,
            model: m.clone(),
            train: t.clone(),
            parameters: 0,
            score: None,
            error: None,
        };
        match run_trial(&m, &t, dataset) {
            Ok((params, score)) => {
                trial.parameters = params;
                trial.score = Some(score);
            }
            Err(e) => trial.error = Some(e.to_string()),
        }
        trials.push(trial);
    }
    trials.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    Ok(trials)
}

fn run_trial(m: &ModelConfig, t: &TrainConfig, dataset: &Dataset) -> Result<(usize, f64)> {
    let model = build_model(m, t.seed)?;
    let params = model.parameter_count();
    let mut trainer = Trainer::new(model, dataset, t.clone())?;
    let mut best = f64::INFINITY;
    while let Some(s) = trainer.run_epoch()? {
        best = best.min(s.val_loss);
    }
    // single-target runs monitor raw MSE; put every trial on the normalized scale
    if m.targets.len() == 1 {
        best /= trainer.model.stats.get(&m.targets[0]).std.powi(2);
    }
    if !best.is_finite() {
        return Err(Error::NanLoss { epoch: 0, batch: 0 });
    }
    Ok((params, best))
}

pub fn trials_csv(trials: &[Trial]) -> String {
    let mut s = String::from(
        "rank,trial,score,error,parameters,batch_size,lr,hidden,feat_blocks,output_blocks,num_basis,r_max_angstrom,mlp_layers,mlp_neurons,output_scalars\n",
    );
    for (rank, t) in trials.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            t.index,
            t.score.map_or(String::new(), |x| x.to_string()),
            t.error.as_deref().unwrap_or("").replace(',', ";"),
            t.parameters,
            t.train.batch_size,
            t.train.lr_init,
            t.model.hidden,
            t.model.feat_blocks,
            t.model.output_blocks,
            t.num_basis,
            t.r_max_angstrom,
            t.model.mlp_layers,
            t.model.mlp_neurons,
            t.model.output_scalars,
        ));
    }
    s
}
