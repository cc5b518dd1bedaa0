//! Optimizer, learning-rate schedule, the training loop and evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamSet, Tape, Tensor};
use crate::conv::ConvConfig;
use crate::data::{Dataset, Molecule, SplitKind};
use crate::error::{Error, Result};
use crate::model::{mae, mse, mse_loss, multi_target_loss, AtomRefTable, Model, ModelConfig, TargetStats};
use crate::radial::RadialConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_min: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 6.53e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_factor: 0.5,
            plateau_patience: 5,
            lr_min: 1e-7,
            max_epochs: 200,
            early_stop_patience: 50,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, lr_min: f64) -> Self {
        Self {
            factor,
            patience,
            lr_min,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Learning rate for the next epoch.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.lr_min).min(lr);
        }
        lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: SplitKind,
    pub target: String,
    pub mae: f64,
    pub mse: f64,
    pub lr: f64,
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut s = String::from("epoch,split,target,mae,mse,lr\n");
    for r in records {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.epoch, r.split, r.target, r.mae, r.mse, r.lr));
    }
    s
}

/// Per-target errors over one split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: BTreeMap<String, f64>,
    pub mse: BTreeMap<String, f64>,
}

impl EvalReport {
    /// `mean over targets of mse/σ²`.
    pub fn normalized_loss(&self, stats: &TargetStats) -> f64 {
        let n = self.mse.len().max(1) as f64;
        self.mse.iter().map(|(t, m)| m / stats.get(t).std.powi(2).max(f64::MIN_POSITIVE)).sum::<f64>() / n
    }
}

fn target_values(molecules: &[&Molecule], target: &str) -> Result<Vec<f64>> {
    let mut missing = Vec::new();
    let vals: Vec<f64> = molecules
        .iter()
        .enumerate()
        .map(|(i, m)| {
            m.target(target).unwrap_or_else(|| {
                missing.push(i);
                f64::NAN
            })
        })
        .collect();
    if missing.is_empty() {
        Ok(vals)
    } else {
        Err(Error::MissingTargets {
            target: target.to_string(),
            molecules: missing,
        })
    }
}

pub fn evaluate_molecules(model: &Model, molecules: &[&Molecule]) -> Result<EvalReport> {
    if molecules.is_empty() {
        return Err(Error::EmptySplit("evaluation".into()));
    }
    let truth: Vec<Vec<f64>> = model.targets().iter().map(|t| target_values(molecules, t)).collect::<Result<_>>()?;
    let preds = model.predict_many(molecules)?;
    let mut report = EvalReport {
        n: molecules.len(),
        ..Default::default()
    };
    for ((t, p), y) in model.targets().iter().zip(&preds).zip(&truth) {
        report.mae.insert(t.clone(), mae(p, y));
        report.mse.insert(t.clone(), mse(p, y));
    }
    Ok(report)
}

/// MAE and MSE of `model` on one split of `dataset`.
pub fn evaluate(model: &Model, dataset: &Dataset, split: SplitKind) -> Result<EvalReport> {
    let mols = dataset.subset(split)?;
    if mols.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    evaluate_molecules(model, &mols)
}

/// Weights, normalization and configuration needed to rebuild a model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: ModelConfig,
    pub radial: RadialConfig,
    pub conv: ConvConfig,
    pub stats: TargetStats,
    pub atomref: AtomRefTable,
    pub seed: u64,
}

impl SavedModel {
    pub fn of(model: &Model, seed: u64) -> Self {
        Self {
            model: model.config.clone(),
            radial: model.config.radial.clone(),
            conv: model.config.conv.clone(),
            stats: model.stats.clone(),
            atomref: model.atomref.clone(),
            seed,
        }
    }

    pub fn rebuild(&self, params: &BTreeMap<String, Tensor>) -> Result<Model> {
        let mut cfg = self.model.clone();
        cfg.radial = self.radial.clone();
        cfg.conv = self.conv.clone();
        let mut model = crate::model::build_model(&cfg, self.seed)?;
        model.params.load_map(params)?;
        model.stats = self.stats.clone();
        model.atomref = self.atomref.clone();
        Ok(model)
    }
}

pub const MODEL_WEIGHTS: &str = "model.bin";
pub const MODEL_META: &str = "model.json";

pub fn save_model(dir: &Path, model: &Model, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(dir.join(MODEL_WEIGHTS), &model.params.to_map())?;
    fs::write(dir.join(MODEL_META), serde_json::to_string_pretty(&SavedModel::of(model, seed))?)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let meta: SavedModel = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_META))?)?;
    meta.rebuild(&checkpoint::load(dir.join(MODEL_WEIGHTS))?)
}

/// Loop counters persisted with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Next epoch to run (1-based epochs; 0 means none run yet).
    pub epoch: usize,
    pub lr: f64,
    pub best_val: f64,
    pub best_epoch: usize,
    pub scheduler: PlateauScheduler,
    pub adam_t: u64,
    pub stopped: bool,
    pub history: Vec<MetricRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: SavedModel,
    train: TrainConfig,
    state: TrainState,
}

/// Summary passed to the per-epoch callback.
#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub improved: bool,
}

pub struct Trainer<'d> {
    pub model: Model,
    data: &'d Dataset,
    cfg: TrainConfig,
    adam: Adam,
    state: TrainState,
    best_params: BTreeMap<String, Tensor>,
}

impl<'d> Trainer<'d> {
    /// Fits target statistics on the training split and sets up the optimizer.
    pub fn new(mut model: Model, data: &'d Dataset, cfg: TrainConfig) -> Result<Self> {
        let train = data.subset(SplitKind::Train)?;
        if train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        if data.indices(SplitKind::Val)?.is_empty() {
            return Err(Error::EmptySplit("val".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        model.stats = TargetStats::compute(&train, model.targets(), &model.atomref)?;
        for t in model.targets() {
            if model.stats.get(t).std == 0.0 {
                return Err(Error::DegenerateTarget(t.clone()));
            }
        }
        let adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps);
        let state = TrainState {
            epoch: 0,
            lr: cfg.lr_init,
            best_val: f64::INFINITY,
            best_epoch: 0,
            scheduler: PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.lr_min),
            adam_t: 0,
            stopped: false,
            history: Vec::new(),
        };
        let best_params = model.params.to_map();
        Ok(Self {
            model,
            data,
            cfg,
            adam,
            state,
            best_params,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn finished(&self) -> bool {
        self.state.stopped || self.state.epoch >= self.cfg.max_epochs
    }

    fn loss_of<'t>(&self, tape: &'t Tape, params: &ParamSet, mols: &[&Molecule]) -> Result<(crate::autodiff::Var<'t>, Vec<Vec<f64>>)> {
        let batch = self.model.batch(mols)?;
        let preds = self.model.predict_vars(tape, params, &batch)?;
        let mut targets = Vec::with_capacity(preds.len());
        for t in self.model.targets() {
            let v = target_values(mols, t)?;
            targets.push(tape.constant(Tensor::new(vec![v.len(), 1], v)?));
        }
        let loss = if preds.len() == 1 {
            mse_loss(preds[0], targets[0])?
        } else {
            let sig: Vec<f64> = self.model.targets().iter().map(|t| self.model.stats.get(t).std).collect();
            multi_target_loss(&preds, &targets, &sig)?
        };
        let values = preds.iter().map(|p| p.value().data().to_vec()).collect();
        Ok((loss, values))
    }

    /// Order in which epoch `epoch` visits the training molecules.
    pub fn epoch_order(&self, epoch: usize) -> Result<Vec<usize>> {
        let mut idx = self.data.indices(SplitKind::Train)?.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        idx.shuffle(&mut rng);
        Ok(idx)
    }

    fn val_loss(&self, report: &EvalReport) -> f64 {
        if self.model.targets().len() == 1 {
            report.mse.values().next().copied().unwrap_or(f64::INFINITY)
        } else {
            report.normalized_loss(&self.model.stats)
        }
    }

    /// Runs one epoch; returns `None` once training has finished.
    pub fn run_epoch(&mut self) -> Result<Option<EpochSummary>> {
        if self.finished() {
            return Ok(None);
        }
        let epoch = self.state.epoch + 1;
        let lr = self.state.lr;
        let order = self.epoch_order(epoch)?;
        let targets = self.model.targets().to_vec();
        let mut abs = vec![0.0; targets.len()];
        let mut sq = vec![0.0; targets.len()];
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let mols: Vec<&Molecule> = chunk.iter().map(|&i| &self.data.molecules[i]).collect();
            let tape = Tape::new();
            let (loss, preds) = self.loss_of(&tape, &self.model.params, &mols)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::NanLoss { epoch, batch: b });
            }
            loss.backward()?;
            let grads = tape.param_grads(&self.model.params);
            drop(tape);
            self.adam.step(&mut self.model.params, &grads, lr);
            for (k, t) in targets.iter().enumerate() {
                for (p, m) in preds[k].iter().zip(&mols) {
                    let e = p - m.target(t).expect("checked in loss");
                    abs[k] += e.abs();
                    sq[k] += e * e;
                }
            }
            loss_sum += l;
            n_batches += 1;
        }
        let n = order.len() as f64;
        for (k, t) in targets.iter().enumerate() {
            self.state.history.push(MetricRecord {
                epoch,
                split: SplitKind::Train,
                target: t.clone(),
                mae: abs[k] / n,
                mse: sq[k] / n,
                lr,
            });
        }
        let val = evaluate(&self.model, self.data, SplitKind::Val)?;
        for t in &targets {
            self.state.history.push(MetricRecord {
                epoch,
                split: SplitKind::Val,
                target: t.clone(),
                mae: val.mae[t],
                mse: val.mse[t],
                lr,
            });
        }
        let val_loss = self.val_loss(&val);
        if !val_loss.is_finite() {
            return Err(Error::NanLoss { epoch, batch: n_batches });
        }
        let improved = val_loss < self.state.best_val;
        if improved {
            self.state.best_val = val_loss;
            self.state.best_epoch = epoch;
            self.best_params = self.model.params.to_map();
        }
        self.state.lr = self.state.scheduler.step(val_loss, lr);
        self.state.epoch = epoch;
        self.state.adam_t = self.adam.t;
        if epoch - self.state.best_epoch >= self.cfg.early_stop_patience {
            self.state.stopped = true;
        }
        Ok(Some(EpochSummary {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_loss,
            lr: self.state.lr,
            improved,
        }))
    }

    /// Trains to completion, calling `on_epoch` after each epoch, and
    /// restores the best-validation weights.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<()> {
        while let Some(s) = self.run_epoch()? {
            on_epoch(&s);
        }
        self.restore_best()
    }

    pub fn restore_best(&mut self) -> Result<()> {
        self.model.params.load_map(&self.best_params)
    }

    pub fn best_params(&self) -> &BTreeMap<String, Tensor> {
        &self.best_params
    }

    /// Writes `<stem>.bin` (weights, Adam moments, best weights) and
    /// `<stem>.json` (configuration and loop state).
    pub fn save_checkpoint(&self, dir: &Path, stem: &str, seed: u64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut map = BTreeMap::new();
        for id in self.model.params.ids() {
            let name = self.model.params.name(id);
            map.insert(format!("param/{name}"), self.model.params.get(id).clone());
            map.insert(format!("adam.m/{name}"), self.adam.m[id.index()].clone());
            map.insert(format!("adam.v/{name}"), self.adam.v[id.index()].clone());
        }
        for (name, t) in &self.best_params {
            map.insert(format!("best/{name}"), t.clone());
        }
        checkpoint::save(dir.join(format!("{stem}.bin")), &map)?;
        let meta = CheckpointMeta {
            model: SavedModel::of(&self.model, seed),
            train: self.cfg.clone(),
            state: self.state.clone(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Restores a trainer written by [`Trainer::save_checkpoint`].
    pub fn resume(dir: &Path, stem: &str, data: &'d Dataset) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let map = checkpoint::load(dir.join(format!("{stem}.bin")))?;
        let section = |prefix: &str| -> BTreeMap<String, Tensor> {
            map.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
                .collect()
        };
        let model = meta.model.rebuild(&section("param/"))?;
        let mut adam = Adam::new(&model.params, meta.train.beta1, meta.train.beta2, meta.train.eps);
        adam.t = meta.state.adam_t;
        let (m, v) = (section("adam.m/"), section("adam.v/"));
        for id in model.params.ids() {
            let name = model.params.name(id);
            let missing = || Error::Checkpoint(format!("optimizer state for `{name}` missing"));
            adam.m[id.index()] = m.get(name).cloned().ok_or_else(missing)?;
            adam.v[id.index()] = v.get(name).cloned().ok_or_else(missing)?;
        }
        Ok(Self {
            model,
            data,
            cfg: meta.train,
            adam,
            state: meta.state,
            best_params: section("best/"),
        })
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Builds, trains and returns a model plus its test-split report.
pub fn train(model: Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<MetricRecord>)> {
    let mut trainer = Trainer::new(model, dataset, cfg.clone())?;
    trainer.run(|_| {})?;
    let history = trainer.state().history.clone();
    Ok((trainer.into_model(), history))
}
