//! Network assembly, the shift/scale/aggregate head, losses and the
//! model-comparison table.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::conv::{build_conv_spec, ConvConfig, Convolution, NeighborList, PairGeometry};
use crate::data::Molecule;
use crate::error::{Error, Result};
use crate::irreps::Irreps;
use crate::layers::{AtomWise, Embedding, GatedBlock, Vocabulary};
use crate::radial::{CosineBasis, RadialConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    L1,
    L0,
    L0Deep,
    L0Outdeep,
    L0BothDeep,
    MultiTarget,
}

impl Variant {
    /// The five networks compared in the ablation.
    pub const ABLATION: [Variant; 5] = [Variant::L1, Variant::L0, Variant::L0Deep, Variant::L0Outdeep, Variant::L0BothDeep];

    pub fn name(self) -> &'static str {
        match self {
            Variant::L1 => "L1",
            Variant::L0 => "L0",
            Variant::L0Deep => "L0Deep",
            Variant::L0Outdeep => "L0Outdeep",
            Variant::L0BothDeep => "L0BothDeep",
            Variant::MultiTarget => "MultiTarget",
        }
    }

    pub fn is_l0(self) -> bool {
        matches!(self, Variant::L0 | Variant::L0Deep | Variant::L0Outdeep | Variant::L0BothDeep)
    }

    fn extra_blocks(self) -> usize {
        matches!(self, Variant::L0Deep | Variant::L0BothDeep) as usize
    }

    fn extra_mlp_layers(self) -> usize {
        matches!(self, Variant::L0Outdeep | Variant::L0BothDeep) as usize
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let key = key.trim_end_matches("net");
        Ok(match key {
            "l1" | "l1net" => Variant::L1,
            "l0" | "l0net" => Variant::L0,
            "l0deep" | "l0netdeep" => Variant::L0Deep,
            "l0outdeep" | "l0netoutdeep" => Variant::L0Outdeep,
            "l0bothdeep" | "l0netbothdeep" => Variant::L0BothDeep,
            "multitarget" | "multi" => Variant::MultiTarget,
            _ => return Err(Error::Config(format!("unknown variant `{s}`"))),
        })
    }
}

/// `u₀x0 + u₁x1 → (u₀ + 3u₁)x0`: the scalar-only layout with the same
/// number of feature components.
pub fn l0_counterpart(irreps: &Irreps) -> Irreps {
    Irreps::scalars(irreps.num_scalars() + 3 * irreps.num_vectors())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embedding_size: usize,
    /// Featurization-block output layout for the L1 network; L0 variants use
    /// its scalar-only counterpart.
    pub hidden: Irreps,
    pub feat_blocks: usize,
    pub output_blocks: usize,
    pub output_scalars: usize,
    pub mlp_layers: usize,
    pub mlp_neurons: usize,
    pub residual: bool,
    pub elements: Vocabulary,
    pub targets: Vec<String>,
    #[serde(skip)]
    pub radial: RadialConfig,
    #[serde(skip)]
    pub conv: ConvConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::L1,
            embedding_size: 96,
            hidden: Irreps::from_counts(96, 29),
            feat_blocks: 2,
            output_blocks: 1,
            output_scalars: 64,
            mlp_layers: 2,
            mlp_neurons: 64,
            residual: true,
            elements: Vocabulary::qm9(),
            targets: vec!["U0".into()],
            radial: RadialConfig::default(),
            conv: ConvConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Same settings with `variant`; L0 variants get the scalar-only hidden layout.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.variant = variant;
        if variant.is_l0() {
            c.hidden = l0_counterpart(&self.hidden);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.is_l0() && !self.hidden.is_scalar_only() {
            return Err(Error::Config(format!(
                "{} carries only scalars, hidden layout is {}",
                self.variant, self.hidden
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no targets".into()));
        }
        if self.variant != Variant::MultiTarget && self.targets.len() != 1 {
            return Err(Error::Config(format!("{} predicts one target, got {}", self.variant, self.targets.len())));
        }
        for (name, v) in [
            ("embedding_size", self.embedding_size),
            ("output_blocks", self.output_blocks),
            ("output_scalars", self.output_scalars),
            ("mlp_layers", self.mlp_layers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.mlp_layers > 1 && self.mlp_neurons == 0 {
            return Err(Error::Config("mlp_neurons must be positive".into()));
        }
        if self.hidden.dim() == 0 && self.feat_blocks + self.variant.extra_blocks() + self.output_blocks > 1 {
            return Err(Error::Config("hidden layout is empty".into()));
        }
        Ok(())
    }
}

/// Convolution followed by the gated nonlinearity, with an additive skip on
/// every degree whose multiplicity is unchanged.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv: Convolution,
    gate: GatedBlock,
    irreps_in: Irreps,
    residual: bool,
}

impl ConvBlock {
    fn new(params: &mut ParamSet, prefix: &str, irreps_in: &Irreps, irreps_out: &Irreps, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gate = GatedBlock::for_output(irreps_out);
        let spec = build_conv_spec(irreps_in, &gate.input_irreps(), cfg.conv.lf_max, cfg.conv.self_interaction)?;
        let conv = Convolution::new(params, &format!("{prefix}.conv"), spec, &cfg.radial, rng)?;
        Ok(Self {
            conv,
            gate,
            irreps_in: irreps_in.clone(),
            residual: cfg.residual,
        })
    }

    pub fn conv(&self) -> &Convolution {
        &self.conv
    }

    pub fn gate(&self) -> &GatedBlock {
        &self.gate
    }

    pub fn irreps_out(&self) -> Irreps {
        self.gate.output_irreps()
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamSet, x: Var<'t>, geom: &PairGeometry) -> Result<Var<'t>> {
        let y = self.gate.forward(tape, self.conv.forward(tape, params, x, geom)?)?;
        if !self.residual {
            return Ok(y);
        }
        let out = self.irreps_out();
        if out == self.irreps_in {
            return y.add(x);
        }
        let mut parts = Vec::new();
        let mut any = false;
        for l in out.degrees() {
            let d = 2 * l as usize + 1;
            let len = out.mul(l) * d;
            let mut part = y.slice_cols(out.offset(l), len)?;
            if self.irreps_in.mul(l) == out.mul(l) {
                part = part.add(x.slice_cols(self.irreps_in.offset(l), len)?)?;
                any = true;
            }
            parts.push(part);
        }
        if !any {
            return Ok(y);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_cols(&parts)
        }
    }
}

#[derive(Clone, Debug)]
struct Head {
    blocks: Vec<ConvBlock>,
    mlp: Vec<AtomWise>,
}

/// Layer structure of a built network; weights live in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Architecture {
    embedding: Embedding,
    trunk: Vec<ConvBlock>,
    heads: Vec<Head>,
    basis: CosineBasis,
    self_interaction: bool,
}

impl Architecture {
    fn build(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let embedding = Embedding::new(params, "embed", cfg.elements.clone(), cfg.embedding_size, rng);
        let mut irreps = Irreps::scalars(cfg.embedding_size);
        let mut trunk = Vec::new();
        for i in 0..cfg.feat_blocks + cfg.variant.extra_blocks() {
            let block = ConvBlock::new(params, &format!("block{i}"), &irreps, &cfg.hidden, cfg, rng)?;
            irreps = block.irreps_out();
            trunk.push(block);
        }
        let n_heads = if cfg.variant == Variant::MultiTarget { cfg.targets.len() } else { 1 };
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let prefix = if n_heads == 1 { "head".to_string() } else { format!("head_{}", cfg.targets[h]) };
            let mut blocks = Vec::new();
            let mut cur = irreps.clone();
            for j in 0..cfg.output_blocks {
                let out = if j + 1 == cfg.output_blocks { Irreps::scalars(cfg.output_scalars) } else { cfg.hidden.clone() };
                let block = ConvBlock::new(params, &format!("{prefix}.out{j}"), &cur, &out, cfg, rng)?;
                cur = block.irreps_out();
                blocks.push(block);
            }
            let n_layers = cfg.mlp_layers + cfg.variant.extra_mlp_layers();
            let mut mlp = Vec::with_capacity(n_layers);
            let mut width = cfg.output_scalars;
            for k in 0..n_layers {
                let next = if k + 1 == n_layers { 1 } else { cfg.mlp_neurons };
                mlp.push(AtomWise::new(params, &format!("{prefix}.mlp{k}"), width, next, true, rng));
                width = next;
            }
            heads.push(Head { blocks, mlp });
        }
        Ok(Self {
            embedding,
            trunk,
            heads,
            basis: cfg.radial.basis()?,
            self_interaction: cfg.conv.self_interaction,
        })
    }

    pub fn basis(&self) -> &CosineBasis {
        &self.basis
    }

    pub fn self_interaction(&self) -> bool {
        self.self_interaction
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn trunk(&self) -> &[ConvBlock] {
        &self.trunk
    }

    /// Every convolution block, trunk first, then each head's output blocks.
    pub fn blocks(&self) -> Vec<&ConvBlock> {
        self.trunk.iter().chain(self.heads.iter().flat_map(|h| &h.blocks)).collect()
    }

    /// Last atom-wise layer of each head.
    pub fn final_layers(&self) -> Vec<&AtomWise> {
        self.heads.iter().map(|h| h.mlp.last().expect("at least one layer")).collect()
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Outputs of each featurization block.
    pub fn trunk_features<'t>(&self, tape: &'t Tape, params: &ParamSet, batch: &Batch) -> Result<Vec<Var<'t>>> {
        let mut x = self.embedding.forward(tape, params, &batch.one_hot)?;
        let mut outs = Vec::with_capacity(self.trunk.len());
        for b in &self.trunk {
            x = b.forward(tape, params, x, &batch.geom)?;
            outs.push(x);
        }
        Ok(outs)
    }

    /// Per-atom scalar `R_a`, `[atoms × 1]`, for each head.
    pub fn atom_outputs<'t>(&self, tape: &'t Tape, params: &ParamSet, batch: &Batch) -> Result<Vec<Var<'t>>> {
        let features = match self.trunk_features(tape, params, batch)?.pop() {
            Some(f) => f,
            None => self.embedding.forward(tape, params, &batch.one_hot)?,
        };
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut x = features;
            for b in &head.blocks {
                x = b.forward(tape, params, x, &batch.geom)?;
            }
            let last = head.mlp.len() - 1;
            for (k, layer) in head.mlp.iter().enumerate() {
                x = layer.forward(tape, params, x)?;
                if k < last {
                    x = x.relu()?;
                }
            }
            outs.push(x);
        }
        Ok(outs)
    }
}

/// Several molecules as one disjoint graph.
#[derive(Clone, Debug)]
pub struct Batch {
    pub one_hot: Tensor,
    pub geom: PairGeometry,
    pub molecule_of_atom: Rc<[usize]>,
    pub atom_counts: Vec<usize>,
    /// `p_m` per model target, then per molecule.
    pub references: Vec<Vec<f64>>,
}

impl Batch {
    pub fn num_molecules(&self) -> usize {
        self.atom_counts.len()
    }
}

/// Per-element reference values; targets without a column have reference 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRefTable {
    columns: Vec<String>,
    values: BTreeMap<String, Vec<f64>>,
}

impl AtomRefTable {
    pub fn empty() -> Self {
        Self {
            columns: Vec::new(),
            values: BTreeMap::new(),
        }
    }

    /// Hartree for `zpve`, `U0`, `U`, `H`, `G`; cal/(mol K) for `Cv`.
    pub fn qm9() -> Self {
        let columns = ["zpve", "U0", "U", "H", "G", "Cv"].map(String::from).to_vec();
        let rows: [(&str, [f64; 6]); 5] = [
            ("H", [0.000, -0.500, -0.499, -0.498, -0.511, 2.981]),
            ("C", [0.000, -37.847, -37.845, -37.844, -37.861, 2.981]),
            ("N", [0.000, -54.584, -54.582, -54.582, -54.599, 2.981]),
            ("O", [0.000, -75.065, -75.063, -75.062, -75.080, 2.981]),
            ("F", [0.000, -99.719, -99.717, -99.716, -99.734, 2.981]),
        ];
        let values = rows.into_iter().map(|(e, v)| (e.to_string(), v.to_vec())).collect();
        Self { columns, values }
    }

    pub fn has_target(&self, target: &str) -> bool {
        self.columns.iter().any(|c| c == target)
    }

    pub fn reference(&self, element: &str, target: &str) -> Result<f64> {
        let Some(col) = self.columns.iter().position(|c| c == target) else {
            return Ok(0.0);
        };
        self.values
            .get(element)
            .map(|row| row[col])
            .ok_or_else(|| Error::UnknownElement(element.to_string()))
    }
}

impl Default for AtomRefTable {
    fn default() -> Self {
        Self::qm9()
    }
}

/// `p_m = Σ_a ref(Z_a, target)`.
pub fn reference_bias(molecule: &Molecule, target: &str, table: &AtomRefTable) -> Result<f64> {
    molecule.elements.iter().map(|e| table.reference(e, target)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetStat {
    /// Mean of `(t_m − p_m)/A_m`.
    pub mean: f64,
    /// Standard deviation of the same.
    pub std: f64,
}

impl Default for TargetStat {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetStats(pub BTreeMap<String, TargetStat>);

impl TargetStats {
    /// Statistics of per-atom residuals over `molecules` (the training split).
    pub fn compute(molecules: &[&Molecule], targets: &[String], table: &AtomRefTable) -> Result<Self> {
        let mut out = BTreeMap::new();
        for t in targets {
            let mut vals = Vec::with_capacity(molecules.len());
            let mut missing = Vec::new();
            for (i, m) in molecules.iter().enumerate() {
                match m.target(t) {
                    Some(v) => vals.push((v - reference_bias(m, t, table)?) / m.num_atoms() as f64),
                    None => missing.push(i),
                }
            }
            if !missing.is_empty() {
                return Err(Error::MissingTargets {
                    target: t.clone(),
                    molecules: missing,
                });
            }
            if vals.is_empty() {
                return Err(Error::EmptySplit("training".into()));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            out.insert(t.clone(), TargetStat { mean, std: var.sqrt() });
        }
        Ok(Self(out))
    }

    pub fn get(&self, target: &str) -> TargetStat {
        self.0.get(target).copied().unwrap_or_default()
    }
}

/// A built network with its weights and output normalization.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamSet,
    pub stats: TargetStats,
    pub atomref: AtomRefTable,
}

/// Deterministic in `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let arch = Architecture::build(cfg, &mut params, &mut rng)?;
    Ok(Model {
        config: cfg.clone(),
        arch,
        params,
        stats: TargetStats::default(),
        atomref: AtomRefTable::qm9(),
    })
}

impl Model {
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn targets(&self) -> &[String] {
        &self.config.targets
    }

    pub fn batch(&self, molecules: &[&Molecule]) -> Result<Batch> {
        if molecules.is_empty() {
            return Err(Error::EmptySplit("batch".into()));
        }
        let vocab = &self.config.elements;
        let lists: Vec<NeighborList> = molecules
            .iter()
            .map(|m| NeighborList::build(&m.positions, &self.arch.basis, self.arch.self_interaction))
            .collect();
        let geom = PairGeometry::from_lists(&lists)?;
        let elements: Vec<&str> = molecules.iter().flat_map(|m| m.elements.iter().map(String::as_str)).collect();
        let one_hot = vocab.one_hot(&elements)?;
        let molecule_of_atom: Vec<usize> = molecules.iter().enumerate().flat_map(|(i, m)| std::iter::repeat_n(i, m.num_atoms())).collect();
        let references = self
            .config
            .targets
            .iter()
            .map(|t| molecules.iter().map(|m| reference_bias(m, t, &self.atomref)).collect())
            .collect::<Result<_>>()?;
        Ok(Batch {
            one_hot,
            geom,
            molecule_of_atom: molecule_of_atom.into(),
            atom_counts: molecules.iter().map(|m| m.num_atoms()).collect(),
            references,
        })
    }

    /// `t̂_m = p_m + A_m t̄ + σ Σ_a R_a` as `[molecules × 1]`, one per target.
    pub fn predict_vars<'t>(&self, tape: &'t Tape, params: &ParamSet, batch: &Batch) -> Result<Vec<Var<'t>>> {
        let m = batch.num_molecules();
        let atoms = self.arch.atom_outputs(tape, params, batch)?;
        atoms
            .into_iter()
            .enumerate()
            .map(|(t, r)| {
                let st = self.stats.get(&self.config.targets[t]);
                let sums = r.scatter_add_rows(batch.molecule_of_atom.clone(), m)?;
                let offset = (0..m).map(|i| batch.references[t][i] + batch.atom_counts[i] as f64 * st.mean).collect();
                sums.scale(st.std)?.add(tape.constant(Tensor::new(vec![m, 1], offset)?))
            })
            .collect()
    }

    /// Predictions per target, then per molecule.
    pub fn predict_many(&self, molecules: &[&Molecule]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 64;
        let mut out = vec![Vec::with_capacity(molecules.len()); self.config.targets.len()];
        for chunk in molecules.chunks(CHUNK) {
            let tape = Tape::new();
            let batch = self.batch(chunk)?;
            for (t, v) in self.predict_vars(&tape, &self.params, &batch)?.into_iter().enumerate() {
                out[t].extend_from_slice(v.value().data());
            }
        }
        Ok(out)
    }
}

/// Predicted value of every model target for one molecule.
pub fn predict(model: &Model, molecule: &Molecule) -> Result<Vec<f64>> {
    Ok(model.predict_many(&[molecule])?.into_iter().map(|v| v[0]).collect())
}

/// `mean (t̂ − t)²`.
pub fn mse_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    pred.sub(target)?.square()?.mean()
}

/// `Σ_targets mean_m ((t_m − t̂_m)/σ)²`, i.e. the per-molecule sum of
/// normalized squared errors averaged over the batch.
pub fn multi_target_loss<'t>(preds: &[Var<'t>], targets: &[Var<'t>], sigmas: &[f64]) -> Result<Var<'t>> {
    if preds.len() != targets.len() || preds.len() != sigmas.len() || preds.is_empty() {
        return Err(Error::Config("multi-target loss needs one prediction, target and σ per target".into()));
    }
    let mut total: Option<Var<'t>> = None;
    for (i, ((p, t), &s)) in preds.iter().zip(targets).zip(sigmas).enumerate() {
        if s == 0.0 {
            return Err(Error::DegenerateTarget(format!("#{i}")));
        }
        let term = mse_loss(*p, *t)?.scale(1.0 / (s * s))?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Plain-value form of [`multi_target_loss`]; slices are per target.
pub fn multi_target_loss_values(preds: &[Vec<f64>], targets: &[Vec<f64>], sigmas: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for ((p, t), (i, &sig)) in preds.iter().zip(targets).zip(sigmas.iter().enumerate()) {
        if sig == 0.0 {
            return Err(Error::DegenerateTarget(format!("#{i}")));
        }
        s += mse(p, t) / (sig * sig);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub target: String,
    pub l1: f64,
    pub l0: f64,
    pub deep: f64,
    pub pct_l1_l0: f64,
    pub pct_deep_l0: f64,
    pub delta_l1_deep: f64,
    pub pct_l1_deep: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub mean_pct_l1_l0: f64,
    pub mean_pct_deep_l0: f64,
    pub mean_pct_l1_deep: f64,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("target,mae_l1,mae_l0,mae_l0deep,pct_l1_l0,pct_deep_l0,delta_l1_deep,pct_l1_deep\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.target, r.l1, r.l0, r.deep, r.pct_l1_l0, r.pct_deep_l0, r.delta_l1_deep, r.pct_l1_deep
            ));
        }
        s.push_str(&format!(
            "mean,,,,{:.6},{:.6},,{:.6}\n",
            self.mean_pct_l1_l0, self.mean_pct_deep_l0, self.mean_pct_l1_deep
        ));
        s
    }
}

/// Builds the comparison from `maes[model][target]`, with model keys `L1`,
/// `L0` and `L0Deep`. Percent columns are fractions of the L0 error.
pub fn metric_table(maes: &BTreeMap<String, BTreeMap<String, f64>>, targets: &[String]) -> Result<MetricTable> {
    let col = |model: Variant| maes.get(model.name()).ok_or_else(|| Error::MissingColumn(model.name().into()));
    let (l1, l0, deep) = (col(Variant::L1)?, col(Variant::L0)?, col(Variant::L0Deep)?);
    let mut rows = Vec::with_capacity(targets.len());
    for t in targets {
        let get = |m: &BTreeMap<String, f64>, model: Variant| {
            m.get(t).copied().ok_or_else(|| Error::MissingColumn(format!("{model}/{t}")))
        };
        let (a, b, c) = (get(l1, Variant::L1)?, get(l0, Variant::L0)?, get(deep, Variant::L0Deep)?);
        rows.push(MetricRow {
            target: t.clone(),
            l1: a,
            l0: b,
            deep: c,
            pct_l1_l0: (a - b) / b,
            pct_deep_l0: (c - b) / b,
            delta_l1_deep: a - c,
            pct_l1_deep: (a - c) / b,
        });
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(MetricTable {
        mean_pct_l1_l0: mean(|r| r.pct_l1_l0),
        mean_pct_deep_l0: mean(|r| r.pct_deep_l0),
        mean_pct_l1_deep: mean(|r| r.pct_l1_deep),
        rows,
    })
}
