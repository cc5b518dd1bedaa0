//! Atom-wise dense maps, the element embedding and the gated nonlinearity.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::{FeatureBlock, Irreps};

/// Per-atom affine map `F W + b` on scalar channels, shared across atoms.
#[derive(Clone, Debug)]
pub struct AtomWise {
    w: ParamId,
    b: Option<ParamId>,
    fan_in: usize,
    fan_out: usize,
}

impl AtomWise {
    /// `W ~ N(0, 1/fan_in)`, `b = 0`.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        Self::with_std(params, prefix, fan_in, fan_out, bias, (fan_in.max(1) as f64).recip().sqrt(), rng)
    }

    pub fn with_std<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        let w = params.add(format!("{prefix}.w"), Tensor::new(vec![fan_in, fan_out], data).expect("sized"));
        let b = bias.then(|| params.add(format!("{prefix}.b"), Tensor::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamSet, x: Var<'t>) -> Result<Var<'t>> {
        x.affine(tape.param(params, self.w), self.b.map(|b| tape.param(params, b)))
    }
}

pub fn atom_wise(layer: &AtomWise, params: &ParamSet, f: &FeatureBlock) -> Result<FeatureBlock> {
    if !f.irreps.is_scalar_only() {
        return Err(Error::EquivarianceViolation(format!(
            "atom-wise layer applied to {}; dense maps may only act on scalars",
            f.irreps
        )));
    }
    if f.irreps.dim() != layer.fan_in {
        return Err(Error::Layout(format!("atom-wise layer expects {} scalars, got {}", layer.fan_in, f.irreps.dim())));
    }
    let tape = Tape::new();
    let out = layer.forward(&tape, params, tape.constant(f.values.clone()))?;
    let values = out.value().clone();
    FeatureBlock::new(Irreps::scalars(layer.fan_out), values)
}

/// Element symbols accepted by the embedding, in one-hot order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::qm9()
    }
}

impl Vocabulary {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::Config(format!("element {s} listed twice in vocabulary")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::Config("empty element vocabulary".into()));
        }
        Ok(Self { symbols })
    }

    pub fn qm9() -> Self {
        Self::new(["H", "C", "N", "O", "F"]).expect("distinct")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownElement(symbol.to_string()))
    }

    /// `[atoms × len]` one-hot rows.
    pub fn one_hot(&self, elements: &[impl AsRef<str>]) -> Result<Tensor> {
        let n = self.len();
        let mut data = vec![0.0; elements.len() * n];
        for (a, e) in elements.iter().enumerate() {
            data[a * n + self.index(e.as_ref())?] = 1.0;
        }
        Tensor::new(vec![elements.len(), n], data)
    }
}

/// Learned element embedding: a `vocabulary × size` table applied to one-hot rows.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: AtomWise,
    vocab: Vocabulary,
}

impl Embedding {
    /// Table entries `~ N(0, 1)` so each embedded atom starts with unit-variance features.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, vocab: Vocabulary, size: usize, rng: &mut R) -> Self {
        let table = AtomWise::with_std(params, prefix, vocab.len(), size, true, 1.0, rng);
        Self { table, vocab }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn table(&self) -> &AtomWise {
        &self.table
    }

    pub fn size(&self) -> usize {
        self.table.fan_out
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamSet, one_hot: &Tensor) -> Result<Var<'t>> {
        self.table.forward(tape, params, tape.constant(one_hot.clone()))
    }
}

/// Looks up embeddings for one-hot rows over the table's vocabulary.
pub fn embed(table: &Embedding, params: &ParamSet, element_onehot: &Tensor) -> Result<FeatureBlock> {
    if !element_onehot.is_matrix() || element_onehot.cols() != table.vocab.len() {
        return Err(Error::Layout(format!(
            "one-hot rows must have {} entries, got shape {:?}",
            table.vocab.len(),
            element_onehot.shape()
        )));
    }
    for r in 0..element_onehot.rows() {
        let row = element_onehot.row(r);
        let ones = row.iter().filter(|&&x| x == 1.0).count();
        let zeros = row.iter().filter(|&&x| x == 0.0).count();
        // an all-zero row is allowed and maps to the bias
        if ones > 1 || ones + zeros != row.len() {
            return Err(Error::Layout(format!("row {r} is not one-hot")));
        }
    }
    let tape = Tape::new();
    let out = table.forward(&tape, params, element_onehot)?;
    let values = out.value().clone();
    FeatureBlock::new(Irreps::scalars(table.size()), values)
}

/// Softplus on `u₀` scalars, sigmoid gates for `u₁` vectors.
///
/// Input layout is `(u₀+u₁)x0 + u₁x1`; gate for vector `u` sits at scalar
/// index `u + 𝒪` with `𝒪 = u₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatedBlock {
    pub num_scalars: usize,
    pub num_vectors: usize,
}

impl GatedBlock {
    pub fn for_output(irreps: &Irreps) -> Self {
        Self {
            num_scalars: irreps.num_scalars(),
            num_vectors: irreps.num_vectors(),
        }
    }

    pub fn gate_offset(&self) -> usize {
        self.num_scalars
    }

    pub fn input_irreps(&self) -> Irreps {
        Irreps::from_counts(self.num_scalars + self.num_vectors, self.num_vectors)
    }

    pub fn output_irreps(&self) -> Irreps {
        Irreps::from_counts(self.num_scalars, self.num_vectors)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let (u0, u1) = (self.num_scalars, self.num_vectors);
        let shape = x.shape();
        let expect = self.input_irreps().dim();
        if shape.len() != 2 || shape[1] != expect {
            return Err(Error::Layout(format!(
                "gated block expects {} ({} columns), got shape {:?}",
                self.input_irreps(),
                expect,
                shape
            )));
        }
        let scalars = x.slice_cols(0, u0)?.softplus()?;
        if u1 == 0 {
            return Ok(scalars);
        }
        let gate_cols: Vec<usize> = (0..u1).flat_map(|u| [u0 + u; 3]).collect();
        let gates = x.select_cols(gate_cols.into())?.sigmoid()?;
        let vectors = x.slice_cols(u0 + u1, 3 * u1)?.mul(gates)?;
        tape.concat_cols(&[scalars, vectors])
    }
}

pub fn gated(block: &GatedBlock, f: &FeatureBlock) -> Result<FeatureBlock> {
    if f.irreps != block.input_irreps() {
        return Err(Error::Layout(format!(
            "gated block expects {}, got {}",
            block.input_irreps(),
            f.irreps
        )));
    }
    let tape = Tape::new();
    let out = block.forward(&tape, tape.constant(f.values.clone()))?;
    let values = out.value().clone();
    FeatureBlock::new(block.output_irreps(), values)
}
