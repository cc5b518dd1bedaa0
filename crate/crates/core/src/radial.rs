//! Distance featurization with the cosine window basis and the learned
//! radial network that turns it into per-path coefficients.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadialConfig {
    pub basis: BasisKind,
    pub num_basis: usize,
    pub r_max_angstrom: f64,
    pub hidden_layers: usize,
    pub hidden_neurons: usize,
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self {
            basis: BasisKind::Cosine,
            num_basis: 84,
            r_max_angstrom: 11.1,
            hidden_layers: 2,
            hidden_neurons: 100,
        }
    }
}

impl RadialConfig {
    pub fn basis(&self) -> Result<CosineBasis> {
        CosineBasis::new(self.num_basis, self.r_max_angstrom)
    }
}

/// `B` equally spaced centers `μ_b = bΔ`, `Δ = r_max / (B − 1)`, each
/// carrying a `cos²` window of half-width `Δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineBasis {
    num: usize,
    r_max: f64,
}

impl CosineBasis {
    pub fn new(num: usize, r_max: f64) -> Result<Self> {
        if num < 2 {
            return Err(Error::Config(format!("need at least 2 radial basis functions, got {num}")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::Config(format!("radial maximum must be positive, got {r_max}")));
        }
        Ok(Self { num, r_max })
    }

    pub fn len(&self) -> usize {
        self.num
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / (self.num - 1) as f64
    }

    pub fn center(&self, b: usize) -> f64 {
        b as f64 * self.spacing()
    }

    /// Distance beyond which every component vanishes.
    pub fn support_end(&self) -> f64 {
        self.r_max + self.spacing()
    }

    pub fn expand(&self, d: f64) -> Result<Vec<f64>> {
        if d < 0.0 || d.is_nan() {
            return Err(Error::NegativeDistance(d));
        }
        let mut out = vec![0.0; self.num];
        self.expand_into(d, &mut out);
        Ok(out)
    }

    pub(crate) fn expand_into(&self, d: f64, out: &mut [f64]) {
        let delta = self.spacing();
        for (b, o) in out.iter_mut().enumerate() {
            let x = (d - self.center(b)) / delta;
            *o = if (-1.0..=1.0).contains(&x) {
                (0.5 * PI * x).cos().powi(2)
            } else {
                0.0
            };
        }
    }

    /// Expands many distances into a `len × B` matrix.
    pub fn expand_all(&self, distances: &[f64]) -> Result<Tensor> {
        let mut data = vec![0.0; distances.len() * self.num];
        for (d, row) in distances.iter().zip(data.chunks_mut(self.num)) {
            if *d < 0.0 || d.is_nan() {
                return Err(Error::NegativeDistance(*d));
            }
            self.expand_into(*d, row);
        }
        Tensor::new(vec![distances.len(), self.num], data)
    }
}

/// `E[ssp(z)²]` for `z ~ N(0, 1)`, where `ssp(x) = softplus(x) − ln 2`.
fn ssp_second_moment() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let n = 40_000;
        let (lo, hi) = (-12.0f64, 12.0f64);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let z = lo + i as f64 * h;
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p() - LN_2;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * sp * sp * (-0.5 * z * z).exp();
        }
        s * h / (2.0 * PI).sqrt()
    })
}

/// Bias-free MLP from basis values to one coefficient per `(path, u, v)`.
///
/// Hidden activation is softplus shifted to vanish at zero, so a zero basis
/// vector always produces zero coefficients. Weights are drawn so that each
/// output has mean zero and unit variance over initializations.
#[derive(Clone, Debug)]
pub struct RadialNet {
    weights: Vec<ParamId>,
    num_basis: usize,
    /// `(mul_out, mul_in)` per path; path `p` owns `mul_out · mul_in`
    /// consecutive output slots, row-major in `(u, v)`.
    layout: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    out_dim: usize,
}

impl RadialNet {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &RadialConfig,
        layout: Vec<(usize, usize)>,
        rng: &mut R,
    ) -> Self {
        let mut offsets = Vec::with_capacity(layout.len());
        let mut out_dim = 0;
        for &(u, v) in &layout {
            offsets.push(out_dim);
            out_dim += u * v;
        }
        let c = ssp_second_moment();
        let mut dims = vec![cfg.num_basis];
        dims.extend(std::iter::repeat_n(cfg.hidden_neurons, cfg.hidden_layers));
        dims.push(out_dim);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            // The basis has Σφ² ≈ 1, so the first layer needs unit variance.
            let var = if i == 0 { 1.0 } else { 1.0 / (fan_in as f64 * c) };
            let normal = Normal::new(0.0, var.sqrt()).expect("finite variance");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            let t = Tensor::new(vec![fan_in, fan_out], data).expect("sized");
            weights.push(params.add(format!("{prefix}.w{i}"), t));
        }
        Self {
            weights,
            num_basis: cfg.num_basis,
            layout,
            offsets,
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn layout(&self) -> &[(usize, usize)] {
        &self.layout
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    /// First output slot of `path`.
    pub fn path_offset(&self, path: usize) -> usize {
        self.offsets[path]
    }

    /// Output slot of coefficient `R^{path}_{uv}`.
    pub fn slot(&self, path: usize, u: usize, v: usize) -> Result<usize> {
        let &(mu, mv) = self
            .layout
            .get(path)
            .ok_or_else(|| Error::IndexOutOfRange(format!("path {path} of {}", self.layout.len())))?;
        if u >= mu || v >= mv {
            return Err(Error::IndexOutOfRange(format!("(u, v) = ({u}, {v}) for multiplicities ({mu}, {mv})")));
        }
        Ok(self.offsets[path] + u * mv + v)
    }

    /// `basis: [P × B]` to coefficients `[P × out_dim]`.
    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamSet, basis: Var<'t>) -> Result<Var<'t>> {
        let mut h = basis;
        let last = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            h = h.matmul(tape.param(params, w))?;
            if i < last {
                h = h.softplus()?.shift(-LN_2)?;
            }
        }
        Ok(h)
    }
}

/// The single coefficient `R^{path}_{uv}` for one expanded distance.
pub fn radial_forward<'t>(
    net: &RadialNet,
    tape: &'t Tape,
    params: &ParamSet,
    basis_values: &[f64],
    path: usize,
    (u, v): (usize, usize),
) -> Result<Var<'t>> {
    let slot = net.slot(path, u, v)?;
    if basis_values.len() != net.num_basis {
        return Err(Error::Shape {
            op: "radial_forward",
            lhs: vec![net.num_basis],
            rhs: vec![basis_values.len()],
        });
    }
    let basis = tape.constant(Tensor::new(vec![1, basis_values.len()], basis_values.to_vec())?);
    net.forward(tape, params, basis)?.select_cols(vec![slot].into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, FdOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_is_one_at_center_and_zero_past_support() {
        let b = CosineBasis::new(84, 11.1).unwrap();
        for k in [0, 5, 83] {
            let e = b.expand(b.center(k)).unwrap();
            assert!((e[k] - 1.0).abs() < 1e-15);
        }
        let far = b.expand(b.support_end() + 1e-9).unwrap();
        assert!(far.iter().all(|&x| x == 0.0));
        assert!(matches!(b.expand(-0.1), Err(Error::NegativeDistance(_))));
    }

    #[test]
    fn adjacent_windows_sum_to_one() {
        let b = CosineBasis::new(84, 11.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let d: f64 = rng.gen_range(0.0..b.r_max());
            let e = b.expand(d).unwrap();
            let active: Vec<f64> = e.iter().copied().filter(|&x| x > 0.0).collect();
            assert!(active.len() <= 2);
            assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_is_continuous_at_window_edges() {
        let b = CosineBasis::new(10, 4.5).unwrap();
        let eps = 1e-7;
        for k in 0..10 {
            let edge = b.center(k) + b.spacing();
            let lo = b.expand((edge - eps).max(0.0)).unwrap();
            let hi = b.expand(edge + eps).unwrap();
            // values and one-sided slopes both vanish: change is O(eps²)
            assert!((lo[k] - hi[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_basis_gives_zero_coefficient() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = RadialNet::new(&mut params, "r", &RadialConfig::default(), vec![(2, 3)], &mut rng);
        let tape = Tape::new();
        let r = radial_forward(&net, &tape, &params, &vec![0.0; 84], 0, (1, 2)).unwrap();
        assert_eq!(r.item(), 0.0);
        assert!(radial_forward(&net, &tape, &params, &vec![0.0; 84], 0, (2, 0)).is_err());
        assert!(radial_forward(&net, &tape, &params, &vec![0.0; 84], 1, (0, 0)).is_err());
    }

    #[test]
    fn paths_own_disjoint_output_rows() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = RadialConfig {
            hidden_neurons: 8,
            num_basis: 6,
            r_max_angstrom: 5.0,
            ..Default::default()
        };
        let net = RadialNet::new(&mut params, "r", &cfg, vec![(1, 1), (1, 1)], &mut rng);
        let basis = cfg.basis().unwrap().expand(2.0).unwrap();
        let eval = |p: &ParamSet, path| {
            let tape = Tape::new();
            radial_forward(&net, &tape, p, &basis, path, (0, 0)).unwrap().item()
        };
        let before = (eval(&params, 0), eval(&params, 1));
        let last = *net.weights().last().unwrap();
        for row in 0..8 {
            params.get_mut(last).data_mut()[row * 2 + 1] += 0.5;
        }
        assert_eq!(eval(&params, 0), before.0);
        assert_ne!(eval(&params, 1), before.1);
    }

    #[test]
    fn radial_gradients_match_central_differences() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RadialConfig {
            num_basis: 12,
            r_max_angstrom: 5.0,
            hidden_layers: 2,
            hidden_neurons: 7,
            ..Default::default()
        };
        let net = RadialNet::new(&mut params, "r", &cfg, vec![(2, 2), (1, 3)], &mut rng);
        let basis = cfg.basis().unwrap().expand_all(&[0.3, 1.7, 2.2, 4.9]).unwrap();
        let report = finite_diff_check(&mut params, &FdOptions::default(), |tape, p| {
            let b = tape.constant(basis.clone());
            net.forward(tape, p, b)?.square()?.mean()
        })
        .unwrap();
        assert!(report.passed(), "{:?}", report);
    }
}
