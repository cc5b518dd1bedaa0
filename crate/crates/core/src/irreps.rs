//! Feature layouts, the rotation action on them, real spherical harmonics
//! and Clebsch-Gordan coefficients for degrees 0 and 1.
//!
//! Conventions:
//! * vector components are ordered `(x, y, z)`, so the degree-1 Wigner
//!   matrix of a rotation is the rotation matrix itself;
//! * `Σ_k Y^ℓ_k(u)² = (2ℓ+1)/(4π)` for every unit `u`;
//! * Clebsch-Gordan blocks have unit Frobenius norm, `Σ_ijk C_ijk² = 1`,
//!   which makes `Σ_ij (Σ_k C_ijk Y_k)² = 1/(4π)` for every direction and
//!   every allowed path. Signs: `(0,1,1)` is `+dot/√3`, `(1,1,1)` is `+ε/√6`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Ordered `(multiplicity, degree)` list. Scalars come before vectors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Irreps {
    entries: Vec<(usize, u32)>,
}

impl Irreps {
    pub fn new(entries: Vec<(usize, u32)>) -> Result<Self> {
        if let Some(&(_, l)) = entries.iter().find(|(_, l)| *l > 1) {
            return Err(Error::UnsupportedDegree(l));
        }
        if entries.windows(2).any(|w| w[0].1 > w[1].1) {
            return Err(Error::Irreps("scalar entries must precede vector entries".into()));
        }
        Ok(Self { entries })
    }

    /// `scalars x0 + vectors x1`, dropping empty entries.
    pub fn from_counts(scalars: usize, vectors: usize) -> Self {
        let mut entries = Vec::new();
        if scalars > 0 {
            entries.push((scalars, 0));
        }
        if vectors > 0 {
            entries.push((vectors, 1));
        }
        Self { entries }
    }

    pub fn scalars(n: usize) -> Self {
        Self::from_counts(n, 0)
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    /// Total multiplicity of degree `l`.
    pub fn mul(&self, l: u32) -> usize {
        self.entries.iter().filter(|(_, d)| *d == l).map(|(u, _)| u).sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.mul(0)
    }

    pub fn num_vectors(&self) -> usize {
        self.mul(1)
    }

    pub fn dim(&self) -> usize {
        self.entries.iter().map(|&(u, l)| u * (2 * l as usize + 1)).sum()
    }

    pub fn is_scalar_only(&self) -> bool {
        self.num_vectors() == 0
    }

    /// First column of the degree-`l` block.
    pub fn offset(&self, l: u32) -> usize {
        if l == 0 {
            0
        } else {
            self.num_scalars()
        }
    }

    /// Degrees with nonzero multiplicity.
    pub fn degrees(&self) -> Vec<u32> {
        [0, 1].into_iter().filter(|&l| self.mul(l) > 0).collect()
    }
}

impl fmt::Display for Irreps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(u, l)| format!("{u}x{l}")).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Irreps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::default());
        }
        let mut entries = Vec::new();
        for part in s.split('+') {
            let (u, l) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Irreps(s.to_string()))?;
            let u: usize = u.trim().parse().map_err(|_| Error::Irreps(s.to_string()))?;
            let l: u32 = l.trim().parse().map_err(|_| Error::Irreps(s.to_string()))?;
            entries.push((u, l));
        }
        Self::new(entries)
    }
}

impl TryFrom<String> for Irreps {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Irreps> for String {
    fn from(i: Irreps) -> String {
        i.to_string()
    }
}

/// Per-atom features laid out as `[scalars][vector triples (x, y, z)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub irreps: Irreps,
    pub values: Tensor,
}

impl FeatureBlock {
    pub fn new(irreps: Irreps, values: Tensor) -> Result<Self> {
        if !values.is_matrix() || values.cols() != irreps.dim() {
            return Err(Error::Layout(format!(
                "irreps {irreps} need {} columns, got shape {:?}",
                irreps.dim(),
                values.shape()
            )));
        }
        Ok(Self { irreps, values })
    }

    pub fn num_atoms(&self) -> usize {
        self.values.rows()
    }
}

/// Proper rotation of ℝ³.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        if worst > 1e-12 {
            return Err(Error::NotRotation(format!("RᵀR deviates from I by {worst:e}")));
        }
        let det = det3(&m);
        if (det - 1.0).abs() > 1e-12 {
            return Err(Error::NotRotation(format!("det = {det}")));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation of a unit quaternion `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|v| v / n);
        Self {
            m: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }

    /// Haar-uniform rotation from a normalized Gaussian quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        Self::from_quaternion(q)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (0..3).map(|j| self.m[i][j] * v[j]).sum())
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let m = std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum()));
        Rotation { m }
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Applies the block-diagonal rotation to every atom: scalars are left
/// untouched, each vector triple `v` becomes `R v`.
pub fn rotate_features(r: &Rotation, f: &FeatureBlock) -> Result<FeatureBlock> {
    let values = rotate_rows(r, &f.irreps, &f.values)?;
    Ok(FeatureBlock {
        irreps: f.irreps.clone(),
        values,
    })
}

/// [`rotate_features`] on a raw `atoms × dim` array.
pub fn rotate_rows(r: &Rotation, irreps: &Irreps, values: &Tensor) -> Result<Tensor> {
    if !values.is_matrix() || values.cols() != irreps.dim() {
        return Err(Error::Layout(format!(
            "irreps {irreps} need {} columns, got shape {:?}",
            irreps.dim(),
            values.shape()
        )));
    }
    let mut out = values.clone();
    let s = irreps.num_scalars();
    let nv = irreps.num_vectors();
    let cols = values.cols();
    for a in 0..values.rows() {
        let row = &mut out.data_mut()[a * cols..(a + 1) * cols];
        for v in 0..nv {
            let c = s + 3 * v;
            let rv = r.apply([row[c], row[c + 1], row[c + 2]]);
            row[c..c + 3].copy_from_slice(&rv);
        }
    }
    Ok(out)
}

/// Wigner matrix of degree `l` in this crate's basis.
pub fn wigner(l: u32, r: &Rotation) -> Vec<Vec<f64>> {
    match l {
        0 => vec![vec![1.0]],
        _ => r.matrix().iter().map(|row| row.to_vec()).collect(),
    }
}

/// Real spherical harmonics of degree `l` at the unit vector `u`.
pub fn spherical_harmonics(l: u32, u: [f64; 3]) -> Result<Vec<f64>> {
    if l > 1 {
        return Err(Error::UnsupportedDegree(l));
    }
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnitVector(norm));
    }
    Ok(sh_unchecked(l, u))
}

/// Degree-0 and degree-1 harmonics without the unit-norm check. A zero
/// vector yields `Y¹ = 0`, the convention used for self-interaction pairs.
pub(crate) fn sh_unchecked(l: u32, u: [f64; 3]) -> Vec<f64> {
    if l == 0 {
        vec![(4.0 * PI).sqrt().recip()]
    } else {
        let c = (3.0 / (4.0 * PI)).sqrt();
        u.iter().map(|x| c * x).collect()
    }
}

/// Dense `(2l_out+1) × (2l_in+1) × (2l_f+1)` coefficient block.
#[derive(Clone, Debug, PartialEq)]
pub struct CgBlock {
    pub l_out: u32,
    pub l_in: u32,
    pub l_f: u32,
    data: Vec<f64>,
}

impl CgBlock {
    pub fn dims(&self) -> (usize, usize, usize) {
        (2 * self.l_out as usize + 1, 2 * self.l_in as usize + 1, 2 * self.l_f as usize + 1)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, dj, dk) = self.dims();
        self.data[(i * dj + j) * dk + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `M[j][i] = Σ_k C_ijk y_k`, returned row-major as a `d_in × d_out`
    /// matrix so that `x · M` maps an input triple to an output triple.
    pub fn contract_filter(&self, y: &[f64]) -> Vec<f64> {
        let (di, dj, dk) = self.dims();
        let mut m = vec![0.0; dj * di];
        for i in 0..di {
            for j in 0..dj {
                m[j * di + i] = (0..dk).map(|k| self.get(i, j, k) * y[k]).sum();
            }
        }
        m
    }
}

/// `|l_in − l_f| ≤ l_out ≤ l_in + l_f`.
pub fn selection_rule(l_out: u32, l_in: u32, l_f: u32) -> bool {
    l_in.abs_diff(l_f) <= l_out && l_out <= l_in + l_f
}

fn build_cg(l_out: u32, l_in: u32, l_f: u32) -> CgBlock {
    let r3 = 3f64.sqrt().recip();
    let mut data = vec![0.0; (2 * l_out as usize + 1) * (2 * l_in as usize + 1) * (2 * l_f as usize + 1)];
    match (l_out, l_in, l_f) {
        (0, 0, 0) => data[0] = 1.0,
        // dot product: C_{0jk} = δ_jk / √3
        (0, 1, 1) => {
            for j in 0..3 {
                data[j * 3 + j] = r3;
            }
        }
        // vector times scalar, either slot
        // (1,0,1) is 3×1×3 and (1,1,0) is 3×3×1; δ_ik resp. δ_ij sits at 4i in both.
        (1, 0, 1) | (1, 1, 0) => {
            for i in 0..3 {
                data[4 * i] = r3;
            }
        }
        // cross product: C_ijk = ε_ijk / √6
        (1, 1, 1) => {
            let r6 = 6f64.sqrt().recip();
            for (i, j, k, s) in [
                (0, 1, 2, 1.0),
                (1, 2, 0, 1.0),
                (2, 0, 1, 1.0),
                (0, 2, 1, -1.0),
                (2, 1, 0, -1.0),
                (1, 0, 2, -1.0),
            ] {
                data[(i * 3 + j) * 3 + k] = s * r6;
            }
        }
        _ => unreachable!("selection rule checked by caller"),
    }
    CgBlock { l_out, l_in, l_f, data }
}

fn table() -> &'static Vec<CgBlock> {
    static TABLE: OnceLock<Vec<CgBlock>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut v = Vec::new();
        for l_out in 0..=1 {
            for l_in in 0..=1 {
                for l_f in 0..=1 {
                    if selection_rule(l_out, l_in, l_f) {
                        v.push(build_cg(l_out, l_in, l_f));
                    }
                }
            }
        }
        v
    })
}

/// Cached Clebsch-Gordan block for the path `(l_out, l_in, l_f)`.
pub fn cg_coefficients(l_out: u32, l_in: u32, l_f: u32) -> Result<&'static CgBlock> {
    if l_out > 1 || l_in > 1 || l_f > 1 {
        return Err(Error::UnsupportedDegree(l_out.max(l_in).max(l_f)));
    }
    table()
        .iter()
        .find(|b| (b.l_out, b.l_in, b.l_f) == (l_out, l_in, l_f))
        .ok_or(Error::EmptyPath { l_out, l_in, l_f })
}
