use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Builds a `rows × cols` matrix from row slices of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Column tile width for the blocked kernels; keeps the touched rows in cache.
const TILE: usize = 512;

/// `out[m×n] += a[m×k] · b[k×n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        let mut i = 0;
        while i + 4 <= m {
            let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (r0, r1, r2, r3) = (&mut r0[j0..j1], &mut r1[j0..j1], &mut r2[j0..j1], &mut r3[j0..j1]);
            for p in 0..k {
                let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
                if x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0 {
                    continue;
                }
                let b_row = &b[p * n + j0..p * n + j1];
                for (c, &bv) in b_row.iter().enumerate() {
                    r0[c] += x0 * bv;
                    r1[c] += x1 * bv;
                    r2[c] += x2 * bv;
                    r3[c] += x3 * bv;
                }
            }
            i += 4;
        }
        for i in i..m {
            let out_row = &mut out[i * n + j0..i * n + j1];
            for p in 0..k {
                let a_ip = a[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o, &bv) in out_row.iter_mut().zip(&b[p * n + j0..p * n + j1]) {
                    *o += a_ip * bv;
                }
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p0 in (0..k).step_by(TILE) {
        let p1 = (p0 + TILE).min(k);
        let mut i = 0;
        while i + 4 <= m {
            let a0 = &a[i * k + p0..i * k + p1];
            let a1 = &a[(i + 1) * k + p0..(i + 1) * k + p1];
            let a2 = &a[(i + 2) * k + p0..(i + 2) * k + p1];
            let a3 = &a[(i + 3) * k + p0..(i + 3) * k + p1];
            for j in 0..n {
                let b_row = &b[j * k + p0..j * k + p1];
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                for (c, &y) in b_row.iter().enumerate() {
                    s0 += a0[c] * y;
                    s1 += a1[c] * y;
                    s2 += a2[c] * y;
                    s3 += a3[c] * y;
                }
                out[i * n + j] += s0;
                out[(i + 1) * n + j] += s1;
                out[(i + 2) * n + j] += s2;
                out[(i + 3) * n + j] += s3;
            }
            i += 4;
        }
        for i in i..m {
            let a_row = &a[i * k + p0..i * k + p1];
            for j in 0..n {
                let s: f64 = a_row.iter().zip(&b[j * k + p0..j * k + p1]).map(|(x, y)| x * y).sum();
                out[i * n + j] += s;
            }
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for j0 in (0..n).step_by(TILE) {
        let j1 = (j0 + TILE).min(n);
        let mut i = 0;
        while i + 4 <= m {
            let b0 = &b[i * n + j0..i * n + j1];
            let b1 = &b[(i + 1) * n + j0..(i + 1) * n + j1];
            let b2 = &b[(i + 2) * n + j0..(i + 2) * n + j1];
            let b3 = &b[(i + 3) * n + j0..(i + 3) * n + j1];
            for p in 0..k {
                let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
                if x0 == 0.0 && x1 == 0.0 && x2 == 0.0 && x3 == 0.0 {
                    continue;
                }
                let out_row = &mut out[p * n + j0..p * n + j1];
                for (c, o) in out_row.iter_mut().enumerate() {
                    *o += x0 * b0[c] + x1 * b1[c] + x2 * b2[c] + x3 * b3[c];
                }
            }
            i += 4;
        }
        for i in i..m {
            let b_row = &b[i * n + j0..i * n + j1];
            for p in 0..k {
                let a_ip = a[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o, &bv) in out[p * n + j0..p * n + j1].iter_mut().zip(b_row) {
                    *o += a_ip * bv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
    }

    #[test]
    fn gemm_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [0.5, 7.0, 2.0, 16.0]);
        // bᵀ stored as 2x3
        let bt = [1.0, -1.0, 0.5, 0.0, 2.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm_nt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c, c2);
        // aᵀ (3x2) stored as a 2x3 matrix
        let mut c3 = [0.0; 9];
        gemm_tn_acc(&a, &a, &mut c3, 2, 3, 3);
        assert_eq!(c3[0], 1.0 + 16.0);
        assert_eq!(c3[5], 2.0 * 3.0 + 5.0 * 6.0);
    }

    #[test]
    fn blocked_kernels_match_naive_products() {
        let (m, k, n) = (7, 600, 1030);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 53 % 97) as f64 - 48.0) / 5.0).collect();
        let naive = |i: usize, j: usize| (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
        let mut c = vec![0.0; m * n];
        gemm_acc(&a, &b, &mut c, m, k, n);
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_nt_acc(&a, &bt, &mut c2, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let e = naive(i, j);
                assert!((c[i * n + j] - e).abs() < 1e-9 * e.abs().max(1.0));
                assert!((c2[i * n + j] - e).abs() < 1e-9 * e.abs().max(1.0));
            }
        }
        // aᵀ·c, with a viewed as m×k
        let mut d = vec![0.0; k * n];
        gemm_tn_acc(&a, &c, &mut d, m, k, n);
        for (p, j) in [(0, 0), (599, 1029), (300, 517)] {
            let e: f64 = (0..m).map(|i| a[i * k + p] * c[i * n + j]).sum();
            assert!((d[p * n + j] - e).abs() < 1e-9 * e.abs().max(1.0));
        }
    }
}
