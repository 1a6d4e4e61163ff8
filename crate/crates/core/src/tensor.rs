//! Dense 3-way tensors, matrices and the small linear-algebra kernels used by
//! every block update.
//!
//! Layout conventions, fixed once for the whole crate:
//!
//! * `Tensor3` stores its entries with the first index fastest, i.e. entry
//!   `(i, j, k)` of a `d1 x d2 x d3` tensor lives at `i + j*d1 + k*d1*d2`.
//! * `Matrix` is column-major (`(r, c)` at `r + c*rows`), so a matrix is the
//!   degenerate `d3 = 1` tensor with the same linear layout.
//! * Unfoldings follow Kolda & Bader: the mode-`n` fibers become columns,
//!   remaining indices ordered with the lower mode varying fastest.  Under
//!   this convention `unfold(cpd(P, Q1, Q2), 1) == P * khatri_rao(Q2, Q1)^T`
//!   and the mode-1 unfolding of a tensor is a plain reshape.

use crate::error::{Error, Result};

/// Tensor mode selector for unfoldings and mode products.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];
}

/// Dense real 3-way array; the carrier for every tensor quantity in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// Builds a tensor from data laid out first-index-fastest.
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::dim("tensor dimensions must be positive"));
        }
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::dim(format!(
                "data length {} does not match dims {}x{}x{}",
                data.len(),
                dims.0,
                dims.1,
                dims.2
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("tensor entries must be finite"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    t.data[i + j * dims.0 + k * dims.0 * dims.1] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn constant(dims: (usize, usize, usize), value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + j * self.dims.0 + k * self.dims.0 * self.dims.1]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        &mut self.data[i + j * self.dims.0 + k * self.dims.0 * self.dims.1]
    }

    /// Reinterprets the underlying buffer with new dimensions of equal length.
    pub fn reshaped(&self, dims: (usize, usize, usize)) -> Result<Self> {
        if dims.0 * dims.1 * dims.2 != self.data.len() {
            return Err(Error::dim("reshape must preserve the entry count"));
        }
        Ok(Self {
            dims,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::dim("elementwise operands must share dims"));
        }
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Mode-n unfolding (Kolda).  Mode 1 is a zero-copy reshape of the buffer;
    /// modes 2 and 3 permute entries.
    pub fn unfold(&self, mode: Mode) -> Matrix {
        let (d1, d2, d3) = self.dims;
        match mode {
            Mode::One => Matrix {
                rows: d1,
                cols: d2 * d3,
                data: self.data.clone(),
            },
            Mode::Two => {
                let mut m = Matrix::zeros(d2, d1 * d3);
                for k in 0..d3 {
                    for j in 0..d2 {
                        for i in 0..d1 {
                            m.data[j + (i + k * d1) * d2] = self.at(i, j, k);
                        }
                    }
                }
                m
            }
            Mode::Three => {
                let mut m = Matrix::zeros(d3, d1 * d2);
                for k in 0..d3 {
                    for j in 0..d2 {
                        for i in 0..d1 {
                            m.data[k + (i + j * d1) * d3] = self.at(i, j, k);
                        }
                    }
                }
                m
            }
        }
    }

    /// Inverse of [`Tensor3::unfold`] for the given target dimensions.
    pub fn refold(m: &Matrix, mode: Mode, dims: (usize, usize, usize)) -> Result<Self> {
        let (d1, d2, d3) = dims;
        let (want_rows, want_cols) = match mode {
            Mode::One => (d1, d2 * d3),
            Mode::Two => (d2, d1 * d3),
            Mode::Three => (d3, d1 * d2),
        };
        if m.rows != want_rows || m.cols != want_cols {
            return Err(Error::dim(format!(
                "refold: matrix is {}x{}, expected {}x{}",
                m.rows, m.cols, want_rows, want_cols
            )));
        }
        let mut t = Self::zeros(dims);
        match mode {
            Mode::One => t.data.copy_from_slice(&m.data),
            Mode::Two => {
                for k in 0..d3 {
                    for j in 0..d2 {
                        for i in 0..d1 {
                            *t.at_mut(i, j, k) = m.data[j + (i + k * d1) * d2];
                        }
                    }
                }
            }
            Mode::Three => {
                for k in 0..d3 {
                    for j in 0..d2 {
                        for i in 0..d1 {
                            *t.at_mut(i, j, k) = m.data[k + (i + j * d1) * d3];
                        }
                    }
                }
            }
        }
        Ok(t)
    }
}

/// Dense real matrix, column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.data[r + c * rows] = f(r, c);
            }
        }
        m
    }

    /// Builds a matrix from rows given in row-major order (test convenience).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nr = rows.len();
        if nr == 0 {
            return Err(Error::dim("matrix needs at least one row"));
        }
        let nc = rows[0].len();
        if rows.iter().any(|r| r.len() != nc) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Self::from_fn(nr, nc, |r, c| rows[r][c]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r + c * self.rows]
    }

    /// Column `c` as a slice (columns are contiguous).
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        (0..self.cols).map(|c| self.at(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.at(c, r))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for c in 0..other.cols {
            for k in 0..self.cols {
                let b = other.at(k, c);
                if b == 0.0 {
                    continue;
                }
                let a_col = self.col(k);
                let o_col = &mut out.data[c * self.rows..(c + 1) * self.rows];
                for r in 0..self.rows {
                    o_col[r] += a_col[r] * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("matrix subtraction shape mismatch"));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Gram matrix `self^T * self`, accumulated over rows.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let s: f64 = self.col(a).iter().zip(self.col(b)).map(|(x, y)| x * y).sum();
                *g.at_mut(a, b) = s;
                *g.at_mut(b, a) = s;
            }
        }
        g
    }
}

/// CPD factor matrices `(P, Q1, Q2)` sharing a column count.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTriple {
    pub p: Matrix,
    pub q1: Matrix,
    pub q2: Matrix,
}

impl FactorTriple {
    pub fn new(p: Matrix, q1: Matrix, q2: Matrix) -> Result<Self> {
        if p.cols() != q1.cols() || p.cols() != q2.cols() {
            return Err(Error::dim("CPD factors must share a column count"));
        }
        Ok(Self { p, q1, q2 })
    }

    pub fn rank(&self) -> usize {
        self.p.cols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.p.rows(), self.q1.rows(), self.q2.rows())
    }

    pub fn frobenius_sq_sum(&self) -> f64 {
        self.p.frobenius_sq() + self.q1.frobenius_sq() + self.q2.frobenius_sq()
    }
}

/// Column-wise Kronecker product.  Row `(ia, ib)` of the result lands at
/// position `ia * b.rows + ib`, which is the ordering that makes
/// `unfold(cpd(P, Q1, Q2), 1) == P * khatri_rao(Q2, Q1)^T` hold.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "khatri_rao: column counts {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let rows = a.rows() * b.rows();
    let mut out = Matrix::zeros(rows, a.cols());
    for c in 0..a.cols() {
        let (ac, bc) = (a.col(c), b.col(c));
        let oc = &mut out.data[c * rows..(c + 1) * rows];
        for (ia, &av) in ac.iter().enumerate() {
            for (ib, &bv) in bc.iter().enumerate() {
                oc[ia * bc.len() + ib] = av * bv;
            }
        }
    }
    Ok(out)
}

/// n-mode tensor-matrix product: `unfold(result, mode) == m * unfold(t, mode)`.
pub fn mode_product(t: &Tensor3, m: &Matrix, mode: Mode) -> Result<Tensor3> {
    let dims = [t.dims().0, t.dims().1, t.dims().2];
    if m.cols() != dims[mode.index()] {
        return Err(Error::dim(format!(
            "mode_product: matrix has {} cols, tensor mode has size {}",
            m.cols(),
            dims[mode.index()]
        )));
    }
    let unf = t.unfold(mode);
    let prod = m.matmul(&unf)?;
    let mut new_dims = dims;
    new_dims[mode.index()] = m.rows();
    Tensor3::refold(&prod, mode, (new_dims[0], new_dims[1], new_dims[2]))
}

/// Reconstructs the dense tensor of a CPD model:
/// `X[i, j, k] = sum_r P[i, r] * Q1[j, r] * Q2[k, r]`.
pub fn cpd_reconstruct(f: &FactorTriple) -> Tensor3 {
    let (d1, d2, d3) = f.dims();
    let r = f.rank();
    let mut t = Tensor3::zeros((d1, d2, d3));
    for rr in 0..r {
        let pc = f.p.col(rr);
        let q1c = f.q1.col(rr);
        let q2c = f.q2.col(rr);
        for k in 0..d3 {
            let q2v = q2c[k];
            for j in 0..d2 {
                let w = q1c[j] * q2v;
                let base = j * d1 + k * d1 * d2;
                let dst = &mut t.data[base..base + d1];
                for (i, &pv) in pc.iter().enumerate() {
                    dst[i] += pv * w;
                }
            }
        }
    }
    t
}

/// Order-independent sum: sorting by total order first makes the result a
/// function of the value multiset alone, so reductions commute exactly with
/// permutations of links and flows.  Short runs (routing paths, per-link
/// partials) use an insertion sort to skip the general sort machinery.
pub(crate) fn stable_sum(buf: &mut Vec<f64>) -> f64 {
    if buf.len() <= 24 {
        for i in 1..buf.len() {
            let mut j = i;
            while j > 0 && buf[j - 1].total_cmp(&buf[j]).is_gt() {
                buf.swap(j - 1, j);
                j -= 1;
            }
        }
    } else {
        buf.sort_unstable_by(|a, b| a.total_cmp(b));
    }
    let s = buf.iter().sum();
    buf.clear();
    s
}

/// Masked sample mean and variance over paired (value, mask) entries.
/// The mask is 0/1; `mean = [O.T]_S / [O]_S` and the variance divides the
/// masked squared deviations by `[O]_S - 1`.  Degenerate masks are guarded:
/// an empty mask yields `(0, 0)` and a single observation yields variance 0.
pub fn masked_stats_iter(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let mut num: Vec<f64> = Vec::new();
    let mut den: Vec<f64> = Vec::new();
    for (t, o) in pairs.clone() {
        num.push(o * t);
        den.push(o);
    }
    let total = stable_sum(&mut num);
    let count = stable_sum(&mut den);
    if count == 0.0 {
        return (0.0, 0.0);
    }
    let mean = total / count;
    if count <= 1.0 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = Vec::new();
    for (t, o) in pairs {
        let d = o * t - mean * o;
        dev.push(d * d);
    }
    let var = stable_sum(&mut dev) / (count - 1.0);
    (mean, var)
}

/// Masked statistics over whole tensors; see [`masked_stats_iter`].
pub fn masked_stats(t: &Tensor3, o: &Tensor3) -> Result<(f64, f64)> {
    if t.dims() != o.dims() {
        return Err(Error::dim("masked_stats operands must share dims"));
    }
    Ok(masked_stats_iter(
        t.data().iter().copied().zip(o.data().iter().copied()),
    ))
}

/// Elementwise soft-thresholding `sign(t) * max(|t| - thresh, 0)`.
pub fn soft_threshold(t: &Tensor3, thresh: &Tensor3) -> Result<Tensor3> {
    if t.dims() != thresh.dims() {
        return Err(Error::dim("soft_threshold operands must share dims"));
    }
    if thresh.data().iter().any(|&v| v < 0.0) {
        return Err(Error::arg("soft_threshold requires a nonnegative threshold"));
    }
    t.zip_map(thresh, |v, m| {
        let mag = v.abs() - m;
        if mag > 0.0 {
            v.signum() * mag
        } else {
            0.0
        }
    })
}

/// Solves `g * x = rhs` for symmetric positive definite `g` via Cholesky.
pub fn solve_spd(g: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::dim("solve_spd: g must be square"));
    }
    if rhs.rows() != n {
        return Err(Error::dim("solve_spd: rhs row count must match g"));
    }
    if !g.data().iter().all(|v| v.is_finite()) || !rhs.data().iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("solve_spd: non-finite input"));
    }
    // Lower-triangular Cholesky factor, column-major in place.
    let mut l = vec![0.0_f64; n * n];
    for c in 0..n {
        for r in c..n {
            let mut s = g.at(r, c);
            for k in 0..c {
                s -= l[r + k * n] * l[c + k * n];
            }
            if r == c {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::numeric(
                        "solve_spd: factorization breakdown (matrix not positive definite)",
                    ));
                }
                l[r + c * n] = s.sqrt();
            } else {
                l[r + c * n] = s / l[c + c * n];
            }
        }
    }
    let mut x = rhs.clone();
    for col in 0..x.cols() {
        let xc = &mut x.data[col * n..(col + 1) * n];
        // forward substitution L y = b
        for r in 0..n {
            let mut s = xc[r];
            for k in 0..r {
                s -= l[r + k * n] * xc[k];
            }
            xc[r] = s / l[r + r * n];
        }
        // back substitution L^T x = y
        for r in (0..n).rev() {
            let mut s = xc[r];
            for k in (r + 1)..n {
                s -= l[k + r * n] * xc[k];
            }
            xc[r] = s / l[r + r * n];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor_from(dims: (usize, usize, usize), f: impl FnMut(usize, usize, usize) -> f64) -> Tensor3 {
        Tensor3::from_fn(dims, f)
    }

    fn rng_tensor(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
        let mut s = seed;
        Tensor3::from_fn(dims, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn rng_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn unfold_singleton() {
        let t = Tensor3::new((1, 1, 1), vec![5.0]).unwrap();
        for mode in Mode::ALL {
            let m = t.unfold(mode);
            assert_eq!((m.rows(), m.cols()), (1, 1));
            assert_eq!(m.at(0, 0), 5.0);
        }
    }

    #[test]
    fn unfold_mode1_hand_case() {
        // t[i,j,k] = i + 2(j-1) + 4(k-1) with 1-based indices.
        let t = tensor_from((2, 2, 2), |i, j, k| (i + 1 + 2 * j + 4 * k) as f64);
        let m = t.unfold(Mode::One);
        // Row 1 (i=1): columns ordered (j,k) = (1,1),(2,1),(1,2),(2,2).
        let row: Vec<f64> = (0..4).map(|c| m.at(0, c)).collect();
        assert_eq!(row, vec![1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn unfold_refold_round_trip() {
        for seed in 0..50 {
            let t = rng_tensor((3, 4, 5), seed);
            for mode in Mode::ALL {
                let m = t.unfold(mode);
                let back = Tensor3::refold(&m, mode, t.dims()).unwrap();
                assert_eq!(back, t);
            }
        }
    }

    #[test]
    fn khatri_rao_single_columns() {
        let a = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.col(0), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn khatri_rao_identity_columns() {
        let kr = khatri_rao(&Matrix::identity(2), &Matrix::identity(2)).unwrap();
        assert_eq!((kr.rows(), kr.cols()), (4, 2));
        assert_eq!(kr.col(0), &[1.0, 0.0, 0.0, 0.0]); // e1 (x) e1
        assert_eq!(kr.col(1), &[0.0, 0.0, 0.0, 1.0]); // e2 (x) e2
    }

    #[test]
    fn khatri_rao_column_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(khatri_rao(&a, &b), Err(Error::Dim(_))));
    }

    #[test]
    fn cpd_unfolding_identities() {
        for seed in 0..10 {
            let f = FactorTriple::new(
                rng_matrix(3, 2, seed),
                rng_matrix(4, 2, seed + 100),
                rng_matrix(2, 2, seed + 200),
            )
            .unwrap();
            let x = cpd_reconstruct(&f);
            let checks = [
                (Mode::One, &f.p, khatri_rao(&f.q2, &f.q1).unwrap()),
                (Mode::Two, &f.q1, khatri_rao(&f.q2, &f.p).unwrap()),
                (Mode::Three, &f.q2, khatri_rao(&f.q1, &f.p).unwrap()),
            ];
            for (mode, factor, kr) in checks {
                let lhs = x.unfold(mode);
                let rhs = factor.matmul(&kr.transpose()).unwrap();
                let scale = lhs.frobenius_sq().sqrt().max(1e-30);
                let diff = lhs.sub(&rhs).unwrap().frobenius_sq().sqrt();
                assert!(diff / scale < 1e-12, "mode {mode:?}: rel diff {}", diff / scale);
            }
        }
    }

    #[test]
    fn cpd_hand_case() {
        let f = FactorTriple::new(
            Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        let x = cpd_reconstruct(&f);
        assert_eq!(x.at(0, 0, 0), 1.0);
        assert_eq!(x.at(1, 0, 0), 2.0);
        assert_eq!(x.at(0, 1, 0), 0.0);
        assert_eq!(x.at(1, 1, 0), 0.0);
    }

    #[test]
    fn cpd_zero_factor_and_linearity() {
        let p = rng_matrix(3, 2, 1);
        let q1 = rng_matrix(4, 2, 2);
        let q2 = rng_matrix(2, 2, 3);
        let zero = Matrix::zeros(3, 2);
        let f0 = FactorTriple::new(zero, q1.clone(), q2.clone()).unwrap();
        assert!(cpd_reconstruct(&f0).data().iter().all(|&v| v == 0.0));

        // Rank-2 reconstruction equals the sum of the two rank-1 parts.
        let full = cpd_reconstruct(&FactorTriple::new(p.clone(), q1.clone(), q2.clone()).unwrap());
        let take = |m: &Matrix, c: usize| Matrix::from_fn(m.rows(), 1, |r, _| m.at(r, c));
        let r1 = cpd_reconstruct(
            &FactorTriple::new(take(&p, 0), take(&q1, 0), take(&q2, 0)).unwrap(),
        );
        let r2 = cpd_reconstruct(
            &FactorTriple::new(take(&p, 1), take(&q1, 1), take(&q2, 1)).unwrap(),
        );
        let sum = r1.add(&r2).unwrap();
        let diff = full.sub(&sum).unwrap().max_abs();
        assert!(diff < 1e-12);
    }

    #[test]
    fn cpd_rank_mismatch() {
        assert!(FactorTriple::new(Matrix::zeros(2, 1), Matrix::zeros(2, 2), Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn mode_product_identity_and_row_sum() {
        let t = rng_tensor((2, 2, 2), 9);
        let out = mode_product(&t, &Matrix::identity(2), Mode::One).unwrap();
        assert!(out.sub(&t).unwrap().max_abs() < 1e-15);

        let ones = Tensor3::constant((2, 2, 2), 1.0);
        let m = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let s = mode_product(&ones, &m, Mode::One).unwrap();
        assert_eq!(s.dims(), (1, 2, 2));
        assert!(s.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mode_product_unfolding_identity() {
        let t = rng_tensor((3, 4, 2), 5);
        let m = rng_matrix(5, 3, 6);
        let out = mode_product(&t, &m, Mode::One).unwrap();
        let lhs = out.unfold(Mode::One);
        let rhs = m.matmul(&t.unfold(Mode::One)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().frobenius_sq().sqrt() < 1e-12);
    }

    #[test]
    fn mode_product_associativity() {
        let t = rng_tensor((3, 4, 2), 7);
        let a = rng_matrix(4, 3, 8);
        let b = rng_matrix(2, 4, 9);
        let lhs = mode_product(&mode_product(&t, &a, Mode::One).unwrap(), &b, Mode::One).unwrap();
        let rhs = mode_product(&t, &b.matmul(&a).unwrap(), Mode::One).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn mode_product_dim_mismatch() {
        let t = rng_tensor((3, 4, 2), 7);
        let m = rng_matrix(5, 4, 8);
        assert!(matches!(mode_product(&t, &m, Mode::One), Err(Error::Dim(_))));
    }

    #[test]
    fn masked_stats_cases() {
        let t = Tensor3::new((3, 1, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let ones = Tensor3::constant((3, 1, 1), 1.0);
        assert_eq!(masked_stats(&t, &ones).unwrap(), (2.0, 1.0));

        let zeros = Tensor3::zeros((3, 1, 1));
        assert_eq!(masked_stats(&t, &zeros).unwrap(), (0.0, 0.0));

        let t = Tensor3::new((3, 1, 1), vec![1.0, 2.0, 100.0]).unwrap();
        let o = Tensor3::new((3, 1, 1), vec![1.0, 1.0, 0.0]).unwrap();
        let (mean, var) = masked_stats(&t, &o).unwrap();
        assert!((mean - 1.5).abs() < 1e-15);
        assert!((var - 0.5).abs() < 1e-15);

        // Single observation -> variance 0.
        let o1 = Tensor3::new((3, 1, 1), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(masked_stats(&t, &o1).unwrap(), (2.0, 0.0));
    }

    #[test]
    fn soft_threshold_cases() {
        let t = Tensor3::new((3, 1, 1), vec![2.0, -2.0, 1.0]).unwrap();
        let m = Tensor3::constant((3, 1, 1), 1.5);
        let out = soft_threshold(&t, &m).unwrap();
        assert_eq!(out.data(), &[0.5, -0.5, 0.0]);

        let neg = Tensor3::new((3, 1, 1), vec![0.0, -0.1, 0.0]).unwrap();
        assert!(matches!(soft_threshold(&t, &neg), Err(Error::Arg(_))));
    }

    #[test]
    fn solve_spd_simple() {
        let rhs = rng_matrix(4, 2, 11);
        let x = solve_spd(&Matrix::identity(4), &rhs).unwrap();
        assert!(x.sub(&rhs).unwrap().max_abs() < 1e-15);

        let g = Matrix::from_fn(2, 2, |r, c| if r == c { 2.0 } else { 0.0 });
        let rhs = Matrix::new(2, 1, vec![4.0, 6.0]).unwrap();
        let x = solve_spd(&g, &rhs).unwrap();
        assert!((x.at(0, 0) - 2.0).abs() < 1e-12);
        assert!((x.at(1, 0) - 3.0).abs() < 1e-12);
    }

    /// Independent Gaussian-elimination oracle with partial pivoting.
    fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row: Vec<f64> = (0..n).map(|c| a.at(r, c)).collect();
                row.push(b[r]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
                .unwrap();
            m.swap(col, piv);
            for r in (col + 1)..n {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut s = m[r][n];
            for c in (r + 1)..n {
                s -= m[r][c] * x[c];
            }
            x[r] = s / m[r][r];
        }
        x
    }

    #[test]
    fn solve_spd_matches_elimination_oracle() {
        for seed in 0..10 {
            let b = rng_matrix(8, 8, 40 + seed);
            // SPD by construction: B^T B + I
            let g = {
                let mut g = b.transpose().matmul(&b).unwrap();
                for i in 0..8 {
                    *g.at_mut(i, i) += 1.0;
                }
                g
            };
            let rhs = rng_matrix(8, 1, 90 + seed);
            let x = solve_spd(&g, &rhs).unwrap();
            let oracle = gauss_solve(&g, rhs.col(0));
            for i in 0..8 {
                assert!((x.at(i, 0) - oracle[i]).abs() < 1e-9);
            }
            // Residual contract.
            let resid = g.matmul(&x).unwrap().sub(&rhs).unwrap().frobenius_sq().sqrt();
            assert!(resid <= 1e-10 * rhs.frobenius_sq().sqrt().max(1e-30));
        }
    }

    #[test]
    fn solve_spd_breakdown() {
        let g = Matrix::from_fn(2, 2, |_, _| 1.0); // singular
        let rhs = Matrix::zeros(2, 1);
        assert!(matches!(solve_spd(&g, &rhs), Err(Error::Numeric(_))));
    }

    #[test]
    fn stable_sum_is_permutation_invariant() {
        let vals = vec![1e16, 1.0, -1e16, 3.5, 0.1, -7.25, 1e-3];
        let mut a = vals.clone();
        let mut b = vals.iter().rev().copied().collect::<Vec<_>>();
        assert_eq!(stable_sum(&mut a).to_bits(), stable_sum(&mut b).to_bits());
    }

    #[test]
    fn tensor_validation() {
        assert!(Tensor3::new((2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor3::new((2, 1, 1), vec![f64::NAN, 0.0]).is_err());
        assert!(Tensor3::new((0, 1, 1), vec![]).is_err());
    }
}
