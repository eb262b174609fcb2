//! Dense row-major matrix/vector kernels for bound propagation.
//!
//! Everything here is 64-bit and single-threaded-deterministic: the same
//! inputs produce bit-identical outputs. Kernels that participate in hot
//! sweeps (`matvec*`, `abs_matvec*`) use unrolled accumulators; the fused
//! positive/negative variants avoid materializing split matrices.
//!
//! Finiteness of results is a caller-level contract: construction from
//! outside data is validated, and the training loop checks losses and
//! gradients, so these kernels stay branch-free.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    /// Constant vector, e.g. the ε·1 seed of the v-recursion.
    pub fn filled(len: usize, value: f64) -> Self {
        Vector {
            data: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry (first on ties). Panics on empty vectors.
    pub fn argmax(&self) -> usize {
        assert!(!self.data.is_empty(), "argmax of empty vector");
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl Matrix {
    /// Build from row-major data. Errors if the data length does not match.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                expected: format!("{rows}x{cols} = {} entries", rows * cols),
                got: format!("{} entries", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_cols(&self, op: &'static str, x: &Vector) -> Result<()> {
        if self.cols != x.len() {
            return Err(Error::Shape {
                op,
                expected: format!("vector of len {} for a {}x{} matrix", self.cols, self.rows, self.cols),
                got: format!("vector of len {}", x.len()),
            });
        }
        Ok(())
    }

    /// `self · x`.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        self.check_cols("matvec", x)?;
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(dot(self.row(r), x.as_slice()));
        }
        Ok(Vector::new(out))
    }

    /// `selfᵀ · g` without materializing the transpose.
    pub fn matvec_transpose(&self, g: &Vector) -> Vector {
        assert_eq!(self.rows, g.len(), "matvec_transpose shape");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * gr;
            }
        }
        Vector::new(out)
    }

    /// Fused `self⁺·a + self⁻·b` where `self⁺`/`self⁻` are the positive and
    /// negative parts. One traversal, no split matrices.
    pub fn matvec_posneg(&self, a: &Vector, b: &Vector) -> Vector {
        assert_eq!(self.cols, a.len(), "matvec_posneg shape (a)");
        assert_eq!(self.cols, b.len(), "matvec_posneg shape (b)");
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(dot_posneg(self.row(r), a.as_slice(), b.as_slice()));
        }
        Vector::new(out)
    }

    /// Fused transposed positive/negative products, both combinations at
    /// once: returns `(self⁺ᵀ·u + self⁻ᵀ·l, self⁻ᵀ·u + self⁺ᵀ·l)`.
    pub fn matvec_posneg_transpose_pair(&self, u: &Vector, l: &Vector) -> (Vector, Vector) {
        assert_eq!(self.rows, u.len(), "posneg_transpose shape (u)");
        assert_eq!(self.rows, l.len(), "posneg_transpose shape (l)");
        let mut ga = vec![0.0; self.cols];
        let mut gb = vec![0.0; self.cols];
        for r in 0..self.rows {
            let (ur, lr) = (u[r], l[r]);
            let row = self.row(r);
            for j in 0..self.cols {
                let w = row[j];
                let (wp, wn) = (w.max(0.0), w.min(0.0));
                ga[j] += wp * ur + wn * lr;
                gb[j] += wn * ur + wp * lr;
            }
        }
        (Vector::new(ga), Vector::new(gb))
    }

    /// `|self| · x` without materializing the absolute matrix.
    pub fn abs_matvec(&self, x: &Vector) -> Vector {
        assert_eq!(self.cols, x.len(), "abs_matvec shape");
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(dot_abs(self.row(r), x.as_slice()));
        }
        Vector::new(out)
    }

    /// `|self|ᵀ · g`.
    pub fn abs_matvec_transpose(&self, g: &Vector) -> Vector {
        assert_eq!(self.rows, g.len(), "abs_matvec_transpose shape");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let gr = g[r];
            if gr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w.abs() * gr;
            }
        }
        Vector::new(out)
    }

    /// Split into positive and negative parts; `m⁺ + m⁻ == m` bit-for-bit
    /// (zero entries land in both parts so signed zeros survive).
    pub fn pos_neg_split(&self) -> (Matrix, Matrix) {
        let mut pos = self.clone();
        let mut neg = self.clone();
        for (p, n) in pos.data.iter_mut().zip(neg.data.iter_mut()) {
            if *p > 0.0 {
                *n = 0.0;
            } else if *p < 0.0 {
                *p = 0.0;
            }
        }
        (pos, neg)
    }

    /// Entrywise absolute value.
    pub fn abs_matrix(&self) -> Matrix {
        let mut m = self.clone();
        for v in m.data.iter_mut() {
            *v = v.abs();
        }
        m
    }

    /// Row-wise dual norm. Only `q = 1` (the dual of ℓ∞) is supported.
    pub fn row_dual_norm(&self, q: u32) -> Result<Vector> {
        if q != 1 {
            return Err(Error::UnsupportedNorm);
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            out.push(self.row(r).iter().map(|w| w.abs()).sum());
        }
        Ok(Vector::new(out))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                expected: format!("{}x{} · {}x?", self.rows, self.cols, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let aik = self.data[i * self.cols + k];
                if aik == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += aik * b;
                }
            }
        }
        Ok(out)
    }
}

/// Unrolled dot product: four independent accumulators hide FP latency.
fn dot(row: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (rc, xc) = (row.chunks_exact(4), x.chunks_exact(4));
    let (rr, xr) = (rc.remainder(), xc.remainder());
    for (r4, x4) in rc.zip(xc) {
        acc[0] += r4[0] * x4[0];
        acc[1] += r4[1] * x4[1];
        acc[2] += r4[2] * x4[2];
        acc[3] += r4[3] * x4[3];
    }
    let mut tail = 0.0;
    for (r, x) in rr.iter().zip(xr) {
        tail += r * x;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot_abs(row: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (rc, xc) = (row.chunks_exact(4), x.chunks_exact(4));
    let (rr, xr) = (rc.remainder(), xc.remainder());
    for (r4, x4) in rc.zip(xc) {
        acc[0] += r4[0].abs() * x4[0];
        acc[1] += r4[1].abs() * x4[1];
        acc[2] += r4[2].abs() * x4[2];
        acc[3] += r4[3].abs() * x4[3];
    }
    let mut tail = 0.0;
    for (r, x) in rr.iter().zip(xr) {
        tail += r.abs() * x;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Σ_j max(w,0)·a[j] + min(w,0)·b[j] over one row.
///
/// Accumulation order deliberately mirrors `dot` so that with `a == b` the
/// result is numerically identical to a plain product — degenerate (ε = 0)
/// intervals then collapse exactly onto the nominal forward values.
fn dot_posneg(row: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (rc, ac, bc) = (row.chunks_exact(4), a.chunks_exact(4), b.chunks_exact(4));
    let (rr, ar, br) = (rc.remainder(), ac.remainder(), bc.remainder());
    for ((r4, a4), b4) in rc.zip(ac).zip(bc) {
        acc[0] += r4[0].max(0.0) * a4[0] + r4[0].min(0.0) * b4[0];
        acc[1] += r4[1].max(0.0) * a4[1] + r4[1].min(0.0) * b4[1];
        acc[2] += r4[2].max(0.0) * a4[2] + r4[2].min(0.0) * b4[2];
        acc[3] += r4[3].max(0.0) * a4[3] + r4[3].min(0.0) * b4[3];
    }
    let mut tail = 0.0;
    for ((r, a), b) in rr.iter().zip(ar).zip(br) {
        tail += r.max(0.0) * a + r.min(0.0) * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
