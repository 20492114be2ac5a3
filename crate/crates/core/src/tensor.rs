//! Dense kernels shared by the rest of the crate.
//!
//! Everything here works on row-major `f64` storage. Trace files hold `f32`
//! values, which are widened on load so that accumulation order does not
//! leak into tolerances downstream.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(param(format!("non-finite matrix entry at flat index {pos}")));
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Diagonal matrix with the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &e) in entries.iter().enumerate() {
            m.data[i * n + i] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Row vector times matrix: `v · self`.
    pub fn left_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(dim(format!(
                "vector of length {} cannot left-multiply {}x{}",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (k, &a) in v.iter().enumerate() {
            for (o, &b) in out.iter_mut().zip(self.row(k)) {
                *o += a * b;
            }
        }
        Ok(out)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Consistency(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Mean of the rows in `range`.
    pub fn row_mean(&self, range: Range<usize>) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        let count = range.len() as f64;
        for i in range {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= count);
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }
}

/// Q/K/V states for one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

impl AttentionInputs {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return Err(dim(format!(
                "Q {:?}, K {:?}, V {:?} must share a shape",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if q.rows == 0 {
            return Err(Error::EmptyInput("attention inputs need at least one token"));
        }
        if q.cols == 0 {
            return Err(dim("head dimension must be at least 1"));
        }
        Ok(Self { q, k, v })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn k(&self) -> &Matrix {
        &self.k
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn seq_len(&self) -> usize {
        self.q.rows
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols
    }
}

/// Lower-triangular mask for a block of query rows against every key.
///
/// Query row `i` of the block sits at absolute position `offset + i` and may
/// attend to key `j` iff `j <= offset + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalMask {
    pub query_rows: usize,
    pub key_cols: usize,
    pub offset: usize,
}

impl CausalMask {
    /// Mask for the full `n × n` attention matrix.
    pub fn full(n: usize) -> Self {
        Self {
            query_rows: n,
            key_cols: n,
            offset: 0,
        }
    }

    /// Mask for the query rows in `rows` against `n` keys.
    pub fn for_rows(rows: Range<usize>, n: usize) -> Self {
        Self {
            query_rows: rows.len(),
            key_cols: n,
            offset: rows.start,
        }
    }

    #[inline]
    pub fn allows(&self, i: usize, j: usize) -> bool {
        j <= self.offset + i
    }
}

/// Masked, scaled dot-product softmax: `softmax(Q Kᵀ/√d + M)` restricted to
/// `query_rows` (all rows when `None`).
pub fn attention_weights(
    inputs: &AttentionInputs,
    mask: &CausalMask,
    query_rows: Option<Range<usize>>,
) -> Result<Matrix> {
    let n = inputs.seq_len();
    let rows = query_rows.unwrap_or(0..n);
    if rows.start > rows.end || rows.end > n {
        return Err(dim(format!("query rows {rows:?} outside sequence of length {n}")));
    }
    if mask.query_rows != rows.len() || mask.key_cols != n {
        return Err(dim(format!(
            "mask is {}x{}, selection is {}x{n}",
            mask.query_rows,
            mask.key_cols,
            rows.len()
        )));
    }
    let start = rows.start;
    Ok(masked_softmax(inputs.q(), rows, inputs.k(), |i, j| {
        mask.allows(i - start, j)
    }))
}

/// Softmax of scaled scores between `queries[rows]` and every row of `keys`,
/// restricted to the pairs accepted by `allowed(query_row, key_row)`.
///
/// Blocked entries are exactly zero. A row with no allowed key is all zeros.
pub(crate) fn masked_softmax(
    queries: &Matrix,
    rows: Range<usize>,
    keys: &Matrix,
    allowed: impl Fn(usize, usize) -> bool,
) -> Matrix {
    let n = keys.rows();
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut out = Matrix::zeros(rows.len(), n);
    for (r, i) in rows.enumerate() {
        let q = queries.row(i);
        let dst = &mut out.data[r * n..(r + 1) * n];
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in dst.iter_mut().enumerate() {
            if allowed(i, j) {
                let s = dot(q, keys.row(j)) * scale;
                *slot = s;
                max = max.max(s);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for (j, slot) in dst.iter_mut().enumerate() {
            if allowed(i, j) {
                *slot = (*slot - max).exp();
                sum += *slot;
            }
        }
        dst.iter_mut().for_each(|x| *x /= sum);
    }
    out
}

/// Weighted sum of value rows: `weights · V`.
pub fn attention_output(weights: &Matrix, values: &Matrix) -> Result<Matrix> {
    if weights.cols() != values.rows() {
        return Err(dim(format!(
            "weights have {} columns but V has {} rows",
            weights.cols(),
            values.rows()
        )));
    }
    weights.matmul(values)
}

/// Projects points onto their top two principal axes.
///
/// Axes come from the eigendecomposition of the mean-centred covariance,
/// ordered by decreasing eigenvalue, with each axis signed so its first
/// non-negligible loading is positive. Dimensions below two are padded with
/// zero coordinates.
pub fn pca_2d<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<[f64; 2]>> {
    let axes = principal_axes(points)?;
    let mean = column_mean(points);
    Ok(points
        .iter()
        .map(|p| {
            let centred: Vec<f64> = p.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect();
            let mut xy = [0.0; 2];
            for (c, axis) in xy.iter_mut().zip(&axes.vectors) {
                *c = dot(&centred, axis);
            }
            xy
        })
        .collect())
}

/// Eigen-summary of a point cloud's covariance, used by [`pca_2d`].
#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    /// Top (up to two) unit axes, sign-normalised.
    pub vectors: Vec<Vec<f64>>,
    /// Matching eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Trace of the covariance (total variance).
    pub total_variance: f64,
}

pub fn principal_axes<P: AsRef<[f64]>>(points: &[P]) -> Result<PrincipalAxes> {
    let first = points.first().ok_or(Error::EmptyInput("PCA needs at least one point"))?;
    let d = first.as_ref().len();
    if let Some(bad) = points.iter().position(|p| p.as_ref().len() != d) {
        return Err(dim(format!("point {bad} does not have dimension {d}")));
    }
    let mean = column_mean(points);
    let count = points.len() as f64;
    let mut cov = vec![0.0; d * d];
    let mut centred = vec![0.0; d];
    for p in points {
        for ((c, &x), &m) in centred.iter_mut().zip(p.as_ref()).zip(&mean) {
            *c = x - m;
        }
        for a in 0..d {
            if centred[a] == 0.0 {
                continue;
            }
            for b in a..d {
                cov[a * d + b] += centred[a] * centred[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= count;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let total_variance = (0..d).map(|a| cov[a * d + a]).sum();
    let (values, vectors) = symmetric_eigen(cov, d);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let take = d.min(2);
    let mut axes = Vec::with_capacity(take);
    let mut eigenvalues = Vec::with_capacity(take);
    for &col in &order[..take] {
        let mut axis: Vec<f64> = (0..d).map(|r| vectors[r * d + col]).collect();
        if let Some(&lead) = axis.iter().find(|x| x.abs() > 1e-12) {
            if lead < 0.0 {
                axis.iter_mut().for_each(|x| *x = -*x);
            }
        }
        axes.push(axis);
        eigenvalues.push(values[col].max(0.0));
    }
    Ok(PrincipalAxes {
        vectors: axes,
        eigenvalues,
        total_variance,
    })
}

fn column_mean<P: AsRef<[f64]>>(points: &[P]) -> Vec<f64> {
    let d = points.first().map_or(0, |p| p.as_ref().len());
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, &x) in mean.iter_mut().zip(p.as_ref()) {
            *m += x;
        }
    }
    let count = points.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    mean
}

/// Cyclic Jacobi eigensolver for a symmetric `d × d` matrix (row-major).
/// Returns eigenvalues and the eigenvector matrix whose columns pair with them.
fn symmetric_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; d], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q] * a[p * d + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i * d + i]).collect(), v)
}

const POWER_ITERATION_CAP: usize = 1000;
const POWER_ITERATION_TOL: f64 = 1e-12;

/// Operator 2-norm (largest singular value) by power iteration on `WᵀW`.
///
/// The start vector is the largest-norm row of `W`, which is never orthogonal
/// to the whole row space. Returns 0 for an all-zero matrix.
pub fn spectral_norm(w: &Matrix) -> Result<f64> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(Error::EmptyInput("spectral norm of an empty matrix"));
    }
    let start = (0..w.rows())
        .max_by(|&a, &b| norm(w.row(a)).total_cmp(&norm(w.row(b))).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut x = w.row(start).to_vec();
    let x_norm = norm(&x);
    if x_norm == 0.0 {
        return Ok(0.0);
    }
    x.iter_mut().for_each(|e| *e /= x_norm);

    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_CAP {
        // y = Wᵀ(W x); Rayleigh quotient xᵀWᵀWx = ‖Wx‖².
        let wx: Vec<f64> = (0..w.rows()).map(|r| dot(w.row(r), &x)).collect();
        let next = dot(&wx, &wx);
        let mut y = w.left_mul(&wx)?;
        let y_norm = norm(&y);
        if y_norm == 0.0 {
            return Ok(next.sqrt());
        }
        y.iter_mut().for_each(|e| *e /= y_norm);
        x = y;
        let converged = (next - lambda).abs() <= POWER_ITERATION_TOL * next;
        lambda = next;
        if converged {
            break;
        }
    }
    Ok(lambda.sqrt())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}
