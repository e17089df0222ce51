use crate::error::{Error, Result};

/// Dense row-major matrix of per-token features.
///
/// Rows are tokens (grid points, neighbors, points), columns are channels.
/// `requires_grad` marks a leaf whose gradient should be tracked when the
/// matrix is placed on a [`Tape`](super::Tape).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub requires_grad: bool,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "TokenMatrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
            requires_grad: false,
        }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> TokenMatrix {
        let mut out = TokenMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows in the given order; indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> TokenMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        TokenMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
            requires_grad: false,
        }
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> TokenMatrix {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        TokenMatrix {
            rows: self.rows,
            cols: width,
            data,
            requires_grad: false,
        }
    }

    pub fn max_abs_diff(&self, other: &TokenMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &TokenMatrix) -> Result<TokenMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = TokenMatrix::zeros(self.rows, other.cols);
        matmul_into(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        Ok(out)
    }

    pub fn relu(&self) -> TokenMatrix {
        self.map(|v| v.max(0.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TokenMatrix {
        TokenMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<TokenMatrix> {
        if self.cols == 0 {
            return Err(Error::EmptyInput("softmax_rows"));
        }
        let mut out = self.clone();
        out.requires_grad = false;
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(out)
    }

    /// Per-channel maximum over all rows.
    pub fn maxpool_set(&self) -> Result<TokenMatrix> {
        let (out, _) = segment_max(self, &[0..self.rows], false, "maxpool_set")?;
        Ok(out)
    }

    /// Per-column normalization across rows with affine `gamma`/`beta`.
    pub fn feature_norm(
        &self,
        gamma: &[f64],
        beta: &[f64],
        eps: f64,
    ) -> Result<(TokenMatrix, NormStats)> {
        if self.rows == 0 {
            return Err(Error::EmptyInput("feature_norm"));
        }
        if gamma.len() != self.cols || beta.len() != self.cols {
            return Err(Error::Shape {
                op: "feature_norm",
                left: self.shape(),
                right: (gamma.len(), beta.len()),
            });
        }
        let stats = NormStats::compute(self, eps);
        let mut out = TokenMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let xhat = (self.get(r, c) - stats.mean[c]) * stats.inv_std[c];
                out.set(r, c, gamma[c] * xhat + beta[c]);
            }
        }
        Ok((out, stats))
    }

    pub fn concat_cols(parts: &[&TokenMatrix]) -> Result<TokenMatrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        for p in parts {
            if p.rows != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: parts[0].shape(),
                    right: p.shape(),
                });
            }
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(TokenMatrix {
            rows,
            cols,
            data,
            requires_grad: false,
        })
    }
}

/// Column statistics saved by [`TokenMatrix::feature_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population variance (divides by the row count).
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl NormStats {
    fn compute(x: &TokenMatrix, eps: f64) -> Self {
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.cols];
        for r in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for r in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Self { mean, var, inv_std }
    }

    /// Recovers the pre-normalization input from a normalized output.
    pub fn invert(&self, y: &TokenMatrix, gamma: &[f64], beta: &[f64]) -> TokenMatrix {
        let mut x = TokenMatrix::zeros(y.rows, y.cols);
        for r in 0..y.rows {
            for c in 0..y.cols {
                let xhat = (y.get(r, c) - beta[c]) / gamma[c];
                x.set(r, c, xhat / self.inv_std[c] + self.mean[c]);
            }
        }
        x
    }
}

/// `out += a(m×k) · b(k×n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// Max over each row segment. Empty segments produce a zero row and an
/// argmax of `usize::MAX` when `allow_empty` is set, an error otherwise.
/// Ties go to the lowest row index.
pub(crate) fn segment_max(
    x: &TokenMatrix,
    segments: &[std::ops::Range<usize>],
    allow_empty: bool,
    op: &'static str,
) -> Result<(TokenMatrix, Vec<usize>)> {
    let cols = x.cols;
    let mut out = TokenMatrix::zeros(segments.len(), cols);
    let mut argmax = vec![usize::MAX; segments.len() * cols];
    for (s, seg) in segments.iter().enumerate() {
        if seg.end > x.rows || seg.start > seg.end {
            return Err(Error::Shape {
                op,
                left: x.shape(),
                right: (seg.start, seg.end),
            });
        }
        if seg.is_empty() {
            if !allow_empty {
                return Err(Error::EmptyInput(op));
            }
            continue;
        }
        for c in 0..cols {
            let mut best = seg.start;
            let mut best_v = x.get(seg.start, c);
            for r in seg.start + 1..seg.end {
                let v = x.get(r, c);
                if v > best_v {
                    best_v = v;
                    best = r;
                }
            }
            out.set(s, c, best_v);
            argmax[s * cols + c] = best;
        }
    }
    Ok((out, argmax))
}
