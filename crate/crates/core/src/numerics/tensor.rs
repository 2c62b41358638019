//! Dense row-major matrices and the tape-free kernels shared by the
//! differentiable ops, the memory scorers and the test oracles.

use super::{NumericsError, Real};

/// Row-major 2-D tensor. Vectors are stored as `1 x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::shape(
                "Tensor::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: Real) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    /// A `1 x n` row vector.
    pub fn row_vector(data: Vec<Real>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(value: Real) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::shape("Tensor::from_rows", "ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: Real) {
        self.data[r * self.cols + c] = value;
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<(), NumericsError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NumericsError::NonFinite(context.to_string()))
        }
    }
}

/// Plain matrix product, `a [m x k] * b [k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.cols != b.rows {
        return Err(NumericsError::shape(
            "matmul",
            format!("{}x{} * {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let mut out = Tensor::zeros(a.rows, b.cols);
    matmul_into(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// `out[m x n] += a[m x k] * b[k x n]`. The summation order over `k` is fixed
/// per output row, so results do not depend on how rows are batched.
pub(crate) fn matmul_into(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

pub fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[Real]) -> Real {
    dot(a, a).sqrt()
}

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const COSINE_NORM_FLOOR: Real = 1e-8;

/// Cosine similarity with a zero-norm guard: returns 0 when either vector
/// has norm below [`COSINE_NORM_FLOOR`].
pub fn cosine_similarity(a: &[Real], b: &[Real]) -> Result<Real, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::shape(
            "cosine_similarity",
            format!("{} vs {}", a.len(), b.len()),
        ));
    }
    if a.is_empty() {
        return Err(NumericsError::Empty("cosine_similarity"));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[Real], b: &[Real]) -> Real {
    let na = norm(a);
    let nb = norm(b);
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[Real]) -> Result<Vec<Real>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty("softmax"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(x: &mut [Real]) {
    let max = x.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn log_sum_exp(x: &[Real]) -> Real {
    let max = x.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<Real>().ln()
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: Real) -> Real {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn squared_distance(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
