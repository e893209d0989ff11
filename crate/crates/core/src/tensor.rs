use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major array of 64-bit floats.
///
/// This is the value type everywhere: parameters, activations, gradients,
/// spectra. Differentiation is handled by the tape (see [`crate::autodiff`]);
/// a `Tensor` by itself is plain data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::BadShape {
                op: "tensor",
                shape,
                detail: format!("shape wants {} values, got {}", n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Build a rank-2 tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::BadShape {
                    op: "from_rows",
                    shape: vec![r, c],
                    detail: format!("row of length {} in a {}-column matrix", row.len(), c),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    /// Fill with uniform(-bound, bound) samples drawn in row-major order.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value; panics if the tensor does not hold exactly one element.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// In-place `self += other` (same shape assumed; used for gradient accumulation).
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }
}

/// `out = a @ b` for row-major `a: [m,k]`, `b: [k,n]`.
///
/// ikj loop order keeps both `b` and `out` streaming row-contiguously, which
/// the autovectorizer handles well. Large products are split across rows of
/// the output with rayon; per-row accumulation stays sequential, so results
/// are bitwise identical for any thread count.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    let row_work = k * n;
    if m > 1 && m * row_work >= 1 << 18 {
        use rayon::prelude::*;
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(orow, arow)| matmul_row(arow, b, orow, k, n));
    } else {
        for (orow, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            matmul_row(arow, b, orow, k, n);
        }
    }
}

#[inline]
fn matmul_row(arow: &[f64], b: &[f64], orow: &mut [f64], k: usize, n: usize) {
    for (kk, &av) in arow.iter().enumerate().take(k) {
        if av == 0.0 {
            continue;
        }
        let brow = &b[kk * n..kk * n + n];
        for (o, &bv) in orow.iter_mut().zip(brow) {
            *o += av * bv;
        }
    }
}

/// `out = a^T @ b` for `a: [k,m]`, `b: [k,n]`, `out: [m,n]`.
/// Used by matmul backward (`dB = A^T @ G`) without materializing transposes.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    // Accumulate rank-1 updates row by row of a/b; deterministic and cache-friendly
    // for the tall-skinny shapes gradients produce.
    for kk in 0..k {
        let arow = &a[kk * m..kk * m + m];
        let brow = &b[kk * n..kk * n + n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..i * n + n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out = a @ b^T` for `a: [m,k]`, `b: [n,k]`, `out: [m,n]`.
/// Used by matmul backward (`dA = G @ B^T`) and attention score kernels.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let work = m * k * n;
    if m > 1 && work >= 1 << 18 {
        use rayon::prelude::*;
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(orow, arow)| {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = dot(arow, &b[j * k..j * k + k]);
                }
            });
    } else {
        for (orow, arow) in out.chunks_mut(n).zip(a.chunks(k)) {
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, &b[j * k..j * k + k]);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable in-place softmax of one row (max subtraction).
/// Shared by every softmax path, masked or not.
pub(crate) fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let id = vec![1.0, 0.0, 0.0, 1.0];
        let m = vec![3.0, -1.0, 2.5, 7.0];
        let mut out = vec![0.0; 4];
        matmul_into(&id, &m, &mut out, 2, 2, 2);
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, 1.0];
        let mut out = vec![0.0; 2];
        matmul_into(&a, &b, &mut out, 2, 2, 1);
        assert_eq!(out, vec![3.0, 7.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // [2,3]
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // [3,2]
        let mut plain = vec![0.0; 4];
        matmul_into(&a, &b, &mut plain, 2, 3, 2);

        // a^T laid out as [3,2] fed to matmul_tn with k=3,m=2 should match.
        let at = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // [3,2] = a^T
        let mut tn = vec![0.0; 4];
        matmul_tn_into(&at, &b, &mut tn, 3, 2, 2);
        assert_eq!(plain, tn);

        let bt = vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // [2,3] = b^T
        let mut nt = vec![0.0; 4];
        matmul_nt_into(&a, &bt, &mut nt, 2, 3, 2);
        assert_eq!(plain, nt);
    }

    #[test]
    fn softmax_row_constant_is_uniform() {
        let mut row = vec![4.2, 4.2, 4.2];
        softmax_row_inplace(&mut row);
        for x in row {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
