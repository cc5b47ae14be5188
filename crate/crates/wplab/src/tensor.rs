//! Dense row-major tensors and the scalar kernels shared by the plain and
//! recorded forward passes.
//!
//! Values are stored in `f32` (or `f64` for the double-precision gradient
//! oracle); every reduction accumulates in `f64` regardless of the storage
//! type. All kernels are generic over [`Real`] so the exact same arithmetic
//! runs in both precisions.

use crate::error::{Error, Result};
use num_traits::Float;

/// Scalar type the engine runs on. Implemented for `f32` and `f64`.
pub trait Real: Float + std::fmt::Debug + Default + Send + Sync + 'static {
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// RMSNorm epsilon used everywhere a normalization appears.
pub const RMS_EPS: f64 = 1e-5;

/// RoPE frequency base.
pub const ROPE_BASE: f64 = 10_000.0;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, checking the shape/data length invariant and that all
    /// values are finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// `out = a[m,k] · b[k,n]`, accumulated in f64.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::default(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a[i * k + p].as_f64() * b[p * n + j].as_f64();
            }
            out[i * n + j] = T::of_f64(acc);
        }
    }
    out
}

/// `out = a[m,k] · b[n,k]ᵀ`, accumulated in f64.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![T::default(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a[i * k + p].as_f64() * b[j * k + p].as_f64();
            }
            out[i * n + j] = T::of_f64(acc);
        }
    }
    out
}

/// `out = a[m,k]ᵀ · b[m,n]`, accumulated in f64.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![T::default(); k * n];
    for i in 0..k {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..m {
                acc += a[p * k + i].as_f64() * b[p * n + j].as_f64();
            }
            out[i * n + j] = T::of_f64(acc);
        }
    }
    out
}

/// Row-wise RMS normalization with a per-column gain:
/// `y[r,c] = gain[c] * x[r,c] / sqrt(mean(x[r,:]^2) + eps)`.
pub fn rmsnorm_rows<T: Real>(x: &[T], gain: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(gain.len(), cols);
    let mut out = vec![T::default(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let ms: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / cols as f64;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        for c in 0..cols {
            out[r * cols + c] = T::of_f64(row[c].as_f64() * inv * gain[c].as_f64());
        }
    }
    out
}

/// Rotary position embedding over adjacent dimension pairs, applied
/// independently to each `head_dim`-wide block of every row. Row index is the
/// sequence position.
pub fn rope_rows<T: Real>(x: &[T], rows: usize, cols: usize, head_dim: usize) -> Result<Vec<T>> {
    if head_dim % 2 != 0 {
        return Err(Error::InvalidConfig(format!("rope head dim {head_dim} is odd")));
    }
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(cols % head_dim, 0);
    let mut out = vec![T::default(); rows * cols];
    for pos in 0..rows {
        for block in 0..cols / head_dim {
            let base = pos * cols + block * head_dim;
            for pair in 0..head_dim / 2 {
                let theta = pos as f64 / ROPE_BASE.powf(2.0 * pair as f64 / head_dim as f64);
                let (sin, cos) = theta.sin_cos();
                let x0 = x[base + 2 * pair].as_f64();
                let x1 = x[base + 2 * pair + 1].as_f64();
                out[base + 2 * pair] = T::of_f64(x0 * cos - x1 * sin);
                out[base + 2 * pair + 1] = T::of_f64(x0 * sin + x1 * cos);
            }
        }
    }
    Ok(out)
}

/// Row-wise softmax with an additive mask (entries 0 or `-inf`). Masked
/// positions come out exactly 0; a fully masked row is an error.
pub fn softmax_rows<T: Real>(x: &[T], mask: &[T], rows: usize, cols: usize) -> Result<Vec<T>> {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(mask.len(), rows * cols);
    let mut out = vec![T::default(); rows * cols];
    for r in 0..rows {
        let mut max = f64::NEG_INFINITY;
        for c in 0..cols {
            if mask[r * cols + c].as_f64().is_finite() {
                let v = x[r * cols + c].as_f64() + mask[r * cols + c].as_f64();
                if v > max {
                    max = v;
                }
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMaskedRow { row: r });
        }
        let mut sum = 0.0f64;
        let mut exps = vec![0.0f64; cols];
        for c in 0..cols {
            if mask[r * cols + c].as_f64().is_finite() {
                let e = (x[r * cols + c].as_f64() + mask[r * cols + c].as_f64() - max).exp();
                exps[c] = e;
                sum += e;
            }
        }
        for c in 0..cols {
            out[r * cols + c] = T::of_f64(exps[c] / sum);
        }
    }
    Ok(out)
}

/// Additive causal mask for a `rows x cols` score matrix: position `r` may
/// attend to columns `0..=r`.
pub fn causal_mask<T: Real>(rows: usize, cols: usize) -> Vec<T> {
    let mut mask = vec![T::default(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            if c > r {
                mask[r * cols + c] = T::of_f64(f64::NEG_INFINITY);
            }
        }
    }
    mask
}

/// `silu(x) = x * sigmoid(x)`, elementwise.
pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| T::of_f64(silu_scalar(v.as_f64()))).collect()
}

#[inline]
pub fn silu_scalar(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inner product, accumulated in f64.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, with an error on zero-norm inputs.
pub fn cosine<T: Real>(a: &[T], b: &[T], what: &'static str) -> Result<f64> {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm(what));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Error if any value is non-finite.
pub fn check_finite<T: Real>(x: &[T], op: &'static str) -> Result<()> {
    if x.iter().all(|v| v.as_f64().is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Cast a buffer between precisions (f32 -> f64 is exact).
pub fn cast<A: Real, B: Real>(x: &[A]) -> Vec<B> {
    x.iter().map(|&v| B::of_f64(v.as_f64())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2], vec![f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn matmul_identity() {
        // I2 · [[1,2],[3,4]] = [[1,2],[3,4]]
        let i2 = [1.0f32, 0.0, 0.0, 1.0];
        let a = [1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(matmul(&i2, &a, 2, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_analytic() {
        // [[1,0]] · [[0],[5]] = [[0]]
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 5.0];
        assert_eq!(matmul(&a, &b, 1, 2, 1), vec![0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Random 3x4 · 4x2 against an independent triple loop.
        let mut rng = 0x12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let a: Vec<f32> = (0..12).map(|_| next()).collect();
        let b: Vec<f32> = (0..8).map(|_| next()).collect();
        let got = matmul(&a, &b, 3, 4, 2);
        for i in 0..3 {
            for j in 0..2 {
                let mut want = 0.0f32;
                for p in 0..4 {
                    want += a[i * 4 + p] * b[p * 2 + j];
                }
                assert!((got[i * 2 + j] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_symmetric_row() {
        let out = softmax_rows(&[0.0f32, 0.0], &[0.0, 0.0], 1, 2).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_forced_by_mask() {
        let out = softmax_rows(&[3.0f32, 100.0], &[0.0, f32::NEG_INFINITY], 1, 2).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_exp_normalize_oracle() {
        let x = [1.0f32, 2.0, 3.0];
        let out = softmax_rows(&x, &[0.0; 3], 1, 3).unwrap();
        let exps: Vec<f64> = x.iter().map(|&v| (v as f64).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (o, e) in out.iter().zip(&exps) {
            assert!((*o as f64 - e / sum).abs() < 1e-7);
        }
        let total: f64 = out.iter().map(|&v| v as f64).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_all_masked_row_is_error() {
        let m = f32::NEG_INFINITY;
        assert!(softmax_rows(&[1.0f32, 2.0], &[m, m], 1, 2).is_err());
    }

    #[test]
    fn silu_at_zero() {
        assert_eq!(silu(&[0.0f32]), vec![0.0]);
    }

    #[test]
    fn rmsnorm_constant_ones() {
        // Unit gain, all-ones row: every entry is 1/sqrt(1+eps).
        let out = rmsnorm_rows(&[1.0f32; 4], &[1.0; 4], 1, 4);
        let want = 1.0 / (1.0f64 + RMS_EPS).sqrt();
        for v in out {
            assert!((v as f64 - want).abs() < 1e-7);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let x = [0.3f32, -1.2, 0.7, 2.0];
        let out = rope_rows(&x, 1, 4, 4).unwrap();
        for (o, i) in out.iter().zip(&x) {
            assert!((o - i).abs() < 1e-7);
        }
    }

    #[test]
    fn rope_rejects_odd_head_dim() {
        assert!(rope_rows(&[0.0f32; 3], 1, 3, 3).is_err());
    }

    #[test]
    fn rope_preserves_pair_norms() {
        let x = [0.5f32, -0.25, 1.5, 0.75];
        let out = rope_rows(&x, 1, 4, 2).unwrap();
        // Rotation: each adjacent pair keeps its norm.
        for p in 0..2 {
            let n_in = (x[2 * p].powi(2) + x[2 * p + 1].powi(2)).sqrt();
            let n_out = (out[2 * p].powi(2) + out[2 * p + 1].powi(2)).sqrt();
            assert!((n_in - n_out).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(cosine(&[0.0f32, 0.0], &[1.0, 0.0], "test").is_err());
        let c = cosine(&[1.0f32, 0.0], &[1.0, 0.0], "test").unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }
}
