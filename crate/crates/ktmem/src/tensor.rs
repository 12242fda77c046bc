//! Dense tensors stored as flat row-major `Vec<f64>` with an explicit shape,
//! plus the scalar math helpers shared by the autodiff ops and the plain
//! (non-differentiated) model code so both paths compute identical values.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected {expected}, found shape {found:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        found: Vec<usize>,
    },
    #[error("{op}: index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: input contains a non-finite value")]
    NonFinite { op: &'static str },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
}

/// Row-major tensor. Rank 1 and 2 are the only ranks the models use, but the
/// representation does not care.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Shape `[1]` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::from_vec(&[rows, cols], data)
    }

    /// Entries drawn i.i.d. from N(0, sigma^2).
    pub fn gaussian(shape: &[usize], sigma: f64, rng: &mut impl Rng) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| sigma * standard_normal(rng)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise in-place add. Shapes must already agree.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// One standard normal draw via the Box-Muller transform. Uses two uniforms
/// per draw so the stream position is independent of how results pair up.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    // gen::<f64>() lies in [0, 1); flip it into (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Logistic function, computed on the side that keeps exp() from overflowing.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow for large |z|.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Softmax with the max subtracted before exponentiation, so any finite input
/// is safe. Output entries are positive and sum to 1 up to rounding.
pub fn softmax_slice(z: &[f64]) -> Vec<f64> {
    debug_assert!(!z.is_empty());
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { len: 5, .. }));
    }

    #[test]
    fn row_access_is_row_major() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn softmax_matches_frozen_values() {
        // Reference values computed from the definition e^{z_i} / sum_j e^{z_j}
        // with 50-digit arithmetic, rounded to f64.
        let got = softmax_slice(&[1.0, 2.0, 3.0]);
        let want = [
            0.09003057317038046,
            0.24472847105479767,
            0.6652409557748219,
        ];
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-15, "got {g}, want {w}");
        }

        let got = softmax_slice(&[1.0, 2.0]);
        assert!((got[0] - 0.2689414213699951).abs() < 1e-15);
        assert!((got[1] - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let p = softmax_slice(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);

        let p = softmax_slice(&[-1e4, 1e4, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p[1] > 0.999999);
    }

    #[test]
    fn softmax_shift_invariance_on_exact_inputs() {
        // Integer grids keep z + c exact, so the invariance holds to rounding.
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = 1 + rng.gen_range(0..6);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-8..=8) as f64).collect();
            let shifted: Vec<f64> = z.iter().map(|v| v + 3.0).collect();
            let a = softmax_slice(&z);
            let b = softmax_slice(&shifted);
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        // sigmoid(-z) == 1 - sigmoid(z) up to rounding
        for z in [-5.0, -1.3, 0.2, 2.7, 9.0] {
            assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0) > 0.0);
        assert!(softplus(-100.0) < 1e-40);
        // softplus(z) - softplus(-z) == z
        for z in [0.1, 1.0, 3.5, 20.0] {
            assert!((softplus(z) - softplus(-z) - z).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_moments_are_plausible() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let t = Tensor::gaussian(&[40_000], 0.5, &mut rng);
        let mean: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let var: f64 =
            t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 0.25).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_is_deterministic_under_seed() {
        let a = Tensor::gaussian(&[64], 0.1, &mut ChaCha20Rng::seed_from_u64(3));
        let b = Tensor::gaussian(&[64], 0.1, &mut ChaCha20Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
