//! Small numeric helpers shared by the reward heads and the policy.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cosine similarity of `x` against a fixed target, with its gradient in `x`.
///
/// A zero-norm `x` yields value 0, gradient 0 and `degenerate = true`.
pub fn cosine_with_grad(x: &Vector, target: &Vector) -> (f64, Vector, bool) {
    let nx = x.norm();
    let ng = target.norm();
    if nx <= f64::MIN_POSITIVE || ng <= f64::MIN_POSITIVE {
        return (0.0, Vector::zeros(x.len()), true);
    }
    let c = x.dot(target) / (nx * ng);
    let grad = target / (nx * ng) - x * (c / (nx * nx));
    (c, grad, false)
}

/// Matrix with i.i.d. `N(0, scale^2)` entries drawn from a ChaCha8 stream.
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major fill so the layout matches inline `rows = [[..], ..]` specs.
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_row_slice(rows, cols, &data)
}

pub fn seeded_vector(len: usize, seed: u64, scale: f64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_iterator(
        len,
        (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
    )
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vector {
    Vector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(Matrix::from_row_slice(n, m, &flat))
}
