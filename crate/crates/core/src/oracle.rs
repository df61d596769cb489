//! Independent reference computations.
//!
//! Nothing here calls the code it is used to check: finite differences only
//! evaluate the function, the tilted-Gaussian moments are derived by hand
//! from the conjugate algebra, and [`naive_fusion`] re-implements the
//! two-stage weighting with its own loops.

use crate::math::Vector;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient together with the coordinates whose
/// evaluations were not finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FdGradient {
    pub grad: Vector,
    pub flagged: Vec<usize>,
}

pub fn finite_diff_gradient<F: FnMut(&Vector) -> f64>(mut f: F, x: &Vector, h: f64) -> FdGradient {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Vector::zeros(x.len());
    let mut flagged = Vec::new();
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            flagged.push(i);
        }
        grad[i] = g;
    }
    FdGradient { grad, flagged }
}

/// `||a - b|| / max(||a||, ||b||, floor)`; infinite when either side is not finite.
pub fn relative_error(a: &Vector, b: &Vector, floor: f64) -> f64 {
    if !(a.iter().chain(b.iter()).all(|x| x.is_finite())) {
        return f64::INFINITY;
    }
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub id: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub worst_point: Option<Vector>,
    pub threshold: f64,
    pub pass: bool,
}

impl GradCheckReport {
    /// Compares `analytic` against central differences of `value` at every
    /// point. Relative errors use a denominator floor of `1e-8` so that
    /// points with a vanishing gradient do not blow up the ratio.
    pub fn run<F, G>(id: impl Into<String>, points: &[Vector], mut value: F, mut analytic: G, h: f64, threshold: f64) -> Self
    where
        F: FnMut(&Vector) -> f64,
        G: FnMut(&Vector) -> Vector,
    {
        let mut worst = (0.0_f64, None);
        for x in points {
            let fd = finite_diff_gradient(&mut value, x, h);
            let err = if fd.flagged.is_empty() {
                relative_error(&analytic(x), &fd.grad, 1e-8)
            } else {
                f64::INFINITY
            };
            if worst.1.is_none() || err > worst.0 || err.is_nan() {
                worst = (if err.is_nan() { f64::INFINITY } else { err }, Some(x.clone()));
            }
        }
        Self {
            id: id.into(),
            points: points.len(),
            max_rel_error: worst.0,
            worst_point: worst.1,
            threshold,
            pass: !points.is_empty() && worst.0 < threshold,
        }
    }
}

/// One coordinate of a diagonal Gaussian prior seen at time `t`, pushed
/// through a linear decoder row, with a linear reward on the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedGaussianSpec {
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub alpha: f64,
    pub sigma: f64,
    /// Decoder gain from this latent coordinate to the rewarded image value.
    pub decoder_gain: f64,
    pub reward_coeff: f64,
    pub lambda_r: f64,
    /// Constant noise level of the chain; the stationary law is
    /// `q_t^(1/gamma) exp(lambda_r R / gamma)`.
    pub gamma: f64,
}

impl TiltedGaussianSpec {
    /// Marginal `q_t = N(alpha m, alpha^2 v + sigma^2)`.
    pub fn marginal(&self) -> (f64, f64) {
        (
            self.alpha * self.prior_mean,
            self.alpha * self.alpha * self.prior_variance + self.sigma * self.sigma,
        )
    }

    /// Slope of `R(Dec(E[z_0 | z_t]))` in `z_t`. The posterior mean is affine
    /// in `z_t` with slope `alpha v / (alpha^2 v + sigma^2)`.
    pub fn effective_coeff(&self) -> f64 {
        let (_, vt) = self.marginal();
        self.reward_coeff * self.decoder_gain * self.alpha * self.prior_variance / vt
    }
}

/// Stationary mean and variance of the tilted chain.
pub fn tilted_gaussian_moments(spec: &TiltedGaussianSpec) -> (f64, f64) {
    let (mu, v) = spec.marginal();
    (mu + v * spec.lambda_r * spec.effective_coeff(), v * spec.gamma)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmpiricalMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Batch-means standard error of the mean.
    pub se_mean: f64,
    /// Batch-means standard error of the variance.
    pub se_variance: f64,
    /// `variance / se_mean^2`.
    pub ess: f64,
}

pub const DEFAULT_BATCHES: usize = 30;

/// Moments of a (possibly autocorrelated) chain.
///
/// Standard errors come from non-overlapping batch means: the chain is cut
/// into `min(30, n)` equal batches (the tail remainder is dropped for the
/// errors only), and the spread of per-batch statistics gives the SE. For
/// the variance the per-batch statistic is the mean squared deviation from
/// the global mean.
pub fn empirical_moments(samples: &[f64]) -> EmpiricalMoments {
    empirical_moments_with_batches(samples, DEFAULT_BATCHES)
}

pub fn empirical_moments_with_batches(samples: &[f64], batches: usize) -> EmpiricalMoments {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let variance = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let b = batches.clamp(2, n);
    let size = n / b;
    let mut bm = Vec::with_capacity(b);
    let mut bv = Vec::with_capacity(b);
    for chunk in samples.chunks_exact(size).take(b) {
        bm.push(chunk.iter().sum::<f64>() / size as f64);
        bv.push(chunk.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / size as f64);
    }
    let se = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let s2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (s2 / xs.len() as f64).sqrt()
    };
    let se_mean = se(&bm);
    let se_variance = se(&bv);
    let ess = if se_mean > 0.0 { variance / (se_mean * se_mean) } else { n as f64 };
    EmpiricalMoments {
        n,
        mean,
        variance,
        se_mean,
        se_variance,
        ess,
    }
}

/// One family as seen by [`naive_fusion`].
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveFamily {
    /// Primitive-level family: `scores` holds one raw score per primitive.
    /// Otherwise `scores` has exactly one entry. Empty means disabled.
    pub per_primitive: bool,
    /// Multiply the fused score by the object direction.
    pub directional: bool,
    pub tau: f64,
    pub h: f64,
    pub scores: Vec<f64>,
    pub prev_scores: Vec<Option<f64>>,
    pub prev_fused: Option<f64>,
    pub mean: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaiveFusionInput {
    pub beta: f64,
    pub beta_sp: f64,
    pub kappa_fb: f64,
    pub kappa_sch: f64,
    pub object_direction: f64,
    pub families: Vec<NaiveFamily>,
}

/// Fused total reward computed in one pass with explicit loops.
pub fn naive_fusion(input: &NaiveFusionInput) -> f64 {
    let drop = |prev: Option<f64>, now: f64| match prev {
        Some(p) if p > now => p - now,
        _ => 0.0,
    };

    let mut fused = Vec::new();
    for fam in &input.families {
        if fam.scores.is_empty() {
            continue;
        }
        let mut value = if fam.per_primitive {
            let mut top = f64::NEG_INFINITY;
            let mut logits = Vec::new();
            for (j, s) in fam.scores.iter().enumerate() {
                let l = input.beta_sp
                    * (fam.tau + input.kappa_fb * drop(fam.prev_scores[j], *s) + input.kappa_sch * fam.h);
                top = top.max(l);
                logits.push(l);
            }
            let mut num = 0.0;
            let mut den = 0.0;
            for (l, s) in logits.iter().zip(&fam.scores) {
                let e = (l - top).exp();
                num += e * s;
                den += e;
            }
            num / den
        } else {
            fam.scores[0]
        };
        if fam.directional {
            value *= input.object_direction;
        }
        let logit = input.beta * (fam.tau + input.kappa_fb * drop(fam.prev_fused, value) + input.kappa_sch * fam.h);
        fused.push((logit, (value - fam.mean) / fam.scale));
    }
    if fused.is_empty() {
        return 0.0;
    }
    let top = fused.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, z) in &fused {
        let e = (l - top).exp();
        num += e * z;
        den += e;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quadratic_and_constant() {
        let x = Vector::from_column_slice(&[0.3, -1.2, 4.0]);
        let fd = finite_diff_gradient(|v| 0.5 * v.norm_squared(), &x, 1e-5);
        assert!(relative_error(&fd.grad, &x, 1e-12) < 1e-9);
        let fd = finite_diff_gradient(|_| 3.0, &x, 1e-5);
        assert_eq!(fd.grad.norm(), 0.0);
    }

    #[test]
    fn log_sum_exp_and_cosine_are_accurate() {
        let x = Vector::from_column_slice(&[0.5, -0.25, 1.5, 0.0]);
        let lse = |v: &Vector| v.iter().map(|a| a.exp()).sum::<f64>().ln();
        let s: f64 = x.iter().map(|a| a.exp()).sum();
        let exact = x.map(|a| a.exp() / s);
        assert!(relative_error(&finite_diff_gradient(lse, &x, 1e-5).grad, &exact, 1e-12) < 1e-7);

        let c = Vector::from_column_slice(&[1.0, 2.0, -0.5, 0.3]);
        let cos = |v: &Vector| v.dot(&c) / (v.norm() * c.norm());
        let n = x.norm();
        let exact = (&c / (n * c.norm())) - &x * (x.dot(&c) / (n.powi(3) * c.norm()));
        assert!(relative_error(&finite_diff_gradient(cos, &x, 1e-5).grad, &exact, 1e-12) < 1e-7);
    }

    #[test]
    fn non_finite_coordinates_are_flagged() {
        let x = Vector::from_column_slice(&[1.0, 0.0]);
        let fd = finite_diff_gradient(|v| if v[1] > 0.0 { f64::NAN } else { v[0] }, &x, 1e-5);
        assert_eq!(fd.flagged, vec![1]);
    }

    #[test]
    fn tilted_moments_match_hand_algebra() {
        let spec = TiltedGaussianSpec {
            prior_mean: 0.0,
            prior_variance: 1.0,
            alpha: 0.5,
            sigma: 0.5,
            decoder_gain: 1.0,
            reward_coeff: 2.0,
            lambda_r: 1.0,
            gamma: 1.0,
        };
        assert_eq!(spec.effective_coeff(), 2.0);
        assert_eq!(tilted_gaussian_moments(&spec), (1.0, 0.5));
        let untilted = TiltedGaussianSpec { lambda_r: 0.0, ..spec };
        assert_eq!(tilted_gaussian_moments(&untilted), (0.0, 0.5));
        let doubled = TiltedGaussianSpec { lambda_r: 2.0, ..spec };
        assert_eq!(tilted_gaussian_moments(&doubled).0, 2.0);
    }

    #[test]
    fn empirical_moment_examples() {
        let m = empirical_moments(&[3.0; 10]);
        assert_eq!((m.mean, m.variance), (3.0, 0.0));
        let m = empirical_moments(&[0.0, 2.0]);
        assert_eq!((m.mean, m.variance), (1.0, 2.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = empirical_moments(&xs);
        assert!(m.mean.abs() < 3.0 * m.se_mean);
        assert!((m.variance - 1.0).abs() < 3.0 * m.se_variance);
        assert!((m.se_mean - (1.0 / 100_000f64).sqrt()).abs() < 0.5 * m.se_mean);
    }

    #[test]
    fn autocorrelated_chain_has_smaller_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..60_000)
            .map(|_| {
                x = 0.95 * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let m = empirical_moments(&xs);
        // Integrated autocorrelation time of AR(1): (1 + r) / (1 - r) = 39.
        assert!(m.ess < 60_000.0 / 15.0, "ess {}", m.ess);
    }

    #[test]
    fn naive_fusion_hand_case() {
        // Two prompt-level families with equal logits: plain average.
        let fam = |score: f64| NaiveFamily {
            per_primitive: false,
            directional: false,
            tau: 0.5,
            h: 0.0,
            scores: vec![score],
            prev_scores: vec![None],
            prev_fused: None,
            mean: 0.0,
            scale: 1.0,
        };
        let input = NaiveFusionInput {
            beta: 2.0,
            beta_sp: 2.0,
            kappa_fb: 0.5,
            kappa_sch: 0.5,
            object_direction: 1.0,
            families: vec![fam(1.0), fam(3.0)],
        };
        assert_eq!(naive_fusion(&input), 2.0);
    }
}
