//! Analytic flow-matching backbone.
//!
//! The data distribution is a diagonal Gaussian mixture. Under the
//! interpolation `z_t = alpha(t) z_0 + sigma(t) eps` every noisy marginal
//! `q_t` is again a Gaussian mixture, so the score, the posterior-mean
//! denoiser and both of their Jacobians are available in closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::math::{log_sum_exp, seeded_matrix, seeded_vector, standard_normal_vector, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `alpha = 1 - t`, `sigma = t` (rectified flow).
    Linear,
    /// `alpha = cos(pi t / 2)`, `sigma = sin(pi t / 2)`.
    VariancePreserving,
}

/// Signal/noise coefficients on `[0, t_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationSchedule {
    kind: ScheduleKind,
    t_max: f64,
}

impl InterpolationSchedule {
    pub fn new(kind: ScheduleKind, t_max: f64) -> Result<Self> {
        if !(t_max > 0.0 && t_max <= 1.0) {
            return Err(Error::invalid("schedule", format!("t_max must lie in (0, 1], got {t_max}")));
        }
        Ok(Self { kind, t_max })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::VariancePreserving => (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::VariancePreserving => (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_max });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vector,
    /// Diagonal of the covariance.
    pub variance: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixturePrior {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("prior", "at least one component is required"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("prior", "latent dimension must be positive"));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            check_dim("prior component mean", dim, c.mean.len())?;
            check_dim("prior component variance", dim, c.variance.len())?;
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::invalid("prior", format!("component {i} weight {} not in (0, 1]", c.weight)));
            }
            check_finite("prior component mean", c.mean.as_slice())?;
            if c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("prior", format!("component {i} has a non-positive variance entry")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("prior", format!("component weights sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    /// Single isotropic Gaussian `N(mean, variance I)`.
    pub fn isotropic(mean: Vector, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![MixtureComponent {
            weight: 1.0,
            mean,
            variance: Vector::from_element(d, variance),
        }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let eps = standard_normal_vector(rng, self.dim);
        &chosen.mean + chosen.variance.map(f64::sqrt).component_mul(&eps)
    }
}

/// Deterministic map from latent space (dim D) to image space (dim P >= D).
#[derive(Clone, Debug, PartialEq)]
pub enum ToyDecoder {
    Linear { weight: Matrix, bias: Vector },
    OneHiddenTanh {
        w1: Matrix,
        b1: Vector,
        w2: Matrix,
        b2: Vector,
    },
}

impl ToyDecoder {
    pub fn linear(weight: Matrix, bias: Vector) -> Result<Self> {
        check_dim("decoder bias", weight.nrows(), bias.len())?;
        let dec = ToyDecoder::Linear { weight, bias };
        dec.validate()?;
        Ok(dec)
    }

    pub fn identity(dim: usize) -> Self {
        ToyDecoder::Linear {
            weight: Matrix::identity(dim, dim),
            bias: Vector::zeros(dim),
        }
    }

    pub fn one_hidden_tanh(w1: Matrix, b1: Vector, w2: Matrix, b2: Vector) -> Result<Self> {
        check_dim("decoder hidden bias", w1.nrows(), b1.len())?;
        check_dim("decoder output weight columns", w1.nrows(), w2.ncols())?;
        check_dim("decoder output bias", w2.nrows(), b2.len())?;
        let dec = ToyDecoder::OneHiddenTanh { w1, b1, w2, b2 };
        dec.validate()?;
        Ok(dec)
    }

    /// Linear decoder with `N(0, scale^2 / D)` weights and zero bias.
    pub fn seeded_linear(latent_dim: usize, image_dim: usize, seed: u64, scale: f64) -> Result<Self> {
        let s = scale / (latent_dim as f64).sqrt();
        Self::linear(seeded_matrix(image_dim, latent_dim, seed, s), Vector::zeros(image_dim))
    }

    pub fn seeded_tanh(latent_dim: usize, hidden_dim: usize, image_dim: usize, seed: u64, scale: f64) -> Result<Self> {
        let s1 = scale / (latent_dim as f64).sqrt();
        let s2 = scale / (hidden_dim as f64).sqrt();
        Self::one_hidden_tanh(
            seeded_matrix(hidden_dim, latent_dim, seed, s1),
            seeded_vector(hidden_dim, seed.wrapping_add(1), 0.1),
            seeded_matrix(image_dim, hidden_dim, seed.wrapping_add(2), s2),
            seeded_vector(image_dim, seed.wrapping_add(3), 0.1),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.image_dim() < self.latent_dim() {
            return Err(Error::invalid(
                "decoder",
                format!("image dim {} smaller than latent dim {}", self.image_dim(), self.latent_dim()),
            ));
        }
        let finite = match self {
            ToyDecoder::Linear { weight, bias } => weight.iter().chain(bias.iter()).all(|x| x.is_finite()),
            ToyDecoder::OneHiddenTanh { w1, b1, w2, b2 } => w1
                .iter()
                .chain(b1.iter())
                .chain(w2.iter())
                .chain(b2.iter())
                .all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::NonFinite("decoder parameters"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            ToyDecoder::Linear { weight, .. } => weight.ncols(),
            ToyDecoder::OneHiddenTanh { w1, .. } => w1.ncols(),
        }
    }

    pub fn image_dim(&self) -> usize {
        match self {
            ToyDecoder::Linear { weight, .. } => weight.nrows(),
            ToyDecoder::OneHiddenTanh { w2, .. } => w2.nrows(),
        }
    }

    pub fn decode(&self, z: &Vector) -> Result<Vector> {
        check_dim("decoder input", self.latent_dim(), z.len())?;
        Ok(match self {
            ToyDecoder::Linear { weight, bias } => weight * z + bias,
            ToyDecoder::OneHiddenTanh { w1, b1, w2, b2 } => {
                let h = (w1 * z + b1).map(f64::tanh);
                w2 * h + b2
            }
        })
    }

    /// `J_dec(z)^T cotangent`.
    pub fn vjp(&self, z: &Vector, cotangent: &Vector) -> Result<Vector> {
        check_dim("decoder input", self.latent_dim(), z.len())?;
        check_dim("decoder cotangent", self.image_dim(), cotangent.len())?;
        Ok(match self {
            ToyDecoder::Linear { weight, .. } => weight.tr_mul(cotangent),
            ToyDecoder::OneHiddenTanh { w1, b1, w2, .. } => {
                let h = (w1 * z + b1).map(f64::tanh);
                let back = w2.tr_mul(cotangent).component_mul(&h.map(|v| 1.0 - v * v));
                w1.tr_mul(&back)
            }
        })
    }
}

/// Prior, schedule and decoder bundled together.
#[derive(Clone, Debug)]
pub struct Backbone {
    prior: GaussianMixturePrior,
    schedule: InterpolationSchedule,
    decoder: ToyDecoder,
}

/// Per-component quantities of the noisy marginal at one `(z, t)`.
struct Posterior {
    /// Mixture responsibilities.
    resp: Vec<f64>,
    /// Per-component marginal variance `alpha^2 v_c + sigma^2`.
    var: Vec<Vector>,
    /// Per-component score `-(z - alpha m_c) / var_c`.
    comp_score: Vec<Vector>,
    log_density: f64,
}

impl Backbone {
    pub fn new(prior: GaussianMixturePrior, schedule: InterpolationSchedule, decoder: ToyDecoder) -> Result<Self> {
        check_dim("decoder latent dim vs prior", prior.dim(), decoder.latent_dim())?;
        Ok(Self { prior, schedule, decoder })
    }

    pub fn prior(&self) -> &GaussianMixturePrior {
        &self.prior
    }

    pub fn schedule(&self) -> &InterpolationSchedule {
        &self.schedule
    }

    pub fn decoder(&self) -> &ToyDecoder {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn image_dim(&self) -> usize {
        self.decoder.image_dim()
    }

    fn check_inputs(&self, z: &Vector, t: f64) -> Result<()> {
        check_dim("latent", self.latent_dim(), z.len())?;
        check_finite("latent", z.as_slice())?;
        if !t.is_finite() {
            return Err(Error::NonFinite("time"));
        }
        self.schedule.check_time(t)
    }

    fn posterior(&self, z: &Vector, t: f64) -> Posterior {
        let a = self.schedule.alpha(t);
        let s = self.schedule.sigma(t);
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut log_terms = Vec::with_capacity(self.prior.components.len());
        let mut var = Vec::with_capacity(self.prior.components.len());
        let mut comp_score = Vec::with_capacity(self.prior.components.len());
        for c in &self.prior.components {
            let v = c.variance.map(|vi| a * a * vi + s * s);
            let diff = z - &c.mean * a;
            let mut log_n = 0.0;
            for i in 0..diff.len() {
                log_n -= 0.5 * (ln_2pi + v[i].ln() + diff[i] * diff[i] / v[i]);
            }
            log_terms.push(c.weight.ln() + log_n);
            comp_score.push(-diff.component_div(&v));
            var.push(v);
        }
        let lse = log_sum_exp(&log_terms);
        let resp = log_terms.iter().map(|l| (l - lse).exp()).collect();
        Posterior {
            resp,
            var,
            comp_score,
            log_density: lse,
        }
    }

    /// `log q_t(z)` of the noisy mixture marginal.
    pub fn log_marginal_density(&self, z: &Vector, t: f64) -> Result<f64> {
        self.check_inputs(z, t)?;
        Ok(self.posterior(z, t).log_density)
    }

    /// `grad_z log q_t(z)`; stands in for the backbone drift `v_theta`.
    pub fn noisy_marginal_score(&self, z: &Vector, t: f64) -> Result<Vector> {
        self.check_inputs(z, t)?;
        let post = self.posterior(z, t);
        Ok(Self::mix_score(&post, z.len()))
    }

    fn mix_score(post: &Posterior, dim: usize) -> Vector {
        let mut score = Vector::zeros(dim);
        for (r, cs) in post.resp.iter().zip(&post.comp_score) {
            score.axpy(*r, cs, 1.0);
        }
        score
    }

    fn alpha_checked(&self, t: f64) -> Result<f64> {
        let a = self.schedule.alpha(t);
        if a.abs() < 1e-12 {
            return Err(Error::DegenerateSchedule { t });
        }
        Ok(a)
    }

    /// Posterior mean `E[z_0 | z_t = z]` via Tweedie's identity.
    pub fn denoise(&self, z: &Vector, t: f64) -> Result<Vector> {
        self.check_inputs(z, t)?;
        let a = self.alpha_checked(t)?;
        let s = self.schedule.sigma(t);
        let score = Self::mix_score(&self.posterior(z, t), z.len());
        Ok((z + score * (s * s)) / a)
    }

    /// `J_den(z, t)^T cotangent`.
    ///
    /// `J_den = (I + sigma^2 H) / alpha` with `H` the Hessian of `log q_t`,
    /// which is symmetric, so the transpose is the map itself. For a
    /// mixture, `H = sum_c r_c (diag(-1/var_c) + s_c s_c^T) - s s^T`.
    pub fn denoiser_vjp(&self, z: &Vector, t: f64, cotangent: &Vector) -> Result<Vector> {
        self.check_inputs(z, t)?;
        check_dim("denoiser cotangent", self.latent_dim(), cotangent.len())?;
        let a = self.alpha_checked(t)?;
        let s2 = self.schedule.sigma(t).powi(2);
        let post = self.posterior(z, t);
        let score = Self::mix_score(&post, z.len());
        let mut hu = -score.clone() * score.dot(cotangent);
        for ((r, v), cs) in post.resp.iter().zip(&post.var).zip(&post.comp_score) {
            hu -= cotangent.component_div(v) * *r;
            hu += cs * (r * cs.dot(cotangent));
        }
        Ok((cotangent + hu * s2) / a)
    }

    pub fn decode(&self, z: &Vector) -> Result<Vector> {
        self.decoder.decode(z)
    }

    pub fn decoder_vjp(&self, z: &Vector, cotangent: &Vector) -> Result<Vector> {
        self.decoder.vjp(z, cotangent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn standard(dim: usize) -> Backbone {
        Backbone::new(
            GaussianMixturePrior::isotropic(Vector::zeros(dim), 1.0).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(),
            ToyDecoder::identity(dim),
        )
        .unwrap()
    }

    fn bimodal_1d() -> Backbone {
        let prior = GaussianMixturePrior::new(vec![
            MixtureComponent { weight: 0.5, mean: v(&[-1.0]), variance: v(&[1.0]) },
            MixtureComponent { weight: 0.5, mean: v(&[1.0]), variance: v(&[1.0]) },
        ])
        .unwrap();
        Backbone::new(prior, InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(), ToyDecoder::identity(1))
            .unwrap()
    }

    #[test]
    fn standard_normal_score_at_half() {
        let bb = standard(2);
        let s = bb.noisy_marginal_score(&v(&[1.0, 0.0]), 0.5).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-14 && s[1].abs() < 1e-14);
    }

    #[test]
    fn score_vanishes_at_component_mean() {
        let prior = GaussianMixturePrior::isotropic(v(&[0.3, -0.7]), 0.4).unwrap();
        let bb = Backbone::new(prior, InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(), ToyDecoder::identity(2))
            .unwrap();
        let t = 0.4;
        let mean = v(&[0.3, -0.7]) * bb.schedule().alpha(t);
        assert!(bb.noisy_marginal_score(&mean, t).unwrap().norm() < 1e-15);
    }

    #[test]
    fn symmetric_mixture_score_is_zero_at_origin() {
        let s = bimodal_1d().noisy_marginal_score(&v(&[0.0]), 0.0).unwrap();
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn denoise_is_identity_at_zero_noise() {
        let bb = bimodal_1d();
        let z = v(&[0.123_456]);
        assert_eq!(bb.denoise(&z, 0.0).unwrap(), z);
        let cot = v(&[2.5]);
        assert_eq!(bb.denoiser_vjp(&z, 0.0, &cot).unwrap(), cot);
    }

    #[test]
    fn conjugate_posterior_mean() {
        let m = v(&[0.5, -1.0]);
        let var = 0.3;
        let prior = GaussianMixturePrior::isotropic(m.clone(), var).unwrap();
        let bb = Backbone::new(prior, InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(), ToyDecoder::identity(2))
            .unwrap();
        let t = 0.6;
        let (a, s) = (0.4, 0.6);
        let z = v(&[0.9, 0.2]);
        let gain = a * var / (a * a * var + s * s);
        let expected = &m + (&z - &m * a) * gain;
        assert!((bb.denoise(&z, t).unwrap() - expected).norm() < 1e-14);
        // Mode maps to mode.
        assert!((bb.denoise(&(&m * a), t).unwrap() - &m).norm() < 1e-14);
        let cot = v(&[1.0, -3.0]);
        assert!((bb.denoiser_vjp(&z, t, &cot).unwrap() - &cot * gain).norm() < 1e-14);
    }

    #[test]
    fn rejects_time_outside_range_and_non_finite_latent() {
        let bb = standard(1);
        assert!(matches!(bb.noisy_marginal_score(&v(&[0.0]), 0.9), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(bb.noisy_marginal_score(&v(&[0.0]), -1e-9), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(bb.denoise(&v(&[f64::NAN]), 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn degenerate_alpha_is_rejected() {
        let bb = Backbone::new(
            GaussianMixturePrior::isotropic(Vector::zeros(1), 1.0).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 1.0).unwrap(),
            ToyDecoder::identity(1),
        )
        .unwrap();
        assert!(matches!(bb.denoise(&v(&[0.2]), 1.0), Err(Error::DegenerateSchedule { .. })));
        assert!(bb.noisy_marginal_score(&v(&[0.2]), 1.0).is_ok());
    }

    #[test]
    fn variance_preserving_schedule_is_on_unit_circle() {
        let s = InterpolationSchedule::new(ScheduleKind::VariancePreserving, 1.0).unwrap();
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.sigma(0.0), 0.0);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_validation() {
        let bad_weights = GaussianMixturePrior::new(vec![
            MixtureComponent { weight: 0.5, mean: v(&[0.0]), variance: v(&[1.0]) },
            MixtureComponent { weight: 0.4, mean: v(&[1.0]), variance: v(&[1.0]) },
        ]);
        assert!(bad_weights.is_err());
        let bad_var = GaussianMixturePrior::new(vec![MixtureComponent { weight: 1.0, mean: v(&[0.0]), variance: v(&[0.0]) }]);
        assert!(bad_var.is_err());
    }

    #[test]
    fn linear_decoder_basics() {
        let dec = ToyDecoder::linear(Matrix::identity(3, 2), v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(dec.decode(&Vector::zeros(2)).unwrap(), v(&[1.0, 2.0, 3.0]));
        let cot = v(&[0.5, -1.0, 4.0]);
        assert_eq!(dec.vjp(&v(&[9.0, 9.0]), &cot).unwrap(), v(&[0.5, -1.0]));
        assert!(dec.decode(&Vector::zeros(3)).is_err());
        assert!(ToyDecoder::linear(Matrix::identity(1, 2), v(&[0.0])).is_err(), "P < D must be rejected");
    }

    #[test]
    fn tanh_forward_matches_manual_loop() {
        let dec = ToyDecoder::seeded_tanh(2, 5, 4, 17, 1.0).unwrap();
        let z = v(&[0.3, -1.2]);
        let out = dec.decode(&z).unwrap();
        let ToyDecoder::OneHiddenTanh { w1, b1, w2, b2 } = &dec else { unreachable!() };
        for p in 0..4 {
            let mut acc = b2[p];
            for h in 0..5 {
                let mut pre = b1[h];
                for d in 0..2 {
                    pre += w1[(h, d)] * z[d];
                }
                acc += w2[(p, h)] * pre.tanh();
            }
            assert!((acc - out[p]).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_components_match_single_component() {
        let one = Backbone::new(
            GaussianMixturePrior::isotropic(v(&[0.2, 0.1]), 0.5).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(),
            ToyDecoder::identity(2),
        )
        .unwrap();
        let comp = MixtureComponent { weight: 0.5, mean: v(&[0.2, 0.1]), variance: v(&[0.5, 0.5]) };
        let two = Backbone::new(
            GaussianMixturePrior::new(vec![comp.clone(), comp]).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(),
            ToyDecoder::identity(2),
        )
        .unwrap();
        let z = v(&[-0.4, 1.3]);
        let cot = v(&[0.7, 0.1]);
        for t in [0.0, 0.3, 0.85] {
            assert!((one.noisy_marginal_score(&z, t).unwrap() - two.noisy_marginal_score(&z, t).unwrap()).norm() < 1e-12);
            assert!((one.denoise(&z, t).unwrap() - two.denoise(&z, t).unwrap()).norm() < 1e-12);
            assert!((one.denoiser_vjp(&z, t, &cot).unwrap() - two.denoiser_vjp(&z, t, &cot).unwrap()).norm() < 1e-12);
        }
    }
}
