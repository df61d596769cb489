//! Reverse-time multi-reward Langevin sampler.
//!
//! One step at state `(z, t)`:
//!
//! ```text
//! z~   = Den(z, t)            I = Dec(z~)
//! f    = grad log q_t(z)
//! g_R  = lambda_R J_den^T J_dec^T grad_I R_tot(I)
//! g_KL = -lambda_KL J_den^T (z~ - z_0)
//! eta  = min(step_size(R_tot), t)
//! z'   = z + eta (f + g_R + g_KL) + sqrt(2 gamma(t) eta) n,   n ~ N(0, I)
//! t'   = t - eta
//! ```
//!
//! `gamma(t) = gamma_min + (gamma_max - gamma_min) (t / t_max)^rho`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::trajectory::{Snapshot, StepRecord, Trajectory};

use crate::backbone::Backbone;
use crate::error::{check_dim, Error, Result};
use crate::guidance::{RewardEvaluation, RewardModel};
use crate::math::{standard_normal_vector, Vector};
use crate::policy::{step_size, StepSizeParams};

/// Abort threshold on `||z||`.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeMode {
    /// `t` runs from `t_max` down to 0.
    Annealed,
    /// `t` is held fixed and only the Langevin chain advances.
    FixedTime(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub t_max: f64,
    pub lambda_r: f64,
    pub lambda_kl: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub rho: f64,
    pub mode: TimeMode,
    pub seed: u64,
    /// Latent snapshot every `snapshot_stride` steps; 0 disables snapshots.
    pub snapshot_stride: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 35,
            t_max: 0.85,
            lambda_r: 1.0,
            lambda_kl: 1.5,
            gamma_min: 0.01,
            gamma_max: 1.0,
            rho: 2.0,
            mode: TimeMode::Annealed,
            seed: 0,
            snapshot_stride: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, step_rule: &StepSizeParams) -> Result<()> {
        // `what` is the field name so config errors can point at it.
        let bad = |what: &str, why: &str| Err(Error::invalid(what, why));
        if !(self.t_max > 0.0 && self.t_max <= 1.0) {
            return bad("t_max", "must lie in (0, 1]");
        }
        if !(self.lambda_r >= 0.0) {
            return bad("lambda_r", "must be >= 0");
        }
        if !(self.lambda_kl >= 0.0) {
            return bad("lambda_kl", "must be >= 0");
        }
        if !(self.gamma_min > 0.0) {
            return bad("gamma_min", "must be > 0");
        }
        if !(self.gamma_min <= self.gamma_max && self.gamma_max.is_finite()) {
            return bad("gamma_max", "must be finite and >= gamma_min");
        }
        if !(self.rho > 0.0) {
            return bad("rho", "must be > 0");
        }
        match self.mode {
            TimeMode::FixedTime(t) if !(0.0..=self.t_max).contains(&t) => bad("fixed_t", "must lie in [0, t_max]"),
            TimeMode::Annealed if self.steps > 0 && (self.steps as f64) * step_rule.eta_max < self.t_max => bad(
                "steps",
                "steps * eta_max must reach t_max in annealed mode",
            ),
            _ => step_rule.validate(),
        }
    }
}

/// Editing starts from a source latent; generation draws it from the prior.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Editing(Vector),
    Generation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleState {
    pub z: Vector,
    pub t: f64,
    pub k: usize,
    /// Tether anchor; `None` in generation mode.
    pub anchor: Option<Vector>,
    /// Clean latent used for initialization (the anchor, or the prior draw).
    pub z0: Vector,
    /// The `eps` draw of the initialization.
    pub init_noise: Vector,
}

/// Everything computed during one step, for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub score: Vector,
    pub reward_drift: Vector,
    pub kl_drift: Vector,
    /// `f + g_R + g_KL` as applied.
    pub total_drift: Vector,
    /// The additive Gaussian perturbation `xi`.
    pub noise: Vector,
    pub evaluation: RewardEvaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub final_image: Vector,
    pub final_latent: Vector,
    /// `Dec(z_0)` in editing mode.
    pub source_image: Option<Vector>,
    pub trajectory: Trajectory,
}

impl RunOutput {
    /// Root-mean-square per-coordinate distance to the source image.
    pub fn source_distance(&self) -> Option<f64> {
        self.source_image
            .as_ref()
            .map(|s| (&self.final_image - s).norm() / (s.len() as f64).sqrt())
    }

    pub fn final_r_tot(&self) -> Option<f64> {
        self.trajectory.records.last().map(|r| r.r_tot)
    }
}

pub struct Sampler<'a> {
    backbone: &'a Backbone,
    config: SamplerConfig,
    step_rule: StepSizeParams,
}

impl<'a> Sampler<'a> {
    pub fn new(backbone: &'a Backbone, config: SamplerConfig, step_rule: StepSizeParams) -> Result<Self> {
        config.validate(&step_rule)?;
        if (backbone.schedule().t_max() - config.t_max).abs() > 0.0 {
            return Err(Error::invalid("sampler t_max", "must equal the backbone schedule's t_max"));
        }
        Ok(Self {
            backbone,
            config,
            step_rule,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        self.backbone
    }

    pub fn gamma(&self, t: f64) -> f64 {
        let c = &self.config;
        c.gamma_min + (c.gamma_max - c.gamma_min) * (t / c.t_max).powf(c.rho)
    }

    pub fn initial_time(&self) -> f64 {
        match self.config.mode {
            TimeMode::Annealed => self.config.t_max,
            TimeMode::FixedTime(t) => t,
        }
    }

    /// `z = alpha(t) z_0 + sigma(t) eps` at the initial time.
    pub fn init_state<R: rand::Rng + ?Sized>(&self, source: &Source, rng: &mut R) -> Result<SampleState> {
        let dim = self.backbone.latent_dim();
        let (anchor, z0) = match source {
            Source::Editing(z0) => {
                check_dim("source latent", dim, z0.len())?;
                (Some(z0.clone()), z0.clone())
            }
            Source::Generation => (None, self.backbone.prior().sample(rng)),
        };
        let t = self.initial_time();
        let sched = self.backbone.schedule();
        let eps = standard_normal_vector(rng, dim);
        let z = &z0 * sched.alpha(t) + &eps * sched.sigma(t);
        Ok(SampleState {
            z,
            t,
            k: 0,
            anchor,
            z0,
            init_noise: eps,
        })
    }

    /// `-lambda_KL J_den^T (Den(z, t) - z_0)`.
    pub fn kl_drift(&self, z: &Vector, t: f64, anchor: &Vector, lambda_kl: f64) -> Result<Vector> {
        if lambda_kl == 0.0 {
            return Ok(Vector::zeros(z.len()));
        }
        let clean = self.backbone.denoise(z, t)?;
        Ok(self.backbone.denoiser_vjp(z, t, &(clean - anchor))? * -lambda_kl)
    }

    /// Latent reward drift and the evaluation it came from.
    pub fn reward_drift<M: RewardModel + ?Sized>(&self, z: &Vector, t: f64, model: &mut M) -> Result<(Vector, RewardEvaluation)> {
        let clean = self.backbone.denoise(z, t)?;
        let image = self.backbone.decode(&clean)?;
        let eval = model.evaluate(&image, t)?;
        if self.config.lambda_r == 0.0 {
            return Ok((Vector::zeros(z.len()), eval));
        }
        let latent_grad = self.backbone.decoder_vjp(&clean, &eval.image_grad)?;
        let drift = self.backbone.denoiser_vjp(z, t, &latent_grad)? * self.config.lambda_r;
        Ok((drift, eval))
    }

    /// Advances `state` by one Euler-Maruyama step.
    pub fn step<M: RewardModel + ?Sized, R: rand::Rng + ?Sized>(
        &self,
        state: &mut SampleState,
        model: &mut M,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let (z, t) = (&state.z, state.t);
        let score = self.backbone.noisy_marginal_score(z, t)?;
        let (reward_drift, evaluation) = self.reward_drift(z, t, model)?;
        let kl_drift = match &state.anchor {
            Some(anchor) => self.kl_drift(z, t, anchor, self.config.lambda_kl)?,
            None => Vector::zeros(z.len()),
        };
        let proposed = step_size(evaluation.r_tot, &self.step_rule);
        let eta = match self.config.mode {
            TimeMode::Annealed => proposed.min(t),
            TimeMode::FixedTime(_) => proposed,
        };
        let gamma = self.gamma(t);
        let noise = standard_normal_vector(rng, z.len()) * (2.0 * gamma * eta).sqrt();
        let total_drift = &score + &reward_drift + &kl_drift;
        let next = z + &total_drift * eta + &noise;

        let record = StepRecord {
            k: state.k,
            t,
            eta,
            gamma,
            r_tot: evaluation.r_tot,
            families: evaluation.families,
            norm_f: score.norm(),
            norm_g_r: reward_drift.norm(),
            norm_g_kl: kl_drift.norm(),
        };

        let norm = next.norm();
        if !next.iter().all(|x| x.is_finite()) || norm > DIVERGENCE_NORM {
            let mut partial = Trajectory::default();
            partial.records.push(record);
            return Err(Error::Diverged {
                step: state.k,
                reason: format!("|z| = {norm:e} after update"),
                partial: Box::new(partial),
            });
        }

        state.z = next;
        if let TimeMode::Annealed = self.config.mode {
            state.t = t - eta;
        }
        state.k += 1;
        Ok(StepOutcome {
            record,
            score,
            reward_drift,
            kl_drift,
            total_drift,
            noise,
            evaluation,
        })
    }

    /// Full run seeded from the config.
    pub fn run<M: RewardModel + ?Sized>(&self, source: &Source, model: &mut M) -> Result<RunOutput> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        self.run_with_rng(source, model, &mut rng)
    }

    pub fn run_with_rng<M: RewardModel + ?Sized, R: rand::Rng + ?Sized>(
        &self,
        source: &Source,
        model: &mut M,
        rng: &mut R,
    ) -> Result<RunOutput> {
        let mut state = self.init_state(source, rng)?;
        let stride = self.config.snapshot_stride;
        let mut traj = Trajectory {
            snapshot_stride: stride,
            ..Default::default()
        };
        while state.k < self.config.steps && state.t > 0.0 {
            if stride > 0 && state.k % stride == 0 {
                traj.snapshots.push(Snapshot { k: state.k, t: state.t, z: state.z.clone() });
            }
            match self.step(&mut state, model, rng) {
                Ok(out) => traj.records.push(out.record),
                Err(Error::Diverged { step, reason, partial }) => {
                    traj.records.extend(partial.records);
                    return Err(Error::Diverged {
                        step,
                        reason,
                        partial: Box::new(traj),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        // Residual time after the step budget: jump to the posterior mean.
        if state.k > 0 && state.t > 0.0 {
            state.z = self.backbone.denoise(&state.z, state.t)?;
            state.t = 0.0;
        }
        if stride > 0 {
            traj.snapshots.push(Snapshot { k: state.k, t: state.t, z: state.z.clone() });
        }
        let final_image = self.backbone.decode(&state.z)?;
        let source_image = state.anchor.as_ref().map(|a| self.backbone.decode(a)).transpose()?;
        Ok(RunOutput {
            final_image,
            final_latent: state.z,
            source_image,
            trajectory: traj,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{GaussianMixturePrior, InterpolationSchedule, ScheduleKind, ToyDecoder};
    use crate::guidance::LinearProbe;

    fn backbone(dim: usize) -> Backbone {
        Backbone::new(
            GaussianMixturePrior::isotropic(Vector::zeros(dim), 1.0).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(),
            ToyDecoder::identity(dim),
        )
        .unwrap()
    }

    fn probe(dim: usize) -> LinearProbe {
        LinearProbe { coeff: Vector::from_element(dim, 0.5) }
    }

    #[test]
    fn gamma_endpoints_and_constant_case() {
        let bb = backbone(1);
        let cfg = SamplerConfig { gamma_min: 0.1, gamma_max: 2.0, rho: 1.5, ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).unwrap();
        assert_eq!(s.gamma(0.85), 2.0);
        assert_eq!(s.gamma(0.0), 0.1);
        let cfg = SamplerConfig { gamma_min: 0.7, gamma_max: 0.7, ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).unwrap();
        assert!((0..=10).all(|i| s.gamma(0.085 * i as f64) == 0.7));
    }

    #[test]
    fn init_from_zero_source_is_scaled_noise() {
        let bb = backbone(3);
        let s = Sampler::new(&bb, SamplerConfig::default(), StepSizeParams::for_budget(0.85, 35)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = s.init_state(&Source::Editing(Vector::zeros(3)), &mut rng).unwrap();
        assert_eq!(st.z, &st.init_noise * 0.85);
        assert_eq!(st.t, 0.85);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(s.init_state(&Source::Editing(Vector::zeros(3)), &mut rng2).unwrap(), st);
    }

    #[test]
    fn init_at_zero_noise_returns_source() {
        let bb = Backbone::new(
            GaussianMixturePrior::isotropic(Vector::zeros(2), 1.0).unwrap(),
            InterpolationSchedule::new(ScheduleKind::Linear, 0.85).unwrap(),
            ToyDecoder::identity(2),
        )
        .unwrap();
        let cfg = SamplerConfig { mode: TimeMode::FixedTime(0.0), ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::constant(0.01)).unwrap();
        let z0 = Vector::from_column_slice(&[0.3, -1.1]);
        let st = s.init_state(&Source::Editing(z0.clone()), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(st.z, z0);
    }

    #[test]
    fn final_step_is_clamped_to_remaining_time() {
        let bb = backbone(1);
        let rule = StepSizeParams::constant(0.05);
        let cfg = SamplerConfig { lambda_kl: 0.0, ..Default::default() };
        let s = Sampler::new(&bb, cfg, rule).unwrap();
        let mut st = s.init_state(&Source::Editing(Vector::zeros(1)), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        st.t = 0.01;
        let out = s.step(&mut st, &mut probe(1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.record.eta, 0.01);
        assert_eq!(st.t, 0.0);
    }

    #[test]
    fn zero_strengths_leave_only_the_score() {
        let bb = backbone(2);
        let cfg = SamplerConfig { lambda_r: 0.0, lambda_kl: 0.0, ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).unwrap();
        let mut st = s.init_state(&Source::Editing(Vector::from_element(2, 1.0)), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let out = s.step(&mut st, &mut probe(2), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(out.reward_drift.norm(), 0.0);
        assert_eq!(out.kl_drift.norm(), 0.0);
        assert_eq!(out.total_drift, out.score);
    }

    #[test]
    fn tether_at_rest_is_zero() {
        let bb = backbone(2);
        let s = Sampler::new(&bb, SamplerConfig::default(), StepSizeParams::for_budget(0.85, 35)).unwrap();
        let z = Vector::from_column_slice(&[0.4, -0.2]);
        let anchor = bb.denoise(&z, 0.5).unwrap();
        assert!(s.kl_drift(&z, 0.5, &anchor, 1.5).unwrap().norm() < 1e-15);
        assert_eq!(s.kl_drift(&z, 0.5, &Vector::zeros(2), 0.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn zero_step_budget_decodes_the_initial_state() {
        let bb = backbone(2);
        let cfg = SamplerConfig { steps: 0, ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).unwrap();
        let src = Source::Editing(Vector::from_column_slice(&[1.0, 2.0]));
        let out = s.run(&src, &mut probe(2)).unwrap();
        let st = s.init_state(&src, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.trajectory.is_empty());
        assert_eq!(out.final_image, bb.decode(&st.z).unwrap());
    }

    #[test]
    fn time_bookkeeping_over_a_run() {
        let bb = backbone(2);
        let s = Sampler::new(&bb, SamplerConfig::default(), StepSizeParams::for_budget(0.85, 35)).unwrap();
        let out = s.run(&Source::Editing(Vector::from_element(2, 0.5)), &mut probe(2)).unwrap();
        let recs = &out.trajectory.records;
        for w in recs.windows(2) {
            assert_eq!(w[1].t, w[0].t - w[0].eta);
        }
        assert!(recs.iter().all(|r| r.t >= 0.0));
        assert!(recs.iter().map(|r| r.eta).sum::<f64>() <= 0.85 + 1e-12);
    }

    #[test]
    fn generation_mode_disables_the_tether() {
        let bb = backbone(2);
        let s = Sampler::new(&bb, SamplerConfig { lambda_kl: 50.0, ..Default::default() }, StepSizeParams::for_budget(0.85, 35)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = s.init_state(&Source::Generation, &mut rng).unwrap();
        assert!(st.anchor.is_none());
        let out = s.step(&mut st, &mut probe(2), &mut rng).unwrap();
        assert_eq!(out.kl_drift.norm(), 0.0);
    }

    #[test]
    fn divergence_is_reported_with_partial_trajectory() {
        let bb = backbone(1);
        let cfg = SamplerConfig { lambda_r: 1e9, lambda_kl: 0.0, ..Default::default() };
        let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).unwrap();
        match s.run(&Source::Editing(Vector::zeros(1)), &mut LinearProbe { coeff: Vector::from_element(1, 1e3) }) {
            Err(Error::Diverged { step, partial, .. }) => {
                assert_eq!(partial.records.len(), step + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bb = backbone(1);
        let rule = StepSizeParams::for_budget(0.85, 35);
        assert!(Sampler::new(&bb, SamplerConfig { gamma_min: 0.0, ..Default::default() }, rule).is_err());
        assert!(Sampler::new(&bb, SamplerConfig { mode: TimeMode::FixedTime(0.9), ..Default::default() }, rule).is_err());
        assert!(Sampler::new(&bb, SamplerConfig::default(), StepSizeParams::constant(0.001)).is_err());
        assert!(Sampler::new(&bb, SamplerConfig { t_max: 0.5, ..Default::default() }, StepSizeParams::for_budget(0.5, 35)).is_err());
    }
}
