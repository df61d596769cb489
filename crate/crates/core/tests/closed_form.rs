//! Single-component cases where drifts have closed forms.

use guided_langevin::backbone::{Backbone, GaussianMixturePrior, InterpolationSchedule, ScheduleKind, ToyDecoder};
use guided_langevin::guidance::LinearProbe;
use guided_langevin::math::{Matrix, Vector};
use guided_langevin::policy::StepSizeParams;
use guided_langevin::sampler::{Sampler, SamplerConfig};

const M: [f64; 3] = [0.4, -1.0, 2.0];
const V: f64 = 0.7;

fn backbone(decoder: ToyDecoder, kind: ScheduleKind) -> Backbone {
    Backbone::new(
        GaussianMixturePrior::isotropic(Vector::from_column_slice(&M), V).unwrap(),
        InterpolationSchedule::new(kind, 1.0).unwrap(),
        decoder,
    )
    .unwrap()
}

/// Posterior-mean gain `d z~ / d z = a v / (a^2 v + s^2)` for one isotropic component.
fn gain(bb: &Backbone, t: f64) -> f64 {
    let (a, s) = (bb.schedule().alpha(t), bb.schedule().sigma(t));
    a * V / (a * a * V + s * s)
}

fn sampler(bb: &Backbone, lambda_r: f64) -> Sampler<'_> {
    let cfg = SamplerConfig {
        t_max: 1.0,
        lambda_r,
        ..Default::default()
    };
    Sampler::new(bb, cfg, StepSizeParams::for_budget(1.0, 35)).unwrap()
}

#[test]
fn denoiser_is_the_gaussian_posterior_mean() {
    for kind in [ScheduleKind::Linear, ScheduleKind::VariancePreserving] {
        let bb = backbone(ToyDecoder::identity(3), kind);
        let z = Vector::from_column_slice(&[0.3, 0.1, -0.8]);
        for t in [0.1, 0.5, 0.9] {
            let (a, s) = (bb.schedule().alpha(t), bb.schedule().sigma(t));
            let m = Vector::from_column_slice(&M);
            let expected = (&z * (a * V) + &m * (s * s)) / (a * a * V + s * s);
            assert!((bb.denoise(&z, t).unwrap() - expected).amax() < 1e-12);
            let score = -(&z - &m * a) / (a * a * V + s * s);
            assert!((bb.noisy_marginal_score(&z, t).unwrap() - score).amax() < 1e-12);
        }
    }
}

#[test]
fn kl_drift_pulls_the_posterior_mean_to_the_anchor() {
    let bb = backbone(ToyDecoder::identity(3), ScheduleKind::Linear);
    let s = sampler(&bb, 1.0);
    let z = Vector::from_column_slice(&[1.0, 0.5, -0.2]);
    let anchor = Vector::from_column_slice(&[0.0, 1.0, 1.0]);
    for t in [0.2, 0.6] {
        let expected = (bb.denoise(&z, t).unwrap() - &anchor) * (-3.0 * gain(&bb, t));
        let got = s.kl_drift(&z, t, &anchor, 3.0).unwrap();
        assert!((got - expected).amax() < 1e-12);
    }
}

#[test]
fn linear_probe_drift_through_a_linear_decoder() {
    let w = Matrix::from_row_slice(4, 3, &[1.0, 0.0, -2.0, 0.5, 1.5, 0.0, 0.0, 0.0, 1.0, -1.0, 0.2, 0.3]);
    let bb = backbone(ToyDecoder::linear(w.clone(), Vector::zeros(4)).unwrap(), ScheduleKind::Linear);
    let s = sampler(&bb, 2.5);
    let c = Vector::from_column_slice(&[0.3, -0.7, 0.1, 0.9]);
    let z = Vector::from_column_slice(&[0.2, 0.2, 0.2]);
    let t = 0.4;
    let (drift, eval) = s.reward_drift(&z, t, &mut LinearProbe { coeff: c.clone() }).unwrap();
    let expected = w.transpose() * &c * (2.5 * gain(&bb, t));
    assert!((drift - expected).amax() < 1e-12);
    let image = &w * bb.denoise(&z, t).unwrap();
    assert!((eval.r_tot - c.dot(&image)).abs() < 1e-12);
}
