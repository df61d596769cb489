//! The self-check suite behind the `verify` command.
//!
//! Every check compares library code against something in [`crate::oracle`]
//! or against a stated closed form, on inputs drawn from fixed seeds.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Backbone, GaussianMixturePrior, InterpolationSchedule, MixtureComponent, ScheduleKind, ToyDecoder};
use crate::config::default_config;
use crate::guidance::LinearProbe;
use crate::math::{seeded_matrix, standard_normal_vector, Matrix, Vector};
use crate::oracle::{
    empirical_moments, naive_fusion, tilted_gaussian_moments, GradCheckReport, NaiveFamily, NaiveFusionInput,
    TiltedGaussianSpec, DEFAULT_FD_STEP,
};
use crate::policy::{
    compute_weights, feedback_delta, fuse_sp_family, object_direction, step_size, IntentMixture, LogitInputs,
    PolicyParams, StepSizeParams,
};
use crate::rewards::{
    CosineHead, Family, FamilyMap, ObjectHead, PreferenceHead, RegionHead, RegionMap, SoftMask, VqaAnswerSpec,
};
use crate::sampler::{Sampler, SamplerConfig, Source, TimeMode};

pub const GRAD_TOL: f64 = 1e-6;
pub const GRAD_POINTS: usize = 50;
pub const FUSION_TOL: f64 = 1e-10;
/// Points closer than this to a hinge kink are redrawn.
pub const HINGE_EXCLUSION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub id: String,
    pub threshold: f64,
    pub measured: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl From<GradCheckReport> for CheckRecord {
    fn from(r: GradCheckReport) -> Self {
        Self {
            detail: format!("{} points, max relative error", r.points),
            id: r.id,
            threshold: r.threshold,
            measured: r.max_rel_error,
            pass: r.pass,
        }
    }
}

fn below(id: &str, threshold: f64, measured: f64, detail: impl Into<String>) -> CheckRecord {
    CheckRecord {
        id: id.into(),
        threshold,
        measured,
        pass: measured < threshold,
        detail: detail.into(),
    }
}

type CheckFn = fn() -> Vec<CheckRecord>;

/// `(id, long-only, check)`. A check function may emit several records that
/// share its id as a prefix.
pub const CHECKS: &[(&str, bool, CheckFn)] = &[
    ("gradcheck.glb", false, || vec![grad_cosine(Family::Glb)]),
    ("gradcheck.per", false, || vec![grad_cosine(Family::Per)]),
    ("gradcheck.rg", false, || vec![grad_region()]),
    ("gradcheck.oc", false, || vec![grad_object()]),
    ("gradcheck.hps", false, || vec![grad_preference()]),
    ("gradcheck.vqa", false, || vec![grad_vqa()]),
    ("gradcheck.decoder", false, || vec![grad_decoder()]),
    ("gradcheck.score", false, || vec![grad_score()]),
    ("gradcheck.denoiser", false, || vec![grad_denoiser()]),
    ("gradcheck.kl", false, || vec![grad_kl()]),
    ("gradcheck.reward_drift", false, || vec![grad_reward_drift()]),
    ("fusion.equivalence", false, || vec![fusion_equivalence()]),
    ("policy.simplex", false, || vec![policy_simplex()]),
    ("policy.step_size", false, policy_step_size),
    ("policy.object_direction", false, || vec![policy_object_direction()]),
    ("policy.argmax_invariance", false, || vec![policy_argmax_invariance()]),
    ("schedule.gamma", false, || vec![schedule_gamma()]),
    ("vqa.ceiling", false, || vec![vqa_ceiling()]),
    ("stationarity", true, stationarity),
];

/// Runs the selected checks. `only` restricts to exact ids; long checks run
/// when `long` is set or when selected explicitly.
pub fn run_checks(long: bool, only: &[String]) -> Vec<CheckRecord> {
    CHECKS
        .iter()
        .filter(|(id, is_long, _)| {
            if only.is_empty() {
                long || !is_long
            } else {
                only.iter().any(|o| o == id)
            }
        })
        .flat_map(|(_, _, f)| f())
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize, count: usize, scale: f64) -> Vec<Vector> {
    (0..count).map(|_| standard_normal_vector(r, n) * scale).collect()
}

const P: usize = 16;
const F: usize = 8;

fn grad_cosine(family: Family) -> CheckRecord {
    let seed = family.index() as u64 + 100;
    let head = CosineHead::new(seeded_matrix(F, P, seed, 0.25));
    let mut r = rng(seed);
    let target = standard_normal_vector(&mut r, F);
    let pts = normals(&mut r, P, GRAD_POINTS, 1.0);
    GradCheckReport::run(
        format!("gradcheck.{family}"),
        &pts,
        |x| head.evaluate(x, &target).map_or(f64::NAN, |s| s.value),
        |x| head.evaluate(x, &target).expect("valid dims").grad,
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

fn grad_region() -> CheckRecord {
    let head = RegionHead::new(
        seeded_matrix(F, P, 102, 0.25),
        RegionMap::from_sizes(&[4, 4, 4, 4]).expect("valid regions"),
        0.2,
    )
    .expect("valid head");
    let mut r = rng(102);
    let target = standard_normal_vector(&mut r, F);
    let pts = normals(&mut r, P, GRAD_POINTS, 1.0);
    GradCheckReport::run(
        "gradcheck.rg",
        &pts,
        |x| head.evaluate(x, &target).map_or(f64::NAN, |s| s.value),
        |x| head.evaluate(x, &target).expect("valid dims").grad,
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

fn grad_object() -> CheckRecord {
    let head = ObjectHead::new(seeded_matrix(F, P, 103, 0.25), 0.5, 0.3).expect("valid head");
    let mut r = rng(103);
    let target = standard_normal_vector(&mut r, F);
    let masks: Vec<SoftMask> = (0..3)
        .map(|_| SoftMask {
            weights: Vector::from_fn(P, |_, _| r.random::<f64>()),
            confidence: r.random_range(-1.0..1.0),
        })
        .collect();
    let pts = normals(&mut r, P, GRAD_POINTS, 1.0);
    GradCheckReport::run(
        "gradcheck.oc",
        &pts,
        |x| head.evaluate(x, &target, &masks).ok().flatten().map_or(f64::NAN, |s| s.value),
        |x| head.evaluate(x, &target, &masks).expect("valid dims").expect("has masks").grad,
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

fn grad_preference() -> CheckRecord {
    let mut r = rng(104);
    let head = PreferenceHead::new(standard_normal_vector(&mut r, P), 4.0, 0.7, -0.2).expect("valid head");
    let pts = normals(&mut r, P, GRAD_POINTS, 1.0);
    GradCheckReport::run(
        "gradcheck.hps",
        &pts,
        |x| head.evaluate(x).map_or(f64::NAN, |s| s.value),
        |x| head.evaluate(x).expect("valid dims").grad,
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

pub fn demo_vqa(seed: u64) -> VqaAnswerSpec {
    let (v, len) = (5, 3);
    let maps = (0..len).map(|t| seeded_matrix(v, P, seed + t as u64, 0.5)).collect();
    let biases = vec![Vector::zeros(v); len];
    VqaAnswerSpec::new(vec![1, 3, 0], v, maps, biases, 0.5, 0.5).expect("valid spec")
}

fn grad_vqa() -> CheckRecord {
    let head = demo_vqa(105);
    let mut r = rng(105);
    let mut pts = Vec::new();
    while pts.len() < GRAD_POINTS {
        let x = standard_normal_vector(&mut r, P);
        if head.hinge_gaps(&x).iter().all(|g| g.abs() > HINGE_EXCLUSION) {
            pts.push(x);
        }
    }
    GradCheckReport::run(
        "gradcheck.vqa",
        &pts,
        |x| head.evaluate(x).map_or(f64::NAN, |s| s.value),
        |x| head.evaluate(x).expect("valid dims").grad,
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

/// Three-component mixture in 3D with unequal diagonal variances.
pub fn check_backbone() -> Backbone {
    let comp = |w: f64, m: [f64; 3], v: [f64; 3]| MixtureComponent {
        weight: w,
        mean: Vector::from_column_slice(&m),
        variance: Vector::from_column_slice(&v),
    };
    let prior = GaussianMixturePrior::new(vec![
        comp(0.5, [1.0, -0.5, 0.0], [0.3, 0.5, 0.8]),
        comp(0.3, [-1.0, 0.5, 0.5], [0.6, 0.2, 0.4]),
        comp(0.2, [0.0, 1.5, -1.0], [1.0, 1.0, 0.25]),
    ])
    .expect("valid prior");
    Backbone::new(
        prior,
        InterpolationSchedule::new(ScheduleKind::Linear, 0.85).expect("valid schedule"),
        ToyDecoder::seeded_tanh(3, 6, P, 7, 1.0).expect("valid decoder"),
    )
    .expect("valid backbone")
}

/// `(z, t)` pairs with `t` in `[0.05, 0.85]`, `z` around the noisy marginal.
fn latent_points(seed: u64, dim: usize) -> Vec<(Vector, f64)> {
    let mut r = rng(seed);
    (0..GRAD_POINTS)
        .map(|_| (standard_normal_vector(&mut r, dim) * 1.5, r.random_range(0.05..0.85)))
        .collect()
}

/// Gradient checks over `(z, t)` pairs: the check varies `z` only.
fn latent_check<F, G>(id: &str, seed: u64, dim: usize, mut value: F, mut analytic: G) -> CheckRecord
where
    F: FnMut(&Vector, f64) -> f64,
    G: FnMut(&Vector, f64) -> Vector,
{
    let mut worst = GradCheckReport {
        id: id.into(),
        points: 0,
        max_rel_error: 0.0,
        worst_point: None,
        threshold: GRAD_TOL,
        pass: true,
    };
    for (z, t) in latent_points(seed, dim) {
        let rep = GradCheckReport::run(id, std::slice::from_ref(&z), |x| value(x, t), |x| analytic(x, t), DEFAULT_FD_STEP, GRAD_TOL);
        worst.points += 1;
        worst.pass &= rep.pass;
        if !(rep.max_rel_error <= worst.max_rel_error) {
            worst.max_rel_error = rep.max_rel_error;
            worst.worst_point = rep.worst_point;
        }
    }
    worst.into()
}

fn grad_decoder() -> CheckRecord {
    let bb = check_backbone();
    let mut r = rng(106);
    let cot = standard_normal_vector(&mut r, P);
    let pts = normals(&mut r, 3, GRAD_POINTS, 1.5);
    GradCheckReport::run(
        "gradcheck.decoder",
        &pts,
        |z| bb.decode(z).map_or(f64::NAN, |i| i.dot(&cot)),
        |z| bb.decoder_vjp(z, &cot).expect("valid dims"),
        DEFAULT_FD_STEP,
        GRAD_TOL,
    )
    .into()
}

fn grad_score() -> CheckRecord {
    let bb = check_backbone();
    latent_check(
        "gradcheck.score",
        107,
        3,
        |z, t| bb.log_marginal_density(z, t).unwrap_or(f64::NAN),
        |z, t| bb.noisy_marginal_score(z, t).expect("valid input"),
    )
}

fn grad_denoiser() -> CheckRecord {
    let bb = check_backbone();
    let cot = standard_normal_vector(&mut rng(108), 3);
    latent_check(
        "gradcheck.denoiser",
        109,
        3,
        |z, t| bb.denoise(z, t).map_or(f64::NAN, |d| d.dot(&cot)),
        |z, t| bb.denoiser_vjp(z, t, &cot).expect("valid input"),
    )
}

fn grad_kl() -> CheckRecord {
    let bb = check_backbone();
    let sampler = Sampler::new(&bb, SamplerConfig::default(), StepSizeParams::for_budget(0.85, 35)).expect("valid sampler");
    let z0 = Vector::from_column_slice(&[0.5, -0.25, 1.0]);
    let lambda = 1.5;
    latent_check(
        "gradcheck.kl",
        110,
        3,
        |z, t| bb.denoise(z, t).map_or(f64::NAN, |d| -0.5 * lambda * (d - &z0).norm_squared()),
        |z, t| sampler.kl_drift(z, t, &z0, lambda).expect("valid input"),
    )
}

/// The full latent reward drift of the shipped demo against finite
/// differences of `lambda_R * R_tot(Dec(Den(z, t)))` with the step's
/// statistics and weights frozen.
fn grad_reward_drift() -> CheckRecord {
    let prep = default_config().build(Path::new(".")).expect("default config builds");
    let sampler = Sampler::new(&prep.backbone, prep.sampler, prep.step_rule).expect("valid sampler");
    let lambda_r = prep.sampler.lambda_r;
    let mut warm = prep.guidance.clone();
    let mut r = rng(111);
    for k in 0..5 {
        let img = standard_normal_vector(&mut r, prep.backbone.image_dim());
        crate::guidance::RewardModel::evaluate(&mut warm, &img, 0.85 - 0.1 * k as f64).expect("evaluates");
    }
    let bb = &prep.backbone;
    let mut worst = (0.0_f64, true, 0usize);
    for (z, t) in latent_points(112, bb.latent_dim()) {
        let mut g = warm.clone();
        let (drift, eval) = sampler.reward_drift(&z, t, &mut g).expect("evaluates");
        let frozen = eval.frozen.expect("multi-reward evaluation is frozen");
        let rep = GradCheckReport::run(
            "gradcheck.reward_drift",
            std::slice::from_ref(&z),
            |x| {
                bb.denoise(x, t)
                    .and_then(|d| bb.decode(&d))
                    .and_then(|img| g.frozen_value(&img, &frozen))
                    .map_or(f64::NAN, |v| lambda_r * v)
            },
            |_| drift.clone(),
            DEFAULT_FD_STEP,
            GRAD_TOL,
        );
        worst.2 += 1;
        worst.1 &= rep.pass;
        if !(rep.max_rel_error <= worst.0) {
            worst.0 = rep.max_rel_error;
        }
    }
    CheckRecord {
        id: "gradcheck.reward_drift".into(),
        threshold: GRAD_TOL,
        measured: worst.0,
        pass: worst.1,
        detail: format!("{} points, max relative error", worst.2),
    }
}

/// Random fusion instance in the oracle's flat format.
pub fn random_fusion_instance(r: &mut ChaCha8Rng) -> NaiveFusionInput {
    let primitives = r.random_range(1..=4);
    let families = Family::ALL
        .iter()
        .map(|f| {
            let per_primitive = f.index() < 4;
            let n = if !r.random_bool(0.8) { 0 } else if per_primitive { primitives } else { 1 };
            let mut opt = || r.random_bool(0.7).then(|| r.random_range(-1.0..1.0));
            let prev_scores = (0..n).map(|_| opt()).collect();
            let prev_fused = opt();
            NaiveFamily {
                per_primitive,
                directional: *f == Family::Oc,
                tau: r.random_range(-1.0..2.0),
                h: r.random_range(0.0..1.0),
                scores: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
                prev_scores,
                prev_fused,
                mean: r.random_range(-0.5..0.5),
                scale: r.random_range(0.05..2.0),
            }
        })
        .collect();
    NaiveFusionInput {
        beta: r.random_range(0.1..5.0),
        beta_sp: r.random_range(0.1..5.0),
        kappa_fb: r.random_range(0.0..2.0),
        kappa_sch: r.random_range(0.0..2.0),
        object_direction: r.random_range(-1.0..1.0),
        families,
    }
}

/// The same instance through the policy module's two stages.
pub fn policy_fusion(input: &NaiveFusionInput) -> f64 {
    let mut params = PolicyParams::with_step(StepSizeParams::constant(0.01));
    params.beta = input.beta;
    params.beta_sp = input.beta_sp;
    params.kappa_fb = input.kappa_fb;
    params.kappa_sch = input.kappa_sch;
    let mut enabled = FamilyMap([false; 6]);
    let mut inputs = FamilyMap::<LogitInputs>::default();
    let mut standardized = FamilyMap([0.0; 6]);
    for (f, fam) in Family::ALL.into_iter().zip(&input.families) {
        if fam.scores.is_empty() {
            continue;
        }
        let sp_inputs: Vec<LogitInputs> = fam
            .scores
            .iter()
            .zip(&fam.prev_scores)
            .map(|(s, p)| LogitInputs {
                tau: fam.tau,
                delta: feedback_delta(*p, *s),
                h: fam.h,
            })
            .collect();
        let mut rep = fuse_sp_family(&fam.scores, &sp_inputs, &params).expect("non-empty").representative;
        if fam.directional {
            rep *= input.object_direction;
        }
        enabled[f] = true;
        inputs[f] = LogitInputs {
            tau: fam.tau,
            delta: feedback_delta(fam.prev_fused, rep),
            h: fam.h,
        };
        standardized[f] = (rep - fam.mean) / fam.scale;
    }
    let w = compute_weights(&enabled, &inputs, &params);
    Family::ALL.iter().map(|f| w[*f] * standardized[*f]).sum()
}

fn fusion_equivalence() -> CheckRecord {
    let mut r = rng(113);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let inst = random_fusion_instance(&mut r);
        worst = worst.max((policy_fusion(&inst) - naive_fusion(&inst)).abs());
    }
    below("fusion.equivalence", FUSION_TOL, worst, "100 instances, max abs difference")
}

fn random_logits(r: &mut ChaCha8Rng) -> (FamilyMap<bool>, FamilyMap<LogitInputs>) {
    let mut enabled = FamilyMap::from_fn(|_| r.random_bool(0.7));
    enabled[Family::Glb] = true;
    let inputs = FamilyMap::from_fn(|_| LogitInputs {
        tau: r.random_range(-2.0..2.0),
        delta: r.random_range(0.0..1.0),
        h: r.random_range(0.0..1.0),
    });
    (enabled, inputs)
}

fn policy_simplex() -> CheckRecord {
    let mut r = rng(114);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (enabled, inputs) = random_logits(&mut r);
        let mut p = PolicyParams::with_step(StepSizeParams::constant(0.01));
        p.beta = r.random_range(0.01..20.0);
        let w = compute_weights(&enabled, &inputs, &p);
        let sum: f64 = w.0.iter().sum();
        let neg = w.0.iter().any(|x| *x < 0.0);
        let leak = Family::ALL.iter().any(|f| !enabled[*f] && w[*f] != 0.0);
        worst = worst.max(if neg || leak { f64::INFINITY } else { (sum - 1.0).abs() });
    }
    below("policy.simplex", 1e-9, worst, "1000 random logit sets, max |sum w - 1|")
}

fn policy_step_size() -> Vec<CheckRecord> {
    let sp = StepSizeParams {
        eta_min: 0.01,
        eta_max: 0.05,
        gamma_eta: 4.0,
        r0: 0.3,
    };
    let grid: Vec<f64> = (0..100).map(|i| -3.0 + 6.0 * i as f64 / 99.0).collect();
    let etas: Vec<f64> = grid.iter().map(|r| step_size(*r, &sp)).collect();
    let in_bounds = etas.iter().all(|e| (sp.eta_min..=sp.eta_max).contains(e));
    let min_gap = etas.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let mid = (step_size(sp.r0, &sp) - 0.5 * (sp.eta_min + sp.eta_max)).abs();
    vec![
        CheckRecord {
            id: "policy.step_size.monotone".into(),
            threshold: 0.0,
            measured: min_gap,
            pass: in_bounds && min_gap > 0.0,
            detail: "100-point grid on [-3, 3], min eta(r_i) - eta(r_i+1), bounds checked".into(),
        },
        below("policy.step_size.midpoint", 1e-15, mid, "|eta(r0) - (eta_min + eta_max) / 2|"),
    ]
}

fn policy_object_direction() -> CheckRecord {
    let mut r = rng(115);
    let mut bad: f64 = 0.0;
    for _ in 0..1000 {
        let a: f64 = r.random();
        let b: f64 = r.random::<f64>() * (1.0 - a);
        let s = object_direction(&IntentMixture::new(a, b, 1.0 - a - b).expect("simplex"));
        bad = bad.max((s.abs() - 1.0).max(0.0));
    }
    let add = object_direction(&IntentMixture::new(1.0, 0.0, 0.0).expect("simplex"));
    let rem = object_direction(&IntentMixture::new(0.0, 1.0, 0.0).expect("simplex"));
    let vertex = (add - 1.0).abs() + (rem + 1.0).abs();
    CheckRecord {
        id: "policy.object_direction".into(),
        threshold: 0.0,
        measured: bad + vertex,
        pass: bad == 0.0 && vertex == 0.0,
        detail: "range excess over 1000 intents plus vertex error".into(),
    }
}

fn argmax(w: &FamilyMap<f64>) -> usize {
    (0..6).fold(0, |best, i| if w.0[i] > w.0[best] { i } else { best })
}

fn policy_argmax_invariance() -> CheckRecord {
    let mut r = rng(116);
    let mut failures = 0;
    for _ in 0..500 {
        let (enabled, inputs) = random_logits(&mut r);
        let mut p = PolicyParams::with_step(StepSizeParams::constant(0.01));
        p.beta = r.random_range(0.1..3.0);
        let a = argmax(&compute_weights(&enabled, &inputs, &p));
        p.beta *= r.random_range(1.5..10.0);
        if argmax(&compute_weights(&enabled, &inputs, &p)) != a {
            failures += 1;
        }
    }
    CheckRecord {
        id: "policy.argmax_invariance".into(),
        threshold: 0.0,
        measured: failures as f64,
        pass: failures == 0,
        detail: "500 instances, argmax changes under beta scaling".into(),
    }
}

fn schedule_gamma() -> CheckRecord {
    let bb = check_backbone();
    let cfg = SamplerConfig {
        gamma_min: 0.05,
        gamma_max: 1.3,
        rho: 1.7,
        ..Default::default()
    };
    let s = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).expect("valid sampler");
    let end = (s.gamma(0.85) - 1.3).abs() + (s.gamma(0.0) - 0.05).abs();
    let cfg = SamplerConfig {
        gamma_min: 0.4,
        gamma_max: 0.4,
        ..cfg
    };
    let c = Sampler::new(&bb, cfg, StepSizeParams::for_budget(0.85, 35)).expect("valid sampler");
    let flat = (0..=50).map(|i| (c.gamma(0.017 * i as f64) - 0.4).abs()).fold(0.0, f64::max);
    below("schedule.gamma", 1e-15, end + flat, "endpoint error plus deviation of the constant schedule")
}

/// Logits with a 50-unit lead for every answer token.
pub fn ceiling_spec() -> (VqaAnswerSpec, Vector) {
    let answer = vec![2, 0, 4, 1];
    let (v, p) = (6, 5);
    let image = Vector::from_fn(p, |i, _| 1.0 + i as f64 * 0.1);
    let maps: Vec<Matrix> = answer
        .iter()
        .enumerate()
        .map(|(t, _)| seeded_matrix(v, p, 900 + t as u64, 0.3))
        .collect();
    let biases = answer
        .iter()
        .zip(&maps)
        .map(|(a, m)| {
            let base = m * &image;
            let top = base.max();
            Vector::from_fn(v, |j, _| if j == *a { top + 50.0 - base[j] } else { top - base[j] })
        })
        .collect();
    let spec = VqaAnswerSpec::new(answer, v, maps, biases, 1.0, 0.5).expect("valid spec");
    (spec, image)
}

fn vqa_ceiling() -> CheckRecord {
    let (spec, image) = ceiling_spec();
    let value = spec.evaluate(&image).expect("valid dims").value;
    below("vqa.ceiling", 1e-6, value.abs(), "|R_vqa| at a 50-unit margin")
}

/// Settings of the stationarity experiment.
#[derive(Clone, Copy, Debug)]
pub struct StationaritySetup {
    pub t: f64,
    pub coeff: f64,
    pub eta: f64,
    pub burn_in: usize,
    pub kept: usize,
    pub seed: u64,
}

impl Default for StationaritySetup {
    fn default() -> Self {
        Self {
            t: 0.5,
            coeff: 2.0,
            eta: 0.01,
            burn_in: 10_000,
            kept: 100_000,
            seed: 2024,
        }
    }
}

/// Runs the fixed-time chain and returns its retained states.
pub fn stationarity_chain(setup: &StationaritySetup) -> Vec<f64> {
    let bb = Backbone::new(
        GaussianMixturePrior::isotropic(Vector::zeros(1), 1.0).expect("valid prior"),
        InterpolationSchedule::new(ScheduleKind::Linear, 1.0).expect("valid schedule"),
        ToyDecoder::identity(1),
    )
    .expect("valid backbone");
    let cfg = SamplerConfig {
        steps: setup.burn_in + setup.kept,
        t_max: 1.0,
        lambda_r: 1.0,
        lambda_kl: 0.0,
        gamma_min: 1.0,
        gamma_max: 1.0,
        rho: 1.0,
        mode: TimeMode::FixedTime(setup.t),
        seed: setup.seed,
        snapshot_stride: 0,
    };
    let sampler = Sampler::new(&bb, cfg, StepSizeParams::constant(setup.eta)).expect("valid sampler");
    let mut probe = LinearProbe {
        coeff: Vector::from_element(1, setup.coeff),
    };
    let mut r = rng(setup.seed);
    let mut state = sampler.init_state(&Source::Editing(Vector::zeros(1)), &mut r).expect("valid source");
    let mut kept = Vec::with_capacity(setup.kept);
    for k in 0..setup.burn_in + setup.kept {
        sampler.step(&mut state, &mut probe, &mut r).expect("stable chain");
        if k >= setup.burn_in {
            kept.push(state.z[0]);
        }
    }
    kept
}

fn stationarity() -> Vec<CheckRecord> {
    let setup = StationaritySetup::default();
    let (mean, var) = tilted_gaussian_moments(&TiltedGaussianSpec {
        prior_mean: 0.0,
        prior_variance: 1.0,
        alpha: 1.0 - setup.t,
        sigma: setup.t,
        decoder_gain: 1.0,
        reward_coeff: setup.coeff,
        lambda_r: 1.0,
        gamma: 1.0,
    });
    let m = empirical_moments(&stationarity_chain(&setup));
    vec![
        CheckRecord {
            id: "stationarity.mean".into(),
            threshold: 3.0,
            measured: (m.mean - mean).abs() / m.se_mean,
            pass: (m.mean - mean).abs() < 3.0 * m.se_mean,
            detail: format!("empirical {:.5} vs {mean}, in standard errors (se {:.5})", m.mean, m.se_mean),
        },
        CheckRecord {
            id: "stationarity.variance".into(),
            threshold: 3.0,
            measured: (m.variance - var).abs() / m.se_variance,
            pass: (m.variance - var).abs() < 3.0 * m.se_variance,
            detail: format!("empirical {:.5} vs {var}, in standard errors (se {:.5})", m.variance, m.se_variance),
        },
    ]
}
