//! Prompt-aware adaptive weighting and step-size control.
//!
//! Each step the controller forms a logit per reward family,
//!
//! ```text
//! logit_i = beta * (tau_i + kappa_fb * delta_i + kappa_sch * h_i(t))
//! ```
//!
//! where `tau` is the intent-mixed base profile, `delta_i` the one-step
//! regression of the raw score and `h_i` a linear ramp in time. The same
//! form (with `beta_sp`) first collapses SP-level scores across semantic
//! primitives into one representative per family. The step size is a
//! logistic function of the fused reward: high reward shrinks the step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logistic, softmax};
use crate::rewards::{Family, FamilyMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntentMixture {
    pub add: f64,
    pub remove: f64,
    pub style: f64,
}

impl IntentMixture {
    pub fn new(add: f64, remove: f64, style: f64) -> Result<Self> {
        let parts = [add, remove, style];
        if parts.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "intent mixture",
                format!("({add}, {remove}, {style}) is not on the probability simplex"),
            ));
        }
        Ok(Self { add, remove, style })
    }

    pub fn uniform() -> Self {
        Self {
            add: 1.0 / 3.0,
            remove: 1.0 / 3.0,
            style: 1.0 / 3.0,
        }
    }
}

/// Importance template per intent, one entry per reward family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseProfiles {
    pub add: FamilyMap<f64>,
    pub remove: FamilyMap<f64>,
    pub style: FamilyMap<f64>,
}

impl Default for BaseProfiles {
    fn default() -> Self {
        // glb, per, rg, oc, hps, vqa
        Self {
            add: FamilyMap([0.5, 0.5, 1.0, 1.0, 0.25, 0.5]),
            remove: FamilyMap([0.5, 0.5, 0.0, 0.0, 0.25, 0.5]),
            style: FamilyMap([1.0, 1.0, 0.25, 0.25, 1.0, 0.5]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Strongest at high noise: `t / t_max`.
    Early,
    /// Strongest near the clean end: `1 - t / t_max`.
    Late,
    Flat,
}

pub fn default_schedule_modes() -> FamilyMap<ScheduleMode> {
    FamilyMap::from_fn(|f| match f {
        Family::Rg | Family::Oc => ScheduleMode::Early,
        _ => ScheduleMode::Late,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizeParams {
    pub eta_min: f64,
    pub eta_max: f64,
    pub gamma_eta: f64,
    pub r0: f64,
}

impl StepSizeParams {
    /// Defaults keyed to the sampler's time budget `t_max` over `steps`.
    pub fn for_budget(t_max: f64, steps: usize) -> Self {
        let per_step = t_max / steps.max(1) as f64;
        Self {
            eta_min: 0.5 * per_step,
            eta_max: 2.0 * per_step,
            gamma_eta: 4.0,
            r0: 0.0,
        }
    }

    /// Constant step `eta`.
    pub fn constant(eta: f64) -> Self {
        Self {
            eta_min: eta,
            eta_max: eta,
            gamma_eta: 1.0,
            r0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_max && self.eta_max.is_finite()) {
            return Err(Error::invalid("step size bounds", "need 0 < eta_min <= eta_max"));
        }
        if !(self.gamma_eta > 0.0) || !self.r0.is_finite() {
            return Err(Error::invalid("step size", "need gamma_eta > 0 and finite r0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyParams {
    pub beta: f64,
    pub beta_sp: f64,
    pub kappa_fb: f64,
    pub kappa_sch: f64,
    pub step: StepSizeParams,
    pub modes: FamilyMap<ScheduleMode>,
}

impl PolicyParams {
    pub fn with_step(step: StepSizeParams) -> Self {
        Self {
            beta: 2.0,
            beta_sp: 2.0,
            kappa_fb: 0.5,
            kappa_sch: 0.5,
            step,
            modes: default_schedule_modes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta_sp > 0.0) {
            return Err(Error::invalid("policy temperatures", "beta and beta_sp must be > 0"));
        }
        if !(self.kappa_fb >= 0.0 && self.kappa_sch >= 0.0) {
            return Err(Error::invalid("policy gains", "kappa_fb and kappa_sch must be >= 0"));
        }
        self.step.validate()
    }
}

/// The three additive components of a family (or primitive) logit.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogitInputs {
    pub tau: f64,
    pub delta: f64,
    pub h: f64,
}

impl LogitInputs {
    fn logit(&self, beta: f64, kappa_fb: f64, kappa_sch: f64) -> f64 {
        beta * (self.tau + kappa_fb * self.delta + kappa_sch * self.h)
    }
}

pub fn base_profile(pi: &IntentMixture, profiles: &BaseProfiles) -> FamilyMap<f64> {
    FamilyMap::from_fn(|f| pi.add * profiles.add[f] + pi.remove * profiles.remove[f] + pi.style * profiles.style[f])
}

/// Positive part of the one-step drop in a raw score; zero on the first step.
pub fn feedback_delta(prev: Option<f64>, curr: f64) -> f64 {
    prev.map_or(0.0, |p| (p - curr).max(0.0))
}

pub fn schedule_term(mode: ScheduleMode, t: f64, t_max: f64) -> f64 {
    match mode {
        ScheduleMode::Early => t / t_max,
        ScheduleMode::Late => 1.0 - t / t_max,
        ScheduleMode::Flat => 0.0,
    }
}

/// Result of collapsing one SP-level family across primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct SpFusion {
    pub representative: f64,
    pub weights: Vec<f64>,
}

/// Softmax across primitives of `beta_sp (tau + kappa_fb delta + kappa_sch h)`,
/// then the weighted sum of their scores. `None` if no primitive contributes.
pub fn fuse_sp_family(scores: &[f64], inputs: &[LogitInputs], params: &PolicyParams) -> Option<SpFusion> {
    if scores.is_empty() || scores.len() != inputs.len() {
        return None;
    }
    let logits: Vec<f64> = inputs
        .iter()
        .map(|i| i.logit(params.beta_sp, params.kappa_fb, params.kappa_sch))
        .collect();
    let weights = softmax(&logits);
    let representative = weights.iter().zip(scores).map(|(w, s)| w * s).sum();
    Some(SpFusion { representative, weights })
}

/// Family weights: softmax over enabled families, zero for the rest.
pub fn compute_weights(enabled: &FamilyMap<bool>, inputs: &FamilyMap<LogitInputs>, params: &PolicyParams) -> FamilyMap<f64> {
    let active: Vec<Family> = Family::ALL.into_iter().filter(|f| enabled[*f]).collect();
    let logits: Vec<f64> = active
        .iter()
        .map(|f| inputs[*f].logit(params.beta, params.kappa_fb, params.kappa_sch))
        .collect();
    let mut weights = FamilyMap([0.0; 6]);
    for (f, w) in active.iter().zip(softmax(&logits)) {
        weights[*f] = w;
    }
    weights
}

/// `s_obj = pi_add - pi_remove`.
pub fn object_direction(pi: &IntentMixture) -> f64 {
    pi.add - pi.remove
}

pub fn step_size(r_tot: f64, params: &StepSizeParams) -> f64 {
    params.eta_min + (params.eta_max - params.eta_min) * logistic(-params.gamma_eta * (r_tot - params.r0))
}

/// Keyword lists used by [`classify_intent`]. Multi-word entries match
/// consecutive tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentLexicon {
    pub add: Vec<String>,
    pub remove: Vec<String>,
    pub style: Vec<String>,
}

impl Default for IntentLexicon {
    fn default() -> Self {
        let words = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            add: words(&["add", "insert", "put", "place", "include", "attach", "introduce"]),
            remove: words(&["remove", "delete", "erase", "eliminate", "without", "take off", "get rid of"]),
            style: words(&["style", "stylize", "restyle", "recolor", "color", "paint", "convert", "turn", "make", "change"]),
        }
    }
}

fn count_phrase(tokens: &[String], phrase: &str) -> usize {
    let words: Vec<String> = tokenize(phrase);
    if words.is_empty() || words.len() > tokens.len() {
        return 0;
    }
    tokens.windows(words.len()).filter(|w| *w == words.as_slice()).count()
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Keyword-count intent classifier; uniform when nothing matches.
pub fn classify_intent(text: &str, lexicon: &IntentLexicon) -> IntentMixture {
    let tokens = tokenize(text);
    let hits = |list: &[String]| list.iter().map(|p| count_phrase(&tokens, p)).sum::<usize>() as f64;
    let (a, r, s) = (hits(&lexicon.add), hits(&lexicon.remove), hits(&lexicon.style));
    let total = a + r + s;
    if total == 0.0 {
        return IntentMixture::uniform();
    }
    IntentMixture {
        add: a / total,
        remove: r / total,
        style: s / total,
    }
}
