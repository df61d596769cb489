//! Reward models seen by the sampler.
//!
//! [`MultiRewardGuidance`] runs the full per-step pipeline: evaluate every
//! enabled head, fuse SP-level heads across primitives, apply the object
//! direction, standardize, weight, and return the fused score with its
//! image-space gradient. [`LinearProbe`] is a single linear reward with no
//! standardization, used where the target density must be known exactly.

use crate::error::{check_dim, Error, Result};
use crate::math::Vector;
use crate::policy::{
    base_profile, compute_weights, feedback_delta, fuse_sp_family, object_direction, schedule_term, BaseProfiles,
    IntentMixture, LogitInputs, PolicyParams,
};
use crate::rewards::{Family, FamilyMap, Level, RewardSuite, RunningStats, SemanticPrimitive, EPS_NORM};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FamilyRecord {
    pub enabled: bool,
    /// Representative raw score (after SP fusion and object direction).
    pub raw: f64,
    pub standardized: f64,
    pub weight: f64,
}

/// Everything held fixed when differentiating one step's fused reward.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenFusion {
    pub weights: FamilyMap<f64>,
    pub means: FamilyMap<f64>,
    pub scales: FamilyMap<f64>,
    /// Per-family weights across primitives, indexed by primitive; primitives
    /// for which the head is disabled carry weight 0.
    pub sp_weights: FamilyMap<Vec<f64>>,
    pub object_direction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardEvaluation {
    pub r_tot: f64,
    /// Gradient of `r_tot` in image space with the step's statistics frozen.
    pub image_grad: Vector,
    pub families: FamilyMap<FamilyRecord>,
    pub frozen: Option<FrozenFusion>,
}

pub trait RewardModel {
    /// Scores the decoded image at time `t`. May update internal running
    /// state, so calls must come in step order.
    fn evaluate(&mut self, image: &Vector, t: f64) -> Result<RewardEvaluation>;
}

/// `R(I) = <c, I>`, reported as-is.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub coeff: Vector,
}

impl RewardModel for LinearProbe {
    fn evaluate(&mut self, image: &Vector, _t: f64) -> Result<RewardEvaluation> {
        check_dim("linear probe image", self.coeff.len(), image.len())?;
        Ok(RewardEvaluation {
            r_tot: self.coeff.dot(image),
            image_grad: self.coeff.clone(),
            families: FamilyMap::default(),
            frozen: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Standardization {
    pub eps: f64,
    /// Lower bound on the running deviation used in the denominator.
    pub sigma_floor: f64,
}

impl Default for Standardization {
    fn default() -> Self {
        Self {
            eps: EPS_NORM,
            sigma_floor: 0.0,
        }
    }
}

/// The multi-reward controller with its per-run state.
#[derive(Clone, Debug)]
pub struct MultiRewardGuidance {
    suite: RewardSuite,
    primitives: Vec<SemanticPrimitive>,
    intent: IntentMixture,
    profiles: BaseProfiles,
    params: PolicyParams,
    t_max: f64,
    standardization: Standardization,
    stats: FamilyMap<RunningStats>,
    prev_raw: FamilyMap<Option<f64>>,
    prev_sp_raw: Vec<FamilyMap<Option<f64>>>,
}

impl MultiRewardGuidance {
    pub fn new(
        suite: RewardSuite,
        primitives: Vec<SemanticPrimitive>,
        intent: IntentMixture,
        profiles: BaseProfiles,
        params: PolicyParams,
        t_max: f64,
        standardization: Standardization,
    ) -> Result<Self> {
        params.validate()?;
        if !(standardization.eps > 0.0 && standardization.sigma_floor >= 0.0) {
            return Err(Error::invalid("standardization", "need eps > 0 and sigma_floor >= 0"));
        }
        let any_sp = Family::ALL.iter().any(|f| f.level() == Level::Sp && suite.is_configured(*f));
        if any_sp && primitives.is_empty() {
            return Err(Error::invalid("task", "SP-level rewards are enabled but no semantic primitives were given"));
        }
        if !Family::ALL.iter().any(|f| suite.is_configured(*f)) {
            return Err(Error::invalid("rewards", "no reward family is enabled"));
        }
        let n = primitives.len();
        Ok(Self {
            suite,
            primitives,
            intent,
            profiles,
            params,
            t_max,
            standardization,
            stats: FamilyMap::default(),
            prev_raw: FamilyMap::default(),
            prev_sp_raw: vec![FamilyMap::default(); n],
        })
    }

    pub fn intent(&self) -> IntentMixture {
        self.intent
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn stats(&self) -> &FamilyMap<RunningStats> {
        &self.stats
    }

    /// Fused reward of `image` under a frozen step: the scalar whose image
    /// gradient [`RewardModel::evaluate`] returns.
    pub fn frozen_value(&self, image: &Vector, frozen: &FrozenFusion) -> Result<f64> {
        let mut total = 0.0;
        for f in Family::ALL {
            let w = frozen.weights[f];
            if w == 0.0 {
                continue;
            }
            let mut raw = match f.level() {
                Level::Sp => {
                    let mut acc = 0.0;
                    for (sp, omega) in self.primitives.iter().zip(&frozen.sp_weights[f]) {
                        if *omega != 0.0 {
                            if let Some(s) = self.suite.evaluate_sp(f, image, sp)? {
                                acc += omega * s.value;
                            }
                        }
                    }
                    acc
                }
                Level::Prompt => self.suite.evaluate_prompt(f, image)?.map_or(0.0, |s| s.value),
            };
            if f == Family::Oc {
                raw *= frozen.object_direction;
            }
            total += w * (raw - frozen.means[f]) / frozen.scales[f];
        }
        Ok(total)
    }
}

impl RewardModel for MultiRewardGuidance {
    fn evaluate(&mut self, image: &Vector, t: f64) -> Result<RewardEvaluation> {
        let tau = base_profile(&self.intent, &self.profiles);
        let s_obj = object_direction(&self.intent);
        let h = FamilyMap::from_fn(|f| schedule_term(self.params.modes[f], t, self.t_max));
        let dim = image.len();

        let mut raw: FamilyMap<Option<(f64, Vector)>> = FamilyMap::default();
        let mut sp_weights: FamilyMap<Vec<f64>> = FamilyMap::default();
        for f in Family::ALL {
            match f.level() {
                Level::Sp => {
                    if !self.suite.is_configured(f) {
                        continue;
                    }
                    let mut idx = Vec::new();
                    let mut scores = Vec::new();
                    let mut grads = Vec::new();
                    let mut inputs = Vec::new();
                    for (j, sp) in self.primitives.iter().enumerate() {
                        if let Some(s) = self.suite.evaluate_sp(f, image, sp)? {
                            inputs.push(LogitInputs {
                                tau: tau[f],
                                delta: feedback_delta(self.prev_sp_raw[j][f], s.value),
                                h: h[f],
                            });
                            self.prev_sp_raw[j][f] = Some(s.value);
                            idx.push(j);
                            scores.push(s.value);
                            grads.push(s.grad);
                        }
                    }
                    if let Some(fusion) = fuse_sp_family(&scores, &inputs, &self.params) {
                        let mut grad = Vector::zeros(dim);
                        let mut full = vec![0.0; self.primitives.len()];
                        for ((w, g), j) in fusion.weights.iter().zip(&grads).zip(&idx) {
                            grad.axpy(*w, g, 1.0);
                            full[*j] = *w;
                        }
                        let mut value = fusion.representative;
                        if f == Family::Oc {
                            value *= s_obj;
                            grad *= s_obj;
                        }
                        sp_weights[f] = full;
                        raw[f] = Some((value, grad));
                    }
                }
                Level::Prompt => {
                    if let Some(s) = self.suite.evaluate_prompt(f, image)? {
                        raw[f] = Some((s.value, s.grad));
                    }
                }
            }
        }

        let enabled = FamilyMap::from_fn(|f| raw[f].is_some());
        let mut families: FamilyMap<FamilyRecord> = FamilyMap::default();
        let mut means = FamilyMap([0.0; 6]);
        let mut scales = FamilyMap([1.0; 6]);
        let mut inputs: FamilyMap<LogitInputs> = FamilyMap::default();
        let Standardization { eps, sigma_floor } = self.standardization;
        for f in Family::ALL {
            let Some((value, _)) = &raw[f] else { continue };
            let standardized = self.stats[f].standardize(*value, eps, sigma_floor);
            means[f] = self.stats[f].mean();
            scales[f] = self.stats[f].scale(eps, sigma_floor);
            inputs[f] = LogitInputs {
                tau: tau[f],
                delta: feedback_delta(self.prev_raw[f], *value),
                h: h[f],
            };
            self.prev_raw[f] = Some(*value);
            families[f] = FamilyRecord {
                enabled: true,
                raw: *value,
                standardized,
                weight: 0.0,
            };
        }

        let weights = compute_weights(&enabled, &inputs, &self.params);
        let mut r_tot = 0.0;
        let mut image_grad = Vector::zeros(dim);
        for f in Family::ALL {
            let Some((_, grad)) = &raw[f] else { continue };
            families[f].weight = weights[f];
            r_tot += weights[f] * families[f].standardized;
            image_grad.axpy(weights[f] / scales[f], grad, 1.0);
        }

        Ok(RewardEvaluation {
            r_tot,
            image_grad,
            families,
            frozen: Some(FrozenFusion {
                weights,
                means,
                scales,
                sp_weights,
                object_direction: s_obj,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{seeded_matrix, seeded_vector, Matrix};
    use crate::policy::StepSizeParams;
    use crate::rewards::{CosineHead, PreferenceHead};

    fn guidance(suite: RewardSuite, sps: Vec<SemanticPrimitive>) -> MultiRewardGuidance {
        MultiRewardGuidance::new(
            suite,
            sps,
            IntentMixture::new(1.0, 0.0, 0.0).unwrap(),
            BaseProfiles::default(),
            PolicyParams::with_step(StepSizeParams::for_budget(0.85, 35)),
            0.85,
            Standardization::default(),
        )
        .unwrap()
    }

    #[test]
    fn first_step_is_all_zero_standardized() {
        let suite = RewardSuite {
            glb: Some(CosineHead::new(seeded_matrix(3, 4, 1, 1.0))),
            hps: Some(PreferenceHead::new(Vector::zeros(4), 1.0, 1.0, 0.0).unwrap()),
            ..Default::default()
        };
        let sp = SemanticPrimitive::new("a", "a", seeded_vector(3, 2, 1.0), vec![]).unwrap();
        let mut g = guidance(suite, vec![sp]);
        let e = g.evaluate(&seeded_vector(4, 3, 1.0), 0.85).unwrap();
        assert_eq!(e.r_tot, 0.0);
        assert!(e.families[Family::Glb].enabled && e.families[Family::Hps].enabled);
        assert!(!e.families[Family::Rg].enabled);
        let wsum: f64 = e.families.0.iter().map(|r| r.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_sp_heads_without_primitives() {
        let suite = RewardSuite {
            glb: Some(CosineHead::new(Matrix::identity(2, 2))),
            ..Default::default()
        };
        assert!(MultiRewardGuidance::new(
            suite,
            vec![],
            IntentMixture::uniform(),
            BaseProfiles::default(),
            PolicyParams::with_step(StepSizeParams::constant(0.01)),
            0.85,
            Standardization::default()
        )
        .is_err());
    }

    #[test]
    fn linear_probe_reports_raw_inner_product() {
        let mut probe = LinearProbe { coeff: Vector::from_column_slice(&[2.0, -1.0]) };
        let e = probe.evaluate(&Vector::from_column_slice(&[1.5, 1.0]), 0.3).unwrap();
        assert_eq!(e.r_tot, 2.0);
        assert_eq!(e.image_grad, probe.coeff);
    }
}
