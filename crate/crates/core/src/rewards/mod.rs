//! Differentiable reward heads on toy image vectors.
//!
//! Four families are evaluated once per semantic primitive (`glb`, `per`,
//! `rg`, `oc`) and two once per prompt (`hps`, `vqa`). Every head returns
//! its raw score together with the exact image-space gradient; running
//! standardization lives in [`RunningStats`] and is applied by the caller.

mod stats;
mod vqa;

use std::fmt;
use std::ops::{Index, IndexMut, Range};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{cosine_with_grad, softmax, Matrix, Vector};

pub use stats::RunningStats;
pub use vqa::{VqaAnswerSpec, MAX_ANSWER_TOKENS};

/// Default standardization epsilon.
pub const EPS_NORM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Glb,
    Per,
    Rg,
    Oc,
    Hps,
    Vqa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// Evaluated per semantic primitive, then fused across primitives.
    Sp,
    /// Evaluated once on the whole prompt.
    Prompt,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::Glb, Family::Per, Family::Rg, Family::Oc, Family::Hps, Family::Vqa];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Glb => "glb",
            Family::Per => "per",
            Family::Rg => "rg",
            Family::Oc => "oc",
            Family::Hps => "hps",
            Family::Vqa => "vqa",
        }
    }

    pub fn level(self) -> Level {
        match self {
            Family::Glb | Family::Per | Family::Rg | Family::Oc => Level::Sp,
            Family::Hps | Family::Vqa => Level::Prompt,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per reward family, indexed by [`Family`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyMap<T>(pub [T; 6]);

impl<T> FamilyMap<T> {
    pub fn from_fn(mut f: impl FnMut(Family) -> T) -> Self {
        FamilyMap(Family::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Family, &T)> {
        Family::ALL.into_iter().zip(self.0.iter())
    }
}

impl<T> Index<Family> for FamilyMap<T> {
    type Output = T;
    fn index(&self, f: Family) -> &T {
        &self.0[f.index()]
    }
}

impl<T> IndexMut<Family> for FamilyMap<T> {
    fn index_mut(&mut self, f: Family) -> &mut T {
        &mut self.0[f.index()]
    }
}

/// A raw reward value and its gradient with respect to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub grad: Vector,
    /// Set when a cosine hit a zero-norm feature and was defined as 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    pub weights: Vector,
    pub confidence: f64,
}

/// An atomic sub-instruction of the prompt with its own target embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticPrimitive {
    pub id: String,
    pub text: String,
    pub target: Vector,
    pub masks: Vec<SoftMask>,
}

impl SemanticPrimitive {
    pub fn new(id: impl Into<String>, text: impl Into<String>, target: Vector, masks: Vec<SoftMask>) -> Result<Self> {
        let id = id.into();
        if target.norm() == 0.0 || target.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("primitive `{id}`"), "target embedding must be finite with nonzero norm"));
        }
        for (j, m) in masks.iter().enumerate() {
            if m.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::invalid(format!("primitive `{id}` mask {j}"), "entries must lie in [0, 1]"));
            }
            if !m.confidence.is_finite() {
                return Err(Error::invalid(format!("primitive `{id}` mask {j}"), "confidence must be finite"));
            }
        }
        Ok(Self {
            id,
            text: text.into(),
            target,
            masks,
        })
    }
}

fn check_encoder(what: &'static str, encoder: &Matrix, image: &Vector, target: &Vector) -> Result<()> {
    check_dim(what, encoder.ncols(), image.len())?;
    check_dim("target embedding", encoder.nrows(), target.len())
}

/// `cos(E I, g)`: the global (`glb`) and perceptual (`per`) heads.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineHead {
    pub encoder: Matrix,
}

impl CosineHead {
    pub fn new(encoder: Matrix) -> Self {
        Self { encoder }
    }

    pub fn evaluate(&self, image: &Vector, target: &Vector) -> Result<Scored> {
        check_encoder("cosine head image", &self.encoder, image, target)?;
        let (value, g, degenerate) = cosine_with_grad(&(&self.encoder * image), target);
        Ok(Scored {
            value,
            grad: self.encoder.tr_mul(&g),
            degenerate,
        })
    }
}

/// Contiguous partition of image coordinates into regions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMap {
    ranges: Vec<Range<usize>>,
}

impl RegionMap {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("region map", "at least one region is required"));
        }
        let mut start = 0;
        let ranges = sizes
            .iter()
            .map(|s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Ok(Self { ranges })
    }

    pub fn image_dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }
}

/// Temperature-pooled region grounding.
///
/// `s_m = cos(E (1_m * I), g)`, `a = softmax(s / tau)`, `R = sum_m a_m s_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionHead {
    pub encoder: Matrix,
    pub regions: RegionMap,
    pub temperature: f64,
}

impl RegionHead {
    pub fn new(encoder: Matrix, regions: RegionMap, temperature: f64) -> Result<Self> {
        check_dim("region map size", encoder.ncols(), regions.image_dim())?;
        if !(temperature > 0.0) {
            return Err(Error::invalid("region temperature", "must be > 0"));
        }
        Ok(Self {
            encoder,
            regions,
            temperature,
        })
    }

    /// Per-region similarities and their image gradients.
    pub fn region_scores(&self, image: &Vector, target: &Vector) -> Result<Vec<Scored>> {
        check_encoder("region head image", &self.encoder, image, target)?;
        Ok(self
            .regions
            .ranges
            .iter()
            .map(|r| {
                let mut grad = Vector::zeros(image.len());
                if r.is_empty() {
                    return Scored { value: 0.0, grad, degenerate: true };
                }
                let block = self.encoder.columns(r.start, r.len());
                let feature = block * image.rows(r.start, r.len());
                let (value, g, degenerate) = cosine_with_grad(&feature, target);
                grad.rows_mut(r.start, r.len()).copy_from(&block.tr_mul(&g));
                Scored { value, grad, degenerate }
            })
            .collect())
    }

    pub fn evaluate(&self, image: &Vector, target: &Vector) -> Result<Scored> {
        let per_region = self.region_scores(image, target)?;
        let s: Vec<f64> = per_region.iter().map(|r| r.value).collect();
        let logits: Vec<f64> = s.iter().map(|v| v / self.temperature).collect();
        let attn = softmax(&logits);
        let value: f64 = attn.iter().zip(&s).map(|(a, v)| a * v).sum();
        // dR/ds_m = a_m (1 + (s_m - R) / tau)
        let mut grad = Vector::zeros(image.len());
        for ((a, sm), r) in attn.iter().zip(&s).zip(&per_region) {
            grad.axpy(a * (1.0 + (sm - value) / self.temperature), &r.grad, 1.0);
        }
        Ok(Scored {
            value,
            grad,
            degenerate: per_region.iter().any(|r| r.degenerate),
        })
    }
}

/// Mask-weighted object consistency with a leakage penalty on the complement.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectHead {
    pub encoder: Matrix,
    /// Softmax temperature over mask confidences.
    pub temperature: f64,
    pub leakage: f64,
}

impl ObjectHead {
    pub fn new(encoder: Matrix, temperature: f64, leakage: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::invalid("object mask temperature", "must be > 0"));
        }
        if !(leakage >= 0.0) {
            return Err(Error::invalid("leakage coefficient", "must be >= 0"));
        }
        Ok(Self {
            encoder,
            temperature,
            leakage,
        })
    }

    pub fn mask_weights(&self, masks: &[SoftMask]) -> Vec<f64> {
        let logits: Vec<f64> = masks.iter().map(|m| m.confidence / self.temperature).collect();
        softmax(&logits)
    }

    /// `None` when the primitive carries no masks: the head is disabled for it.
    pub fn evaluate(&self, image: &Vector, target: &Vector, masks: &[SoftMask]) -> Result<Option<Scored>> {
        if masks.is_empty() {
            return Ok(None);
        }
        check_encoder("object head image", &self.encoder, image, target)?;
        let omega = self.mask_weights(masks);
        let mut value = 0.0;
        let mut grad = Vector::zeros(image.len());
        let mut degenerate = false;
        for (w, mask) in omega.iter().zip(masks) {
            check_dim("object mask", image.len(), mask.weights.len())?;
            let outside_mask = mask.weights.map(|m| 1.0 - m);
            let inside = mask.weights.component_mul(image);
            let outside = outside_mask.component_mul(image);
            let (c_in, g_in, d_in) = cosine_with_grad(&(&self.encoder * &inside), target);
            let (c_out, g_out, d_out) = cosine_with_grad(&(&self.encoder * &outside), target);
            value += w * (c_in - self.leakage * c_out);
            let g_img_in = self.encoder.tr_mul(&g_in).component_mul(&mask.weights);
            let g_img_out = self.encoder.tr_mul(&g_out).component_mul(&outside_mask);
            grad += (g_img_in - g_img_out * self.leakage) * *w;
            degenerate |= d_in || (d_out && self.leakage > 0.0);
        }
        Ok(Some(Scored { value, grad, degenerate }))
    }
}

/// Quadratic preference score around an anchor, with a fixed affine normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceHead {
    pub anchor: Vector,
    pub scale: f64,
    pub norm_gain: f64,
    pub norm_offset: f64,
}

impl PreferenceHead {
    pub fn new(anchor: Vector, scale: f64, norm_gain: f64, norm_offset: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::invalid("preference scale", "must be > 0"));
        }
        Ok(Self {
            anchor,
            scale,
            norm_gain,
            norm_offset,
        })
    }

    pub fn evaluate(&self, image: &Vector) -> Result<Scored> {
        check_dim("preference head image", self.anchor.len(), image.len())?;
        let diff = image - &self.anchor;
        let raw = -diff.norm_squared() / self.scale;
        Ok(Scored {
            value: self.norm_gain * raw + self.norm_offset,
            grad: diff * (-2.0 * self.norm_gain / self.scale),
            degenerate: false,
        })
    }
}

/// The configured heads. A `None` slot means the family is disabled.
#[derive(Clone, Debug, Default)]
pub struct RewardSuite {
    pub glb: Option<CosineHead>,
    pub per: Option<CosineHead>,
    pub rg: Option<RegionHead>,
    pub oc: Option<ObjectHead>,
    pub hps: Option<PreferenceHead>,
    pub vqa: Option<VqaAnswerSpec>,
}

impl RewardSuite {
    pub fn is_configured(&self, family: Family) -> bool {
        match family {
            Family::Glb => self.glb.is_some(),
            Family::Per => self.per.is_some(),
            Family::Rg => self.rg.is_some(),
            Family::Oc => self.oc.is_some(),
            Family::Hps => self.hps.is_some(),
            Family::Vqa => self.vqa.is_some(),
        }
    }

    /// Raw score and gradient of an SP-level head for one primitive, or
    /// `None` if the head is disabled for it.
    pub fn evaluate_sp(&self, family: Family, image: &Vector, sp: &SemanticPrimitive) -> Result<Option<Scored>> {
        match family {
            Family::Glb => self.glb.as_ref().map(|h| h.evaluate(image, &sp.target)).transpose(),
            Family::Per => self.per.as_ref().map(|h| h.evaluate(image, &sp.target)).transpose(),
            Family::Rg => self.rg.as_ref().map(|h| h.evaluate(image, &sp.target)).transpose(),
            Family::Oc => match &self.oc {
                Some(h) => h.evaluate(image, &sp.target, &sp.masks),
                None => Ok(None),
            },
            Family::Hps | Family::Vqa => Err(Error::invalid(family.name(), "is a prompt-level head")),
        }
    }

    pub fn evaluate_prompt(&self, family: Family, image: &Vector) -> Result<Option<Scored>> {
        match family {
            Family::Hps => self.hps.as_ref().map(|h| h.evaluate(image)).transpose(),
            Family::Vqa => self.vqa.as_ref().map(|h| h.evaluate(image)).transpose(),
            _ => Err(Error::invalid(family.name(), "is a primitive-level head")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{seeded_matrix, seeded_vector};

    fn sp(target: Vector, masks: Vec<SoftMask>) -> SemanticPrimitive {
        SemanticPrimitive::new("x", "x", target, masks).unwrap()
    }

    #[test]
    fn cosine_self_and_opposite() {
        let g = Vector::from_column_slice(&[0.3, -1.0, 2.0]);
        let head = CosineHead::new(Matrix::identity(3, 3));
        assert!((head.evaluate(&g, &g).unwrap().value - 1.0).abs() < 1e-15);
        assert!((head.evaluate(&(-&g), &g).unwrap().value + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let head = CosineHead::new(seeded_matrix(4, 6, 3, 1.0));
        let g = seeded_vector(4, 4, 1.0);
        let img = seeded_vector(6, 5, 1.0);
        let base = head.evaluate(&img, &g).unwrap().value;
        for c in [1e-3, 0.5, 7.0, 1e4] {
            assert!((head.evaluate(&(&img * c), &g).unwrap().value - base).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_matches_direct_dot_over_norms() {
        let e = seeded_matrix(4, 6, 13, 1.0);
        let g = seeded_vector(4, 14, 1.0);
        let img = seeded_vector(6, 15, 1.0);
        let mut x = [0.0; 4];
        for i in 0..4 {
            for j in 0..6 {
                x[i] += e[(i, j)] * img[j];
            }
        }
        let dot: f64 = (0..4).map(|i| x[i] * g[i]).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected = dot / (nx * g.norm());
        assert!((CosineHead::new(e).evaluate(&img, &g).unwrap().value - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_image_is_degenerate_not_an_error() {
        let head = CosineHead::new(Matrix::identity(3, 3));
        let r = head.evaluate(&Vector::zeros(3), &Vector::from_element(3, 1.0)).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn region_pooling_uniform_when_scores_equal() {
        // Two regions holding the same content under a block-diagonal encoder.
        let mut e = Matrix::zeros(2, 4);
        e[(0, 0)] = 1.0;
        e[(1, 1)] = 1.0;
        e[(0, 2)] = 1.0;
        e[(1, 3)] = 1.0;
        let head = RegionHead::new(e, RegionMap::from_sizes(&[2, 2]).unwrap(), 0.25).unwrap();
        let g = Vector::from_column_slice(&[1.0, 0.5]);
        let img = Vector::from_column_slice(&[0.2, 0.9, 0.2, 0.9]);
        let per = head.region_scores(&img, &g).unwrap();
        let r = head.evaluate(&img, &g).unwrap();
        assert!((r.value - per[0].value).abs() < 1e-15);
    }

    #[test]
    fn region_pooling_approaches_max_at_low_temperature() {
        let e = seeded_matrix(3, 9, 21, 1.0);
        let g = seeded_vector(3, 22, 1.0);
        let img = seeded_vector(9, 23, 1.0);
        let head = RegionHead::new(e, RegionMap::from_sizes(&[3, 3, 3]).unwrap(), 1e-4).unwrap();
        let max = head.region_scores(&img, &g).unwrap().iter().map(|s| s.value).fold(f64::MIN, f64::max);
        assert!((head.evaluate(&img, &g).unwrap().value - max).abs() < 1e-3);
    }

    #[test]
    fn empty_region_scores_zero() {
        let head = RegionHead::new(Matrix::identity(3, 3), RegionMap::from_sizes(&[0, 3]).unwrap(), 0.5).unwrap();
        let scores = head.region_scores(&Vector::from_element(3, 1.0), &Vector::from_element(3, 1.0)).unwrap();
        assert_eq!(scores[0].value, 0.0);
    }

    #[test]
    fn object_head_reduces_to_cosine_with_full_mask() {
        let e = seeded_matrix(4, 6, 31, 1.0);
        let g = seeded_vector(4, 32, 1.0);
        let img = seeded_vector(6, 33, 1.0);
        let oc = ObjectHead::new(e.clone(), 0.5, 0.0).unwrap();
        let full = SoftMask { weights: Vector::from_element(6, 1.0), confidence: 0.3 };
        let r = oc.evaluate(&img, &g, &[full]).unwrap().unwrap();
        let glb = CosineHead::new(e).evaluate(&img, &g).unwrap();
        assert!((r.value - glb.value).abs() < 1e-12);
        assert!((r.grad - glb.grad).norm() < 1e-12);
    }

    #[test]
    fn object_head_equal_confidences_weigh_equally_and_no_masks_disables() {
        let oc = ObjectHead::new(Matrix::identity(2, 2), 0.5, 0.1).unwrap();
        let m = |c| SoftMask { weights: Vector::from_element(2, 0.5), confidence: c };
        assert_eq!(oc.mask_weights(&[m(0.8), m(0.8)]), vec![0.5, 0.5]);
        let none = oc.evaluate(&Vector::from_element(2, 1.0), &Vector::from_element(2, 1.0), &[]).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn preference_head_shape() {
        let anchor = Vector::from_column_slice(&[1.0, -1.0]);
        let head = PreferenceHead::new(anchor.clone(), 2.0, 0.5, 0.25).unwrap();
        assert_eq!(head.evaluate(&anchor).unwrap().value, 0.25);
        let d1 = Vector::from_column_slice(&[0.3, 0.1]);
        let r1 = head.evaluate(&(&anchor + &d1)).unwrap().value - 0.25;
        let r2 = head.evaluate(&(&anchor + &d1 * 2.0)).unwrap().value - 0.25;
        assert!((r2 / r1 - 4.0).abs() < 1e-12);
        let g = head.evaluate(&(&anchor + &d1)).unwrap().grad;
        assert!((g - &d1 * (-2.0 * 0.5 / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn primitive_validation() {
        assert!(SemanticPrimitive::new("a", "", Vector::zeros(2), vec![]).is_err());
        let bad = SoftMask { weights: Vector::from_element(2, 1.5), confidence: 0.0 };
        assert!(SemanticPrimitive::new("a", "", Vector::from_element(2, 1.0), vec![bad]).is_err());
        let _ = sp(Vector::from_element(2, 1.0), vec![]);
    }

    #[test]
    fn family_levels() {
        let sp_level: Vec<_> = Family::ALL.iter().filter(|f| f.level() == Level::Sp).collect();
        assert_eq!(sp_level, [&Family::Glb, &Family::Per, &Family::Rg, &Family::Oc]);
    }
}
