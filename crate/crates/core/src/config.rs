//! TOML run configuration.
//!
//! Parsing is strict: unknown keys are rejected in every table. Optional
//! values are filled in by [`RunConfig::resolved`], which is what the CLI
//! echoes into run summaries. Vectors may be given inline, as
//! `{ seeded = { seed, scale } }`, or as `{ file = "path" }` pointing to a
//! raw little-endian `f64` array (relative to the config file).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, GaussianMixturePrior, InterpolationSchedule, MixtureComponent, ScheduleKind, ToyDecoder};
use crate::error::{Error, Result};
use crate::guidance::{MultiRewardGuidance, Standardization};
use crate::math::{matrix_from_rows, seeded_matrix, seeded_vector, Matrix, Vector};
use crate::policy::{
    classify_intent, BaseProfiles, IntentLexicon, IntentMixture, PolicyParams, ScheduleMode, StepSizeParams,
};
use crate::rewards::{
    CosineHead, FamilyMap, ObjectHead, PreferenceHead, RegionHead, RegionMap, RewardSuite, SemanticPrimitive, SoftMask,
    VqaAnswerSpec, EPS_NORM,
};
use crate::sampler::{RunOutput, Sampler, SamplerConfig, Source, TimeMode};
use crate::trajectory::read_f64_array;

pub const DEFAULT_CONFIG_TOML: &str = include_str!("../assets/default.toml");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub seed: u64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    Identity,
    Seeded(SeedSpec),
    /// Row-major.
    Inline(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeededRef {
    pub seeded: SeedSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Inline(Vec<f64>),
    Seeded(SeededRef),
    File(FileRef),
}

impl MatrixSource {
    fn resolve(&self, rows: usize, cols: usize, path: &str) -> Result<Matrix> {
        match self {
            MatrixSource::Identity if rows == cols => Ok(Matrix::identity(rows, cols)),
            MatrixSource::Identity => Err(Error::config(path, format!("identity needs a square {rows}x{cols} shape"))),
            MatrixSource::Seeded(s) => Ok(seeded_matrix(rows, cols, s.seed, s.scale)),
            MatrixSource::Inline(r) => match matrix_from_rows(r) {
                Some(m) if m.nrows() == rows && m.ncols() == cols => Ok(m),
                Some(m) => Err(Error::config(
                    path,
                    format!("expected a {rows}x{cols} matrix, got {}x{}", m.nrows(), m.ncols()),
                )),
                None => Err(Error::config(path, "rows have different lengths")),
            },
        }
    }
}

impl VectorSource {
    fn resolve(&self, len: usize, path: &str, base: &Path) -> Result<Vector> {
        let v = match self {
            VectorSource::Inline(v) => v.clone(),
            VectorSource::Seeded(s) => return Ok(seeded_vector(len, s.seeded.seed, s.seeded.scale)),
            VectorSource::File(f) => {
                let full = base.join(&f.file);
                let bytes = fs::read(&full).map_err(|e| Error::config(path, format!("{}: {e}", full.display())))?;
                read_f64_array(bytes.as_slice()).map_err(|e| Error::config(path, e.to_string()))?
            }
        };
        if v.len() != len {
            return Err(Error::config(path, format!("expected {len} values, got {}", v.len())));
        }
        Ok(Vector::from_vec(v))
    }
}

/// One value per reward family, keyed by name.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerFamily<T> {
    pub glb: T,
    pub per: T,
    pub rg: T,
    pub oc: T,
    pub hps: T,
    pub vqa: T,
}

impl<T: Copy> From<PerFamily<T>> for FamilyMap<T> {
    fn from(p: PerFamily<T>) -> Self {
        FamilyMap([p.glb, p.per, p.rg, p.oc, p.hps, p.vqa])
    }
}

impl<T: Copy> From<FamilyMap<T>> for PerFamily<T> {
    fn from(m: FamilyMap<T>) -> Self {
        let [glb, per, rg, oc, hps, vqa] = m.0;
        Self { glb, per, rg, oc, hps, vqa }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Identity,
    Linear,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    /// Ignored for `identity`.
    #[serde(default)]
    pub image_dim: usize,
    /// Only used by `tanh`.
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    pub prior: Vec<ComponentSpec>,
    pub decoder: DecoderSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSpec {
    pub encoder: MatrixSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub encoder: MatrixSource,
    pub regions: Vec<usize>,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub encoder: MatrixSource,
    pub temperature: f64,
    pub leakage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSpec {
    pub anchor: VectorSource,
    pub scale: f64,
    #[serde(default = "one")]
    pub norm_gain: f64,
    #[serde(default)]
    pub norm_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaSpec {
    pub answer: Vec<usize>,
    pub vocab_size: usize,
    /// Position `t` uses a `V x P` map drawn with seed `seed + t`.
    pub logits: SeedSpec,
    pub margin: f64,
    pub margin_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardsSection {
    pub feature_dim: usize,
    #[serde(default = "default_eps")]
    pub eps_norm: f64,
    /// Lower bound on the running deviation used when standardizing.
    #[serde(default)]
    pub sigma_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glb: Option<CosineSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per: Option<CosineSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rg: Option<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oc: Option<ObjectSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hps: Option<PreferenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa: Option<VqaSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSpec {
    pub add: PerFamily<f64>,
    pub remove: PerFamily<f64>,
    pub style: PerFamily<f64>,
}

impl Default for ProfilesSpec {
    fn default() -> Self {
        let p = BaseProfiles::default();
        Self {
            add: p.add.into(),
            remove: p.remove.into(),
            style: p.style.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub beta: f64,
    pub beta_sp: f64,
    pub kappa_fb: f64,
    pub kappa_sch: f64,
    /// Defaults to `0.5 t_max / steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    /// Defaults to `2 t_max / steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    pub gamma_eta: f64,
    pub r0: f64,
    pub profiles: ProfilesSpec,
    pub schedule_modes: PerFamily<ScheduleMode>,
    pub lexicon: IntentLexicon,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyParams::with_step(StepSizeParams::for_budget(1.0, 1));
        Self {
            beta: p.beta,
            beta_sp: p.beta_sp,
            kappa_fb: p.kappa_fb,
            kappa_sch: p.kappa_sch,
            eta_min: None,
            eta_max: None,
            gamma_eta: p.step.gamma_eta,
            r0: p.step.r0,
            profiles: ProfilesSpec::default(),
            schedule_modes: p.modes.into(),
            lexicon: IntentLexicon::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Annealed,
    FixedTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: usize,
    pub t_max: f64,
    pub lambda_r: f64,
    #[serde(default = "default_lambda_kl")]
    pub lambda_kl: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "default_mode")]
    pub mode: ModeSpec,
    /// Required in `fixed_time` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_t: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Editing,
    Generation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSpec {
    pub add: f64,
    pub remove: f64,
    pub style: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub weights: VectorSource,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveSpec {
    pub id: String,
    #[serde(default)]
    pub text: String,
    pub target: VectorSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<MaskSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default)]
    pub prompt: String,
    /// Overrides the keyword classifier when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<IntentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<VectorSource>,
    #[serde(default)]
    pub primitives: Vec<PrimitiveSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub trajectory: String,
    pub summary: String,
    pub snapshots: String,
    /// 0 disables snapshots.
    pub snapshot_stride: usize,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            trajectory: "trajectory.csv".into(),
            summary: "summary.json".into(),
            snapshots: "snapshots.bin".into(),
            snapshot_stride: 0,
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: BackboneSection,
    pub rewards: RewardsSection,
    #[serde(default)]
    pub policy: PolicySection,
    pub sampler: SamplerSection,
    pub task: TaskSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    EPS_NORM
}
fn default_lambda_kl() -> f64 {
    1.5
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Linear
}
fn default_mode() -> ModeSpec {
    ModeSpec::Annealed
}

/// The shipped editing demo.
pub fn default_config() -> RunConfig {
    RunConfig::from_toml_str(DEFAULT_CONFIG_TOML, "<default>").expect("shipped default config parses")
}

/// Sets `key` (dotted path) in `doc`. `raw` is parsed as a TOML value and
/// falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::config(s, "expected key=value"))
}

/// A built run: backbone, controller template and sampler settings.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub backbone: Backbone,
    pub guidance: MultiRewardGuidance,
    pub sampler: SamplerConfig,
    pub step_rule: StepSizeParams,
    pub source: Source,
    pub intent: IntentMixture,
}

impl Prepared {
    /// One independent run; the controller state starts fresh each call.
    pub fn run(&self, seed: u64) -> Result<RunOutput> {
        let cfg = SamplerConfig { seed, ..self.sampler };
        let sampler = Sampler::new(&self.backbone, cfg, self.step_rule)?;
        let mut guidance = self.guidance.clone();
        sampler.run(&self.source, &mut guidance)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(origin, e.to_string().trim_end().to_string()))
    }

    /// Parses `text`, applies `key=value` overrides, then deserializes.
    pub fn from_toml_with_overrides(text: &str, origin: &str, overrides: &[(String, String)]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::from_toml_str(text, origin);
        }
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::config(origin, e.to_string().trim_end().to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(origin, format!("after overrides: {}", e.to_string().trim_end())))
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_with_overrides(&text, &path.display().to_string(), overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with every optional value filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let budget = StepSizeParams::for_budget(c.sampler.t_max, c.sampler.steps);
        c.policy.eta_min.get_or_insert(budget.eta_min);
        c.policy.eta_max.get_or_insert(budget.eta_max);
        if c.task.intent.is_none() {
            let pi = classify_intent(&c.task.prompt, &c.policy.lexicon);
            c.task.intent = Some(IntentSpec {
                add: pi.add,
                remove: pi.remove,
                style: pi.style,
            });
        }
        c
    }

    pub fn step_rule(&self) -> StepSizeParams {
        let budget = StepSizeParams::for_budget(self.sampler.t_max, self.sampler.steps);
        StepSizeParams {
            eta_min: self.policy.eta_min.unwrap_or(budget.eta_min),
            eta_max: self.policy.eta_max.unwrap_or(budget.eta_max),
            gamma_eta: self.policy.gamma_eta,
            r0: self.policy.r0,
        }
    }

    pub fn intent(&self) -> Result<IntentMixture> {
        match self.task.intent {
            Some(i) => IntentMixture::new(i.add, i.remove, i.style).map_err(|e| Error::config("task.intent", e.to_string())),
            None => Ok(classify_intent(&self.task.prompt, &self.policy.lexicon)),
        }
    }

    fn build_backbone(&self) -> Result<Backbone> {
        let b = &self.backbone;
        let dim = b.prior.first().map_or(0, |c| c.mean.len());
        let mut comps = Vec::with_capacity(b.prior.len());
        for (i, c) in b.prior.iter().enumerate() {
            for (name, v) in [("mean", &c.mean), ("variance", &c.variance)] {
                if v.len() != dim {
                    return Err(Error::config(
                        format!("backbone.prior[{i}].{name}"),
                        format!("expected {dim} values, got {}", v.len()),
                    ));
                }
            }
            comps.push(MixtureComponent {
                weight: c.weight,
                mean: Vector::from_vec(c.mean.clone()),
                variance: Vector::from_vec(c.variance.clone()),
            });
        }
        let prior = GaussianMixturePrior::new(comps).map_err(|e| Error::config("backbone.prior", e.to_string()))?;
        let d = &b.decoder;
        let decoder = match d.kind {
            DecoderKind::Identity => Ok(ToyDecoder::identity(dim)),
            DecoderKind::Linear => ToyDecoder::seeded_linear(dim, d.image_dim, d.seed, d.scale),
            DecoderKind::Tanh => {
                if d.hidden_dim == 0 {
                    return Err(Error::config("backbone.decoder.hidden_dim", "must be > 0 for a tanh decoder"));
                }
                ToyDecoder::seeded_tanh(dim, d.hidden_dim, d.image_dim, d.seed, d.scale)
            }
        }
        .map_err(|e| Error::config("backbone.decoder", e.to_string()))?;
        let schedule =
            InterpolationSchedule::new(b.schedule, self.sampler.t_max).map_err(|e| Error::config("sampler.t_max", e.to_string()))?;
        Backbone::new(prior, schedule, decoder).map_err(|e| Error::config("backbone", e.to_string()))
    }

    fn build_suite(&self, image_dim: usize, base: &Path) -> Result<RewardSuite> {
        let r = &self.rewards;
        let (f, p) = (r.feature_dim, image_dim);
        if f == 0 {
            return Err(Error::config("rewards.feature_dim", "must be > 0"));
        }
        let cfg = |path: &'static str| move |e: Error| Error::config(path, e.to_string());
        let mut suite = RewardSuite::default();
        if let Some(s) = &r.glb {
            suite.glb = Some(CosineHead::new(s.encoder.resolve(f, p, "rewards.glb.encoder")?));
        }
        if let Some(s) = &r.per {
            suite.per = Some(CosineHead::new(s.encoder.resolve(f, p, "rewards.per.encoder")?));
        }
        if let Some(s) = &r.rg {
            let regions = RegionMap::from_sizes(&s.regions).map_err(cfg("rewards.rg.regions"))?;
            if regions.image_dim() != p {
                return Err(Error::config(
                    "rewards.rg.regions",
                    format!("region sizes sum to {}, image dim is {p}", regions.image_dim()),
                ));
            }
            let enc = s.encoder.resolve(f, p, "rewards.rg.encoder")?;
            suite.rg = Some(RegionHead::new(enc, regions, s.temperature).map_err(cfg("rewards.rg"))?);
        }
        if let Some(s) = &r.oc {
            let enc = s.encoder.resolve(f, p, "rewards.oc.encoder")?;
            suite.oc = Some(ObjectHead::new(enc, s.temperature, s.leakage).map_err(cfg("rewards.oc"))?);
        }
        if let Some(s) = &r.hps {
            let anchor = s.anchor.resolve(p, "rewards.hps.anchor", base)?;
            suite.hps = Some(PreferenceHead::new(anchor, s.scale, s.norm_gain, s.norm_offset).map_err(cfg("rewards.hps"))?);
        }
        if let Some(s) = &r.vqa {
            let maps = (0..s.answer.len())
                .map(|t| seeded_matrix(s.vocab_size, p, s.logits.seed.wrapping_add(t as u64), s.logits.scale))
                .collect();
            let biases = vec![Vector::zeros(s.vocab_size); s.answer.len()];
            suite.vqa = Some(
                VqaAnswerSpec::new(s.answer.clone(), s.vocab_size, maps, biases, s.margin, s.margin_weight)
                    .map_err(cfg("rewards.vqa"))?,
            );
        }
        Ok(suite)
    }

    fn build_primitives(&self, image_dim: usize, base: &Path) -> Result<Vec<SemanticPrimitive>> {
        let mut out = Vec::new();
        for (i, sp) in self.task.primitives.iter().enumerate() {
            let target = sp.target.resolve(self.rewards.feature_dim, &format!("task.primitives[{i}].target"), base)?;
            let mut masks = Vec::new();
            for (j, m) in sp.masks.iter().enumerate() {
                masks.push(SoftMask {
                    weights: m.weights.resolve(image_dim, &format!("task.primitives[{i}].masks[{j}].weights"), base)?,
                    confidence: m.confidence,
                });
            }
            out.push(
                SemanticPrimitive::new(sp.id.clone(), sp.text.clone(), target, masks)
                    .map_err(|e| Error::config(format!("task.primitives[{i}]"), e.to_string()))?,
            );
        }
        Ok(out)
    }

    fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let mode = match (s.mode, s.fixed_t) {
            (ModeSpec::Annealed, _) => TimeMode::Annealed,
            (ModeSpec::FixedTime, Some(t)) => TimeMode::FixedTime(t),
            (ModeSpec::FixedTime, None) => return Err(Error::config("sampler.fixed_t", "required in fixed_time mode")),
        };
        Ok(SamplerConfig {
            steps: s.steps,
            t_max: s.t_max,
            lambda_r: s.lambda_r,
            lambda_kl: s.lambda_kl,
            gamma_min: s.gamma_min,
            gamma_max: s.gamma_max,
            rho: s.rho,
            mode,
            seed: s.seed,
            snapshot_stride: self.output.snapshot_stride,
        })
    }

    /// Validates every cross-reference and builds the run. `base` resolves
    /// relative file paths.
    pub fn build(&self, base: &Path) -> Result<Prepared> {
        let backbone = self.build_backbone()?;
        let p = backbone.image_dim();
        let suite = self.build_suite(p, base)?;
        let primitives = self.build_primitives(p, base)?;
        let intent = self.intent()?;
        let step_rule = self.step_rule();
        let pol = &self.policy;
        let params = PolicyParams {
            beta: pol.beta,
            beta_sp: pol.beta_sp,
            kappa_fb: pol.kappa_fb,
            kappa_sch: pol.kappa_sch,
            step: step_rule,
            modes: pol.schedule_modes.into(),
        };
        let profiles = BaseProfiles {
            add: pol.profiles.add.into(),
            remove: pol.profiles.remove.into(),
            style: pol.profiles.style.into(),
        };
        let standardization = Standardization {
            eps: self.rewards.eps_norm,
            sigma_floor: self.rewards.sigma_floor,
        };
        let guidance = MultiRewardGuidance::new(suite, primitives, intent, profiles, params, self.sampler.t_max, standardization)
            .map_err(|e| Error::config("rewards", e.to_string()))?;
        let sampler = self.sampler_config()?;
        sampler
            .validate(&step_rule)
            .map_err(|e| match e {
                Error::Invalid { what, reason } if !what.contains(' ') => Error::config(format!("sampler.{what}"), reason),
                other => Error::config("sampler", other.to_string()),
            })?;
        let source = match (self.task.kind, &self.task.z0) {
            (TaskKind::Editing, Some(z0)) => Source::Editing(z0.resolve(backbone.latent_dim(), "task.z0", base)?),
            (TaskKind::Editing, None) => return Err(Error::config("task.z0", "editing tasks need a source latent")),
            (TaskKind::Generation, _) => Source::Generation,
        };
        Ok(Prepared {
            backbone,
            guidance,
            sampler,
            step_rule,
            source,
            intent,
        })
    }
}
