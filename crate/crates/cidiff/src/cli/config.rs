//! Run configuration: a strict, human-editable description of one paired
//! experiment, with a canonical serialized form whose hash names the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::ImplicitClassifierConfig;
use crate::training::CiWeighting;
use crate::world::{AttributeSpace, GaussianWorld};

use super::CliError;

/// Which attribute tuples the training distribution covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    /// Every tuple of the attribute space.
    Full,
    /// Every tuple except the lexicographically last one (all attributes at
    /// their highest code) — the minimal compositional hold-out: each
    /// individual value still appears, one combination never does.
    Orthogonal,
    /// Exactly the tuples listed in `custom_support`.
    Custom,
}

/// The data-generating process and its training support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    /// Observation noise of every mixture component.
    pub sigma: f64,
    /// `attribute_means[attr][value]` is that value's additive mean
    /// contribution in ℝᵈ.
    pub attribute_means: Vec<Vec<Vec<f64>>>,
    /// Display labels, same shape as the outer two levels of the means.
    pub value_labels: Vec<Vec<String>>,
    pub support: SupportMode,
    /// Training tuples when `support = "custom"`; must be empty otherwise.
    pub custom_support: Vec<Vec<usize>>,
}

impl Default for WorldSpec {
    fn default() -> WorldSpec {
        WorldSpec {
            sigma: 0.3,
            attribute_means: vec![
                vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.0, -1.0], vec![0.0, 1.0]],
            ],
            value_labels: vec![
                vec!["-1".into(), "+1".into()],
                vec!["-1".into(), "+1".into()],
            ],
            support: SupportMode::Orthogonal,
            custom_support: Vec::new(),
        }
    }
}

impl WorldSpec {
    /// Materializes the spec: the Gaussian world, the training-support
    /// space, and the full-support space over the same attributes.
    pub fn build(&self) -> Result<(GaussianWorld, AttributeSpace, AttributeSpace), CliError> {
        let world = GaussianWorld::new(self.attribute_means.clone(), self.sigma)
            .map_err(|e| CliError::Config(format!("world: {e}")))?;
        if self.value_labels.len() != self.attribute_means.len() {
            return Err(CliError::Config(format!(
                "value_labels lists {} attributes, attribute_means lists {}",
                self.value_labels.len(),
                self.attribute_means.len()
            )));
        }
        for (i, (labels, means)) in self
            .value_labels
            .iter()
            .zip(&self.attribute_means)
            .enumerate()
        {
            if labels.len() != means.len() {
                return Err(CliError::Config(format!(
                    "attribute {i} has {} labels but {} means",
                    labels.len(),
                    means.len()
                )));
            }
        }
        let full_tuples = cartesian(&self.value_labels);
        let full_space = AttributeSpace::new(self.value_labels.clone(), full_tuples.clone())
            .map_err(|e| CliError::Config(format!("attribute space: {e}")))?;
        let train_tuples = match self.support {
            SupportMode::Full => {
                if !self.custom_support.is_empty() {
                    return Err(CliError::Config(
                        "custom_support must be empty unless support = \"custom\"".into(),
                    ));
                }
                full_tuples
            }
            SupportMode::Orthogonal => {
                if !self.custom_support.is_empty() {
                    return Err(CliError::Config(
                        "custom_support must be empty unless support = \"custom\"".into(),
                    ));
                }
                let mut tuples = full_tuples;
                tuples.pop();
                if tuples.is_empty() {
                    return Err(CliError::Config(
                        "orthogonal support needs more than one tuple".into(),
                    ));
                }
                tuples
            }
            SupportMode::Custom => {
                if self.custom_support.is_empty() {
                    return Err(CliError::Config(
                        "support = \"custom\" needs a non-empty custom_support".into(),
                    ));
                }
                self.custom_support.clone()
            }
        };
        let train_space = AttributeSpace::new(self.value_labels.clone(), train_tuples)
            .map_err(|e| CliError::Config(format!("training support: {e}")))?;
        Ok((world, train_space, full_space))
    }
}

fn cartesian(value_labels: &[Vec<String>]) -> Vec<Vec<usize>> {
    let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for labels in value_labels {
        tuples = tuples
            .into_iter()
            .flat_map(|prefix| {
                (0..labels.len()).map(move |code| {
                    let mut t = prefix.clone();
                    t.push(code);
                    t
                })
            })
            .collect();
    }
    tuples
}

/// The ε-prediction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    /// Diffusion horizon of the cosine schedule.
    pub t_max: usize,
}

impl Default for ModelSpec {
    fn default() -> ModelSpec {
        ModelSpec {
            hidden: vec![64, 64],
            t_max: 1000,
        }
    }
}

/// Both training arms. `lambda` applies to the regularized arm only; the
/// baseline arm always runs with `lambda = 0` under the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSpec {
    pub n_train: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub p_uncond: f64,
    pub ci_weighting: CiWeighting,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainerSpec {
    fn default() -> TrainerSpec {
        TrainerSpec {
            n_train: 20_000,
            steps: 20_000,
            batch_size: 256,
            lr: 1e-3,
            lambda: 100.0,
            p_uncond: 0.3,
            ci_weighting: CiWeighting::Unweighted,
            seed: 0,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    /// Deterministic denoising from the diffusion prior.
    Ddim,
    /// Overdamped Langevin dynamics on the learned data-level score.
    Langevin,
}

/// How synthetic clouds are drawn from a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub method: SampleMethod,
    /// Guidance strength for composed conditions.
    pub gamma: f64,
    /// Denoising steps (ddim) or chain steps (langevin).
    pub steps: usize,
    /// Clamp for the intermediate clean-point estimate during denoising;
    /// set it to the half-width of the box the data occupies. Off by
    /// default.
    pub clip: Option<f64>,
    /// Sample held-out tuples by AND-composing their single-attribute
    /// conditionals (weighted by `gamma`) instead of conditioning on the
    /// never-trained joint embedding directly.
    pub compose_unseen: bool,
}

impl Default for SamplerSpec {
    fn default() -> SamplerSpec {
        SamplerSpec {
            method: SampleMethod::Ddim,
            gamma: 0.46,
            steps: 250,
            clip: None,
            compose_unseen: false,
        }
    }
}

/// Sample counts and implicit-classifier settings for the metric pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    /// Synthetic samples drawn per arm, split evenly over all tuples.
    pub synthetic_samples: usize,
    /// True-distribution points the independence violation is averaged over.
    pub jsd_eval_samples: usize,
    /// Real samples used to fit the per-attribute conformity predictors.
    pub predictor_samples: usize,
    /// Real full-support test points for the classifier metrics.
    pub test_samples: usize,
    pub n_timesteps: usize,
    pub eps_per_timestep: usize,
    /// Inclusive time range for the implicit classifier; omitted = the
    /// middle band of the horizon.
    pub t_range: Option<(usize, usize)>,
}

impl Default for EvaluationSpec {
    fn default() -> EvaluationSpec {
        EvaluationSpec {
            synthetic_samples: 20_000,
            jsd_eval_samples: 512,
            predictor_samples: 4000,
            test_samples: 4000,
            n_timesteps: 5,
            eps_per_timestep: 8,
            t_range: None,
        }
    }
}

impl EvaluationSpec {
    /// The implicit-classifier configuration this spec describes at horizon
    /// `t_max`.
    pub fn classifier_config(&self, t_max: usize) -> ImplicitClassifierConfig {
        let base = ImplicitClassifierConfig::for_horizon(t_max);
        ImplicitClassifierConfig {
            n_timesteps: self.n_timesteps,
            t_range: self.t_range.unwrap_or(base.t_range),
            eps_per_timestep: self.eps_per_timestep,
        }
    }
}

/// Everything one paired run needs. Serializes with a stable field order,
/// so the hash of [`RunConfig::canonical_toml`] identifies the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub world: WorldSpec,
    pub model: ModelSpec,
    pub trainer: TrainerSpec,
    pub sampler: SamplerSpec,
    pub evaluation: EvaluationSpec,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            world: WorldSpec::default(),
            model: ModelSpec::default(),
            trainer: TrainerSpec::default(),
            sampler: SamplerSpec::default(),
            evaluation: EvaluationSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Unknown keys and malformed
    /// values surface with the parser's line/key diagnostics.
    pub fn from_path(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parses and validates a config from its serialized form.
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The stable serialized form the run hash is computed over.
    pub fn canonical_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("serialize config: {e}")))
    }

    /// SHA-256 of the canonical form.
    pub fn hash(&self) -> Result<[u8; 32], CliError> {
        Ok(Sha256::digest(self.canonical_toml()?.as_bytes()).into())
    }

    /// Structural validation beyond what parsing enforces. Building the
    /// world additionally checks mean shapes and support tuples.
    pub fn validate(&self) -> Result<(), CliError> {
        self.world.build()?;
        let positive_counts = [
            ("trainer.n_train", self.trainer.n_train),
            ("trainer.steps", self.trainer.steps),
            ("trainer.batch_size", self.trainer.batch_size),
            ("trainer.log_every", self.trainer.log_every),
            ("model.t_max", self.model.t_max),
            ("sampler.steps", self.sampler.steps),
            ("evaluation.synthetic_samples", self.evaluation.synthetic_samples),
            ("evaluation.jsd_eval_samples", self.evaluation.jsd_eval_samples),
            ("evaluation.predictor_samples", self.evaluation.predictor_samples),
            ("evaluation.test_samples", self.evaluation.test_samples),
            ("evaluation.n_timesteps", self.evaluation.n_timesteps),
            ("evaluation.eps_per_timestep", self.evaluation.eps_per_timestep),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.trainer.lr > 0.0) || !self.trainer.lr.is_finite() {
            return Err(CliError::Config(format!(
                "trainer.lr must be positive and finite, got {}",
                self.trainer.lr
            )));
        }
        if self.trainer.lambda < 0.0 || !self.trainer.lambda.is_finite() {
            return Err(CliError::Config(format!(
                "trainer.lambda must be non-negative and finite, got {}",
                self.trainer.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.trainer.p_uncond) {
            return Err(CliError::Config(format!(
                "trainer.p_uncond must lie in [0, 1), got {}",
                self.trainer.p_uncond
            )));
        }
        if !(self.sampler.gamma > 0.0) || !self.sampler.gamma.is_finite() {
            return Err(CliError::Config(format!(
                "sampler.gamma must be positive and finite, got {}",
                self.sampler.gamma
            )));
        }
        if self.sampler.method == SampleMethod::Ddim && self.sampler.steps > self.model.t_max {
            return Err(CliError::Config(format!(
                "sampler.steps ({}) cannot exceed model.t_max ({})",
                self.sampler.steps, self.model.t_max
            )));
        }
        if let Some(clip) = self.sampler.clip {
            if !(clip > 0.0) || !clip.is_finite() {
                return Err(CliError::Config(format!(
                    "sampler.clip must be positive and finite, got {clip}"
                )));
            }
        }
        if let Some((lo, hi)) = self.evaluation.t_range {
            if lo == 0 || lo >= hi || hi > self.model.t_max {
                return Err(CliError::Config(format!(
                    "evaluation.t_range [{lo}, {hi}] must satisfy 1 <= lo < hi <= t_max ({})",
                    self.model.t_max
                )));
            }
        }
        Ok(())
    }
}

/// Lowercase hex of a run hash, as written to `hash.txt`.
pub fn hash_hex(hash: &[u8; 32]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
