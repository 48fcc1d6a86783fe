//! The training loop: stream-separated randomness, Adam updates, loss
//! logging, and periodic checkpoints.
//!
//! Determinism contract: a run is a pure function of `(initial net, dataset,
//! schedule, config, seed)`. Four independent RNG streams are derived from
//! the seed — batch indices, score-term draws, condition masking, and
//! independence-term draws — so switching the independence term on or off
//! (λ = 0 vs λ > 0) leaves the other streams' draws untouched. Two runs
//! differing only in λ therefore see identical batches, noise, and masks,
//! which is what makes paired-seed comparisons sharp. Re-running with the
//! same seed replays a run exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diffusion::{NoiseSchedule, ScoreNet};
use crate::numkit::{AdamConfig, AdamState, Prng};
use crate::world::LabeledDataset;
use crate::Matrix;

use super::loss::{coind_losses, CiWeighting, CoIndLossBreakdown, StepDraws};
use super::TrainError;

/// Stream tags under the run seed.
const STREAM_DATA: u64 = 1;
const STREAM_SCORE: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_CI: u64 = 4;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the independence term; 0 gives a plain
    /// classifier-free-guidance trainer.
    pub lambda: f64,
    /// Per-slot probability of masking a condition to the null token.
    pub p_uncond: f64,
    pub ci_weighting: CiWeighting,
    /// CSV logging cadence in steps (the final step is always logged).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            lr: 1e-3,
            lambda: 0.0,
            p_uncond: 0.3,
            ci_weighting: CiWeighting::Unweighted,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    fn validate(&self, dataset: &LabeledDataset) -> Result<(), TrainError> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(TrainError::Config(format!("bad lambda {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(TrainError::Config(format!(
                "p_uncond must lie in [0, 1), got {}",
                self.p_uncond
            )));
        }
        if self.log_every == 0 {
            return Err(TrainError::Config("log_every must be at least 1".into()));
        }
        if dataset.is_empty() {
            return Err(TrainError::Config("empty dataset".into()));
        }
        Ok(())
    }
}

/// Periodic checkpointing: every `every` steps (0 = only at the end), to
/// `path`, stamped with the run's configuration hash.
#[derive(Debug, Clone)]
pub struct CheckpointSpec {
    pub path: PathBuf,
    pub every: usize,
    pub config_hash: [u8; 32],
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLogRow {
    pub step: usize,
    pub l_score: f64,
    pub l_ci: f64,
    pub total: f64,
}

/// Full per-step loss history plus the last step's breakdown.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LossLogRow>,
    pub final_breakdown: CoIndLossBreakdown,
}

impl TrainReport {
    /// Mean score loss over the last `k` steps (or all, if fewer).
    pub fn tail_mean_score(&self, k: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        tail.iter().map(|r| r.l_score).sum::<f64>() / tail.len() as f64
    }

    /// Mean independence loss over the last `k` steps.
    pub fn tail_mean_ci(&self, k: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        tail.iter().map(|r| r.l_ci).sum::<f64>() / tail.len() as f64
    }

    /// Mean total loss over steps `lo..=hi` (1-based, clamped).
    pub fn window_mean_total(&self, lo: usize, hi: usize) -> f64 {
        let rows: Vec<&LossLogRow> = self
            .rows
            .iter()
            .filter(|r| r.step >= lo && r.step <= hi)
            .collect();
        rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64
    }
}

/// Trains `net` in place. See the module docs for the determinism contract.
pub fn train(
    net: &mut ScoreNet,
    dataset: &LabeledDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
    loss_log: Option<&Path>,
    checkpoint: Option<&CheckpointSpec>,
) -> Result<TrainReport, TrainError> {
    cfg.validate(dataset)?;
    if schedule.t_max() != net.t_max() {
        return Err(TrainError::Config(format!(
            "schedule has T = {}, network expects T = {}",
            schedule.t_max(),
            net.t_max()
        )));
    }
    let root = Prng::seed(seed);
    let mut data_rng = root.derive(STREAM_DATA);
    let mut score_rng = root.derive(STREAM_SCORE);
    let mut mask_rng = root.derive(STREAM_MASK);
    let mut ci_rng = root.derive(STREAM_CI);

    let mut log_file = match loss_log {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path)?);
            writeln!(f, "step,l_score,l_ci,total")?;
            Some(f)
        }
        None => None,
    };

    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut adam = AdamState::for_net(net.net());
    let dim = dataset.dim();
    let with_ci = cfg.lambda > 0.0;
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut final_breakdown = None;

    for step in 1..=cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| data_rng.below(dataset.len()))
            .collect();
        let mut x0 = Matrix::zeros((cfg.batch_size, dim));
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for (row, &i) in idx.iter().enumerate() {
            for col in 0..dim {
                x0[(row, col)] = dataset.xs()[(i, col)];
            }
            labels.push(dataset.labels()[i].clone());
        }
        let draws = StepDraws::draw(
            &labels,
            dim,
            schedule.t_max(),
            cfg.p_uncond,
            with_ci,
            &mut score_rng,
            &mut mask_rng,
            &mut ci_rng,
        )?;
        let (breakdown, grads) = coind_losses(
            net,
            &x0,
            &labels,
            &draws,
            cfg.lambda,
            cfg.ci_weighting,
            schedule,
        )?;
        adam.update(net.net_mut(), &grads, &adam_cfg)?;

        rows.push(LossLogRow {
            step,
            l_score: breakdown.l_score,
            l_ci: breakdown.l_ci,
            total: breakdown.total,
        });
        if let Some(f) = log_file.as_mut() {
            if step % cfg.log_every == 0 || step == cfg.steps {
                let r = rows.last().unwrap();
                writeln!(f, "{},{},{},{}", r.step, r.l_score, r.l_ci, r.total)?;
            }
        }
        if let Some(spec) = checkpoint {
            let due = spec.every > 0 && step % spec.every == 0;
            if due || step == cfg.steps {
                net.save(&spec.path, spec.config_hash, Some(&adam))
                    .map_err(TrainError::Diffusion)?;
            }
        }
        final_breakdown = Some(breakdown);
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    Ok(TrainReport {
        rows,
        final_breakdown: final_breakdown.expect("at least one step ran"),
    })
}

/// λ rule of thumb from a pilot score loss: `λ = pilot × 4000`. Calibrated
/// so the two objective terms end up on comparable footing once the
/// independence residual has shrunk to its typical working range.
pub fn suggest_lambda(pilot_l_score: f64) -> Result<f64, TrainError> {
    if !(pilot_l_score > 0.0) || !pilot_l_score.is_finite() {
        return Err(TrainError::Config(format!(
            "pilot score loss must be positive and finite, got {pilot_l_score}"
        )));
    }
    Ok(pilot_l_score * 4000.0)
}

/// Alternative λ rule: the ratio of the two pilot losses, `L_score / L_ci`,
/// which directly equalizes their magnitudes.
pub fn suggest_lambda_ratio(pilot_l_score: f64, pilot_l_ci: f64) -> Result<f64, TrainError> {
    if !(pilot_l_score > 0.0) || !pilot_l_score.is_finite() {
        return Err(TrainError::Config(format!(
            "pilot score loss must be positive and finite, got {pilot_l_score}"
        )));
    }
    if !(pilot_l_ci > 0.0) || !pilot_l_ci.is_finite() {
        return Err(TrainError::Config(format!(
            "pilot independence loss must be positive and finite, got {pilot_l_ci}"
        )));
    }
    Ok(pilot_l_score / pilot_l_ci)
}
