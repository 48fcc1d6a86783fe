//! The discrete noise schedule ᾱ₀..ᾱ_T.

use std::f64::consts::PI;

use super::DiffusionError;

const DEFAULT_OFFSET: f64 = 0.008;
const DEFAULT_FLOOR: f64 = 1e-5;

/// Cumulative signal levels `ᾱ_t` for `t = 0..=T`: `ᾱ₀ = 1`, strictly
/// decreasing, all in `(0, 1]`. The forward process keeps `√ᾱ_t` of the
/// signal and mixes in `√(1-ᾱ_t)` of fresh noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Validates and wraps an explicit ᾱ sequence (`alpha_bar[t]` for
    /// `t = 0..=T`).
    pub fn from_values(alpha_bar: Vec<f64>) -> Result<NoiseSchedule, DiffusionError> {
        if alpha_bar.len() < 2 {
            return Err(DiffusionError::Schedule(
                "need at least ᾱ₀ and ᾱ₁ (T ≥ 1)".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(DiffusionError::Schedule(format!(
                "ᾱ₀ must be 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, pair) in alpha_bar.windows(2).enumerate() {
            if !(pair[1] > 0.0 && pair[1] <= 1.0) || !pair[1].is_finite() {
                return Err(DiffusionError::Schedule(format!(
                    "ᾱ_{} = {} outside (0, 1]",
                    t + 1,
                    pair[1]
                )));
            }
            if pair[1] >= pair[0] {
                return Err(DiffusionError::Schedule(format!(
                    "ᾱ must strictly decrease; ᾱ_{} = {} ≥ ᾱ_{} = {}",
                    t + 1,
                    pair[1],
                    t,
                    pair[0]
                )));
            }
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    /// Number of noising steps T.
    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    /// `ᾱ_t`, erroring outside `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(DiffusionError::TimeOutOfRange {
                t,
                t_max: self.t_max(),
            })
    }

    /// All values, for plotting and serialization.
    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// Cosine schedule with the standard offset 0.008 and floor 1e-5.
pub fn cosine_alpha_bar(t_steps: usize) -> Result<NoiseSchedule, DiffusionError> {
    cosine_alpha_bar_with(t_steps, DEFAULT_OFFSET, DEFAULT_FLOOR)
}

/// Cosine schedule
///
/// ```text
/// ᾱ_t = clamp( cos²(((t/T + s)/(1 + s))·π/2) / cos²((s/(1 + s))·π/2), floor, 1 )
/// ```
///
/// The raw curve reaches zero at `t = T`; the clamp floor keeps every level
/// strictly positive. Clamping can tie consecutive tail values at the floor,
/// so a forward pass nudges any tied value just below its predecessor to
/// restore strict decrease.
pub fn cosine_alpha_bar_with(
    t_steps: usize,
    offset: f64,
    floor: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if t_steps == 0 {
        return Err(DiffusionError::Schedule("T must be at least 1".into()));
    }
    if !(offset > 0.0) || !(floor > 0.0 && floor < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "need offset > 0 and floor in (0, 1), got offset {offset}, floor {floor}"
        )));
    }
    let denom = ((offset / (1.0 + offset)) * PI / 2.0).cos().powi(2);
    let mut alpha_bar = Vec::with_capacity(t_steps + 1);
    for t in 0..=t_steps {
        let frac = (t as f64 / t_steps as f64 + offset) / (1.0 + offset);
        let raw = (frac * PI / 2.0).cos().powi(2) / denom;
        alpha_bar.push(raw.clamp(floor, 1.0));
    }
    alpha_bar[0] = 1.0;
    for t in 1..=t_steps {
        if alpha_bar[t] >= alpha_bar[t - 1] {
            alpha_bar[t] = alpha_bar[t - 1] * 0.999;
        }
    }
    NoiseSchedule::from_values(alpha_bar)
}
