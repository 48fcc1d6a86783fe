//! Input encodings: one-hot condition blocks with a null slot, and the time
//! feature vector.

use crate::world::{AttributeSpace, ConditionVector};

use super::DiffusionError;

/// Width of [`time_features`]: the scalar `t/T` plus 8 sin/cos pairs.
pub const TIME_FEATURE_WIDTH: usize = 17;

/// Time conditioning for the network: `τ = t/T` followed by
/// `sin(2π·2ᵏ·τ), cos(2π·2ᵏ·τ)` for `k = 0..8`. Geometric frequencies let a
/// small dense net resolve both coarse and fine time structure.
pub fn time_features(t: usize, t_max: usize) -> Vec<f64> {
    time_features_unit(t as f64 / t_max as f64)
}

/// The same feature stack for a continuous time fraction `τ ∈ [0, 1]`, as
/// used by continuous-time (flow) models.
pub fn time_features_unit(tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(TIME_FEATURE_WIDTH);
    out.push(tau);
    for k in 0..8 {
        let w = 2.0 * std::f64::consts::PI * (1 << k) as f64;
        out.push((w * tau).sin());
        out.push((w * tau).cos());
    }
    out
}

/// Fixed-width encoding of [`ConditionVector`]s: one block per attribute,
/// each block one-hot over `cardinality + 1` slots where the extra final
/// slot is the null token. The null token gets its own learned embedding
/// direction — "unconditional" is a trained input, not a zero vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionEncoding {
    /// Per-attribute block width (`cardinality + 1`).
    block_widths: Vec<usize>,
}

impl ConditionEncoding {
    pub fn for_space(space: &AttributeSpace) -> ConditionEncoding {
        ConditionEncoding {
            block_widths: (0..space.n_attrs())
                .map(|a| space.cardinality(a) + 1)
                .collect(),
        }
    }

    /// Rebuilds an encoding from stored block widths (checkpoint metadata).
    pub fn from_block_widths(block_widths: Vec<usize>) -> Result<ConditionEncoding, DiffusionError> {
        if block_widths.is_empty() || block_widths.iter().any(|&w| w < 2) {
            return Err(DiffusionError::Encoding(format!(
                "block widths must each cover at least one value plus the null slot, got {block_widths:?}"
            )));
        }
        Ok(ConditionEncoding { block_widths })
    }

    pub fn block_widths(&self) -> &[usize] {
        &self.block_widths
    }

    pub fn n_attrs(&self) -> usize {
        self.block_widths.len()
    }

    /// Total encoded width `Σᵢ (|𝒞ᵢ| + 1)`.
    pub fn width(&self) -> usize {
        self.block_widths.iter().sum()
    }

    /// Encodes one condition: value code `c` lights slot `c` of its block,
    /// a null slot lights the block's final position.
    pub fn encode(&self, cond: &ConditionVector) -> Result<Vec<f64>, DiffusionError> {
        if cond.arity() != self.n_attrs() {
            return Err(DiffusionError::Encoding(format!(
                "condition arity {} does not match {} attribute blocks",
                cond.arity(),
                self.n_attrs()
            )));
        }
        let mut out = vec![0.0; self.width()];
        let mut offset = 0;
        for (slot, &width) in cond.slots().iter().zip(&self.block_widths) {
            let hot = match slot {
                Some(code) => {
                    if *code >= width - 1 {
                        return Err(DiffusionError::Encoding(format!(
                            "value code {code} exceeds block of width {width}"
                        )));
                    }
                    *code
                }
                None => width - 1,
            };
            out[offset + hot] = 1.0;
            offset += width;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_pair_encoding() -> ConditionEncoding {
        ConditionEncoding::for_space(&AttributeSpace::binary_pair_orthogonal())
    }

    #[test]
    fn binary_pair_blocks_are_three_wide() {
        let enc = binary_pair_encoding();
        assert_eq!(enc.block_widths(), &[3, 3]);
        assert_eq!(enc.width(), 6);
    }

    #[test]
    fn value_codes_light_their_slot_and_null_lights_the_last() {
        let enc = binary_pair_encoding();
        let full = enc.encode(&ConditionVector::from_tuple(&[1, 0])).unwrap();
        assert_eq!(full, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let null = enc.encode(&ConditionVector::all_null(2)).unwrap();
        assert_eq!(null, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let half = enc.encode(&ConditionVector::single(2, 0, 0)).unwrap();
        assert_eq!(half, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn exactly_one_hot_entry_per_block() {
        let enc = binary_pair_encoding();
        let conds = [
            ConditionVector::all_null(2),
            ConditionVector::from_tuple(&[0, 1]),
            ConditionVector::single(2, 1, 1),
        ];
        for cond in &conds {
            let v = enc.encode(cond).unwrap();
            assert_eq!(v[..3].iter().sum::<f64>(), 1.0);
            assert_eq!(v[3..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn arity_and_code_mismatches_are_rejected() {
        let enc = binary_pair_encoding();
        assert!(enc.encode(&ConditionVector::all_null(3)).is_err());
        assert!(enc
            .encode(&ConditionVector::from_tuple(&[2, 0]))
            .is_err());
        assert!(ConditionEncoding::from_block_widths(vec![]).is_err());
        assert!(ConditionEncoding::from_block_widths(vec![1]).is_err());
        assert!(ConditionEncoding::from_block_widths(vec![3, 3]).is_ok());
    }

    #[test]
    fn time_features_have_fixed_width_and_bounded_range() {
        for (t, t_max) in [(0, 100), (1, 100), (50, 100), (100, 100), (999, 1000)] {
            let f = time_features(t, t_max);
            assert_eq!(f.len(), TIME_FEATURE_WIDTH);
            assert!(f.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn time_feature_endpoints() {
        let start = time_features(0, 100);
        assert_eq!(start[0], 0.0);
        for k in 0..8 {
            assert_eq!(start[1 + 2 * k], 0.0, "sin at τ=0");
            assert_eq!(start[2 + 2 * k], 1.0, "cos at τ=0");
        }
        let end = time_features(100, 100);
        assert_eq!(end[0], 1.0);
        for k in 0..8 {
            // τ=1 winds each frequency an integer number of turns.
            assert!(end[1 + 2 * k].abs() < 1e-12);
            assert!((end[2 + 2 * k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_times_get_distinct_features() {
        let a = time_features(10, 1000);
        let b = time_features(11, 1000);
        assert_ne!(a, b);
    }
}
