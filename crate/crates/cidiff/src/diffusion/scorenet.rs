//! The conditional ε-prediction network and the interface it shares with
//! closed-form oracles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numkit::{
    load_checkpoint, save_checkpoint, AdamState, Checkpoint, DenseNet, Prng,
};
use crate::world::ConditionVector;
use crate::Matrix;

use super::{
    eps_to_score, time_features, ConditionEncoding, DiffusionError, NoiseSchedule,
    TIME_FEATURE_WIDTH,
};

/// Anything that predicts the noise component of a noised batch given
/// per-row conditions: the trained network, or a closed-form oracle standing
/// in for a perfectly-converged one. Everything downstream — samplers,
/// classifiers, metrics — goes through this interface, so model and oracle
/// are interchangeable.
pub trait EpsModel {
    fn data_dim(&self) -> usize;

    /// Predicted ε for each row of `x_t` at shared time step `t`, row `i`
    /// conditioned on `conds[i]`.
    fn predict_eps(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError>;
}

/// Dense ε-prediction network over `[x_t ‖ time features ‖ condition
/// encoding]`. Pure at inference: identical inputs give identical outputs.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    net: DenseNet,
    encoding: ConditionEncoding,
    t_max: usize,
    data_dim: usize,
}

/// Checkpoint metadata that reconstructs the input layout.
#[derive(Debug, Serialize, Deserialize)]
struct ScoreNetMeta {
    data_dim: usize,
    t_max: usize,
    block_widths: Vec<usize>,
}

impl ScoreNet {
    /// Fresh network with Xavier-initialized hidden layers and a zeroed
    /// output layer, so the initial prediction is ε̂ ≡ 0.
    pub fn new(
        data_dim: usize,
        hidden: &[usize],
        encoding: ConditionEncoding,
        t_max: usize,
        rng: &mut Prng,
    ) -> Result<ScoreNet, DiffusionError> {
        if t_max == 0 {
            return Err(DiffusionError::Schedule("t_max must be at least 1".into()));
        }
        let in_width = data_dim + TIME_FEATURE_WIDTH + encoding.width();
        let mut sizes = vec![in_width];
        sizes.extend_from_slice(hidden);
        sizes.push(data_dim);
        let mut net = DenseNet::random(&sizes, rng)?;
        net.zero_output_layer();
        Ok(ScoreNet {
            net,
            encoding,
            t_max,
            data_dim,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn encoding(&self) -> &ConditionEncoding {
        &self.encoding
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    /// Builds the network input `[x_t ‖ time ‖ cond]` for a batch.
    pub fn assemble_input(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError> {
        if x_t.ncols() != self.data_dim {
            return Err(crate::numkit::NumError::Shape {
                context: "score-net input".into(),
                expected: format!("{} data columns", self.data_dim),
                got: format!("{}", x_t.ncols()),
            }
            .into());
        }
        if conds.len() != x_t.nrows() {
            return Err(crate::numkit::NumError::Shape {
                context: "score-net conditions".into(),
                expected: format!("{} rows", x_t.nrows()),
                got: format!("{}", conds.len()),
            }
            .into());
        }
        if t > self.t_max {
            return Err(DiffusionError::TimeOutOfRange {
                t,
                t_max: self.t_max,
            });
        }
        let tf = time_features(t, self.t_max);
        let width = self.data_dim + TIME_FEATURE_WIDTH + self.encoding.width();
        let mut input = Matrix::zeros((x_t.nrows(), width));
        for (row, cond) in conds.iter().enumerate() {
            let enc = self.encoding.encode(cond)?;
            for c in 0..self.data_dim {
                input[(row, c)] = x_t[(row, c)];
            }
            for (c, &v) in tf.iter().enumerate() {
                input[(row, self.data_dim + c)] = v;
            }
            for (c, &v) in enc.iter().enumerate() {
                input[(row, self.data_dim + TIME_FEATURE_WIDTH + c)] = v;
            }
        }
        Ok(input)
    }

    /// Forward pass that also returns the trace needed for gradients.
    pub fn predict_eps_traced(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
    ) -> Result<(Matrix, crate::numkit::ForwardTrace), DiffusionError> {
        let input = self.assemble_input(x_t, t, conds)?;
        Ok(self.net.forward_traced(&input)?)
    }

    /// [`Self::assemble_input`] with an independent time step per row, so a
    /// whole training batch with mixed `t` runs as one forward pass.
    pub fn assemble_input_rows(
        &self,
        x_t: &Matrix,
        ts: &[usize],
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError> {
        if ts.len() != x_t.nrows() {
            return Err(crate::numkit::NumError::Shape {
                context: "score-net per-row time steps".into(),
                expected: format!("{} rows", x_t.nrows()),
                got: format!("{}", ts.len()),
            }
            .into());
        }
        if let Some(&bad) = ts.iter().find(|&&t| t > self.t_max) {
            return Err(DiffusionError::TimeOutOfRange {
                t: bad,
                t_max: self.t_max,
            });
        }
        // Delegate layout to the scalar-t assembler, then overwrite the time
        // block row by row.
        let mut input = self.assemble_input(x_t, 0, conds)?;
        for (row, &t) in ts.iter().enumerate() {
            for (c, v) in time_features(t, self.t_max).into_iter().enumerate() {
                input[(row, self.data_dim + c)] = v;
            }
        }
        Ok(input)
    }

    /// Batched prediction with per-row time steps.
    pub fn predict_eps_rows(
        &self,
        x_t: &Matrix,
        ts: &[usize],
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError> {
        let input = self.assemble_input_rows(x_t, ts, conds)?;
        Ok(self.net.forward(&input)?)
    }

    /// [`Self::predict_eps_rows`] with the gradient trace.
    pub fn predict_eps_rows_traced(
        &self,
        x_t: &Matrix,
        ts: &[usize],
        conds: &[ConditionVector],
    ) -> Result<(Matrix, crate::numkit::ForwardTrace), DiffusionError> {
        let input = self.assemble_input_rows(x_t, ts, conds)?;
        Ok(self.net.forward_traced(&input)?)
    }

    /// Score of the modeled t-noised conditional: `-ε̂/√(1-ᾱ_t)`.
    pub fn score(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
        schedule: &NoiseSchedule,
    ) -> Result<Matrix, DiffusionError> {
        let eps = self.predict_eps(x_t, t, conds)?;
        eps_to_score(&eps, t, schedule)
    }

    /// Writes the network (and optionally optimizer state) to a versioned
    /// checkpoint tagged with the run configuration hash.
    pub fn save(
        &self,
        path: &Path,
        config_hash: [u8; 32],
        optimizer: Option<&AdamState>,
    ) -> Result<(), DiffusionError> {
        let meta = toml::to_string(&ScoreNetMeta {
            data_dim: self.data_dim,
            t_max: self.t_max,
            block_widths: self.encoding.block_widths().to_vec(),
        })
        .map_err(|e| DiffusionError::ModelIo(e.to_string()))?;
        let ckpt = Checkpoint {
            config_hash,
            meta: meta.into_bytes(),
            net: self.net.clone(),
            optimizer: optimizer.cloned(),
        };
        save_checkpoint(path, &ckpt).map_err(|e| DiffusionError::ModelIo(e.to_string()))
    }

    /// Loads a checkpoint, reconstructing the input layout from its metadata
    /// and validating it against the stored network shape.
    pub fn load(
        path: &Path,
    ) -> Result<(ScoreNet, [u8; 32], Option<AdamState>), DiffusionError> {
        let ckpt = load_checkpoint(path).map_err(|e| DiffusionError::ModelIo(e.to_string()))?;
        let meta: ScoreNetMeta = toml::from_str(
            std::str::from_utf8(&ckpt.meta)
                .map_err(|e| DiffusionError::ModelIo(format!("meta not utf-8: {e}")))?,
        )
        .map_err(|e| DiffusionError::ModelIo(format!("bad meta: {e}")))?;
        let encoding = ConditionEncoding::from_block_widths(meta.block_widths)?;
        let expect_in = meta.data_dim + TIME_FEATURE_WIDTH + encoding.width();
        if ckpt.net.input_dim() != expect_in || ckpt.net.output_dim() != meta.data_dim {
            return Err(DiffusionError::ModelIo(format!(
                "checkpoint net is {}→{}, metadata implies {}→{}",
                ckpt.net.input_dim(),
                ckpt.net.output_dim(),
                expect_in,
                meta.data_dim
            )));
        }
        if meta.t_max == 0 {
            return Err(DiffusionError::ModelIo("metadata t_max is zero".into()));
        }
        Ok((
            ScoreNet {
                net: ckpt.net,
                encoding,
                t_max: meta.t_max,
                data_dim: meta.data_dim,
            },
            ckpt.config_hash,
            ckpt.optimizer,
        ))
    }
}

impl EpsModel for ScoreNet {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict_eps(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError> {
        let input = self.assemble_input(x_t, t, conds)?;
        Ok(self.net.forward(&input)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::AttributeSpace;

    fn small_net(seed: u64) -> ScoreNet {
        let mut rng = Prng::seed(seed);
        let enc = ConditionEncoding::for_space(&AttributeSpace::binary_pair_orthogonal());
        ScoreNet::new(2, &[8, 8], enc, 100, &mut rng).unwrap()
    }

    #[test]
    fn input_layout_is_data_time_condition() {
        let net = small_net(1);
        let x_t = ndarray::array![[0.25, -0.75]];
        let cond = ConditionVector::from_tuple(&[1, 0]);
        let input = net.assemble_input(&x_t, 30, &[cond.clone()]).unwrap();
        assert_eq!(input.ncols(), 2 + TIME_FEATURE_WIDTH + 6);
        assert_eq!(input[(0, 0)], 0.25);
        assert_eq!(input[(0, 1)], -0.75);
        let tf = time_features(30, 100);
        for (i, &v) in tf.iter().enumerate() {
            assert_eq!(input[(0, 2 + i)], v);
        }
        let enc = net.encoding().encode(&cond).unwrap();
        for (i, &v) in enc.iter().enumerate() {
            assert_eq!(input[(0, 2 + TIME_FEATURE_WIDTH + i)], v);
        }
    }

    #[test]
    fn per_row_times_match_scalar_time_predictions() {
        let mut net = small_net(17);
        let mut rng = Prng::seed(18);
        let delta = rng.normal_matrix(8, 2);
        net.net_mut().layer_weight_mut(2).assign(&delta);
        let x_t = rng.normal_matrix(3, 2);
        let conds = vec![
            ConditionVector::from_tuple(&[0, 1]),
            ConditionVector::all_null(2),
            ConditionVector::single(2, 0, 1),
        ];
        let ts = [5usize, 80, 33];
        let rows = net.predict_eps_rows(&x_t, &ts, &conds).unwrap();
        for (row, &t) in ts.iter().enumerate() {
            let x_row = x_t.row(row).insert_axis(ndarray::Axis(0)).to_owned();
            let single = net
                .predict_eps(&x_row, t, &[conds[row].clone()])
                .unwrap();
            for col in 0..2 {
                assert_eq!(rows[(row, col)], single[(0, col)]);
            }
        }
        assert!(net.predict_eps_rows(&x_t, &[5, 80], &conds).is_err());
        assert!(net.predict_eps_rows(&x_t, &[5, 80, 101], &conds).is_err());
    }

    #[test]
    fn fresh_network_predicts_zero_noise() {
        let net = small_net(2);
        let mut rng = Prng::seed(9);
        let x_t = rng.normal_matrix(5, 2);
        let conds = vec![ConditionVector::all_null(2); 5];
        let eps = net.predict_eps(&x_t, 50, &conds).unwrap();
        assert!(eps.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_is_a_pure_function() {
        let mut net = small_net(3);
        // Perturb away from the zeroed output layer so the test is not
        // trivially comparing zeros.
        let mut rng = Prng::seed(4);
        let delta = rng.normal_matrix(8, 2);
        net.net_mut().layer_weight_mut(2).assign(&delta);
        let x_t = rng.normal_matrix(4, 2);
        let conds = vec![
            ConditionVector::from_tuple(&[0, 0]),
            ConditionVector::from_tuple(&[0, 1]),
            ConditionVector::single(2, 0, 1),
            ConditionVector::all_null(2),
        ];
        let a = net.predict_eps(&x_t, 17, &conds).unwrap();
        let b = net.predict_eps(&x_t, 17, &conds).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn different_conditions_change_the_prediction() {
        let mut net = small_net(5);
        let mut rng = Prng::seed(6);
        let delta = rng.normal_matrix(8, 2);
        net.net_mut().layer_weight_mut(2).assign(&delta);
        let x_t = Matrix::zeros((1, 2));
        let a = net
            .predict_eps(&x_t, 10, &[ConditionVector::from_tuple(&[0, 0])])
            .unwrap();
        let b = net
            .predict_eps(&x_t, 10, &[ConditionVector::all_null(2)])
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shape_and_time_violations_are_errors() {
        let net = small_net(7);
        let x_t = Matrix::zeros((2, 2));
        let conds = vec![ConditionVector::all_null(2); 2];
        assert!(net.predict_eps(&Matrix::zeros((2, 3)), 10, &conds).is_err());
        assert!(net
            .predict_eps(&x_t, 10, &conds[..1].to_vec())
            .is_err());
        assert!(net.predict_eps(&x_t, 101, &conds).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_predictions_bit_exactly() {
        let mut net = small_net(8);
        let mut rng = Prng::seed(11);
        let delta = rng.normal_matrix(8, 2);
        net.net_mut().layer_weight_mut(2).assign(&delta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        net.save(&path, [9u8; 32], None).unwrap();
        let (loaded, hash, opt) = ScoreNet::load(&path).unwrap();
        assert_eq!(hash, [9u8; 32]);
        assert!(opt.is_none());
        assert_eq!(loaded.t_max(), net.t_max());
        let x_t = rng.normal_matrix(6, 2);
        let conds = vec![ConditionVector::single(2, 1, 1); 6];
        let a = net.predict_eps(&x_t, 42, &conds).unwrap();
        let b = loaded.predict_eps(&x_t, 42, &conds).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn inconsistent_checkpoint_metadata_is_rejected() {
        // A checkpoint whose stored net shape disagrees with its metadata
        // must not load.
        let net = small_net(12);
        let meta = toml::to_string(&ScoreNetMeta {
            data_dim: 3, // wrong: the net predicts 2 columns
            t_max: 100,
            block_widths: vec![3, 3],
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        save_checkpoint(
            &path,
            &Checkpoint {
                config_hash: [0u8; 32],
                meta: meta.into_bytes(),
                net: net.net().clone(),
                optimizer: None,
            },
        )
        .unwrap();
        assert!(matches!(
            ScoreNet::load(&path),
            Err(DiffusionError::ModelIo(_))
        ));
    }

    #[test]
    fn works_through_the_trait_object() {
        let net = small_net(13);
        let model: &dyn EpsModel = &net;
        assert_eq!(model.data_dim(), 2);
        let out = model
            .predict_eps(&Matrix::zeros((1, 2)), 1, &[ConditionVector::all_null(2)])
            .unwrap();
        assert_eq!(out.nrows(), 1);
    }
}
