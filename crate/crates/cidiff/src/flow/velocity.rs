//! Conditional velocity networks and the flow-side independence penalty.

use crate::diffusion::{time_features_unit, ConditionEncoding, TIME_FEATURE_WIDTH};
use crate::numkit::{DenseNet, ForwardTrace, NumError, ParamGrads, Prng};
use crate::training::{branch_conditions, ci_residual_mean_sq};
use crate::world::ConditionVector;
use crate::Matrix;

use super::FlowError;

/// Anything that predicts a conditional velocity field at continuous times:
/// the dense network below, or a hand-built field in a test.
pub trait VelocityModel {
    fn data_dim(&self) -> usize;

    /// Predicted velocity for each row of `x`, row `i` at time `taus[i]`
    /// under condition `conds[i]`.
    fn predict_velocity(
        &self,
        x: &Matrix,
        taus: &[f64],
        conds: &[ConditionVector],
    ) -> Result<Matrix, FlowError>;
}

/// Dense velocity network over `[x ‖ time features ‖ condition encoding]`,
/// the flow-side sibling of the ε-prediction net: same input layout, but
/// time enters as a continuous `t ∈ [0, 1]` rather than a schedule index.
#[derive(Debug, Clone)]
pub struct VelocityNet {
    net: DenseNet,
    encoding: ConditionEncoding,
    data_dim: usize,
}

impl VelocityNet {
    /// Fresh network with Xavier-initialized hidden layers and a zeroed
    /// output layer, so the initial prediction is u ≡ 0.
    pub fn new(
        data_dim: usize,
        hidden: &[usize],
        encoding: ConditionEncoding,
        rng: &mut Prng,
    ) -> Result<VelocityNet, FlowError> {
        let in_width = data_dim + TIME_FEATURE_WIDTH + encoding.width();
        let mut sizes = vec![in_width];
        sizes.extend_from_slice(hidden);
        sizes.push(data_dim);
        let mut net = DenseNet::random(&sizes, rng)?;
        net.zero_output_layer();
        Ok(VelocityNet {
            net,
            encoding,
            data_dim,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    /// Builds the network input `[x ‖ time ‖ cond]` with a per-row time.
    pub fn assemble_input(
        &self,
        x: &Matrix,
        taus: &[f64],
        conds: &[ConditionVector],
    ) -> Result<Matrix, FlowError> {
        if x.ncols() != self.data_dim {
            return Err(NumError::Shape {
                context: "velocity-net input".into(),
                expected: format!("{} data columns", self.data_dim),
                got: format!("{}", x.ncols()),
            }
            .into());
        }
        if taus.len() != x.nrows() || conds.len() != x.nrows() {
            return Err(NumError::Shape {
                context: "velocity-net per-row times/conditions".into(),
                expected: format!("{} rows", x.nrows()),
                got: format!("{} times, {} conditions", taus.len(), conds.len()),
            }
            .into());
        }
        if let Some(&bad) = taus.iter().find(|t| !t.is_finite() || **t < 0.0 || **t > 1.0) {
            return Err(FlowError::Config(format!(
                "velocity-net time must lie in [0, 1], got {bad}"
            )));
        }
        let width = self.data_dim + TIME_FEATURE_WIDTH + self.encoding.width();
        let mut input = Matrix::zeros((x.nrows(), width));
        for (row, (cond, &tau)) in conds.iter().zip(taus).enumerate() {
            let enc = self.encoding.encode(cond)?;
            for c in 0..self.data_dim {
                input[(row, c)] = x[(row, c)];
            }
            for (c, v) in time_features_unit(tau).into_iter().enumerate() {
                input[(row, self.data_dim + c)] = v;
            }
            for (c, &v) in enc.iter().enumerate() {
                input[(row, self.data_dim + TIME_FEATURE_WIDTH + c)] = v;
            }
        }
        Ok(input)
    }

    /// Forward pass that also returns the trace needed for gradients.
    pub fn predict_velocity_traced(
        &self,
        x: &Matrix,
        taus: &[f64],
        conds: &[ConditionVector],
    ) -> Result<(Matrix, ForwardTrace), FlowError> {
        let input = self.assemble_input(x, taus, conds)?;
        Ok(self.net.forward_traced(&input)?)
    }
}

impl VelocityModel for VelocityNet {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict_velocity(
        &self,
        x: &Matrix,
        taus: &[f64],
        conds: &[ConditionVector],
    ) -> Result<Matrix, FlowError> {
        let input = self.assemble_input(x, taus, conds)?;
        Ok(self.net.forward(&input)?)
    }
}

/// Frozen randomness for the flow-side independence term: per-sample
/// continuous times and attribute pairs.
#[derive(Debug, Clone)]
pub struct FlowCiDraws {
    /// Per-sample time in the open interval `(0, 1)`.
    pub t: Vec<f64>,
    /// Distinct attribute indices `(i, j)` per sample.
    pub pairs: Vec<(usize, usize)>,
}

impl FlowCiDraws {
    /// Draws uniform times and distinct attribute pairs for one batch.
    /// Times are clamped away from exactly 0 so every draw stays inside the
    /// interval where the score-velocity link is defined.
    pub fn draw(labels: &[Vec<usize>], rng: &mut Prng) -> Result<FlowCiDraws, FlowError> {
        if labels.is_empty() {
            return Err(FlowError::Config("empty batch".into()));
        }
        let n_attrs = labels[0].len();
        if n_attrs < 2 {
            return Err(FlowError::Config(
                "independence term needs at least two attributes".into(),
            ));
        }
        let batch = labels.len();
        let t: Vec<f64> = (0..batch).map(|_| rng.uniform().max(1e-9)).collect();
        let pairs: Vec<(usize, usize)> = (0..batch)
            .map(|_| {
                let i = rng.below(n_attrs);
                let mut j = rng.below(n_attrs - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect();
        Ok(FlowCiDraws { t, pairs })
    }
}

fn branch_condition_sets(
    labels: &[Vec<usize>],
    pairs: &[(usize, usize)],
) -> (
    Vec<ConditionVector>,
    Vec<ConditionVector>,
    Vec<ConditionVector>,
    Vec<ConditionVector>,
) {
    let batch = labels.len();
    let n_attrs = labels[0].len();
    let mut conds_i = Vec::with_capacity(batch);
    let mut conds_j = Vec::with_capacity(batch);
    let mut conds_joint = Vec::with_capacity(batch);
    for (label, &pair) in labels.iter().zip(pairs) {
        let (c_i, c_j, c_joint) = branch_conditions(label, pair);
        conds_i.push(c_i);
        conds_j.push(c_j);
        conds_joint.push(c_joint);
    }
    let conds_null = vec![ConditionVector::all_null(n_attrs); batch];
    (conds_i, conds_j, conds_joint, conds_null)
}

fn check_ci_inputs(
    data_dim: usize,
    x: &Matrix,
    labels: &[Vec<usize>],
    draws: &FlowCiDraws,
) -> Result<(), FlowError> {
    if labels.is_empty() || labels[0].len() < 2 {
        return Err(FlowError::Config(
            "independence term needs a non-empty batch with at least two attributes".into(),
        ));
    }
    if x.nrows() != labels.len() || draws.t.len() != labels.len() || draws.pairs.len() != labels.len()
    {
        return Err(FlowError::Config(format!(
            "batch size mismatch: {} points, {} labels, {} times, {} pairs",
            x.nrows(),
            labels.len(),
            draws.t.len(),
            draws.pairs.len()
        )));
    }
    if x.ncols() != data_dim {
        return Err(FlowError::Config(format!(
            "points have {} columns but the model expects {}",
            x.ncols(),
            data_dim
        )));
    }
    Ok(())
}

/// Mean over rows of the squared velocity-factorization residual
/// `‖u(c^{i,j}) − u(c^i) − u(c^j) + u(c^∅)‖²`, every branch sharing the
/// sample's point and time. Times are weighted equally — the `b_t²` factor
/// that would translate this into score units is deliberately dropped, so
/// the penalty does not vanish near the source end of the path.
pub fn velocity_ci_loss(
    model: &dyn VelocityModel,
    x: &Matrix,
    labels: &[Vec<usize>],
    draws: &FlowCiDraws,
) -> Result<f64, FlowError> {
    check_ci_inputs(model.data_dim(), x, labels, draws)?;
    let (conds_i, conds_j, conds_joint, conds_null) = branch_condition_sets(labels, &draws.pairs);
    let p_i = model.predict_velocity(x, &draws.t, &conds_i)?;
    let p_j = model.predict_velocity(x, &draws.t, &conds_j)?;
    let p_joint = model.predict_velocity(x, &draws.t, &conds_joint)?;
    let p_null = model.predict_velocity(x, &draws.t, &conds_null)?;
    Ok(ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None))
}

/// [`velocity_ci_loss`] for the dense network, with parameter gradients
/// flowing through all four branches.
pub fn velocity_ci_loss_with_grads(
    net: &VelocityNet,
    x: &Matrix,
    labels: &[Vec<usize>],
    draws: &FlowCiDraws,
) -> Result<(f64, ParamGrads), FlowError> {
    check_ci_inputs(net.data_dim(), x, labels, draws)?;
    let (conds_i, conds_j, conds_joint, conds_null) = branch_condition_sets(labels, &draws.pairs);
    let (p_i, trace_i) = net.predict_velocity_traced(x, &draws.t, &conds_i)?;
    let (p_j, trace_j) = net.predict_velocity_traced(x, &draws.t, &conds_j)?;
    let (p_joint, trace_joint) = net.predict_velocity_traced(x, &draws.t, &conds_joint)?;
    let (p_null, trace_null) = net.predict_velocity_traced(x, &draws.t, &conds_null)?;
    let loss = ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None);

    // d loss / d p_i = 2r/B with r = p_i + p_j - p_joint - p_null; the joint
    // and null branches get the opposite sign.
    let b = x.nrows() as f64;
    let resid_grad = (&(&p_i + &p_j) - &(&p_joint + &p_null)).mapv(|v| 2.0 * v / b);
    let mut grads = net.net().backward(&trace_i, &resid_grad)?;
    grads.add_scaled(&net.net().backward(&trace_j, &resid_grad)?, 1.0);
    grads.add_scaled(&net.net().backward(&trace_joint, &resid_grad)?, -1.0);
    grads.add_scaled(&net.net().backward(&trace_null, &resid_grad)?, -1.0);
    Ok((loss, grads))
}
