//! The `check` verb: a fast self-verification pass over the numerical
//! identities the whole pipeline rests on. Every check is closed-form or
//! tiny, so the suite finishes in seconds and is safe to run before any
//! long experiment.

use crate::diffusion::{cosine_alpha_bar, ConditionEncoding, EpsModel, ScoreNet};
use crate::flow::{score_from_velocity, AffineScoreVelocityLink};
use crate::numkit::Prng;
use crate::sampling::composed_and_score;
use crate::training::{coind_losses, train, CiWeighting, StepDraws, TrainConfig};
use crate::world::{
    axis_pair_world, oracle_conditional_score, sample_dataset, AttributeSpace, ConditionVector,
    Provenance,
};
use crate::Matrix;

/// One invariant's verdict.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn report(name: &'static str, outcome: Result<String, String>) -> CheckReport {
    match outcome {
        Ok(detail) => CheckReport {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckReport {
            name,
            passed: false,
            detail,
        },
    }
}

/// Runs every invariant check and reports each verdict; the caller decides
/// what a failure is worth (the binary exits nonzero on any).
pub fn run_invariant_checks() -> Vec<CheckReport> {
    vec![
        report("schedule-monotone", check_schedule()),
        report("closed-form-composition", check_composition()),
        report("factorized-zero-penalty", check_factorized_penalty()),
        report("flow-link-commutes", check_flow_link()),
        report("checkpoint-roundtrip", check_checkpoint_roundtrip()),
        report("gradients-match-fd", check_gradients()),
        report("training-deterministic", check_determinism()),
    ]
}

/// ᾱ starts at 1 and decreases strictly over the whole horizon.
fn check_schedule() -> Result<String, String> {
    let schedule = cosine_alpha_bar(100).map_err(|e| e.to_string())?;
    if schedule.alpha_bar(0).map_err(|e| e.to_string())? != 1.0 {
        return Err("alpha_bar(0) != 1".into());
    }
    let mut prev = 1.0;
    for t in 1..=100 {
        let ab = schedule.alpha_bar(t).map_err(|e| e.to_string())?;
        if !(ab < prev) || !(ab > 0.0) {
            return Err(format!("alpha_bar({t}) = {ab} breaks strict decrease"));
        }
        prev = ab;
    }
    Ok(format!("alpha_bar(100) = {prev:.3e}"))
}

/// Summing two seen single-corner conditional scores and subtracting the
/// shared corner must land exactly on the never-seen corner's Gaussian
/// score: with means `μ_a + μ_b − μ_base = (1, 1)`, the composed score is
/// `((1,1) − x)/σ²` everywhere, not just near the data.
fn check_composition() -> Result<String, String> {
    let sigma = 0.3;
    let (world, orth, _) = axis_pair_world(sigma);
    let n = 50;
    let mut grid = Matrix::zeros((n * n, 2));
    for r in 0..n {
        for c in 0..n {
            grid[(r * n + c, 0)] = -2.0 + 4.0 * c as f64 / (n - 1) as f64;
            grid[(r * n + c, 1)] = -2.0 + 4.0 * r as f64 / (n - 1) as f64;
        }
    }
    let score_of = |tuple: &[usize]| -> Result<Matrix, String> {
        let cond = ConditionVector::from_tuple(tuple);
        let mut out = Matrix::zeros(grid.dim());
        for (i, row) in grid.rows().into_iter().enumerate() {
            let s = oracle_conditional_score(&world, &orth, &cond, &[row[0], row[1]])
                .map_err(|e| e.to_string())?;
            out[(i, 0)] = s[0];
            out[(i, 1)] = s[1];
        }
        Ok(out)
    };
    let s_a = score_of(&[1, 0])?;
    let s_b = score_of(&[0, 1])?;
    let s_base = score_of(&[0, 0])?;
    let composed = composed_and_score(&s_a, &s_b, &s_base, 1.0).map_err(|e| e.to_string())?;
    let inv_var = 1.0 / (sigma * sigma);
    let mut max_err: f64 = 0.0;
    for (i, row) in grid.rows().into_iter().enumerate() {
        for col in 0..2 {
            let want = (1.0 - row[col]) * inv_var;
            max_err = max_err.max((composed[(i, col)] - want).abs());
        }
    }
    if max_err < 1e-10 {
        Ok(format!("max abs error {max_err:.2e} over {} grid points", n * n))
    } else {
        Err(format!("max abs error {max_err:.2e} exceeds 1e-10"))
    }
}

/// A single affine layer is additive across condition blocks, so the
/// four-branch penalty must vanish identically on it.
fn check_factorized_penalty() -> Result<String, String> {
    let space = AttributeSpace::binary_pair_orthogonal();
    let mut rng = Prng::seed(41);
    let mut net = ScoreNet::new(2, &[], ConditionEncoding::for_space(&space), 40, &mut rng)
        .map_err(|e| e.to_string())?;
    let w = rng.normal_matrix(net.net().input_dim(), 2);
    net.net_mut().layer_weight_mut(0).assign(&w);
    let x_t = rng.normal_matrix(16, 2);
    let t = vec![17usize; 16];
    let branch = |conds: Vec<ConditionVector>| -> Result<Matrix, String> {
        net.predict_eps_rows(&x_t, &t, &conds).map_err(|e| e.to_string())
    };
    let p_i = branch(vec![ConditionVector::single(2, 0, 1); 16])?;
    let p_j = branch(vec![ConditionVector::single(2, 1, 0); 16])?;
    let p_joint = branch(vec![ConditionVector::from_tuple(&[1, 0]); 16])?;
    let p_null = branch(vec![ConditionVector::all_null(2); 16])?;
    let resid = crate::training::ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None);
    if resid < 1e-20 {
        Ok(format!("residual {resid:.2e}"))
    } else {
        Err(format!("residual {resid:.2e} exceeds 1e-20"))
    }
}

/// The four-branch residual taken after converting velocities to scores
/// equals `b_t` times the velocity residual — the `a_t·x` terms cancel.
fn check_flow_link() -> Result<String, String> {
    let mut rng = Prng::seed(42);
    let x = rng.normal_matrix(10, 2);
    let us: Vec<Matrix> = (0..4).map(|_| rng.normal_matrix(10, 2)).collect();
    let link = AffineScoreVelocityLink::LinearPath;
    let t = 0.37;
    let (_, b) = link.coeffs(t).map_err(|e| e.to_string())?;
    let ss: Vec<Matrix> = us
        .iter()
        .map(|u| score_from_velocity(u, &x, &link, t).map_err(|e| e.to_string()))
        .collect::<Result<_, String>>()?;
    let ru = &(&us[0] + &us[1]) - &(&us[2] + &us[3]);
    let rs = &(&ss[0] + &ss[1]) - &(&ss[2] + &ss[3]);
    let mut max_err: f64 = 0.0;
    for (sv, uv) in rs.iter().zip(ru.iter()) {
        max_err = max_err.max((sv - b * uv).abs());
    }
    if max_err < 1e-12 {
        Ok(format!("max abs error {max_err:.2e} at t = {t}"))
    } else {
        Err(format!("max abs error {max_err:.2e} exceeds 1e-12"))
    }
}

/// Save → load preserves the model bit-for-bit, and a truncated file is a
/// clean error rather than a crash or a silently wrong model.
fn check_checkpoint_roundtrip() -> Result<String, String> {
    let space = AttributeSpace::binary_pair_full();
    let mut rng = Prng::seed(43);
    let net = ScoreNet::new(2, &[12], ConditionEncoding::for_space(&space), 30, &mut rng)
        .map_err(|e| e.to_string())?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_err(|e| e.to_string())?
        .as_nanos();
    let path = std::env::temp_dir().join(format!(
        "cidiff-check-{}-{stamp}.ckpt",
        std::process::id()
    ));
    let result = (|| -> Result<String, String> {
        net.save(&path, [7u8; 32], None).map_err(|e| e.to_string())?;
        let (loaded, hash, _) = ScoreNet::load(&path).map_err(|e| e.to_string())?;
        if hash != [7u8; 32] {
            return Err("stored hash did not round-trip".into());
        }
        if loaded.net().flat_params() != net.net().flat_params() {
            return Err("parameters not bit-identical after reload".into());
        }
        let probe = Prng::seed(44).normal_matrix(5, 2);
        let conds = vec![ConditionVector::all_null(2); 5];
        let a = net.predict_eps(&probe, 3, &conds).map_err(|e| e.to_string())?;
        let b = loaded
            .predict_eps(&probe, 3, &conds)
            .map_err(|e| e.to_string())?;
        if a != b {
            return Err("probe outputs differ after reload".into());
        }
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        std::fs::write(&path, &bytes[..bytes.len() / 2]).map_err(|e| e.to_string())?;
        match ScoreNet::load(&path) {
            Err(_) => Ok(format!("{} params round-tripped", net.net().flat_params().len())),
            Ok(_) => Err("truncated checkpoint loaded without error".into()),
        }
    })();
    let _ = std::fs::remove_file(&path);
    result
}

/// Analytic gradients of the combined objective against central finite
/// differences on a small random network.
fn check_gradients() -> Result<String, String> {
    let space = AttributeSpace::binary_pair_orthogonal();
    let t_max = 30;
    let schedule = cosine_alpha_bar(t_max).map_err(|e| e.to_string())?;
    let mut rng = Prng::seed(45);
    let mut net = ScoreNet::new(2, &[6], ConditionEncoding::for_space(&space), t_max, &mut rng)
        .map_err(|e| e.to_string())?;
    let w = rng.normal_matrix(6, 2).mapv(|v| 0.3 * v);
    net.net_mut().layer_weight_mut(1).assign(&w);
    let x0 = rng.normal_matrix(4, 2);
    let labels = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 0]];
    let root = Prng::seed(46);
    let draws = StepDraws::draw(
        &labels,
        2,
        t_max,
        0.3,
        true,
        &mut root.derive(2),
        &mut root.derive(3),
        &mut root.derive(4),
    )
    .map_err(|e| e.to_string())?;
    let lambda = 0.7;
    let eval = |net: &ScoreNet| {
        coind_losses(
            net,
            &x0,
            &labels,
            &draws,
            lambda,
            CiWeighting::Unweighted,
            &schedule,
        )
        .map(|(bd, _)| bd.total)
        .map_err(|e| e.to_string())
    };
    let (_, grads) = coind_losses(
        &net,
        &x0,
        &labels,
        &draws,
        lambda,
        CiWeighting::Unweighted,
        &schedule,
    )
    .map_err(|e| e.to_string())?;
    let analytic = grads.flat();
    let mut params = net.net().flat_params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in (0..params.len()).step_by(3) {
        let orig = params[k];
        params[k] = orig + h;
        net.net_mut().set_flat_params(&params).map_err(|e| e.to_string())?;
        let up = eval(&net)?;
        params[k] = orig - h;
        net.net_mut().set_flat_params(&params).map_err(|e| e.to_string())?;
        let dn = eval(&net)?;
        params[k] = orig;
        net.net_mut().set_flat_params(&params).map_err(|e| e.to_string())?;
        let fd = (up - dn) / (2.0 * h);
        let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[k] - fd).abs() / denom);
    }
    if worst < 1e-4 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} exceeds 1e-4"))
    }
}

/// Two short trainings from the same seed end at bit-identical parameters.
fn check_determinism() -> Result<String, String> {
    let (world, orth, _) = axis_pair_world(0.3);
    let t_max = 30;
    let schedule = cosine_alpha_bar(t_max).map_err(|e| e.to_string())?;
    let ds = sample_dataset(
        &world,
        &orth,
        256,
        Provenance::RealTrain,
        &mut Prng::seed(47).derive(0),
    )
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        steps: 25,
        batch_size: 64,
        lr: 2e-3,
        lambda: 1.0,
        log_every: 25,
        ..TrainConfig::default()
    };
    let run = || -> Result<Vec<f64>, String> {
        let mut net = ScoreNet::new(
            2,
            &[8],
            ConditionEncoding::for_space(&orth),
            t_max,
            &mut Prng::seed(48),
        )
        .map_err(|e| e.to_string())?;
        train(&mut net, &ds, &schedule, &cfg, 49, None, None).map_err(|e| e.to_string())?;
        Ok(net.net().flat_params())
    };
    let (a, b) = (run()?, run()?);
    if a == b {
        Ok(format!("{} parameters identical across replays", a.len()))
    } else {
        Err("replayed training diverged from itself".into())
    }
}
