//! The paired experiment: train a baseline and a regularized model under
//! identical seeds, sample both, run the full metric pass, and leave a
//! self-describing directory of artifacts behind.
//!
//! Pairing is the load-bearing design choice: both arms share the training
//! dataset, network initialization, batch/noise/mask streams, sampling
//! priors, and evaluation draws. Metric differences between the arms are
//! then attributable to the independence penalty alone, which makes
//! orderings (violation down, conformity up) testable with few seeds.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diffusion::{
    eps_to_score, ConditionEncoding, EpsModel, NoiseSchedule, ScoreNet,
};
use crate::evaluation::{
    conformity_score, gaussian_w2, implicit_generative_classifier_metrics, joint_group_metrics,
    jsd_violation, train_attribute_predictors, train_joint_downstream_classifier,
    AttributePredictor, DownstreamConfig, ImplicitClassifierConfig, MetricsReport,
};
use crate::numkit::Prng;
use crate::sampling::{
    ddim_sample, ddim_sample_clipped, langevin_sample, LangevinConfig, SampleCond,
};
use crate::training::{train, CheckpointSpec, LossLogRow, TrainConfig};
use crate::world::{
    sample_dataset, AttributeSpace, ConditionVector, GaussianWorld, LabeledDataset, Provenance,
};
use crate::Matrix;

use super::config::{hash_hex, RunConfig, SampleMethod};
use super::CliError;

/// Run-level RNG stream tags under the trainer seed. Tags 1–4 belong to the
/// training loop itself; the orchestrator starts at 10. Streams consumed
/// once per arm are re-derived fresh for each arm, so both arms see
/// identical draws.
const STREAM_DATASET: u64 = 10;
const STREAM_NET_INIT: u64 = 11;
const STREAM_SAMPLING: u64 = 12;
const STREAM_JSD: u64 = 13;
const STREAM_IMPLICIT: u64 = 14;
const STREAM_JSD_EVAL_SET: u64 = 15;
const STREAM_UNSEEN_REFERENCE: u64 = 16;
const STREAM_TEST_SET: u64 = 17;
const STREAM_PLOTS: u64 = 20;

/// Everything a completed run leaves in memory; the same content is on
/// disk under `dir`.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_hash: [u8; 32],
    pub vanilla: MetricsReport,
    pub coind: MetricsReport,
}

/// Result of evaluating one checkpoint under a config, possibly from a
/// different run.
#[derive(Debug)]
pub struct EvalOutput {
    pub report: MetricsReport,
    /// Hash stored in the checkpoint at save time.
    pub checkpoint_hash: [u8; 32],
    /// Whether that hash matches the evaluating config — false flags a
    /// cross-run load.
    pub hash_match: bool,
}

/// World, spaces, reference data, and judges shared by every model
/// evaluated under one config. Built deterministically from the trainer
/// seed, so both arms (and later re-evaluations) face identical fixtures.
pub struct EvalFixtures {
    pub world: GaussianWorld,
    pub train_space: AttributeSpace,
    pub full_space: AttributeSpace,
    /// Tuples of the full space absent from training.
    pub unseen: Vec<Vec<usize>>,
    /// Per-attribute judges fit on full-support real data.
    pub predictors: Vec<AttributePredictor>,
    /// Real full-support test set for classifier metrics.
    pub test_ds: LabeledDataset,
    /// True-distribution points the independence violation is averaged on.
    pub jsd_xs: Matrix,
    /// Real reference clouds for the unseen tuples (all tuples when the
    /// support is full), paired with their tuples.
    pub reference: Vec<(Vec<usize>, Matrix)>,
    /// Synthetic samples requested per tuple.
    pub n_per_tuple: usize,
}

impl EvalFixtures {
    pub fn build(cfg: &RunConfig) -> Result<EvalFixtures, CliError> {
        let (world, train_space, full_space) = cfg.world.build()?;
        let root = Prng::seed(cfg.trainer.seed);
        let unseen = train_space.unseen_tuples();
        let predictors = train_attribute_predictors(
            &world,
            &full_space,
            cfg.evaluation.predictor_samples,
            cfg.trainer.seed,
        )?;
        let test_ds = sample_dataset(
            &world,
            &full_space,
            cfg.evaluation.test_samples,
            Provenance::RealTest,
            &mut root.derive(STREAM_TEST_SET),
        )?;
        let jsd_xs = sample_dataset(
            &world,
            &full_space,
            cfg.evaluation.jsd_eval_samples,
            Provenance::RealTest,
            &mut root.derive(STREAM_JSD_EVAL_SET),
        )?
        .xs()
        .clone();
        let n_tuples = full_space.all_tuples().len();
        let n_per_tuple = (cfg.evaluation.synthetic_samples / n_tuples).max(2);
        // Reference clouds: direct world draws at the tuples the distance
        // metric will compare against.
        let reference_tuples = if unseen.is_empty() {
            full_space.all_tuples()
        } else {
            unseen.clone()
        };
        let mut ref_rng = root.derive(STREAM_UNSEEN_REFERENCE);
        let reference = reference_tuples
            .into_iter()
            .map(|tuple| {
                let mean = world.mean_of(&tuple);
                let mut cloud = Matrix::zeros((n_per_tuple, world.dim()));
                for mut row in cloud.rows_mut() {
                    for (col, &mu) in mean.iter().enumerate() {
                        row[col] = mu + world.sigma() * ref_rng.normal();
                    }
                }
                (tuple, cloud)
            })
            .collect();
        Ok(EvalFixtures {
            world,
            train_space,
            full_space,
            unseen,
            predictors,
            test_ds,
            jsd_xs,
            reference,
            n_per_tuple,
        })
    }
}

/// Draws one synthetic cloud per full-space tuple from a trained model.
/// Tuples the model trained on are conditioned as their joint; held-out
/// tuples either get the same treatment — conditioning on a joint the
/// model never saw spelled out, the sharpest test of whether its learned
/// embedding composes — or, when the sampler asks for it, the guided AND
/// of their single-attribute conditionals, the route a practitioner would
/// actually use to generate an unavailable combination.
pub fn sample_clouds(
    model: &dyn EpsModel,
    cfg: &RunConfig,
    fixtures: &EvalFixtures,
    schedule: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<Vec<(Vec<usize>, Matrix)>, CliError> {
    let mut clouds = Vec::new();
    for tuple in fixtures.full_space.all_tuples() {
        let cond = ConditionVector::from_tuple(&tuple);
        let sample_cond = if cfg.sampler.compose_unseen && fixtures.unseen.contains(&tuple) {
            SampleCond::ComposedAnd {
                parts: (0..tuple.len())
                    .map(|attr| ConditionVector::single(tuple.len(), attr, tuple[attr]))
                    .collect(),
                gamma: cfg.sampler.gamma,
            }
        } else {
            SampleCond::Plain(cond.clone())
        };
        let cloud = match cfg.sampler.method {
            SampleMethod::Ddim => match cfg.sampler.clip {
                Some(clip) => ddim_sample_clipped(
                    model,
                    &sample_cond,
                    schedule,
                    cfg.sampler.steps,
                    fixtures.n_per_tuple,
                    clip,
                    rng,
                )?,
                None => ddim_sample(
                    model,
                    &sample_cond,
                    schedule,
                    cfg.sampler.steps,
                    fixtures.n_per_tuple,
                    rng,
                )?,
            },
            SampleMethod::Langevin => {
                // Run the chain on the learned data-level score (t = 1, the
                // least-noised conditional the model represents).
                let x_init = rng.normal_matrix(fixtures.n_per_tuple, model.data_dim());
                let lang_cfg = LangevinConfig {
                    steps: cfg.sampler.steps,
                    ..LangevinConfig::default()
                };
                langevin_sample(
                    |x| {
                        let eps = sample_cond.eps_at(model, x, 1)?;
                        eps_to_score(&eps, 1, schedule)
                            .map_err(crate::sampling::SamplingError::from)
                    },
                    &lang_cfg,
                    x_init,
                    rng,
                )?
            }
        };
        clouds.push((tuple, cloud));
    }
    Ok(clouds)
}

/// Runs the full metric pass for one model and its sampled clouds.
/// Evaluation randomness derives from fixed streams under `seed`, so two
/// models evaluated under the same seed face identical draws.
pub fn evaluate_model(
    model: &dyn EpsModel,
    clouds: &[(Vec<usize>, Matrix)],
    fixtures: &EvalFixtures,
    classifier_cfg: &ImplicitClassifierConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<MetricsReport, CliError> {
    let root = Prng::seed(seed);
    let jsd = jsd_violation(
        model,
        &fixtures.full_space,
        &fixtures.jsd_xs,
        classifier_cfg,
        schedule,
        &mut root.derive(STREAM_JSD),
    )?;
    let cs_all = conformity_score(clouds, &fixtures.predictors)?;
    let unseen_clouds: Vec<(Vec<usize>, Matrix)> = clouds
        .iter()
        .filter(|(tuple, _)| fixtures.unseen.contains(tuple))
        .cloned()
        .collect();
    // With nothing held out the unseen metrics degenerate to the all-tuple
    // ones rather than reporting a hole.
    let cs_unseen = if unseen_clouds.is_empty() {
        cs_all
    } else {
        conformity_score(&unseen_clouds, &fixtures.predictors)?
    };
    let compared: &[(Vec<usize>, Matrix)] = if unseen_clouds.is_empty() {
        clouds
    } else {
        &unseen_clouds
    };
    let generated = stack_clouds(compared);
    let reference = stack_clouds(&fixtures.reference);
    let w2_unseen = gaussian_w2(&generated, &reference)?;

    let synth_ds = clouds_to_dataset(clouds, &fixtures.full_space)?;
    let downstream_clf = train_joint_downstream_classifier(
        &synth_ds,
        &fixtures.full_space,
        &DownstreamConfig::default(),
        seed,
    )?;
    let downstream =
        joint_group_metrics(&downstream_clf, &fixtures.test_ds, &fixtures.full_space)?;
    let implicit = implicit_generative_classifier_metrics(
        model,
        &fixtures.full_space,
        &fixtures.test_ds,
        0,
        classifier_cfg,
        schedule,
        &mut root.derive(STREAM_IMPLICIT),
    )?;
    Ok(MetricsReport {
        jsd,
        cs_all,
        cs_unseen,
        w2_unseen,
        downstream,
        implicit,
    })
}

fn stack_clouds(clouds: &[(Vec<usize>, Matrix)]) -> Matrix {
    let total: usize = clouds.iter().map(|(_, m)| m.nrows()).sum();
    let dim = clouds.first().map_or(0, |(_, m)| m.ncols());
    let mut out = Matrix::zeros((total, dim));
    let mut at = 0;
    for (_, cloud) in clouds {
        for row in cloud.rows() {
            for (col, &v) in row.iter().enumerate() {
                out[(at, col)] = v;
            }
            at += 1;
        }
    }
    out
}

/// Labels every sampled row with the tuple it was requested under.
fn clouds_to_dataset(
    clouds: &[(Vec<usize>, Matrix)],
    space: &AttributeSpace,
) -> Result<LabeledDataset, CliError> {
    let xs = stack_clouds(clouds);
    let mut labels = Vec::with_capacity(xs.nrows());
    for (tuple, cloud) in clouds {
        labels.extend(std::iter::repeat_n(tuple.clone(), cloud.nrows()));
    }
    Ok(LabeledDataset::new(xs, labels, Provenance::Synthetic, space)?)
}

/// Executes the paired experiment described by `cfg` and writes all
/// artifacts under its output directory: the canonical config and hash,
/// the training data, per-arm loss logs, checkpoints and sample CSVs, a
/// combined metrics CSV, and per-arm metric reports. A failure after setup
/// leaves partial artifacts plus a `FAILED` marker naming the error.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join("FAILED"));
    fs::write(dir.join("config.toml"), cfg.canonical_toml()?)?;
    fs::write(dir.join("hash.txt"), format!("{}\n", hash_hex(&hash)))?;
    match run_arms(cfg, &dir, hash) {
        Ok((vanilla, coind)) => Ok(RunArtifacts {
            dir,
            config_hash: hash,
            vanilla,
            coind,
        }),
        Err(e) => {
            let _ = fs::write(dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_arms(
    cfg: &RunConfig,
    dir: &Path,
    hash: [u8; 32],
) -> Result<(MetricsReport, MetricsReport), CliError> {
    let fixtures = EvalFixtures::build(cfg)?;
    let schedule = crate::diffusion::cosine_alpha_bar(cfg.model.t_max)?;
    let classifier_cfg = cfg.evaluation.classifier_config(cfg.model.t_max);
    let root = Prng::seed(cfg.trainer.seed);

    let train_ds = sample_dataset(
        &fixtures.world,
        &fixtures.train_space,
        cfg.trainer.n_train,
        Provenance::RealTrain,
        &mut root.derive(STREAM_DATASET),
    )?;
    train_ds.save_csv(&dir.join("train_data.csv"))?;

    let encoding = ConditionEncoding::for_space(&fixtures.full_space);
    let init = ScoreNet::new(
        fixtures.world.dim(),
        &cfg.model.hidden,
        encoding,
        cfg.model.t_max,
        &mut root.derive(STREAM_NET_INIT),
    )?;

    let mut reports = Vec::with_capacity(2);
    for (arm, lambda) in [("vanilla", 0.0), ("coind", cfg.trainer.lambda)] {
        let mut net = init.clone();
        let train_cfg = TrainConfig {
            steps: cfg.trainer.steps,
            batch_size: cfg.trainer.batch_size,
            lr: cfg.trainer.lr,
            lambda,
            p_uncond: cfg.trainer.p_uncond,
            ci_weighting: cfg.trainer.ci_weighting,
            log_every: cfg.trainer.log_every,
        };
        let ckpt = CheckpointSpec {
            path: dir.join(format!("{arm}.ckpt")),
            every: 0,
            config_hash: hash,
        };
        train(
            &mut net,
            &train_ds,
            &schedule,
            &train_cfg,
            cfg.trainer.seed,
            Some(&dir.join(format!("loss_{arm}.csv"))),
            Some(&ckpt),
        )?;
        let clouds = sample_clouds(
            &net,
            cfg,
            &fixtures,
            &schedule,
            &mut root.derive(STREAM_SAMPLING),
        )?;
        clouds_to_dataset(&clouds, &fixtures.full_space)?
            .save_csv(&dir.join(format!("samples_{arm}.csv")))?;
        let report = evaluate_model(
            &net,
            &clouds,
            &fixtures,
            &classifier_cfg,
            &schedule,
            cfg.trainer.seed,
        )?;
        fs::write(
            dir.join(format!("report_{arm}.txt")),
            report.to_text_tree(&fixtures.full_space),
        )?;
        reports.push(report);
    }

    let mut metrics = File::create(dir.join("metrics.csv")).map(BufWriter::new)?;
    writeln!(metrics, "{}", MetricsReport::csv_header())?;
    writeln!(metrics, "{}", reports[0].csv_row("vanilla"))?;
    writeln!(metrics, "{}", reports[1].csv_row("coind"))?;
    metrics.flush()?;

    let coind = reports.pop().expect("two arms ran");
    let vanilla = reports.pop().expect("two arms ran");
    Ok((vanilla, coind))
}

/// Evaluates a single checkpoint under `cfg`'s world and metric settings.
/// Cross-run loads are permitted: the checkpoint's stored hash is compared
/// against this config's and the mismatch is recorded, not rejected. The
/// diffusion horizon comes from the checkpoint itself.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    ckpt_path: &Path,
    out_dir: Option<&Path>,
) -> Result<EvalOutput, CliError> {
    cfg.validate()?;
    let (net, checkpoint_hash, _) = ScoreNet::load(ckpt_path)?;
    let hash_match = checkpoint_hash == cfg.hash()?;
    let fixtures = EvalFixtures::build(cfg)?;
    if net.data_dim() != fixtures.world.dim() {
        return Err(CliError::Config(format!(
            "checkpoint models {} dimensions, config world has {}",
            net.data_dim(),
            fixtures.world.dim()
        )));
    }
    let schedule = crate::diffusion::cosine_alpha_bar(net.t_max())?;
    if cfg.sampler.method == SampleMethod::Ddim && cfg.sampler.steps > net.t_max() {
        return Err(CliError::Config(format!(
            "sampler.steps ({}) exceeds the checkpoint horizon ({})",
            cfg.sampler.steps,
            net.t_max()
        )));
    }
    let classifier_cfg = cfg.evaluation.classifier_config(net.t_max());
    let root = Prng::seed(cfg.trainer.seed);
    let clouds = sample_clouds(
        &net,
        cfg,
        &fixtures,
        &schedule,
        &mut root.derive(STREAM_SAMPLING),
    )?;
    let report = evaluate_model(
        &net,
        &clouds,
        &fixtures,
        &classifier_cfg,
        &schedule,
        cfg.trainer.seed,
    )?;
    if let Some(out) = out_dir {
        fs::create_dir_all(out)?;
        let mut csv = File::create(out.join("eval.csv")).map(BufWriter::new)?;
        writeln!(csv, "{}", MetricsReport::csv_header())?;
        writeln!(csv, "{}", report.csv_row("eval"))?;
        csv.flush()?;
        let mut text = report.to_text_tree(&fixtures.full_space);
        text.push_str(&format!("checkpoint_hash: {}\n", hash_hex(&checkpoint_hash)));
        text.push_str(&format!("config_hash: {}\n", hash_hex(&cfg.hash()?)));
        text.push_str(&format!("hash_match: {hash_match}\n"));
        fs::write(out.join("eval_report.txt"), text)?;
    }
    Ok(EvalOutput {
        report,
        checkpoint_hash,
        hash_match,
    })
}

/// Plot-export grid: `GRID_W × GRID_H` points covering
/// `[-GRID_EXTENT, GRID_EXTENT]²`.
pub const GRID_W: usize = 40;
pub const GRID_H: usize = 40;
pub const GRID_EXTENT: f64 = 2.5;

fn grid_points() -> Matrix {
    let mut grid = Matrix::zeros((GRID_W * GRID_H, 2));
    for row in 0..GRID_H {
        for col in 0..GRID_W {
            let i = row * GRID_W + col;
            grid[(i, 0)] = -GRID_EXTENT + 2.0 * GRID_EXTENT * col as f64 / (GRID_W - 1) as f64;
            grid[(i, 1)] = -GRID_EXTENT + 2.0 * GRID_EXTENT * row as f64 / (GRID_H - 1) as f64;
        }
    }
    grid
}

/// Exports plot-ready CSVs from a completed run directory: the training
/// cloud, one conditional cloud per arm at the most interesting tuple (the
/// held-out one when the run had one), and data-level score fields — exact
/// for the training mixture, learned for each arm — on a fixed grid.
/// Returns the written paths.
pub fn export_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let cfg = RunConfig::from_path(&run_dir.join("config.toml"))
        .map_err(|e| CliError::Config(format!("incomplete run dir: {e}")))?;
    let (world, train_space, full_space) = cfg.world.build()?;
    if world.dim() != 2 {
        return Err(CliError::Config(
            "plot export draws 2-dimensional panels only".into(),
        ));
    }
    let train_ds = LabeledDataset::load_csv(&run_dir.join("train_data.csv"), &train_space)
        .map_err(|e| CliError::Config(format!("incomplete run dir: {e}")))?;
    let arms: Vec<(&str, ScoreNet)> = ["vanilla", "coind"]
        .into_iter()
        .map(|arm| {
            let path = run_dir.join(format!("{arm}.ckpt"));
            let (net, _, _) = ScoreNet::load(&path)
                .map_err(|e| CliError::Config(format!("incomplete run dir: {e}")))?;
            Ok((arm, net))
        })
        .collect::<Result<_, CliError>>()?;

    let plots = run_dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut written = Vec::new();

    // Panel 1: the training cloud with its attribute codes.
    let path = plots.join("panel_train_data.csv");
    {
        let mut f = File::create(&path).map(BufWriter::new)?;
        writeln!(f, "x0,x1,c0,c1")?;
        for (row, label) in train_ds.labels().iter().enumerate() {
            let x = train_ds.row(row);
            writeln!(f, "{},{},{},{}", x[0], x[1], label[0], label[1])?;
        }
        f.flush()?;
    }
    written.push(path);

    // Panels 2–3: conditional clouds at the held-out tuple (or the last
    // tuple when nothing is held out), one per arm, from paired priors.
    let target = train_space
        .unseen_tuples()
        .first()
        .cloned()
        .unwrap_or_else(|| {
            full_space
                .all_tuples()
                .last()
                .cloned()
                .expect("spaces are non-empty")
        });
    let schedule = crate::diffusion::cosine_alpha_bar(arms[0].1.t_max())?;
    let root = Prng::seed(cfg.trainer.seed);
    for (arm, net) in &arms {
        let cloud = ddim_sample(
            net,
            &SampleCond::Plain(ConditionVector::from_tuple(&target)),
            &schedule,
            cfg.sampler.steps.min(net.t_max()),
            1000,
            &mut root.derive(STREAM_PLOTS),
        )?;
        let path = plots.join(format!("panel_{arm}_cond.csv"));
        let mut f = File::create(&path).map(BufWriter::new)?;
        writeln!(f, "x0,x1")?;
        for row in cloud.rows() {
            writeln!(f, "{},{}", row[0], row[1])?;
        }
        f.flush()?;
        written.push(path);
    }

    // Panel 4: exact data-level score field of the training mixture.
    let grid = grid_points();
    let components: Vec<Vec<f64>> = train_space
        .train_support()
        .iter()
        .map(|tuple| world.mean_of(tuple))
        .collect();
    let path = plots.join("panel_oracle_grid.csv");
    {
        let mut f = File::create(&path).map(BufWriter::new)?;
        writeln!(f, "x0,x1,s0,s1")?;
        for row in grid.rows() {
            let s = crate::world::oracle_mixture_score(
                &[row[0], row[1]],
                &components,
                world.sigma(),
            );
            writeln!(f, "{},{},{},{}", row[0], row[1], s[0], s[1])?;
        }
        f.flush()?;
    }
    written.push(path);

    // Panels 5–6: each arm's learned score field at the data-level end of
    // its schedule.
    for (arm, net) in &arms {
        let conds = vec![ConditionVector::all_null(2); grid.nrows()];
        let eps = net.predict_eps(&grid, 1, &conds)?;
        let s = eps_to_score(&eps, 1, &schedule)?;
        let path = plots.join(format!("panel_{arm}_grid.csv"));
        let mut f = File::create(&path).map(BufWriter::new)?;
        writeln!(f, "x0,x1,s0,s1")?;
        for (grow, srow) in grid.rows().into_iter().zip(s.rows()) {
            writeln!(f, "{},{},{},{}", grow[0], grow[1], srow[0], srow[1])?;
        }
        f.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a loss log written by the trainer.
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossLogRow>, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != "step,l_score,l_ci,total" {
        return Err(CliError::Config(format!(
            "{}: not a loss log (header {header:?})",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Config(format!(
                "{}: malformed loss row {line:?}",
                path.display()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>().map_err(|e| {
                CliError::Config(format!("{}: bad number {s:?}: {e}", path.display()))
            })
        };
        rows.push(LossLogRow {
            step: fields[0].parse().map_err(|e| {
                CliError::Config(format!("{}: bad step {:?}: {e}", path.display(), fields[0]))
            })?,
            l_score: parse_f(fields[1])?,
            l_ci: parse_f(fields[2])?,
            total: parse_f(fields[3])?,
        });
    }
    Ok(rows)
}

/// Reads a metrics CSV back into `(run label, numeric fields)` rows.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != MetricsReport::csv_header() {
        return Err(CliError::Config(format!(
            "{}: not a metrics table (header {header:?})",
            path.display()
        )));
    }
    let n_fields = MetricsReport::csv_header().split(',').count();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_fields {
            return Err(CliError::Config(format!(
                "{}: expected {n_fields} fields, got {} in {line:?}",
                path.display(),
                fields.len()
            )));
        }
        let values = fields[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| {
                    CliError::Config(format!("{}: bad number {s:?}: {e}", path.display()))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        rows.push((fields[0].to_string(), values));
    }
    Ok(rows)
}

/// Reads any panel CSV: a header line naming numeric columns, then rows.
pub fn read_panel_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: Vec<String> = match lines.next() {
        Some(h) => h?.split(',').map(str::to_string).collect(),
        None => {
            return Err(CliError::Config(format!(
                "{}: empty panel file",
                path.display()
            )))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        let row = line
            .split(',')
            .map(|s| {
                s.parse::<f64>().map_err(|e| {
                    CliError::Config(format!("{}: bad number {s:?}: {e}", path.display()))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        if row.len() != header.len() {
            return Err(CliError::Config(format!(
                "{}: row width {} does not match header width {}",
                path.display(),
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
