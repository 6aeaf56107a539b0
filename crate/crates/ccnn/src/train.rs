//! Experiment harness: training runs for the complex model and its real
//! counterpart, per-epoch metrics, NaN aborts with a diagnostic state,
//! checkpoint resume, and the repeated-trials stability study.

use std::time::Instant;

use crate::checkpoint::{Checkpoint, ModelState};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::equivalence::{build_real_counterpart, RealNetwork};
use crate::error::{Error, Result};
use crate::loss::{accuracy, logistic_loss, ScoredBatch};
use crate::network::{ComplexNetwork, NetworkSpec};
use crate::optim::{minibatch_indices, LrSchedule, MomentumState};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{ComplexTensor, RealTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Complex,
    Real,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Complex => "complex",
            ModelKind::Real => "real",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(ModelKind::Complex),
            "real" => Ok(ModelKind::Real),
            other => Err(Error::Config(format!(
                "model must be 'complex' or 'real', got {other:?}"
            ))),
        }
    }
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub epoch: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "iteration,epoch,train_loss,test_loss,train_acc,test_acc,wall_ms";

/// Render metrics as CSV. Floats use the shortest round-trip formatting,
/// so identical runs produce identical text.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.epoch, r.train_loss, r.test_loss, r.train_acc, r.test_acc, r.wall_ms
        ));
    }
    out
}

/// Train/test pair with the real-stacked views prepared once.
pub struct DataPair {
    pub train: Dataset,
    pub test: Dataset,
    pub train_real: Vec<RealTensor>,
    pub test_real: Vec<RealTensor>,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

impl DataPair {
    pub fn new(train: Dataset, test: Dataset) -> Self {
        let train_real = train.to_real_stacked();
        let test_real = test.to_real_stacked();
        let train_labels = train.labels();
        let test_labels = test.labels();
        DataPair {
            train,
            test,
            train_real,
            test_real,
            train_labels,
            test_labels,
        }
    }

    /// Generate both splits from the disjoint per-split seed streams.
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        let (train_seed, test_seed) = crate::data::split_seeds(config.seed);
        let train = crate::data::make_dataset(
            config.images_per_split,
            &config.cell_image_params(train_seed),
        )?;
        let test = crate::data::make_dataset(
            config.images_per_split,
            &config.cell_image_params(test_seed),
        )?;
        Ok(DataPair::new(train, test))
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
    /// False when the run aborted on a non-finite loss; the checkpoint then
    /// holds the diagnostic state at the failing iteration.
    pub completed: bool,
}

impl TrainOutcome {
    pub fn final_row(&self) -> &MetricsRow {
        self.metrics.last().expect("at least the initial evaluation")
    }
}

fn evaluate_scores(classes: usize, scores: Vec<f64>, labels: &[usize]) -> Result<(f64, f64)> {
    let batch = ScoredBatch::new(classes, labels.len(), scores, labels.to_vec())?;
    let (loss, _) = logistic_loss(&batch);
    Ok((loss, accuracy(&batch)))
}

fn evaluate_complex(net: &ComplexNetwork, inputs: &[&ComplexTensor], labels: &[usize]) -> Result<(f64, f64)> {
    let (classes, scores) = net.score_batch(inputs)?;
    evaluate_scores(classes, scores, labels)
}

fn evaluate_real(net: &RealNetwork, inputs: &[&RealTensor], labels: &[usize]) -> Result<(f64, f64)> {
    let (classes, scores) = net.score_batch(inputs)?;
    evaluate_scores(classes, scores, labels)
}

/// Evaluate a checkpoint on both splits: (train_loss, train_acc,
/// test_loss, test_acc).
pub fn evaluate_checkpoint(cp: &Checkpoint, data: &DataPair) -> Result<(f64, f64, f64, f64)> {
    match &cp.model {
        ModelState::Complex { net, .. } => {
            let (tl, ta) = evaluate_complex(net, &data.train.inputs(), &data.train_labels)?;
            let (sl, sa) = evaluate_complex(net, &data.test.inputs(), &data.test_labels)?;
            Ok((tl, ta, sl, sa))
        }
        ModelState::Real { net, .. } => {
            let train_refs: Vec<&RealTensor> = data.train_real.iter().collect();
            let test_refs: Vec<&RealTensor> = data.test_real.iter().collect();
            let (tl, ta) = evaluate_real(net, &train_refs, &data.train_labels)?;
            let (sl, sa) = evaluate_real(net, &test_refs, &data.test_labels)?;
            Ok((tl, ta, sl, sa))
        }
    }
}

/// Run (or resume) one training run. Randomness comes from a single
/// generator stream seeded by `config.seed` (or restored from the
/// checkpoint), covering initialization and minibatch choice, so identical
/// (config, seed) pairs produce bit-identical runs.
pub fn train_model(
    kind: ModelKind,
    config: &ExperimentConfig,
    data: &DataPair,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    match kind {
        ModelKind::Complex => train_complex(config, data, resume),
        ModelKind::Real => train_real(config, data, resume),
    }
}

macro_rules! training_loop {
    (
        $config:expr, $resume:expr, $schedule:expr,
        $init_net:expr, $restore:path, $wrap:path,
        $train_inputs:expr, $evaluate:expr, $grads_of:expr
    ) => {{
        let config = $config;
        let schedule: LrSchedule = $schedule;
        let train_size = $train_inputs.len();
        let epoch_len = (train_size / config.batch_size).max(1) as u64;
        let eval_stride = epoch_len * config.eval_every_epochs;

        let (mut net, mut params, mut momentum, mut rng, start) = match $resume {
            Some(cp) => {
                let (net, momentum) = $restore(cp.model)?;
                let params = net.param_tensors();
                if momentum.len() != params.len() {
                    return Err(Error::Format {
                        what: "checkpoint",
                        detail: "momentum buffers do not match parameters".into(),
                    });
                }
                (
                    net,
                    params,
                    MomentumState { buffers: momentum },
                    Rng::from_state(cp.rng_state),
                    cp.iteration,
                )
            }
            None => {
                let mut rng = Rng::seed_from(config.seed);
                let net = $init_net(&mut rng)?;
                let params = net.param_tensors();
                let momentum = MomentumState::zeros_like(&params);
                (net, params, momentum, rng, 0)
            }
        };

        let clock = Instant::now();
        let mut metrics: Vec<MetricsRow> = Vec::new();

        macro_rules! evaluate_at {
            ($iteration:expr) => {{
                net.set_param_tensors(&params)?;
                let (train_loss, train_acc, test_loss, test_acc) = $evaluate(&net)?;
                metrics.push(MetricsRow {
                    iteration: $iteration,
                    epoch: $iteration / epoch_len,
                    train_loss,
                    test_loss,
                    train_acc,
                    test_acc,
                    wall_ms: clock.elapsed().as_millis() as u64,
                });
                (train_loss, test_loss)
            }};
        }

        let mut aborted = false;
        let mut t = start;
        while t < config.iterations {
            if t % eval_stride == 0 {
                let (train_loss, test_loss) = evaluate_at!(t);
                if !train_loss.is_finite() || !test_loss.is_finite() {
                    aborted = true;
                    break;
                }
            }
            let indices = minibatch_indices(train_size, config.batch_size, &mut rng);
            let eta = schedule.at(t);
            let mut batch_loss = f64::NAN;
            crate::optim::nesterov_step(
                &mut params,
                &mut momentum,
                eta,
                config.momentum,
                |lookahead| {
                    net.set_param_tensors(lookahead)?;
                    let (loss, grads) = $grads_of(&net, &indices)?;
                    batch_loss = loss;
                    Ok(grads)
                },
            )?;
            t += 1;
            if !batch_loss.is_finite() {
                aborted = true;
                break;
            }
        }
        if !aborted && (metrics.last().map(|m| m.iteration) != Some(t)) {
            let (train_loss, test_loss) = evaluate_at!(t);
            if !train_loss.is_finite() || !test_loss.is_finite() {
                aborted = true;
            }
        }

        net.set_param_tensors(&params)?;
        let checkpoint = Checkpoint {
            iteration: t,
            rng_state: rng.state(),
            model: $wrap(net, momentum.buffers),
        };
        Ok(TrainOutcome {
            metrics,
            checkpoint,
            completed: !aborted,
        })
    }};
}

fn restore_complex(model: ModelState) -> Result<(ComplexNetwork, Vec<ComplexTensor>)> {
    match model {
        ModelState::Complex { net, momentum } => Ok((net, momentum)),
        ModelState::Real { .. } => Err(Error::Config(
            "checkpoint holds a real model; requested complex".into(),
        )),
    }
}

fn restore_real(model: ModelState) -> Result<(RealNetwork, Vec<RealTensor>)> {
    match model {
        ModelState::Real { net, momentum } => Ok((net, momentum)),
        ModelState::Complex { .. } => Err(Error::Config(
            "checkpoint holds a complex model; requested real".into(),
        )),
    }
}

fn wrap_complex(net: ComplexNetwork, momentum: Vec<ComplexTensor>) -> ModelState {
    ModelState::Complex { net, momentum }
}

fn wrap_real(net: RealNetwork, momentum: Vec<RealTensor>) -> ModelState {
    ModelState::Real { net, momentum }
}

fn train_complex(
    config: &ExperimentConfig,
    data: &DataPair,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    let spec = NetworkSpec::cell_detection(config.conv1_kernels, config.conv2_kernels);
    let train_inputs: Vec<&ComplexTensor> = data.train.inputs();
    let test_inputs: Vec<&ComplexTensor> = data.test.inputs();
    training_loop!(
        config,
        resume,
        config.complex_schedule()?,
        |rng: &mut Rng| ComplexNetwork::init(&spec, rng),
        restore_complex,
        wrap_complex,
        train_inputs,
        |net: &ComplexNetwork| -> Result<(f64, f64, f64, f64)> {
            let (tl, ta) = evaluate_complex(net, &train_inputs, &data.train_labels)?;
            let (sl, sa) = evaluate_complex(net, &test_inputs, &data.test_labels)?;
            Ok((tl, ta, sl, sa))
        },
        |net: &ComplexNetwork, indices: &[usize]| -> Result<(f64, Vec<ComplexTensor>)> {
            let batch_inputs: Vec<&ComplexTensor> =
                indices.iter().map(|&i| train_inputs[i]).collect();
            let batch_labels: Vec<usize> =
                indices.iter().map(|&i| data.train_labels[i]).collect();
            net.loss_and_gradients(&batch_inputs, &batch_labels)
        }
    )
}

fn train_real(
    config: &ExperimentConfig,
    data: &DataPair,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    let spec = build_real_counterpart(&NetworkSpec::cell_detection(
        config.conv1_kernels,
        config.conv2_kernels,
    ))?;
    let train_refs: Vec<&RealTensor> = data.train_real.iter().collect();
    let test_refs: Vec<&RealTensor> = data.test_real.iter().collect();
    training_loop!(
        config,
        resume,
        config.real_schedule(),
        |rng: &mut Rng| RealNetwork::init(&spec, rng),
        restore_real,
        wrap_real,
        train_refs,
        |net: &RealNetwork| -> Result<(f64, f64, f64, f64)> {
            let (tl, ta) = evaluate_real(net, &train_refs, &data.train_labels)?;
            let (sl, sa) = evaluate_real(net, &test_refs, &data.test_labels)?;
            Ok((tl, ta, sl, sa))
        },
        |net: &RealNetwork, indices: &[usize]| -> Result<(f64, Vec<RealTensor>)> {
            let batch_inputs: Vec<&RealTensor> =
                indices.iter().map(|&i| train_refs[i]).collect();
            let batch_labels: Vec<usize> =
                indices.iter().map(|&i| data.train_labels[i]).collect();
            net.loss_and_gradients(&batch_inputs, &batch_labels)
        }
    )
}

/// Outcome of one trial in the stability study.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub converged: bool,
    pub completed: bool,
    pub metrics: Vec<MetricsRow>,
}

/// Train `n` independent runs differing only in their seed (initialization
/// and minibatch stream); the dataset is shared. A trial converged when
/// its final train loss is at or below the configured threshold.
pub fn run_trials(
    kind: ModelKind,
    config: &ExperimentConfig,
    data: &DataPair,
    n: usize,
) -> Result<Vec<TrialResult>> {
    let mut out = Vec::with_capacity(n);
    for trial in 0..n {
        let seed = derive_seed(config.seed, 0x7472_0000 + trial as u64);
        let mut trial_config = config.clone();
        trial_config.seed = seed;
        let run = train_model(kind, &trial_config, data, None)?;
        let row = run.final_row().clone();
        out.push(TrialResult {
            trial,
            seed,
            final_train_loss: row.train_loss,
            final_test_loss: row.test_loss,
            final_train_acc: row.train_acc,
            final_test_acc: row.test_acc,
            converged: run.completed && row.train_loss <= config.convergence_threshold,
            completed: run.completed,
            metrics: run.metrics,
        });
    }
    Ok(out)
}

/// Summary CSV for a trial set: one row per trial plus the convergence
/// fraction in the header comment.
pub fn trials_summary_csv(results: &[TrialResult], threshold: f64) -> String {
    let converged = results.iter().filter(|r| r.converged).count();
    let mut out = format!(
        "# converged {converged}/{} at train-loss threshold {threshold}\n\
         trial,seed,final_train_loss,final_test_loss,final_train_acc,final_test_acc,converged\n",
        results.len()
    );
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.trial,
            r.seed,
            r.final_train_loss,
            r.final_test_loss,
            r.final_train_acc,
            r.final_test_acc,
            r.converged
        ));
    }
    out
}
