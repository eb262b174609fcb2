//! Training loop: robust objective minimized with Adam under an ε ramp,
//! with either a fixed λ ramp or adaptive hybrid scaling from validation
//! losses, and per-epoch certified-accuracy checkpointing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{backward_robust, robust_loss_parts, GradientSet, TrainVariant};
use crate::counter;
use crate::data::{batches, split, Dataset};
use crate::error::{Error, Result};
use crate::ibp::{ibp_certify, ibp_propagate, PerturbationSpec};
use crate::loss::{one_hot, Loss};
use crate::network::Network;
use crate::tensor::{Matrix, Vector};

/// Perturbation ramp: zero during warmup, then linear up to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub warmup_steps: u64,
    pub ramp_end_steps: u64,
    pub target: f64,
}

impl EpsSchedule {
    pub fn constant(target: f64) -> Self {
        EpsSchedule {
            warmup_steps: 0,
            ramp_end_steps: 0,
            target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.target.is_finite() || self.target < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eps target must be finite and >= 0, got {}",
                self.target
            )));
        }
        if self.warmup_steps > self.ramp_end_steps {
            return Err(Error::InvalidConfig(format!(
                "eps warmup ({}) extends past ramp end ({})",
                self.warmup_steps, self.ramp_end_steps
            )));
        }
        Ok(())
    }

    /// ε at a global step count. Nondecreasing in `step`.
    pub fn eps_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            0.0
        } else if step >= self.ramp_end_steps {
            self.target
        } else {
            let span = (self.ramp_end_steps - self.warmup_steps) as f64;
            self.target * (step - self.warmup_steps) as f64 / span
        }
    }
}

/// How the regularizer weight λ evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// Fixed ramp from `start` to `end` over the first `ramp_steps` steps.
    Linear { start: f64, end: f64, ramp_steps: u64 },
    /// Recomputed once per epoch from validation losses.
    Ahs { gamma: f64 },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Linear { start, end, .. } => {
                for (name, v) in [("start", start), ("end", end)] {
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidConfig(format!(
                            "lambda {name} must lie in [0, 1], got {v}"
                        )));
                    }
                }
                Ok(())
            }
            LambdaSchedule::Ahs { gamma } => {
                if !gamma.is_finite() || gamma <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "ahs gamma must be finite and > 0, got {gamma}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Adaptive hybrid scaling weight from validation losses:
/// λ = γ·L / ((1+γ)·L + Λ), with Λ clamped to be nonnegative.
/// Always in [0, 1); zero when the task loss itself is zero.
pub fn lambda_ahs(gamma: f64, task_loss: f64, reg_loss: f64) -> f64 {
    if task_loss <= 0.0 {
        return 0.0;
    }
    let reg = reg_loss.max(0.0);
    gamma * task_loss / ((1.0 + gamma) * task_loss + reg)
}

/// Base learning rate divided by 10 for every milestone already crossed.
pub fn lr_at(base: f64, milestones: &[u64], step: u64) -> f64 {
    let crossed = milestones.iter().filter(|&&m| m <= step).count();
    base / 10f64.powi(crossed as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: TrainVariant,
    pub eps_schedule: EpsSchedule,
    pub lambda_schedule: LambdaSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global step indices at which the learning rate drops by 10×.
    #[serde(default)]
    pub lr_decay_milestones: Vec<u64>,
    pub seed: u64,
    /// Clamp perturbed input intervals to [0, 1] (valid pixel range).
    #[serde(default = "default_clip_input")]
    pub clip_input: bool,
    /// Examples held out of `train` for validation and checkpoint selection.
    #[serde(default = "default_val_split")]
    pub val_split: usize,
}

fn default_clip_input() -> bool {
    true
}

fn default_val_split() -> usize {
    5000
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.eps_schedule.validate()?;
        self.lambda_schedule.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if matches!(self.lambda_schedule, LambdaSchedule::Ahs { .. }) && self.val_split == 0 {
            return Err(Error::InvalidConfig(
                "ahs lambda schedule needs a nonempty validation split".into(),
            ));
        }
        Ok(())
    }
}

/// Adam first/second-moment state, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vector>,
    v_b: Vec<Vector>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(net: &Network) -> Self {
        let mut m_w = Vec::new();
        let mut v_w = Vec::new();
        let mut m_b = Vec::new();
        let mut v_b = Vec::new();
        for layer in net.layers() {
            let w = layer.param_weight();
            m_w.push(Matrix::zeros(w.rows(), w.cols()));
            v_w.push(Matrix::zeros(w.rows(), w.cols()));
            let b = layer.param_bias();
            m_b.push(Vector::zeros(b.len()));
            v_b.push(Vector::zeros(b.len()));
        }
        OptimizerState {
            m_w,
            v_w,
            m_b,
            v_b,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. A zero gradient leaves both the
/// moments and the parameter untouched.
pub fn adam_step(
    net: &mut Network,
    state: &mut OptimizerState,
    grads: &GradientSet,
    lr: f64,
) -> Result<()> {
    if grads.weights.len() != net.n_layers() || grads.biases.len() != net.n_layers() {
        return Err(Error::Shape {
            op: "adam_step",
            expected: format!("{} layers", net.n_layers()),
            got: format!("{} weight / {} bias grads", grads.weights.len(), grads.biases.len()),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);

    for l in 0..net.n_layers() {
        let layer = &net.layers()[l];
        let mut w = layer.param_weight();
        let mut b = layer.param_bias();
        let gw = &grads.weights[l];
        let gb = &grads.biases[l];
        if gw.as_slice().len() != w.as_slice().len() || gb.len() != b.len() {
            return Err(Error::Shape {
                op: "adam_step",
                expected: format!("layer {l}: {}x{} weights", w.rows(), w.cols()),
                got: format!("{}x{} grads", gw.rows(), gw.cols()),
            });
        }

        {
            let ws = w.as_mut_slice();
            let gs = gw.as_slice();
            let ms = state.m_w[l].as_mut_slice();
            let vs = state.v_w[l].as_mut_slice();
            for i in 0..ws.len() {
                ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * gs[i];
                vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * gs[i] * gs[i];
                ws[i] -= lr * (ms[i] / bc1) / ((vs[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
        {
            let bs = b.as_mut_slice();
            let ms = state.m_b[l].as_mut_slice();
            let vs = state.v_b[l].as_mut_slice();
            for i in 0..bs.len() {
                ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * gb[i];
                vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * gb[i] * gb[i];
                bs[i] -= lr * (ms[i] / bc1) / ((vs[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
        net.layers_mut()[l].assign_params(w, b)?;
    }
    Ok(())
}

/// One row of the per-epoch metrics stream.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Global steps completed by the end of this epoch.
    pub step: u64,
    /// ε used for the final batch of the epoch.
    pub eps: f64,
    /// λ used for the final batch of the epoch.
    pub lambda: f64,
    /// Mean total objective over the epoch's training examples.
    pub train_loss: f64,
    /// Mean regularizer Λ over the epoch's training examples.
    pub reg_loss: f64,
    pub val_acc: f64,
    /// Certified accuracy on the validation split at the target ε.
    pub val_cert_acc: f64,
    /// Seconds spent in the batch loop (validation passes excluded).
    pub wallclock_s: f64,
    pub fwd_pass_count: u64,
    pub bwd_pass_count: u64,
}

#[derive(Debug, Clone)]
pub struct TrainFailure {
    pub epoch: usize,
    pub step: u64,
    pub message: String,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters after the last completed optimizer step.
    pub final_net: Network,
    /// Checkpoint with the best validation certified accuracy (earliest on ties).
    pub best_net: Network,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Present when training aborted on a numeric failure; in that case the
    /// nets above hold the state from before the failing batch.
    pub failure: Option<TrainFailure>,
}

fn effective_lambda(cfg: &TrainConfig, step: u64, ahs_lambda: f64) -> f64 {
    if cfg.variant == TrainVariant::Standard {
        return 0.0;
    }
    match cfg.lambda_schedule {
        LambdaSchedule::Linear { start, end, ramp_steps } => {
            if ramp_steps == 0 || step >= ramp_steps {
                end
            } else {
                start + (end - start) * step as f64 / ramp_steps as f64
            }
        }
        LambdaSchedule::Ahs { .. } => ahs_lambda,
    }
}

fn clean_accuracy(net: &Network, set: &Dataset) -> Result<f64> {
    if set.len() == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..set.len() {
        let trace = net.forward(set.image(i))?;
        if trace.logits().argmax() == set.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

fn certified_accuracy_ibp(
    net: &Network,
    set: &Dataset,
    pert: &PerturbationSpec,
    clip_input: bool,
) -> Result<f64> {
    if set.len() == 0 {
        return Ok(0.0);
    }
    let mut certified = 0usize;
    for i in 0..set.len() {
        let trace = net.forward(set.image(i))?;
        let truth = set.label(i);
        if trace.logits().argmax() != truth {
            continue;
        }
        let bounds = ibp_propagate(net, set.image(i), pert, clip_input)?;
        if ibp_certify(&bounds, truth)? {
            certified += 1;
        }
    }
    Ok(certified as f64 / set.len() as f64)
}

/// Mean (nominal loss, regularizer) over a dataset at the given ε.
fn validation_losses(
    net: &Network,
    set: &Dataset,
    pert: &PerturbationSpec,
    variant: TrainVariant,
    clip_input: bool,
) -> Result<(f64, f64)> {
    let mut task = 0.0;
    let mut reg = 0.0;
    for i in 0..set.len() {
        let y = one_hot(set.label(i), net.output_dim());
        let parts = robust_loss_parts(
            net,
            set.image(i),
            pert,
            &y,
            variant,
            1.0,
            Loss::CrossEntropy,
            clip_input,
        )?;
        task += parts.nominal;
        reg += parts.regularizer;
    }
    let n = set.len().max(1) as f64;
    Ok((task / n, reg / n))
}

/// Minimize the robust cross-entropy objective over `data` with Adam.
///
/// The incoming `net` provides the initial parameters. `data` is split
/// into train/validation portions by `cfg.val_split` (seeded, disjoint).
/// Aborts — without erroring — on a numeric failure, retaining the
/// parameters from before the failing batch.
pub fn train(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = split(data, cfg.val_split, cfg.seed)?;
    if train_set.len() == 0 {
        return Err(Error::InvalidConfig(
            "no training examples left after the validation split".into(),
        ));
    }

    let mut net = net;
    let mut opt = OptimizerState::new(&net);
    let target_pert = PerturbationSpec::new(cfg.eps_schedule.target)?;
    let mut ahs_lambda = 0.0; // first AHS epoch trains unregularized
    let mut step: u64 = 0;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut failure = None;

    'epochs: for epoch in 0..cfg.epochs {
        let timer = Instant::now();
        let mut last_eps = cfg.eps_schedule.eps_at(step);
        let mut last_lambda = effective_lambda(cfg, step, ahs_lambda);
        let mut sum_total = 0.0;
        let mut sum_reg = 0.0;
        let mut seen = 0usize;

        let (body, counts) = counter::delta(|| -> Result<Option<TrainFailure>> {
            for (xs, ys) in batches(&train_set, cfg.batch_size, cfg.seed, epoch) {
                let eps_now = cfg.eps_schedule.eps_at(step);
                let pert = PerturbationSpec::new(eps_now)?;
                let lambda = effective_lambda(cfg, step, ahs_lambda);
                last_eps = eps_now;
                last_lambda = lambda;

                let mut acc = GradientSet::zeros_like(&net);
                for (x, y) in xs.iter().zip(ys.iter()) {
                    match backward_robust(
                        &net,
                        x,
                        &pert,
                        y,
                        cfg.variant,
                        lambda,
                        Loss::CrossEntropy,
                        cfg.clip_input,
                    ) {
                        Ok((value, grads)) => {
                            acc.add(&grads);
                            sum_total += value.total;
                            sum_reg += value.regularizer;
                        }
                        Err(Error::NumericFailure { context, layer }) => {
                            return Ok(Some(TrainFailure {
                                epoch,
                                step,
                                message: format!("{context} (layer {layer})"),
                            }));
                        }
                        Err(e) => return Err(e),
                    }
                }
                seen += xs.len();
                acc.scale(1.0 / xs.len() as f64);
                let lr = lr_at(cfg.learning_rate, &cfg.lr_decay_milestones, step);
                adam_step(&mut net, &mut opt, &acc, lr)?;
                step += 1;
            }
            Ok(None)
        });
        let wallclock_s = timer.elapsed().as_secs_f64();
        if let Some(fail) = body? {
            failure = Some(fail);
            break 'epochs;
        }

        let val_acc = clean_accuracy(&net, &val_set)?;
        let val_cert_acc = certified_accuracy_ibp(&net, &val_set, &target_pert, cfg.clip_input)?;
        let n = seen.max(1) as f64;
        metrics.push(EpochMetrics {
            epoch,
            step,
            eps: last_eps,
            lambda: last_lambda,
            train_loss: sum_total / n,
            reg_loss: sum_reg / n,
            val_acc,
            val_cert_acc,
            wallclock_s,
            fwd_pass_count: counts.fwd_passes,
            bwd_pass_count: counts.bwd_passes,
        });

        let improved = match &best {
            None => true,
            Some((acc, _, _)) => val_cert_acc > *acc,
        };
        if improved {
            best = Some((val_cert_acc, epoch, net.clone()));
        }

        if let LambdaSchedule::Ahs { gamma } = cfg.lambda_schedule {
            if cfg.variant != TrainVariant::Standard && epoch + 1 < cfg.epochs {
                let pert = PerturbationSpec::new(cfg.eps_schedule.eps_at(step))?;
                let (task, reg) =
                    validation_losses(&net, &val_set, &pert, cfg.variant, cfg.clip_input)?;
                ahs_lambda = lambda_ahs(gamma, task, reg);
            }
        }
    }

    let (_, best_epoch, best_net) = best.unwrap_or_else(|| (0.0, 0, net.clone()));
    Ok(TrainOutcome {
        final_net: net,
        best_net,
        best_epoch,
        metrics,
        failure,
    })
}
