//! Online subsequence-by-subsequence training.
//!
//! The loop draws the next truncation point from the schedule policy, runs
//! the forward pass over that subsequence, backpropagates (with or without
//! compensation), applies one optimizer update, and carries the final
//! hidden state into the next subsequence. The state is never reset and
//! subsequences are never shuffled.

use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dynsys::{
    run_forward, DynError, DynamicalSystem, ObservedStep, ParameterVector, StateVector,
};
use crate::engine::{subsequence_backward, EngineError};
use crate::rng::{stream_rng, streams};
use crate::schedule::{next_subsequence_length, SchedulePolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training stream must cover at least one step")]
    EmptyStream,
    #[error("stream has {available} steps, {requested} requested")]
    StreamTooShort { available: usize, requested: usize },
    #[error("batch lanes must be non-empty and of equal length")]
    UnevenLanes,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Which backward pass the trainer runs on each subsequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Plain truncated BPTT: gradient flow cut at boundaries, no
    /// compensation factors.
    Truncated,
    /// Reweighted truncated BPTT: each non-truncated backward step scaled
    /// by 1/(1-c_t).
    Artbp,
}

impl Algorithm {
    pub fn compensate(self) -> bool {
        matches!(self, Algorithm::Artbp)
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Truncated => "truncated",
            Algorithm::Artbp => "artbp",
        }
    }
}

/// Why a training run stopped before its step budget.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEvent {
    /// Global 1-based timestep at which the failure surfaced.
    pub step: usize,
    pub reason: String,
}

/// Per-step loss record of a run. The cumulative average is recomputed
/// from the per-step record on demand; wall-clock is bookkeeping only and
/// never serialized.
#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    pub losses: Vec<f64>,
    /// Index one past the last loss of each completed epoch.
    pub epoch_ends: Vec<usize>,
    pub epoch_wall_clock: Vec<Duration>,
    pub divergence: Option<DivergenceEvent>,
}

impl LossTrace {
    /// (1/t) Σ_{u<=t} ℓ_u for every recorded step.
    pub fn cumulative_average(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.losses.len());
        let mut sum = 0.0;
        for (i, l) in self.losses.iter().enumerate() {
            sum += l;
            out.push(sum / (i + 1) as f64);
        }
        out
    }

    /// Mean loss over one recorded epoch.
    pub fn epoch_mean(&self, epoch: usize) -> f64 {
        let start = if epoch == 0 { 0 } else { self.epoch_ends[epoch - 1] };
        let end = self.epoch_ends[epoch];
        let span = &self.losses[start..end];
        span.iter().sum::<f64>() / span.len() as f64
    }
}

/// SGD with the decaying schedule η_t = η₀/√(1+t), or Adam with bias
/// correction. The step counter advances once per subsequence update.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        eta0: f64,
        t: u64,
    },
    Adam {
        eta: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
    },
}

/// The SGD learning rate after t prior updates.
pub fn sgd_learning_rate(eta0: f64, t: u64) -> f64 {
    eta0 / (1.0 + t as f64).sqrt()
}

impl Optimizer {
    pub fn sgd(eta0: f64) -> Self {
        Optimizer::Sgd { eta0, t: 0 }
    }

    /// Adam with the conventional defaults β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn adam(eta: f64) -> Self {
        Optimizer::Adam {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Sgd { t, .. } | Optimizer::Adam { t, .. } => *t,
        }
    }

    /// One parameter update. A non-finite result aborts with a diagnostic
    /// instead of poisoning the parameters silently.
    pub fn step(&mut self, params: &mut ParameterVector, grad: &[f64]) -> Result<(), String> {
        assert_eq!(params.len(), grad.len(), "gradient/parameter shape mismatch");
        match self {
            Optimizer::Sgd { eta0, t } => {
                let eta = sgd_learning_rate(*eta0, *t);
                let values = params.as_mut_slice();
                for (p, g) in values.iter_mut().zip(grad) {
                    *p -= eta * g;
                }
                *t += 1;
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(format!(
                        "SGD update produced non-finite parameter {i} at optimizer step {t}"
                    ));
                }
            }
            Optimizer::Adam {
                eta,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                if m.is_empty() {
                    *m = vec![0.0; grad.len()];
                    *v = vec![0.0; grad.len()];
                }
                assert_eq!(m.len(), grad.len(), "moment/parameter shape mismatch");
                *t += 1;
                let tf = *t as f64;
                let bc1 = 1.0 - beta1.powf(tf);
                let bc2 = 1.0 - beta2.powf(tf);
                let values = params.as_mut_slice();
                for i in 0..grad.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    values[i] -= *eta * m_hat / (v_hat.sqrt() + *eps);
                }
                if let Some(i) = values.iter().position(|x| !x.is_finite()) {
                    return Err(format!(
                        "Adam update produced non-finite parameter {i} at optimizer step {t}"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Truncation probabilities inside one gap: δt runs 1..=len because every
/// gap starts on the step right after a truncation.
fn gap_probs(policy: &SchedulePolicy, len: usize) -> Vec<f64> {
    (1..=len).map(|dt| policy.prob(dt)).collect()
}

/// Online training over a single stream, processing exactly `total_steps`
/// timesteps. Deterministic given (config, seed). A divergence terminates
/// the loop and is recorded in the trace; it is an experimental outcome,
/// not a crash.
#[allow(clippy::too_many_arguments)]
pub fn train_online<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &mut ParameterVector,
    stream: &[ObservedStep],
    policy: &SchedulePolicy,
    algorithm: Algorithm,
    opt: &mut Optimizer,
    total_steps: usize,
    seed: u64,
) -> Result<LossTrace, TrainError> {
    if stream.is_empty() || total_steps == 0 {
        return Err(TrainError::EmptyStream);
    }
    if stream.len() < total_steps {
        return Err(TrainError::StreamTooShort {
            available: stream.len(),
            requested: total_steps,
        });
    }

    let started = Instant::now();
    let mut rng = stream_rng(seed, streams::SCHEDULE);
    let mut trace = LossTrace::default();
    let mut state = system.initial_state();
    let mut pos = 0usize;

    while pos < total_steps {
        let gap = next_subsequence_length(policy, &mut rng);
        let end = (pos + gap).min(total_steps);
        let len = end - pos;
        let trajectory = match run_forward(system, params, state.clone(), &stream[pos..end]) {
            Ok(t) => t,
            Err(e) => {
                trace.divergence = Some(DivergenceEvent {
                    step: pos + divergence_step(&e),
                    reason: e.to_string(),
                });
                break;
            }
        };
        let grad = subsequence_backward(
            system,
            params,
            &trajectory,
            &gap_probs(policy, len),
            algorithm.compensate(),
        )?;
        for s in &trajectory.steps {
            trace.losses.push(s.loss);
        }
        state = trajectory.steps.last().expect("nonempty gap").state.clone();
        if let Err(reason) = opt.step(params, &grad.values) {
            trace.divergence = Some(DivergenceEvent { step: end, reason });
            break;
        }
        pos = end;
    }

    trace.epoch_ends.push(trace.losses.len());
    trace.epoch_wall_clock.push(started.elapsed());
    Ok(trace)
}

fn divergence_step(e: &DynError) -> usize {
    match e {
        DynError::DivergedState { timestep } | DynError::DivergedLoss { timestep } => *timestep,
        _ => 0,
    }
}

/// Per-epoch snapshot handed to the `train_batched_with` observer.
pub struct EpochStats<'a> {
    pub epoch: usize,
    pub params: &'a ParameterVector,
    /// Mean per-step training loss over this epoch, averaged across lanes.
    pub mean_loss: f64,
}

/// Batched training: B lanes advance in lockstep through shared truncation
/// points (one schedule draw per subsequence, applied across lanes), lane
/// gradients are averaged in lane order before each optimizer update, and
/// per-lane states carry across subsequences and epochs.
///
/// With `per_lane_schedules` each lane draws its own truncation points and
/// processing advances in rounds of one gap per lane; lanes that finish
/// the epoch early sit out the remaining rounds.
#[allow(clippy::too_many_arguments)]
pub fn train_batched<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &mut ParameterVector,
    lanes: &[Vec<ObservedStep>],
    policy: &SchedulePolicy,
    algorithm: Algorithm,
    opt: &mut Optimizer,
    epochs: usize,
    seed: u64,
    per_lane_schedules: bool,
) -> Result<LossTrace, TrainError> {
    train_batched_with(
        system,
        params,
        lanes,
        policy,
        algorithm,
        opt,
        epochs,
        seed,
        per_lane_schedules,
        |_| {},
    )
}

/// `train_batched` with an observer invoked after every epoch (validation
/// scoring, checkpointing).
#[allow(clippy::too_many_arguments)]
pub fn train_batched_with<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &mut ParameterVector,
    lanes: &[Vec<ObservedStep>],
    policy: &SchedulePolicy,
    algorithm: Algorithm,
    opt: &mut Optimizer,
    epochs: usize,
    seed: u64,
    per_lane_schedules: bool,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<LossTrace, TrainError> {
    if lanes.is_empty() || lanes[0].is_empty() {
        return Err(TrainError::UnevenLanes);
    }
    let lane_len = lanes[0].len();
    if lanes.iter().any(|l| l.len() != lane_len) {
        return Err(TrainError::UnevenLanes);
    }

    struct LaneFailure {
        lane: usize,
        step: usize,
        reason: String,
    }
    type LaneOutcome = Result<Option<(Vec<f64>, Vec<f64>, StateVector)>, LaneFailure>;

    let n_lanes = lanes.len();
    let mut states: Vec<StateVector> = (0..n_lanes).map(|_| system.initial_state()).collect();
    let mut shared_rng = stream_rng(seed, streams::SCHEDULE);
    let mut lane_rngs: Vec<ChaCha8Rng> = (0..n_lanes)
        .map(|k| stream_rng(seed, streams::SCHEDULE + 100 + k as u64))
        .collect();
    let mut trace = LossTrace::default();

    'epochs: for epoch in 0..epochs {
        let started = Instant::now();
        let epoch_start_idx = trace.losses.len();
        let mut positions = vec![0usize; n_lanes];

        loop {
            let gaps: Vec<usize> = if per_lane_schedules {
                positions
                    .iter()
                    .zip(lane_rngs.iter_mut())
                    .map(|(&pos, rng)| {
                        if pos < lane_len {
                            next_subsequence_length(policy, rng)
                        } else {
                            0
                        }
                    })
                    .collect()
            } else {
                let g = next_subsequence_length(policy, &mut shared_rng);
                vec![g; n_lanes]
            };

            // Forward + backward per lane against the fixed parameter
            // snapshot; lanes are independent and run concurrently.
            let params_ref: &ParameterVector = params;
            let states_ref: &[StateVector] = &states;
            let outcomes: Vec<LaneOutcome> =
                (0..n_lanes)
                    .into_par_iter()
                    .map(|k| {
                        let pos = positions[k];
                        if pos >= lane_len || gaps[k] == 0 {
                            return Ok(None);
                        }
                        let end = (pos + gaps[k]).min(lane_len);
                        let len = end - pos;
                        let trajectory = run_forward(
                            system,
                            params_ref,
                            states_ref[k].clone(),
                            &lanes[k][pos..end],
                        )
                        .map_err(|e| LaneFailure {
                            lane: k,
                            step: pos + divergence_step(&e),
                            reason: e.to_string(),
                        })?;
                        let grad = subsequence_backward(
                            system,
                            params_ref,
                            &trajectory,
                            &gap_probs(policy, len),
                            algorithm.compensate(),
                        )
                        .map_err(|e| LaneFailure {
                            lane: k,
                            step: end,
                            reason: e.to_string(),
                        })?;
                        let losses: Vec<f64> = trajectory.steps.iter().map(|s| s.loss).collect();
                        let final_state =
                            trajectory.steps.last().expect("nonempty gap").state.clone();
                        Ok(Some((grad.values, losses, final_state)))
                    })
                    .collect();

            // Reduce in lane order for determinism.
            let mut grad_sum = vec![0.0; params.len()];
            let mut contributing = 0usize;
            let mut lane_losses: Vec<Vec<f64>> = Vec::with_capacity(n_lanes);
            for (k, outcome) in outcomes.into_iter().enumerate() {
                match outcome {
                    Ok(None) => {}
                    Ok(Some((grad, losses, final_state))) => {
                        for (s, g) in grad_sum.iter_mut().zip(&grad) {
                            *s += g;
                        }
                        contributing += 1;
                        positions[k] += losses.len();
                        states[k] = final_state;
                        lane_losses.push(losses);
                    }
                    Err(failure) => {
                        trace.divergence = Some(DivergenceEvent {
                            step: failure.step,
                            reason: format!("lane {}: {}", failure.lane, failure.reason),
                        });
                        break 'epochs;
                    }
                }
            }
            if contributing == 0 {
                break;
            }
            for g in grad_sum.iter_mut() {
                *g /= contributing as f64;
            }

            // Per-timestep loss averaged over the lanes active this round.
            let max_len = lane_losses.iter().map(|l| l.len()).max().unwrap_or(0);
            for i in 0..max_len {
                let active: Vec<f64> = lane_losses
                    .iter()
                    .filter_map(|l| l.get(i).copied())
                    .collect();
                trace
                    .losses
                    .push(active.iter().sum::<f64>() / active.len() as f64);
            }

            if let Err(reason) = opt.step(params, &grad_sum) {
                trace.divergence = Some(DivergenceEvent {
                    step: positions.iter().copied().max().unwrap_or(0),
                    reason,
                });
                break 'epochs;
            }

            if positions.iter().all(|&p| p >= lane_len) {
                break;
            }
        }

        trace.epoch_ends.push(trace.losses.len());
        trace.epoch_wall_clock.push(started.elapsed());
        let span = &trace.losses[epoch_start_idx..];
        let mean_loss = if span.is_empty() {
            f64::NAN
        } else {
            span.iter().sum::<f64>() / span.len() as f64
        };
        on_epoch(EpochStats {
            epoch,
            params,
            mean_loss,
        });
    }

    Ok(trace)
}
