//! The reweighted truncated backward pass.
//!
//! Given a stored trajectory and a truncation schedule, the adjoint
//! recursion cuts gradient flow wherever X_t = 1 and multiplies each
//! surviving recurrent term by the compensation factor 1/(1-c_t):
//!
//!   δ̃ℓ_t = ∂ℓ/∂s(s_t, o*_t)                                  if X_t = 1 or t = T
//!   δ̃ℓ_t = (1/(1-c_t)) δ̃ℓ_{t+1} ∂F/∂s + ∂ℓ/∂s(s_t, o*_t)     otherwise
//!
//! With probability c_t the recurrent term is dropped, with probability
//! 1-c_t it survives scaled by 1/(1-c_t), so it contributes with factor 1
//! on average and the gradient estimate g̃ = Σ_t δ̃ℓ_t ∂F/∂θ is unbiased
//! over the truncation randomness. Disabling compensation recovers plain
//! truncated BPTT.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynsys::{DynError, DynamicalSystem, ParameterVector, Trajectory};
use crate::gradients::{bptt_full, AlgorithmTag, GradientEstimate};
use crate::schedule::{sample_schedule, SchedulePolicy, TruncationSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("schedule covers {schedule} steps but the trajectory has {trajectory}")]
    ScheduleTooShort { schedule: usize, trajectory: usize },
    #[error("c_t = 1 at non-truncated step {timestep}: compensation factor undefined")]
    DegenerateProbability { timestep: usize },
    #[error(transparent)]
    Dynamics(#[from] DynError),
}

/// The reweighted adjoints δ̃ℓ_t for t = 1..T under one schedule draw.
#[derive(Debug, Clone)]
pub struct ReweightedAdjointSequence {
    pub deltas: Vec<Vec<f64>>,
}

impl ReweightedAdjointSequence {
    /// Adjoint at 1-based timestep t.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.deltas[t - 1]
    }
}

/// Runs the reweighted backward pass over the whole trajectory and returns
/// the gradient estimate g̃ together with the per-step adjoints.
///
/// With `compensate = false` the factors 1/(1-c_t) are replaced by 1,
/// which is the plain truncated-BPTT estimate. A schedule that never
/// truncates and carries zero probabilities reproduces exact BPTT.
pub fn artbp_backward_with_adjoints<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    trajectory: &Trajectory,
    schedule: &TruncationSchedule,
    compensate: bool,
) -> Result<(GradientEstimate, ReweightedAdjointSequence), EngineError> {
    let horizon = trajectory.len();
    assert!(horizon >= 1, "trajectory must cover at least one step");
    if schedule.len() < horizon {
        return Err(EngineError::ScheduleTooShort {
            schedule: schedule.len(),
            trajectory: horizon,
        });
    }

    let mut grad = vec![0.0; params.len()];
    let mut deltas = vec![Vec::new(); horizon];

    let mut delta =
        system.dloss_dstate(trajectory.post_state(horizon), &trajectory.observed(horizon).target);
    for t in (1..=horizon).rev() {
        deltas[t - 1] = delta.clone();
        let (dstate, dparams) = system.vjp_step(
            params,
            trajectory.pre_state(t),
            &trajectory.observed(t).input,
            &delta,
        );
        for (g, d) in grad.iter_mut().zip(&dparams) {
            *g += d;
        }
        if t > 1 {
            let prev = t - 1;
            let mut next = system.dloss_dstate(
                trajectory.post_state(prev),
                &trajectory.observed(prev).target,
            );
            if !schedule.indicator(prev) {
                let factor = if compensate {
                    let c = schedule.prob(prev);
                    if c == 1.0 {
                        return Err(EngineError::DegenerateProbability { timestep: prev });
                    }
                    1.0 / (1.0 - c)
                } else {
                    1.0
                };
                for (n, d) in next.iter_mut().zip(&dstate) {
                    *n += factor * d;
                }
            }
            delta = next;
        }
    }

    let algorithm = if compensate {
        AlgorithmTag::Artbp
    } else {
        AlgorithmTag::TruncatedBptt
    };
    Ok((
        GradientEstimate {
            values: grad,
            algorithm,
            schedule_seed: Some(schedule.seed()),
        },
        ReweightedAdjointSequence { deltas },
    ))
}

/// `artbp_backward_with_adjoints` without the adjoint record.
pub fn artbp_backward<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    trajectory: &Trajectory,
    schedule: &TruncationSchedule,
    compensate: bool,
) -> Result<GradientEstimate, EngineError> {
    artbp_backward_with_adjoints(system, params, trajectory, schedule, compensate)
        .map(|(g, _)| g)
}

/// Backward pass over one inter-truncation gap.
///
/// `sub_trajectory` spans exactly one gap (its final step is the truncation
/// point, or the end of the data), and `c_values[k]` is the truncation
/// probability at the k-th step of the gap; the last entry belongs to the
/// truncating step and is never used as a compensation factor. The adjoint
/// entering the gap from the right is zero, so summing the contributions
/// of a full partition of 1..T reproduces the whole-sequence estimate.
pub fn subsequence_backward<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    sub_trajectory: &Trajectory,
    c_values: &[f64],
    compensate: bool,
) -> Result<GradientEstimate, EngineError> {
    let len = sub_trajectory.len();
    assert_eq!(c_values.len(), len, "one probability per step of the gap");
    let mut indicators = vec![false; len];
    indicators[len - 1] = true;
    let schedule = TruncationSchedule::from_parts(indicators, c_values.to_vec(), 0);
    artbp_backward(system, params, sub_trajectory, &schedule, compensate)
}

/// Monte-Carlo check of one step of the backward induction behind the
/// unbiasedness proof: the mean of δ̃ℓ_t over schedule draws should match
/// the exact adjoint δℓ_t.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub timestep: usize,
    pub n_samples: usize,
    /// Monte-Carlo mean of δ̃ℓ_t per state coordinate.
    pub mean: Vec<f64>,
    /// Standard error of that mean per coordinate.
    pub stderr: Vec<f64>,
    /// Exact δℓ_t from full BPTT.
    pub reference: Vec<f64>,
    /// (mean - reference) / stderr per coordinate; 0 where both the
    /// deviation and the spread vanish, infinite where only the spread does.
    pub z_scores: Vec<f64>,
}

impl ProbeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0, |m, z| m.max(z.abs()))
    }
}

/// Streaming per-coordinate mean/variance (Welford).
#[derive(Debug, Clone)]
pub struct VectorMoments {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VectorMoments {
    pub fn new(dim: usize) -> Self {
        VectorMoments {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Merges another accumulator; merge order must be fixed for
    /// deterministic results.
    pub fn merge(&mut self, other: &VectorMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            // d == 0 must leave the mean bit-identical, so zero-variance
            // accumulations stay exact across merges.
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean per coordinate.
    pub fn stderr(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.m2
            .iter()
            .map(|&m2| {
                if self.count > 1 {
                    (m2 / (n - 1.0) / n).sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// z = (mean - reference) / stderr with the zero-variance path handled:
/// exact agreement scores 0, disagreement with zero spread scores infinite.
pub fn z_score(mean: f64, reference: f64, stderr: f64) -> f64 {
    let dev = mean - reference;
    if stderr == 0.0 {
        if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dev / stderr
    }
}

/// Runs `n_samples` independent schedule draws (seeds `seed_base + k`) and
/// compares the Monte-Carlo mean of δ̃ℓ_t against the exact adjoint δℓ_t.
///
/// Replicas fan out over a worker pool; accumulators merge in replica
/// order, so the report is deterministic.
pub fn conditional_expectation_probe<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    trajectory: &Trajectory,
    policy: &SchedulePolicy,
    timestep: usize,
    n_samples: usize,
    seed_base: u64,
) -> Result<ProbeReport, EngineError> {
    assert!(timestep >= 1 && timestep <= trajectory.len());
    assert!(n_samples >= 1);
    let (_, exact) = bptt_full(system, params, trajectory);
    let reference = exact.at(timestep).to_vec();
    let dim = reference.len();

    let chunk = 1024usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let partials: Result<Vec<VectorMoments>, EngineError> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(n_samples);
            let mut acc = VectorMoments::new(dim);
            for k in lo..hi {
                let schedule = sample_schedule(policy, trajectory.len(), seed_base + k as u64);
                let (_, adjoints) =
                    artbp_backward_with_adjoints(system, params, trajectory, &schedule, true)?;
                acc.push(adjoints.at(timestep));
            }
            Ok(acc)
        })
        .collect();
    let mut acc = VectorMoments::new(dim);
    for p in partials? {
        acc.merge(&p);
    }

    let mean = acc.mean().to_vec();
    let stderr = acc.stderr();
    let z_scores: Vec<f64> = (0..dim)
        .map(|i| z_score(mean[i], reference[i], stderr[i]))
        .collect();
    Ok(ProbeReport {
        timestep,
        n_samples,
        mean,
        stderr,
        reference,
        z_scores,
    })
}
