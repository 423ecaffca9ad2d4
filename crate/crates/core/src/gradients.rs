//! Exact full-sequence BPTT and the finite-difference total-loss oracle.
//! Both serve as ground truth when verifying the reweighted truncated
//! estimator.

use rayon::prelude::*;

use crate::dynsys::{
    run_forward, DynError, DynamicalSystem, ObservedStep, ParameterVector, StateVector,
    Trajectory,
};

/// Which backward pass produced a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgorithmTag {
    BpttFull,
    FiniteDifference,
    Artbp,
    TruncatedBptt,
}

/// A flat gradient aligned with the parameter vector, tagged with its
/// origin and, for stochastic estimates, the schedule seed that produced it.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub algorithm: AlgorithmTag,
    pub schedule_seed: Option<u64>,
}

impl GradientEstimate {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The backward adjoints δℓ_t = ∂L_T/∂s_t for t = 1..T.
#[derive(Debug, Clone)]
pub struct AdjointSequence {
    pub deltas: Vec<Vec<f64>>,
}

impl AdjointSequence {
    /// Adjoint at 1-based timestep t.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.deltas[t - 1]
    }
}

/// Exact full-sequence BPTT over a stored trajectory.
///
/// The adjoint recursion runs right to left:
///   δℓ_T = ∂ℓ/∂s(s_T, o*_T)
///   δℓ_t = δℓ_{t+1} · ∂F/∂s(x_{t+1}, s_t, θ) + ∂ℓ/∂s(s_t, o*_t)
/// and the gradient accumulates δℓ_t · ∂F/∂θ(x_t, s_{t-1}, θ) over all t.
pub fn bptt_full<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    trajectory: &Trajectory,
) -> (GradientEstimate, AdjointSequence) {
    let horizon = trajectory.len();
    assert!(horizon >= 1, "trajectory must cover at least one step");
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
            let mut next = system.dloss_dstate(
                trajectory.post_state(t - 1),
                &trajectory.observed(t - 1).target,
            );
            for (n, d) in next.iter_mut().zip(&dstate) {
                *n += d;
            }
            delta = next;
        }
    }

    (
        GradientEstimate {
            values: grad,
            algorithm: AlgorithmTag::BpttFull,
            schedule_seed: None,
        },
        AdjointSequence { deltas },
    )
}

/// Central-difference gradient of the total loss L_T, re-running the full
/// forward pass from the same initial state for each perturbed coordinate.
///
/// Step size per coordinate is `eps * (1 + |θ_i|)`; coordinates evaluate
/// independently and in parallel.
pub fn finite_difference_gradient<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    initial_state: &StateVector,
    observed: &[ObservedStep],
    eps: f64,
) -> Result<GradientEstimate, DynError> {
    assert!(eps > 0.0);
    let base = params.as_slice();
    let total_loss = |p: Vec<f64>| -> Result<f64, DynError> {
        let pv = ParameterVector::new(p)?;
        Ok(run_forward(system, &pv, initial_state.clone(), observed)?.total_loss())
    };
    let values: Result<Vec<f64>, DynError> = (0..base.len())
        .into_par_iter()
        .map(|i| {
            let step = eps * (1.0 + base[i].abs());
            let mut plus = base.to_vec();
            let mut minus = base.to_vec();
            plus[i] += step;
            minus[i] -= step;
            Ok((total_loss(plus)? - total_loss(minus)?) / (2.0 * step))
        })
        .collect();
    Ok(GradientEstimate {
        values: values?,
        algorithm: AlgorithmTag::FiniteDifference,
        schedule_seed: None,
    })
}
