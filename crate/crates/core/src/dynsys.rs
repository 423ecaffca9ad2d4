//! The parametric dynamical-system contract shared by every model and every
//! backward-pass algorithm.
//!
//! A system evolves a state `s` under a transition `s_{t+1} = F(x_{t+1}, s_t, θ)`
//! and incurs a per-step loss `ℓ(s_t, o*_t)` against a target. Gradient
//! algorithms only ever consume adjoint products (VJPs), never full Jacobians,
//! so the contract exposes exactly those.

use thiserror::Error;

/// Errors raised by transitions, losses, and the forward runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynError {
    /// The transition produced a non-finite state entry.
    #[error("state diverged (non-finite) at timestep {timestep}")]
    DivergedState { timestep: usize },
    /// The loss evaluated to a non-finite value.
    #[error("loss diverged (non-finite) at timestep {timestep}")]
    DivergedLoss { timestep: usize },
    /// An argument's length does not match the system's declared dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl DynError {
    /// Rewrites the timestep carried by a divergence error. The forward
    /// runner uses this to attach the 1-based step index at which a
    /// context-free `step`/`loss` call blew up.
    pub fn at_timestep(self, t: usize) -> Self {
        match self {
            DynError::DivergedState { .. } => DynError::DivergedState { timestep: t },
            DynError::DivergedLoss { .. } => DynError::DivergedLoss { timestep: t },
            other => other,
        }
    }
}

/// Flat vector of all trainable parameters θ of a system.
///
/// Entries must be finite at construction and stay finite across optimizer
/// steps; the length is fixed for the lifetime of a system instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    /// Wraps a raw vector, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self, DynError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DynError::DimensionMismatch(format!(
                "parameter entry {i} is non-finite"
            )));
        }
        Ok(ParameterVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mutable access for optimizer updates. Callers are responsible for
    /// re-checking finiteness after the update (the optimizers do).
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// State vector s_t of a system. Entries are finite after every accepted
/// transition; a non-finite transition output is a `DivergedState` error,
/// never silently propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One observed value on the input or target side of a step: either a dense
/// real vector or a token id (one-hot by convention).
#[derive(Debug, Clone, PartialEq)]
pub enum StepValue {
    Vector(Vec<f64>),
    Token(usize),
}

impl StepValue {
    pub fn empty() -> Self {
        StepValue::Vector(Vec::new())
    }

    /// The dense vector, if this value is one.
    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            StepValue::Vector(v) => Some(v),
            StepValue::Token(_) => None,
        }
    }

    pub fn as_token(&self) -> Option<usize> {
        match self {
            StepValue::Token(t) => Some(*t),
            StepValue::Vector(_) => None,
        }
    }
}

/// The observed (input, target) pair at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedStep {
    pub input: StepValue,
    pub target: StepValue,
}

/// One recorded step of a forward pass: the observation, the post-state
/// `s_t` exactly as computed (stored, never recomputed), and the loss ℓ_t.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub observed: ObservedStep,
    pub state: StateVector,
    pub loss: f64,
}

/// A stored forward pass over a (sub)sequence: the initial state `s_0` and
/// the per-step records for t = 1..T.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_state: StateVector,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    /// Number of timesteps T covered by this trajectory.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of the per-step losses.
    pub fn total_loss(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }

    /// State entering transition t (1-based): s_{t-1}.
    pub fn pre_state(&self, t: usize) -> &StateVector {
        if t == 1 {
            &self.initial_state
        } else {
            &self.steps[t - 2].state
        }
    }

    /// State after transition t (1-based): s_t.
    pub fn post_state(&self, t: usize) -> &StateVector {
        &self.steps[t - 1].state
    }

    /// Observation at timestep t (1-based).
    pub fn observed(&self, t: usize) -> &ObservedStep {
        &self.steps[t - 1].observed
    }
}

/// The contract every concrete model implements and every gradient
/// algorithm consumes.
///
/// All methods are pure functions of their arguments: identical inputs give
/// bit-identical outputs within one build, and calls are safe from
/// concurrent workers against a fixed parameter snapshot.
pub trait DynamicalSystem: Sync {
    /// Length d of the parameter vector.
    fn param_dim(&self) -> usize;

    /// Length n_s of the state vector.
    fn state_dim(&self) -> usize;

    /// The state the system starts from.
    fn initial_state(&self) -> StateVector;

    /// One transition s_{t+1} = F(x_{t+1}, s_t, θ).
    ///
    /// Fails fast with `DivergedState` if any output entry is non-finite
    /// (the caller rewrites the timestep).
    fn step(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
    ) -> Result<StateVector, DynError>;

    /// Per-step loss ℓ(s_t, o*_t). Finite and non-negative for the built-in
    /// losses; non-finite values are a `DivergedLoss` error.
    fn loss(&self, state: &StateVector, target: &StepValue) -> Result<f64, DynError>;

    /// Row-vector–Jacobian product `adjoint · ∂F/∂s(input, state, θ)`.
    ///
    /// Exact analytic product, linear in the adjoint. `state` is the
    /// pre-transition state the Jacobian is evaluated at.
    fn vjp_state(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64>;

    /// Row-vector–Jacobian product `adjoint · ∂F/∂θ(input, state, θ)`,
    /// length d.
    fn vjp_params(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64>;

    /// Both adjoint products of one transition, sharing the forward
    /// recomputation. Backward passes call this once per timestep; models
    /// with expensive transitions override it.
    fn vjp_step(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        (
            self.vjp_state(params, state, input, adjoint),
            self.vjp_params(params, state, input, adjoint),
        )
    }

    /// Exact gradient ∂ℓ/∂s(s_t, o*_t) of the per-step loss in the state.
    fn dloss_dstate(&self, state: &StateVector, target: &StepValue) -> Vec<f64>;
}

/// Runs the forward pass over `observed`, storing every post-state and
/// per-step loss. Divergence errors carry the 1-based timestep at which
/// the state or loss went non-finite.
pub fn run_forward<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    initial_state: StateVector,
    observed: &[ObservedStep],
) -> Result<Trajectory, DynError> {
    let mut steps = Vec::with_capacity(observed.len());
    let mut state = initial_state.clone();
    for (k, obs) in observed.iter().enumerate() {
        let t = k + 1;
        let next = system
            .step(params, &state, &obs.input)
            .map_err(|e| e.at_timestep(t))?;
        let loss = system
            .loss(&next, &obs.target)
            .map_err(|e| e.at_timestep(t))?;
        steps.push(TrajectoryStep {
            observed: obs.clone(),
            state: next.clone(),
            loss,
        });
        state = next;
    }
    Ok(Trajectory {
        initial_state,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_vector_rejects_non_finite() {
        assert!(ParameterVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParameterVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(ParameterVector::new(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn trajectory_indexing_is_one_based() {
        let traj = Trajectory {
            initial_state: StateVector::new(vec![0.0]),
            steps: vec![
                TrajectoryStep {
                    observed: ObservedStep {
                        input: StepValue::empty(),
                        target: StepValue::Vector(vec![1.0]),
                    },
                    state: StateVector::new(vec![10.0]),
                    loss: 0.5,
                },
                TrajectoryStep {
                    observed: ObservedStep {
                        input: StepValue::empty(),
                        target: StepValue::Vector(vec![1.0]),
                    },
                    state: StateVector::new(vec![20.0]),
                    loss: 1.5,
                },
            ],
        };
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.pre_state(1).as_slice(), &[0.0]);
        assert_eq!(traj.post_state(1).as_slice(), &[10.0]);
        assert_eq!(traj.pre_state(2).as_slice(), &[10.0]);
        assert_eq!(traj.post_state(2).as_slice(), &[20.0]);
        assert_eq!(traj.total_loss(), 2.0);
    }

    #[test]
    fn divergence_error_rewrites_timestep() {
        let e = DynError::DivergedState { timestep: 0 }.at_timestep(7);
        assert_eq!(e, DynError::DivergedState { timestep: 7 });
    }
}
