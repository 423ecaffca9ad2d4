//! Influence balancing: a linear system where one scalar parameter has a
//! positive short-term influence on the tracked agent and a dominant
//! negative long-term one, so any gradient method blind to dependencies
//! beyond the signal-travel time estimates the overall gradient with the
//! wrong sign.
//!
//! A row of p+n agents diffuses half of each agent's state to its left
//! neighbour each step and adds a signal vector (θ, ..., θ, -θ, ..., -θ)
//! with p positive and n negative entries:
//!
//!   s_{t+1} = A s_t + σ θ,   A_{k,k} = A_{k,k+1} = 1/2, 0 elsewhere.
//!
//! The loss targets the leftmost agent: ℓ_t = ½ (s¹_t − 1)².

use crate::dynsys::{DynError, DynamicalSystem, ParameterVector, StateVector, StepValue};

/// The p+n agent diffusion system. The bidiagonal matrix A is never
/// materialized; the transition applies it as a two-term stencil.
#[derive(Debug, Clone)]
pub struct InfluenceBalancingSystem {
    positive: usize,
    negative: usize,
    theta0: f64,
}

/// Builds the system with `p` positive-signal and `n` negative-signal
/// agents. The parameter vector has length 1; the initial state is zero.
pub fn build_influence_balancing(
    p: usize,
    n: usize,
    theta0: f64,
) -> Result<InfluenceBalancingSystem, DynError> {
    if p == 0 || n == 0 {
        return Err(DynError::DimensionMismatch(
            "influence balancing needs at least one positive and one negative agent".into(),
        ));
    }
    Ok(InfluenceBalancingSystem {
        positive: p,
        negative: n,
        theta0,
    })
}

impl InfluenceBalancingSystem {
    pub fn agents(&self) -> usize {
        self.positive + self.negative
    }

    /// Initial parameter vector (θ₀,).
    pub fn initial_params(&self) -> ParameterVector {
        ParameterVector::new(vec![self.theta0]).expect("theta0 finite")
    }

    /// Sign of the signal received by agent k (0-based): +1 for the first
    /// p agents, -1 for the rest.
    fn sign(&self, k: usize) -> f64 {
        if k < self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// Applies the stencil A s: out[k] = (s[k] + s[k+1]) / 2, with the last
    /// agent having no right neighbour.
    fn apply_a(&self, s: &[f64]) -> Vec<f64> {
        let n = self.agents();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let right = if k + 1 < n { s[k + 1] } else { 0.0 };
            out[k] = 0.5 * (s[k] + right);
        }
        out
    }

    fn target_value(target: &StepValue) -> f64 {
        match target {
            StepValue::Vector(v) if v.len() == 1 => v[0],
            // An empty target means the conventional target of 1 on the
            // leftmost agent.
            StepValue::Vector(v) if v.is_empty() => 1.0,
            _ => 1.0,
        }
    }
}

impl DynamicalSystem for InfluenceBalancingSystem {
    fn param_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        self.agents()
    }

    fn initial_state(&self) -> StateVector {
        StateVector::zeros(self.agents())
    }

    fn step(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        _input: &StepValue,
    ) -> Result<StateVector, DynError> {
        if state.len() != self.agents() {
            return Err(DynError::DimensionMismatch(format!(
                "state length {} != {} agents",
                state.len(),
                self.agents()
            )));
        }
        let theta = params[0];
        let mut next = self.apply_a(state.as_slice());
        for (k, v) in next.iter_mut().enumerate() {
            *v += self.sign(k) * theta;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynError::DivergedState { timestep: 0 });
        }
        Ok(StateVector::new(next))
    }

    fn loss(&self, state: &StateVector, target: &StepValue) -> Result<f64, DynError> {
        let goal = Self::target_value(target);
        let d = state[0] - goal;
        let loss = 0.5 * d * d;
        if !loss.is_finite() {
            return Err(DynError::DivergedLoss { timestep: 0 });
        }
        Ok(loss)
    }

    fn vjp_state(
        &self,
        _params: &ParameterVector,
        _state: &StateVector,
        _input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64> {
        // a · A for the bidiagonal stencil: out[k] = (a[k] + a[k-1]) / 2.
        let n = self.agents();
        debug_assert_eq!(adjoint.len(), n);
        let mut out = vec![0.0; n];
        for k in 0..n {
            let left = if k > 0 { adjoint[k - 1] } else { 0.0 };
            out[k] = 0.5 * (adjoint[k] + left);
        }
        out
    }

    fn vjp_params(
        &self,
        _params: &ParameterVector,
        _state: &StateVector,
        _input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64> {
        // ∂F/∂θ is the sign vector σ, so the product is Σ_k a_k σ_k.
        let g = adjoint
            .iter()
            .enumerate()
            .map(|(k, a)| a * self.sign(k))
            .sum();
        vec![g]
    }

    fn dloss_dstate(&self, state: &StateVector, target: &StepValue) -> Vec<f64> {
        let mut out = vec![0.0; self.agents()];
        out[0] = state[0] - Self::target_value(target);
        out
    }
}

/// Closed-form total-loss derivative dL_T/dθ from the forward sensitivity
/// recursion u_{t+1} = A u_t + σ (u_0 = 0, s_0 = 0):
///
///   dL_T/dθ = Σ_t (s¹_t − 1) u¹_t
///
/// Exploits linearity of the system; validates BPTT end to end. The target
/// is the conventional 1 on the leftmost agent.
pub fn exact_total_gradient_ib(
    system: &InfluenceBalancingSystem,
    theta: f64,
    horizon: usize,
) -> f64 {
    let n = system.agents();
    let mut s = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut grad = 0.0;
    for _ in 0..horizon {
        let mut s_next = system.apply_a(&s);
        let mut u_next = system.apply_a(&u);
        for k in 0..n {
            s_next[k] += system.sign(k) * theta;
            u_next[k] += system.sign(k);
        }
        s = s_next;
        u = u_next;
        grad += (s[0] - 1.0) * u[0];
    }
    grad
}
