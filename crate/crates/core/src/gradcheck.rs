//! Finite-difference oracles for the analytic adjoint products.
//!
//! These never touch the VJP code paths they validate: they re-run the
//! transition at perturbed arguments and difference the results.

use crate::dynsys::{DynamicalSystem, ParameterVector, StateVector, StepValue};

/// Central finite difference of the scalar `adjoint · step(...)` in each
/// state coordinate; the exact counterpart is `vjp_state`.
///
/// Step size per coordinate is `eps_base * (1 + |s_j|)`.
pub fn fd_vjp_state<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    state: &StateVector,
    input: &StepValue,
    adjoint: &[f64],
    eps_base: f64,
) -> Vec<f64> {
    let n = state.len();
    let mut out = vec![0.0; n];
    let probe = |s: &[f64]| -> f64 {
        let next = system
            .step(params, &StateVector::new(s.to_vec()), input)
            .expect("finite-difference probe diverged");
        next.as_slice()
            .iter()
            .zip(adjoint)
            .map(|(v, a)| v * a)
            .sum()
    };
    let base = state.as_slice();
    for j in 0..n {
        let eps = eps_base * (1.0 + base[j].abs());
        let mut plus = base.to_vec();
        let mut minus = base.to_vec();
        plus[j] += eps;
        minus[j] -= eps;
        out[j] = (probe(&plus) - probe(&minus)) / (2.0 * eps);
    }
    out
}

/// Central finite difference of `adjoint · step(...)` in each parameter
/// coordinate; the exact counterpart is `vjp_params`.
pub fn fd_vjp_params<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    state: &StateVector,
    input: &StepValue,
    adjoint: &[f64],
    eps_base: f64,
) -> Vec<f64> {
    let d = params.len();
    let mut out = vec![0.0; d];
    let probe = |p: &[f64]| -> f64 {
        let pv = ParameterVector::new(p.to_vec()).expect("perturbed params finite");
        let next = system
            .step(&pv, state, input)
            .expect("finite-difference probe diverged");
        next.as_slice()
            .iter()
            .zip(adjoint)
            .map(|(v, a)| v * a)
            .sum()
    };
    let base = params.as_slice();
    for j in 0..d {
        let eps = eps_base * (1.0 + base[j].abs());
        let mut plus = base.to_vec();
        let mut minus = base.to_vec();
        plus[j] += eps;
        minus[j] -= eps;
        out[j] = (probe(&plus) - probe(&minus)) / (2.0 * eps);
    }
    out
}

/// Largest relative error between two gradient vectors, with an absolute
/// floor so near-zero coordinates compare absolutely.
pub fn max_relative_error(exact: &[f64], approx: &[f64], floor: f64) -> f64 {
    assert_eq!(exact.len(), approx.len());
    exact
        .iter()
        .zip(approx)
        .map(|(e, a)| (e - a).abs() / (e.abs().max(a.abs()).max(floor)))
        .fold(0.0, f64::max)
}
