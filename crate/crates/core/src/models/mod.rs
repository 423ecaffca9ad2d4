//! Concrete systems implementing the dynamical-system contract: the
//! influence balancing linear system, a tanh RNN, and a single-layer LSTM
//! character model.

mod influence_balancing;
mod lstm;
mod tanh_rnn;

pub use influence_balancing::{build_influence_balancing, exact_total_gradient_ib, InfluenceBalancingSystem};
pub use lstm::{build_lstm_char, LstmCharSystem};
pub use tanh_rnn::{build_tanh_rnn, ReadoutLoss, TanhRnnSystem};

/// result[i] = sum_j mat[i*cols + j] * vec[j] (row-major).
pub(crate) fn matvec(mat: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let row = &mat[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for j in 0..cols {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
    out
}

/// result[j] = sum_i mat[i*cols + j] * vec[i] (adjoint side of `matvec`).
pub(crate) fn matvec_t(mat: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let row = &mat[i * cols..(i + 1) * cols];
        let xi = x[i];
        for j in 0..cols {
            out[j] += row[j] * xi;
        }
    }
    out
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy -log softmax(logits)[target], in nats.
pub(crate) fn softmax_cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[target]
}
