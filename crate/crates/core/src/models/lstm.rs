//! Single-layer LSTM character model: one-hot token input (embedding-free),
//! a softmax classifier over the vocabulary on the hidden state, and the
//! forget-gate bias initialized to 2 to prevent early vanishing gradients.
//!
//! State layout: s_t = (cell, hidden, output logits), so the cross-entropy
//! loss is a function of the state alone. Gate order in the parameter
//! layout is input, forget, cell-candidate, output; each gate holds
//! W (n_h×V), U (n_h×n_h), b (n_h), followed by the readout W_y (V×n_h),
//! b_y (V). No peepholes, no layer norm.

use rand::Rng;

use crate::dynsys::{DynError, DynamicalSystem, ParameterVector, StateVector, StepValue};
use crate::models::{matvec, matvec_t, softmax, softmax_cross_entropy};
use crate::rng::{stream_rng, streams};

/// Initialization range for all weight matrices (the forget bias is set to
/// 2 exactly; other biases start at zero).
const INIT_SCALE: f64 = 0.08;

const GATES: usize = 4;
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;
const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone)]
pub struct LstmCharSystem {
    vocab: usize,
    n_h: usize,
    init_params: Vec<f64>,
}

/// Builds the LSTM with seeded random weights. `vocab_size` must be at
/// least 2.
pub fn build_lstm_char(vocab_size: usize, n_h: usize, seed: u64) -> LstmCharSystem {
    assert!(vocab_size >= 2, "vocabulary must have at least two symbols");
    assert!(n_h >= 1);
    let gate_block = n_h * vocab_size + n_h * n_h + n_h;
    let d = GATES * gate_block + vocab_size * n_h + vocab_size;
    let mut rng = stream_rng(seed, streams::MODEL_INIT);
    let mut params = vec![0.0; d];
    for gate in 0..GATES {
        let base = gate * gate_block;
        // W and U random, biases zero except the forget gate.
        for v in params[base..base + n_h * vocab_size + n_h * n_h].iter_mut() {
            *v = rng.gen_range(-INIT_SCALE..INIT_SCALE);
        }
        if gate == GATE_FORGET {
            let b = base + n_h * vocab_size + n_h * n_h;
            for v in params[b..b + n_h].iter_mut() {
                *v = 2.0;
            }
        }
    }
    let readout = GATES * gate_block;
    for v in params[readout..readout + vocab_size * n_h].iter_mut() {
        *v = rng.gen_range(-INIT_SCALE..INIT_SCALE);
    }
    LstmCharSystem {
        vocab: vocab_size,
        n_h,
        init_params: params,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recomputed forward intermediates of one transition.
struct GateActivations {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_new: Vec<f64>,
    h_new: Vec<f64>,
}

impl LstmCharSystem {
    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn hidden_dim(&self) -> usize {
        self.n_h
    }

    pub fn initial_params(&self) -> ParameterVector {
        ParameterVector::new(self.init_params.clone()).expect("init weights finite")
    }

    fn gate_block(&self) -> usize {
        self.n_h * self.vocab + self.n_h * self.n_h + self.n_h
    }

    fn w<'a>(&self, p: &'a [f64], gate: usize) -> &'a [f64] {
        let base = gate * self.gate_block();
        &p[base..base + self.n_h * self.vocab]
    }

    fn u<'a>(&self, p: &'a [f64], gate: usize) -> &'a [f64] {
        let base = gate * self.gate_block() + self.n_h * self.vocab;
        &p[base..base + self.n_h * self.n_h]
    }

    fn b<'a>(&self, p: &'a [f64], gate: usize) -> &'a [f64] {
        let base = gate * self.gate_block() + self.n_h * self.vocab + self.n_h * self.n_h;
        &p[base..base + self.n_h]
    }

    fn wy<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let base = GATES * self.gate_block();
        &p[base..base + self.vocab * self.n_h]
    }

    fn by<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let base = GATES * self.gate_block() + self.vocab * self.n_h;
        &p[base..base + self.vocab]
    }

    /// Offsets of the forget-gate bias block, exposed for init checks.
    pub fn forget_bias_range(&self) -> std::ops::Range<usize> {
        let base =
            GATE_FORGET * self.gate_block() + self.n_h * self.vocab + self.n_h * self.n_h;
        base..base + self.n_h
    }

    fn split_state<'a>(&self, s: &'a StateVector) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let v = s.as_slice();
        (
            &v[..self.n_h],
            &v[self.n_h..2 * self.n_h],
            &v[2 * self.n_h..],
        )
    }

    fn token(&self, input: &StepValue) -> usize {
        let t = input.as_token().expect("LSTM takes token inputs");
        assert!(t < self.vocab, "token id {t} out of vocabulary");
        t
    }

    /// Gate pre-activation W[:,x] + U h + b for one gate and a one-hot x.
    fn gate_pre(&self, p: &[f64], gate: usize, h: &[f64], x: usize) -> Vec<f64> {
        let w = self.w(p, gate);
        let mut pre = matvec(self.u(p, gate), h, self.n_h, self.n_h);
        let b = self.b(p, gate);
        for i in 0..self.n_h {
            pre[i] += w[i * self.vocab + x] + b[i];
        }
        pre
    }

    fn activations(&self, p: &[f64], c: &[f64], h: &[f64], x: usize) -> GateActivations {
        let i: Vec<f64> = self
            .gate_pre(p, GATE_INPUT, h, x)
            .into_iter()
            .map(sigmoid)
            .collect();
        let f: Vec<f64> = self
            .gate_pre(p, GATE_FORGET, h, x)
            .into_iter()
            .map(sigmoid)
            .collect();
        let g: Vec<f64> = self
            .gate_pre(p, GATE_CELL, h, x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let o: Vec<f64> = self
            .gate_pre(p, GATE_OUTPUT, h, x)
            .into_iter()
            .map(sigmoid)
            .collect();
        let c_new: Vec<f64> = (0..self.n_h).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let h_new: Vec<f64> = (0..self.n_h).map(|k| o[k] * c_new[k].tanh()).collect();
        GateActivations {
            i,
            f,
            g,
            o,
            c_new,
            h_new,
        }
    }

    /// Softmax of the logits block; rows sum to 1 within 1e-12.
    pub fn output_probs(&self, state: &StateVector) -> Vec<f64> {
        let (_, _, logits) = self.split_state(state);
        softmax(logits)
    }
}

impl DynamicalSystem for LstmCharSystem {
    fn param_dim(&self) -> usize {
        self.init_params.len()
    }

    fn state_dim(&self) -> usize {
        2 * self.n_h + self.vocab
    }

    fn initial_state(&self) -> StateVector {
        StateVector::zeros(self.state_dim())
    }

    fn step(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
    ) -> Result<StateVector, DynError> {
        let p = params.as_slice();
        let (c, h, _) = self.split_state(state);
        let x = self.token(input);
        let acts = self.activations(p, c, h, x);
        let mut logits = matvec(self.wy(p), &acts.h_new, self.vocab, self.n_h);
        let by = self.by(p);
        for (l, b) in logits.iter_mut().zip(by) {
            *l += b;
        }
        let mut out = acts.c_new;
        out.extend_from_slice(&acts.h_new);
        out.extend_from_slice(&logits);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DynError::DivergedState { timestep: 0 });
        }
        Ok(StateVector::new(out))
    }

    fn loss(&self, state: &StateVector, target: &StepValue) -> Result<f64, DynError> {
        let (_, _, logits) = self.split_state(state);
        let t = target.as_token().ok_or_else(|| {
            DynError::DimensionMismatch("LSTM loss takes a token target".into())
        })?;
        let loss = softmax_cross_entropy(logits, t);
        if !loss.is_finite() {
            return Err(DynError::DivergedLoss { timestep: 0 });
        }
        Ok(loss)
    }

    fn vjp_state(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64> {
        let (ds, _) = self.vjp_step(params, state, input, adjoint);
        ds
    }

    fn vjp_params(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> Vec<f64> {
        let (_, dp) = self.vjp_step(params, state, input, adjoint);
        dp
    }

    fn vjp_step(
        &self,
        params: &ParameterVector,
        state: &StateVector,
        input: &StepValue,
        adjoint: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(adjoint.len(), self.state_dim());
        let p = params.as_slice();
        let (c, h, _) = self.split_state(state);
        let x = self.token(input);
        let acts = self.activations(p, c, h, x);

        let a_c = &adjoint[..self.n_h];
        let a_h = &adjoint[self.n_h..2 * self.n_h];
        let a_y = &adjoint[2 * self.n_h..];

        // Readout pull-back: logits' = W_y h' + b_y.
        let mut dh_new = matvec_t(self.wy(p), a_y, self.vocab, self.n_h);
        for k in 0..self.n_h {
            dh_new[k] += a_h[k];
        }

        let n = self.n_h;
        let mut dc_new = vec![0.0; n];
        let mut dz = vec![vec![0.0; n]; GATES];
        for k in 0..n {
            let tc = acts.c_new[k].tanh();
            dc_new[k] = a_c[k] + dh_new[k] * acts.o[k] * (1.0 - tc * tc);
            let d_o = dh_new[k] * tc;
            let d_i = dc_new[k] * acts.g[k];
            let d_f = dc_new[k] * c[k];
            let d_g = dc_new[k] * acts.i[k];
            dz[GATE_INPUT][k] = d_i * acts.i[k] * (1.0 - acts.i[k]);
            dz[GATE_FORGET][k] = d_f * acts.f[k] * (1.0 - acts.f[k]);
            dz[GATE_CELL][k] = d_g * (1.0 - acts.g[k] * acts.g[k]);
            dz[GATE_OUTPUT][k] = d_o * acts.o[k] * (1.0 - acts.o[k]);
        }

        // Previous-state adjoint: cell through the forget gate, hidden
        // through every gate's recurrent matrix, logits block unused.
        let mut dstate = vec![0.0; self.state_dim()];
        for k in 0..n {
            dstate[k] = dc_new[k] * acts.f[k];
        }
        for gate in 0..GATES {
            let dh = matvec_t(self.u(p, gate), &dz[gate], n, n);
            for k in 0..n {
                dstate[n + k] += dh[k];
            }
        }

        // Parameter adjoint in layout order.
        let mut dparams = vec![0.0; self.param_dim()];
        let gate_block = self.gate_block();
        for gate in 0..GATES {
            let base = gate * gate_block;
            for k in 0..n {
                // One-hot input: only column x of W receives gradient.
                dparams[base + k * self.vocab + x] = dz[gate][k];
            }
            let u_base = base + n * self.vocab;
            for k in 0..n {
                for j in 0..n {
                    dparams[u_base + k * n + j] = dz[gate][k] * h[j];
                }
            }
            let b_base = u_base + n * n;
            dparams[b_base..b_base + n].copy_from_slice(&dz[gate]);
        }
        let wy_base = GATES * gate_block;
        for i in 0..self.vocab {
            for j in 0..n {
                dparams[wy_base + i * n + j] = a_y[i] * acts.h_new[j];
            }
        }
        let by_base = wy_base + self.vocab * n;
        dparams[by_base..by_base + self.vocab].copy_from_slice(a_y);

        (dstate, dparams)
    }

    fn dloss_dstate(&self, state: &StateVector, target: &StepValue) -> Vec<f64> {
        let (_, _, logits) = self.split_state(state);
        let t = target.as_token().expect("LSTM loss takes a token target");
        let probs = softmax(logits);
        let mut out = vec![0.0; self.state_dim()];
        for i in 0..self.vocab {
            out[2 * self.n_h + i] = probs[i] - if i == t { 1.0 } else { 0.0 };
        }
        out
    }
}
