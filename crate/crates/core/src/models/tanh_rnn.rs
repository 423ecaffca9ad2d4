//! Standard tanh RNN with a linear readout.
//!
//! The state is s_t = (o_t, h_t): output activations followed by the hidden
//! block, so the loss depends on the state alone. Transition:
//!
//!   h_{t+1} = tanh(W_x x_{t+1} + W_h h_t + b)
//!   o_{t+1} = W_o h_{t+1}
//!
//! The readout weights W_o are part of the trainable parameter vector.

use rand::Rng;

use crate::dynsys::{DynError, DynamicalSystem, ParameterVector, StateVector, StepValue};
use crate::models::{matvec, matvec_t, softmax, softmax_cross_entropy};
use crate::rng::{stream_rng, streams};

/// Loss attached to the output block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutLoss {
    /// ½‖o − target‖² against a dense target vector.
    Quadratic,
    /// −log softmax(o)[target] against a token target, in nats.
    SoftmaxCrossEntropy,
}

/// Parameter layout (flattened in this order): W_x (n_h×n_in),
/// W_h (n_h×n_h), W_o (n_out×n_h), b (n_h).
#[derive(Debug, Clone)]
pub struct TanhRnnSystem {
    n_in: usize,
    n_h: usize,
    n_out: usize,
    readout: ReadoutLoss,
    init_params: Vec<f64>,
}

/// Builds a tanh RNN with all weights i.i.d. uniform in
/// [-init_scale, +init_scale] from the seeded generator.
pub fn build_tanh_rnn(
    n_in: usize,
    n_h: usize,
    n_out: usize,
    init_scale: f64,
    seed: u64,
) -> TanhRnnSystem {
    assert!(n_in >= 1 && n_h >= 1 && n_out >= 1, "dimensions must be positive");
    let d = n_h * n_in + n_h * n_h + n_out * n_h + n_h;
    let mut rng = stream_rng(seed, streams::MODEL_INIT);
    let init_params: Vec<f64> = (0..d)
        .map(|_| {
            if init_scale == 0.0 {
                0.0
            } else {
                rng.gen_range(-init_scale..init_scale)
            }
        })
        .collect();
    TanhRnnSystem {
        n_in,
        n_h,
        n_out,
        readout: ReadoutLoss::Quadratic,
        init_params,
    }
}

impl TanhRnnSystem {
    pub fn with_readout(mut self, readout: ReadoutLoss) -> Self {
        self.readout = readout;
        self
    }

    pub fn initial_params(&self) -> ParameterVector {
        ParameterVector::new(self.init_params.clone()).expect("init weights finite")
    }

    pub fn hidden_dim(&self) -> usize {
        self.n_h
    }

    fn wx<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[..self.n_h * self.n_in]
    }

    fn wh<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let s = self.n_h * self.n_in;
        &p[s..s + self.n_h * self.n_h]
    }

    fn wo<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let s = self.n_h * self.n_in + self.n_h * self.n_h;
        &p[s..s + self.n_out * self.n_h]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let s = self.n_h * self.n_in + self.n_h * self.n_h + self.n_out * self.n_h;
        &p[s..s + self.n_h]
    }

    fn split_state<'a>(&self, s: &'a StateVector) -> (&'a [f64], &'a [f64]) {
        let v = s.as_slice();
        (&v[..self.n_out], &v[self.n_out..])
    }

    fn input_vec<'a>(&self, input: &'a StepValue) -> &'a [f64] {
        input
            .as_vector()
            .expect("tanh RNN takes dense vector inputs")
    }

    /// New hidden activations tanh(W_x x + W_h h + b).
    fn next_hidden(&self, p: &[f64], h: &[f64], x: &[f64]) -> Vec<f64> {
        let mut pre = matvec(self.wx(p), x, self.n_h, self.n_in);
        let rec = matvec(self.wh(p), h, self.n_h, self.n_h);
        let b = self.bias(p);
        for i in 0..self.n_h {
            pre[i] = (pre[i] + rec[i] + b[i]).tanh();
        }
        pre
    }
}

impl DynamicalSystem for TanhRnnSystem {
    fn param_dim(&self) -> usize {
        self.init_params.len()
    }

    fn state_dim(&self) -> usize {
        self.n_out + self.n_h
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
        let (_, h) = self.split_state(state);
        let x = self.input_vec(input);
        if x.len() != self.n_in {
            return Err(DynError::DimensionMismatch(format!(
                "input length {} != n_in {}",
                x.len(),
                self.n_in
            )));
        }
        let h_new = self.next_hidden(p, h, x);
        let o_new = matvec(self.wo(p), &h_new, self.n_out, self.n_h);
        let mut out = o_new;
        out.extend_from_slice(&h_new);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DynError::DivergedState { timestep: 0 });
        }
        Ok(StateVector::new(out))
    }

    fn loss(&self, state: &StateVector, target: &StepValue) -> Result<f64, DynError> {
        let (o, _) = self.split_state(state);
        let loss = match (self.readout, target) {
            (ReadoutLoss::Quadratic, StepValue::Vector(t)) => {
                0.5 * o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            (ReadoutLoss::SoftmaxCrossEntropy, StepValue::Token(t)) => {
                softmax_cross_entropy(o, *t)
            }
            _ => {
                return Err(DynError::DimensionMismatch(
                    "target kind does not match readout loss".into(),
                ))
            }
        };
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
        let (_, h) = self.split_state(state);
        let x = self.input_vec(input);
        let h_new = self.next_hidden(p, h, x);

        let a_o = &adjoint[..self.n_out];
        let a_h = &adjoint[self.n_out..];

        // Pull the output adjoint back through o' = W_o h', then through
        // the tanh: v = (a_o W_o + a_h) ⊙ (1 − h'²).
        let mut v = matvec_t(self.wo(p), a_o, self.n_out, self.n_h);
        for i in 0..self.n_h {
            v[i] = (v[i] + a_h[i]) * (1.0 - h_new[i] * h_new[i]);
        }

        // d/d(previous state): the o-block of the pre-state never feeds the
        // transition, so only the h-block receives vᵀ W_h.
        let dh_prev = matvec_t(self.wh(p), &v, self.n_h, self.n_h);
        let mut dstate = vec![0.0; self.n_out];
        dstate.extend_from_slice(&dh_prev);

        // d/dθ in layout order W_x, W_h, W_o, b.
        let mut dparams = Vec::with_capacity(self.param_dim());
        for i in 0..self.n_h {
            for j in 0..self.n_in {
                dparams.push(v[i] * x[j]);
            }
        }
        for i in 0..self.n_h {
            for j in 0..self.n_h {
                dparams.push(v[i] * h[j]);
            }
        }
        for i in 0..self.n_out {
            for j in 0..self.n_h {
                dparams.push(a_o[i] * h_new[j]);
            }
        }
        dparams.extend_from_slice(&v);

        (dstate, dparams)
    }

    fn dloss_dstate(&self, state: &StateVector, target: &StepValue) -> Vec<f64> {
        let (o, _) = self.split_state(state);
        let mut out = vec![0.0; self.state_dim()];
        match (self.readout, target) {
            (ReadoutLoss::Quadratic, StepValue::Vector(t)) => {
                for i in 0..self.n_out {
                    out[i] = o[i] - t[i];
                }
            }
            (ReadoutLoss::SoftmaxCrossEntropy, StepValue::Token(t)) => {
                let probs = softmax(o);
                for i in 0..self.n_out {
                    out[i] = probs[i] - if i == *t { 1.0 } else { 0.0 };
                }
            }
            _ => panic!("target kind does not match readout loss"),
        }
        out
    }
}
