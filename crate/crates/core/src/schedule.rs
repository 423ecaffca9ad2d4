//! Truncation-point sampling and the probability schedules that drive it.
//!
//! A schedule is a sequence of binary indicators X_t with the probabilities
//! c_t = P(X_t = 1 | X_{1..t-1}) used to sample them. Gradient flow is cut
//! between t and t+1 wherever X_t = 1, and the reweighted backward pass
//! compensates each non-truncated step by 1/(1-c_t).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid schedule policy: {0}")]
    InvalidPolicy(String),
}

/// How truncation points are chosen.
///
/// - `Fixed`: deterministic truncation every L steps. Represented with no
///   compensation probabilities (c_t stored as 0, factors 1), reproducing
///   plain truncated BPTT rather than a degenerate c_t = 1 policy.
/// - `ConstantC`: i.i.d. Bernoulli(c); subsequence lengths are geometric
///   with mean 1/c.
/// - `PowerLaw`: c_t = (α-1) / ((α-2)·L₀ + δt) with δt the time since the
///   last truncation; subsequence lengths have mean ≈ L₀ and a power-law
///   tail. Moments below α-1 are finite, so α > 3 keeps the length
///   variance finite; α > 2 is required for the formula to be a
///   probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchedulePolicy {
    Fixed {
        #[serde(rename = "L")]
        len: usize,
    },
    ConstantC {
        c: f64,
    },
    PowerLaw {
        alpha: f64,
        #[serde(rename = "L0")]
        l0: f64,
    },
}

impl SchedulePolicy {
    pub fn fixed(len: usize) -> Result<Self, ScheduleError> {
        let p = SchedulePolicy::Fixed { len };
        p.validate()?;
        Ok(p)
    }

    pub fn constant_c(c: f64) -> Result<Self, ScheduleError> {
        let p = SchedulePolicy::ConstantC { c };
        p.validate()?;
        Ok(p)
    }

    pub fn power_law(alpha: f64, l0: f64) -> Result<Self, ScheduleError> {
        let p = SchedulePolicy::PowerLaw { alpha, l0 };
        p.validate()?;
        Ok(p)
    }

    /// Checks the parameter domain. Deserialized policies must be validated
    /// before use.
    // Negated comparisons reject NaN parameters as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScheduleError> {
        match *self {
            SchedulePolicy::Fixed { len } => {
                if len < 1 {
                    return Err(ScheduleError::InvalidPolicy("fixed length must be >= 1".into()));
                }
            }
            SchedulePolicy::ConstantC { c } => {
                if !(c > 0.0 && c < 1.0) {
                    return Err(ScheduleError::InvalidPolicy(format!(
                        "constant c must lie in (0,1), got {c}"
                    )));
                }
            }
            SchedulePolicy::PowerLaw { alpha, l0 } => {
                if !(alpha > 2.0) {
                    return Err(ScheduleError::InvalidPolicy(format!(
                        "power-law alpha must be > 2, got {alpha}"
                    )));
                }
                if !(l0 > 1.0) {
                    // At L0 = 1 the formula gives c = 1 at δt = 1 for every
                    // alpha, which breaks the c_t != 1 precondition of the
                    // reweighted estimator.
                    return Err(ScheduleError::InvalidPolicy(format!(
                        "power-law L0 must be > 1 so truncation probabilities stay below 1, got {l0}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Truncation probability at elapsed time `delta_t` since the last
    /// truncation (1-based). `Fixed` reports 0: its truncations are
    /// deterministic and carry no compensation.
    pub fn prob(&self, delta_t: usize) -> f64 {
        match *self {
            SchedulePolicy::Fixed { .. } => 0.0,
            SchedulePolicy::ConstantC { c } => c,
            SchedulePolicy::PowerLaw { alpha, l0 } => power_law_c(alpha, l0, delta_t),
        }
    }

    /// Human-readable tag used in output filenames and CSV columns.
    pub fn label(&self) -> String {
        match *self {
            SchedulePolicy::Fixed { len } => format!("fixed{len}"),
            SchedulePolicy::ConstantC { c } => format!("constc{c}"),
            SchedulePolicy::PowerLaw { alpha, l0 } => format!("powerlaw_a{alpha}_L{l0}"),
        }
    }
}

/// The power-law truncation probability (α-1) / ((α-2)·L₀ + δt).
///
/// Strictly decreasing in δt: the longer since the last truncation, the
/// less likely one becomes, which yields mean subsequence length ≈ L₀ with
/// a heavy (but α-controlled) tail.
pub fn power_law_c(alpha: f64, l0: f64, delta_t: usize) -> f64 {
    debug_assert!(alpha > 2.0 && l0 >= 1.0 && delta_t >= 1);
    (alpha - 1.0) / ((alpha - 2.0) * l0 + delta_t as f64)
}

/// A sampled (or deterministic) truncation schedule over t = 1..T.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSchedule {
    indicators: Vec<bool>,
    probs: Vec<f64>,
    seed: u64,
}

impl TruncationSchedule {
    /// A schedule that never truncates and carries no compensation, making
    /// the reweighted backward pass collapse to exact BPTT.
    pub fn never_truncate(horizon: usize) -> Self {
        TruncationSchedule {
            indicators: vec![false; horizon],
            probs: vec![0.0; horizon],
            seed: 0,
        }
    }

    /// Builds a schedule from explicit indicators and probabilities.
    pub fn from_parts(indicators: Vec<bool>, probs: Vec<f64>, seed: u64) -> Self {
        assert_eq!(indicators.len(), probs.len());
        TruncationSchedule {
            indicators,
            probs,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// X_t at 1-based timestep t.
    pub fn indicator(&self, t: usize) -> bool {
        self.indicators[t - 1]
    }

    /// c_t at 1-based timestep t.
    pub fn prob(&self, t: usize) -> f64 {
        self.probs[t - 1]
    }

    /// The 1-based inclusive (start, end) spans between truncations. The
    /// final timestep always terminates the last span regardless of X_T.
    pub fn gaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 1;
        for t in 1..=self.len() {
            if self.indicator(t) || t == self.len() {
                out.push((start, t));
                start = t + 1;
            }
        }
        out
    }

    /// Recomputes every stored probability from the policy and the stored
    /// indicators. True iff the schedule is exactly what the policy would
    /// have assigned, which is the audit invariant behind the unbiasedness
    /// proof's conditioning.
    pub fn audit(&self, policy: &SchedulePolicy) -> bool {
        let mut last_trunc = 0usize;
        for t in 1..=self.len() {
            let expected = policy.prob(t - last_trunc);
            if self.probs[t - 1] != expected {
                return false;
            }
            if let SchedulePolicy::Fixed { len } = policy {
                if self.indicators[t - 1] != (t % len == 0) {
                    return false;
                }
            }
            if self.indicators[t - 1] {
                last_trunc = t;
            }
        }
        true
    }
}

/// Samples a schedule over `horizon` steps. Indicators are drawn
/// sequentially with P(X_t = 1 | past) = c_t; the `Fixed` policy yields
/// deterministic indicators and zero probabilities. Reproducible for a
/// fixed seed.
pub fn sample_schedule(policy: &SchedulePolicy, horizon: usize, seed: u64) -> TruncationSchedule {
    assert!(horizon >= 1);
    let mut indicators = Vec::with_capacity(horizon);
    let mut probs = Vec::with_capacity(horizon);
    match *policy {
        SchedulePolicy::Fixed { len } => {
            for t in 1..=horizon {
                indicators.push(t % len == 0);
                probs.push(0.0);
            }
        }
        _ => {
            let mut rng = stream_rng(seed, crate::rng::streams::SCHEDULE);
            let mut last_trunc = 0usize;
            for t in 1..=horizon {
                let c = policy.prob(t - last_trunc);
                let fire = rng.gen::<f64>() < c;
                indicators.push(fire);
                probs.push(c);
                if fire {
                    last_trunc = t;
                }
            }
        }
    }
    TruncationSchedule {
        indicators,
        probs,
        seed,
    }
}

/// Draws one subsequence length by iterating c_t until a truncation fires;
/// equal in distribution to one inter-truncation gap of `sample_schedule`.
pub fn next_subsequence_length<R: Rng>(policy: &SchedulePolicy, rng: &mut R) -> usize {
    match *policy {
        SchedulePolicy::Fixed { len } => len,
        _ => {
            let mut delta_t = 1usize;
            loop {
                let c = policy.prob(delta_t);
                if rng.gen::<f64>() < c {
                    return delta_t;
                }
                delta_t += 1;
            }
        }
    }
}

/// Sample statistics of subsequence lengths.
#[derive(Debug, Clone)]
pub struct LengthStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// Empirical survival function P(length >= 2^k) at powers of two.
    pub tail: Vec<(usize, f64)>,
}

/// Mean, unbiased variance, and a power-of-two tail report.
pub fn length_statistics(samples: &[usize]) -> LengthStats {
    assert!(!samples.is_empty(), "need at least one length sample");
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&x| x as f64).sum::<f64>() / n;
    let variance = if samples.len() > 1 {
        samples
            .iter()
            .map(|&x| {
                let d = x as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let max = *samples.iter().max().unwrap();
    let mut tail = Vec::new();
    let mut threshold = 1usize;
    while threshold <= max {
        let frac = samples.iter().filter(|&&x| x >= threshold).count() as f64 / n;
        tail.push((threshold, frac));
        threshold *= 2;
    }
    LengthStats {
        count: samples.len(),
        mean,
        variance,
        stderr: (variance / n).sqrt(),
        tail,
    }
}
