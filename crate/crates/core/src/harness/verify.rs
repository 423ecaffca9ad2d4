//! Empirical certification of the reweighted estimator.
//!
//! For each configured case the command computes the exact full-sequence
//! gradient once, then draws many independent truncation schedules and
//! z-tests the Monte-Carlo mean of the reweighted estimate against it,
//! coordinate by coordinate. The same test with compensation disabled must
//! detect the bias of plain truncated BPTT, and per-timestep probes check
//! the backward-induction identity E[δ̃ℓ_t] = δℓ_t that underlies the
//! whole construction.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::csv::{CsvWriter, Field};
use super::{HarnessError, RunOutcome};
use crate::dynsys::{
    run_forward, DynamicalSystem, ObservedStep, ParameterVector, StepValue, Trajectory,
};
use crate::engine::{
    artbp_backward, conditional_expectation_probe, z_score, VectorMoments,
};
use crate::gradients::bptt_full;
use crate::models::{build_influence_balancing, build_tanh_rnn};
use crate::rng::{stream_rng, streams};
use crate::schedule::{sample_schedule, SchedulePolicy};

/// A system the verification can instantiate from config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    InfluenceBalancing { p: usize, n: usize, theta0: f64 },
    TanhRnn {
        n_in: usize,
        n_h: usize,
        n_out: usize,
        init_scale: f64,
        seed: u64,
    },
}

/// A built verification case: the system, its initial parameters, and the
/// observation stream.
pub type BuiltSystem = (Box<dyn DynamicalSystem>, ParameterVector, Vec<ObservedStep>);

impl SystemSpec {
    /// Builds the system, its initial parameters, and an observation
    /// stream of the given length.
    pub fn build(&self, horizon: usize) -> Result<BuiltSystem, HarnessError> {
        match *self {
            SystemSpec::InfluenceBalancing { p, n, theta0 } => {
                let sys = build_influence_balancing(p, n, theta0)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                let params = sys.initial_params();
                let observed = (0..horizon)
                    .map(|_| ObservedStep {
                        input: StepValue::empty(),
                        target: StepValue::Vector(vec![1.0]),
                    })
                    .collect();
                Ok((Box::new(sys), params, observed))
            }
            SystemSpec::TanhRnn {
                n_in,
                n_h,
                n_out,
                init_scale,
                seed,
            } => {
                let sys = build_tanh_rnn(n_in, n_h, n_out, init_scale, seed);
                let params = sys.initial_params();
                let mut rng = stream_rng(seed, streams::DATA);
                let observed = (0..horizon)
                    .map(|_| ObservedStep {
                        input: StepValue::Vector(
                            (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        ),
                        target: StepValue::Vector(
                            (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        ),
                    })
                    .collect();
                Ok((Box::new(sys), params, observed))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCase {
    pub label: String,
    pub system: SystemSpec,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub cases: Vec<VerifyCase>,
    /// Compensated legs; each must pass the z-test.
    pub policies: Vec<SchedulePolicy>,
    pub n_samples: usize,
    /// Per-coordinate |z| bound for the compensated legs.
    pub z_threshold: f64,
    /// Schedule for the compensation-disabled leg, which must FAIL the
    /// test (bias detection).
    pub bias_policy: SchedulePolicy,
    /// The bias leg must show some coordinate with |z| above this.
    pub bias_min_z: f64,
    /// Probe timesteps as fractions handled below: always {1, T/2, T}.
    pub probe_samples: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            cases: vec![
                VerifyCase {
                    label: "influence_balancing".into(),
                    system: SystemSpec::InfluenceBalancing {
                        p: 3,
                        n: 4,
                        theta0: 0.5,
                    },
                    horizon: 20,
                },
                VerifyCase {
                    label: "tanh_rnn".into(),
                    system: SystemSpec::TanhRnn {
                        n_in: 2,
                        n_h: 4,
                        n_out: 2,
                        init_scale: 0.5,
                        seed: 42,
                    },
                    horizon: 12,
                },
            ],
            policies: vec![
                SchedulePolicy::ConstantC { c: 0.2 },
                SchedulePolicy::PowerLaw { alpha: 4.0, l0: 4.0 },
            ],
            n_samples: 200_000,
            z_threshold: 4.0,
            bias_policy: SchedulePolicy::Fixed { len: 4 },
            bias_min_z: 10.0,
            probe_samples: 50_000,
            seed: 1,
        }
    }
}

impl VerifyConfig {
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.cases.is_empty() || self.policies.is_empty() {
            return Err(HarnessError::Config(
                "need at least one case and one policy".into(),
            ));
        }
        if self.n_samples < 2 || self.probe_samples < 2 {
            return Err(HarnessError::Config("sample counts must be at least 2".into()));
        }
        for p in &self.policies {
            p.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        for c in &self.cases {
            if c.horizon == 0 {
                return Err(HarnessError::Config("horizon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One Monte-Carlo leg: a (case, policy, compensation) triple.
#[derive(Debug, Clone)]
pub struct LegReport {
    pub case_label: String,
    pub policy_label: String,
    pub compensate: bool,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub reference: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub max_abs_z: f64,
    /// For compensated legs: max |z| within threshold. For the bias leg:
    /// bias detected (some |z| above the detection floor).
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeSummary {
    pub case_label: String,
    pub policy_label: String,
    pub timestep: usize,
    pub n_samples: usize,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Everything the unbiasedness command measured, and the overall verdict.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub legs: Vec<LegReport>,
    pub probes: Vec<ProbeSummary>,
    pub pass: bool,
}

/// Monte-Carlo mean/stderr of the (compensated or plain) truncated
/// estimator over `n_samples` schedule draws, reduced in replica order.
pub fn monte_carlo_gradient_moments<S: DynamicalSystem + ?Sized>(
    system: &S,
    params: &ParameterVector,
    trajectory: &Trajectory,
    policy: &SchedulePolicy,
    compensate: bool,
    n_samples: usize,
    seed_base: u64,
) -> Result<VectorMoments, HarnessError> {
    let chunk = 1024usize;
    let n_chunks = n_samples.div_ceil(chunk);
    let partials: Result<Vec<VectorMoments>, HarnessError> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(n_samples);
            let mut acc = VectorMoments::new(params.len());
            for k in lo..hi {
                let schedule = sample_schedule(policy, trajectory.len(), seed_base + k as u64);
                let grad = artbp_backward(system, params, trajectory, &schedule, compensate)?;
                acc.push(&grad.values);
            }
            Ok(acc)
        })
        .collect();
    let mut acc = VectorMoments::new(params.len());
    for p in partials? {
        acc.merge(&p);
    }
    Ok(acc)
}

fn leg_report(
    case_label: &str,
    policy: &SchedulePolicy,
    compensate: bool,
    reference: &[f64],
    moments: &VectorMoments,
    z_threshold: f64,
    bias_min_z: f64,
) -> LegReport {
    let mean = moments.mean().to_vec();
    let stderr = moments.stderr();
    let z_scores: Vec<f64> = (0..mean.len())
        .map(|i| z_score(mean[i], reference[i], stderr[i]))
        .collect();
    let max_abs_z = z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let pass = if compensate {
        max_abs_z <= z_threshold
    } else {
        max_abs_z > bias_min_z
    };
    LegReport {
        case_label: case_label.to_string(),
        policy_label: policy.label(),
        compensate,
        n_samples: moments.count() as usize,
        mean,
        stderr,
        reference: reference.to_vec(),
        z_scores,
        max_abs_z,
        pass,
    }
}

/// Runs the full unbiasedness verification and writes the per-coordinate
/// and summary CSVs.
pub fn cmd_verify_unbiasedness(
    config: &VerifyConfig,
    out_dir: &Path,
) -> Result<(VerificationReport, RunOutcome), HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let mut legs = Vec::new();
    let mut probes = Vec::new();

    for (case_idx, case) in config.cases.iter().enumerate() {
        let (system, params, observed) = case.system.build(case.horizon)?;
        let trajectory = run_forward(
            system.as_ref(),
            &params,
            system.initial_state(),
            &observed,
        )
        .map_err(crate::engine::EngineError::from)?;
        let (reference, _) = bptt_full(system.as_ref(), &params, &trajectory);

        for (pol_idx, policy) in config.policies.iter().enumerate() {
            let seed_base = config.seed
                + 1_000_000 * (1 + case_idx as u64 * 10 + pol_idx as u64);
            let moments = monte_carlo_gradient_moments(
                system.as_ref(),
                &params,
                &trajectory,
                policy,
                true,
                config.n_samples,
                seed_base,
            )?;
            legs.push(leg_report(
                &case.label,
                policy,
                true,
                &reference.values,
                &moments,
                config.z_threshold,
                config.bias_min_z,
            ));

            // Backward-induction probes at the start, middle, and end.
            for t in [1, case.horizon.div_ceil(2), case.horizon] {
                let probe = conditional_expectation_probe(
                    system.as_ref(),
                    &params,
                    &trajectory,
                    policy,
                    t,
                    config.probe_samples,
                    seed_base + 500_000,
                )?;
                probes.push(ProbeSummary {
                    case_label: case.label.clone(),
                    policy_label: policy.label(),
                    timestep: t,
                    n_samples: probe.n_samples,
                    max_abs_z: probe.max_abs_z(),
                    pass: probe.max_abs_z() <= config.z_threshold,
                });
            }
        }

        // Compensation disabled: the same machinery must now detect bias.
        let moments = monte_carlo_gradient_moments(
            system.as_ref(),
            &params,
            &trajectory,
            &config.bias_policy,
            false,
            config.n_samples,
            config.seed + 77_000_000 + case_idx as u64,
        )?;
        legs.push(leg_report(
            &case.label,
            &config.bias_policy,
            false,
            &reference.values,
            &moments,
            config.z_threshold,
            config.bias_min_z,
        ));
    }

    let pass = legs.iter().all(|l| l.pass) && probes.iter().all(|p| p.pass);
    let report = VerificationReport { legs, probes, pass };
    write_report_csvs(&report, out_dir)?;

    let outcome = if report.pass {
        RunOutcome::Success
    } else {
        RunOutcome::VerificationFailed
    };
    Ok((report, outcome))
}

fn write_report_csvs(report: &VerificationReport, out_dir: &Path) -> Result<(), HarnessError> {
    let mut coords = CsvWriter::create(
        &out_dir.join("verify_coordinates.csv"),
        &[
            "case",
            "policy",
            "compensate",
            "coordinate",
            "mean",
            "stderr",
            "reference",
            "z",
        ],
    )?;
    for leg in &report.legs {
        for i in 0..leg.mean.len() {
            coords.row(&[
                Field::from(leg.case_label.as_str()),
                Field::from(leg.policy_label.as_str()),
                Field::from(if leg.compensate { "true" } else { "false" }),
                Field::from(i),
                Field::from(leg.mean[i]),
                Field::from(leg.stderr[i]),
                Field::from(leg.reference[i]),
                Field::from(leg.z_scores[i]),
            ])?;
        }
    }
    coords.finish()?;

    let mut summary = CsvWriter::create(
        &out_dir.join("verify_summary.csv"),
        &["case", "policy", "compensate", "n_samples", "max_abs_z", "pass"],
    )?;
    for leg in &report.legs {
        summary.row(&[
            Field::from(leg.case_label.as_str()),
            Field::from(leg.policy_label.as_str()),
            Field::from(if leg.compensate { "true" } else { "false" }),
            Field::from(leg.n_samples),
            Field::from(leg.max_abs_z),
            Field::from(if leg.pass { "pass" } else { "fail" }),
        ])?;
    }
    summary.finish()?;

    let mut probes = CsvWriter::create(
        &out_dir.join("verify_probes.csv"),
        &["case", "policy", "timestep", "n_samples", "max_abs_z", "pass"],
    )?;
    for p in &report.probes {
        probes.row(&[
            Field::from(p.case_label.as_str()),
            Field::from(p.policy_label.as_str()),
            Field::from(p.timestep),
            Field::from(p.n_samples),
            Field::from(p.max_abs_z),
            Field::from(if p.pass { "pass" } else { "fail" }),
        ])?;
    }
    probes.finish()?;
    Ok(())
}
