//! Subsequence-length statistics for a schedule policy: histogram CSV plus
//! mean/variance summary and the power-of-two tail report.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::csv::{CsvWriter, Field};
use super::{HarnessError, RunOutcome};
use crate::rng::{stream_rng, streams};
use crate::schedule::{length_statistics, next_subsequence_length, LengthStats, SchedulePolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleStatsConfig {
    pub policy: SchedulePolicy,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for ScheduleStatsConfig {
    fn default() -> Self {
        ScheduleStatsConfig {
            policy: SchedulePolicy::PowerLaw { alpha: 6.0, l0: 16.0 },
            n_draws: 100_000,
            seed: 1,
        }
    }
}

impl ScheduleStatsConfig {
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleStatsSummary {
    pub stats: LengthStats,
}

/// Draws subsequence lengths under the policy (independent, reproducible
/// replica streams) and writes histogram and summary CSVs.
pub fn cmd_schedule_stats(
    config: &ScheduleStatsConfig,
    out_dir: &Path,
) -> Result<(ScheduleStatsSummary, RunOutcome), HarnessError> {
    config
        .policy
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if config.n_draws == 0 {
        return Err(HarnessError::Config("n_draws must be positive".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let chunk = 4096usize;
    let n_chunks = config.n_draws.div_ceil(chunk);
    let per_chunk: Vec<Vec<usize>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(config.n_draws);
            let mut rng = stream_rng(config.seed, streams::MC_REPLICA_BASE + ci as u64);
            (lo..hi)
                .map(|_| next_subsequence_length(&config.policy, &mut rng))
                .collect()
        })
        .collect();
    let samples: Vec<usize> = per_chunk.into_iter().flatten().collect();
    let stats = length_statistics(&samples);

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in &samples {
        *histogram.entry(s).or_insert(0) += 1;
    }
    let mut hist = CsvWriter::create(&out_dir.join("histogram.csv"), &["length", "count"])?;
    for (len, count) in &histogram {
        hist.row(&[Field::from(*len), Field::from(*count)])?;
    }
    hist.finish()?;

    let mut summary = CsvWriter::create(&out_dir.join("summary.csv"), &["stat", "value"])?;
    summary.row(&[Field::from("count"), Field::from(stats.count as f64)])?;
    summary.row(&[Field::from("mean"), Field::from(stats.mean)])?;
    summary.row(&[Field::from("variance"), Field::from(stats.variance)])?;
    summary.row(&[Field::from("stderr"), Field::from(stats.stderr)])?;
    summary.finish()?;

    let mut tail = CsvWriter::create(&out_dir.join("tail.csv"), &["threshold", "survival"])?;
    for &(threshold, survival) in &stats.tail {
        tail.row(&[Field::from(threshold), Field::from(survival)])?;
    }
    tail.finish()?;

    Ok((ScheduleStatsSummary { stats }, RunOutcome::Success))
}
