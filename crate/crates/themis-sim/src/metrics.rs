//! Run metrics: Jain's index, per-run summaries, and the per-app CSV
//! format.

use serde::{Deserialize, Serialize};

use crate::app::AppId;
use crate::error::{Error, Result};
use crate::sim::{AppRecord, SimOutcome};

/// Jain's fairness index (sum x)^2 / (n * sum x^2) over positive values.
pub fn jain_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("jain index of empty list".into()));
    }
    if values.iter().any(|&v| v <= 0.0 || v.is_nan() || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "jain index requires positive finite values".into(),
        ));
    }
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|v| v * v).sum();
    Ok(sum * sum / (values.len() as f64 * sum_sq))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Aggregate metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scheduler: String,
    pub seed: u64,
    pub finished_apps: usize,
    pub censored_apps: usize,
    /// Worst finish-time fairness over finished apps.
    pub max_rho: Option<f64>,
    pub median_rho: Option<f64>,
    pub jain_index: Option<f64>,
    /// Sum of per-app GPU-seconds actually consumed.
    pub total_gpu_seconds: f64,
    pub mean_completion_s: Option<f64>,
    pub median_completion_s: Option<f64>,
    pub p95_completion_s: Option<f64>,
    pub placement_score_p50: Option<f64>,
    pub placement_score_p10: Option<f64>,
    pub leftover_fraction_mean: f64,
    pub leftover_fraction_max: f64,
}

/// Reduce a run to its summary. Final rho of a finished app is its actual
/// shared time (queueing and overheads included) over T_id; censored apps
/// are counted separately.
pub fn summarize(outcome: &SimOutcome, scheduler: &str, seed: u64) -> MetricsSummary {
    let finished: Vec<&AppRecord> = outcome.records.iter().filter(|r| !r.censored).collect();
    let rhos: Vec<f64> = finished.iter().map(|r| r.rho).collect();
    let mut sorted_rhos = rhos.clone();
    sorted_rhos.sort_by(f64::total_cmp);
    let mut completions: Vec<f64> = finished.iter().map(|r| r.t_sh_s).collect();
    completions.sort_by(f64::total_cmp);
    let mut scores: Vec<f64> = outcome
        .records
        .iter()
        .map(|r| r.mean_placement_score)
        .collect();
    scores.sort_by(f64::total_cmp);

    let offered: f64 = outcome.rounds.iter().map(|r| r.offered as f64).sum();
    let leftover: Vec<f64> = outcome
        .rounds
        .iter()
        .filter(|r| r.offered > 0)
        .map(|r| r.fractional_leftover / r.offered as f64)
        .collect();
    let leftover_mean = if leftover.is_empty() || offered == 0.0 {
        0.0
    } else {
        leftover.iter().sum::<f64>() / leftover.len() as f64
    };
    let leftover_max = leftover.iter().cloned().fold(0.0, f64::max);

    MetricsSummary {
        scheduler: scheduler.to_string(),
        seed,
        finished_apps: finished.len(),
        censored_apps: outcome.records.len() - finished.len(),
        max_rho: sorted_rhos.last().copied(),
        median_rho: (!sorted_rhos.is_empty()).then(|| percentile(&sorted_rhos, 0.5)),
        jain_index: jain_index(&rhos).ok(),
        total_gpu_seconds: outcome.consumed_gpu_seconds,
        mean_completion_s: (!completions.is_empty())
            .then(|| completions.iter().sum::<f64>() / completions.len() as f64),
        median_completion_s: (!completions.is_empty()).then(|| percentile(&completions, 0.5)),
        p95_completion_s: (!completions.is_empty()).then(|| percentile(&completions, 0.95)),
        placement_score_p50: (!scores.is_empty()).then(|| percentile(&scores, 0.5)),
        placement_score_p10: (!scores.is_empty()).then(|| percentile(&scores, 0.1)),
        leftover_fraction_mean: leftover_mean,
        leftover_fraction_max: leftover_max,
    }
}

pub const CSV_HEADER: &str = "scheduler,seed,app_id,arrival_s,finish_s,t_sh_s,t_id_s,rho,gpu_seconds,mean_placement_score,censored";

/// Per-app records as CSV, deterministic field formatting.
pub fn records_to_csv(records: &[AppRecord], scheduler: &str, seed: u64) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let finish = r.finish_s.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            scheduler,
            seed,
            r.app_id.0,
            r.arrival_s,
            finish,
            r.t_sh_s,
            r.t_id_s,
            r.rho,
            r.gpu_seconds,
            r.mean_placement_score,
            r.censored
        ));
    }
    out
}

/// Parse the per-app CSV back into records (round-trip of records_to_csv).
pub fn records_from_csv(text: &str) -> Result<Vec<AppRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Config(format!("bad CSV record on line {}", i + 2)));
        }
        let parse = |s: &str, name: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Config(format!("bad {name} on line {}", i + 2)))
        };
        records.push(AppRecord {
            app_id: AppId(
                f[2].parse()
                    .map_err(|_| Error::Config(format!("bad app_id on line {}", i + 2)))?,
            ),
            arrival_s: parse(f[3], "arrival_s")?,
            finish_s: if f[4].is_empty() { None } else { Some(parse(f[4], "finish_s")?) },
            t_sh_s: parse(f[5], "t_sh_s")?,
            t_id_s: parse(f[6], "t_id_s")?,
            rho: parse(f[7], "rho")?,
            gpu_seconds: parse(f[8], "gpu_seconds")?,
            mean_placement_score: parse(f[9], "mean_placement_score")?,
            censored: f[10]
                .parse()
                .map_err(|_| Error::Config(format!("bad censored on line {}", i + 2)))?,
        });
    }
    Ok(records)
}
