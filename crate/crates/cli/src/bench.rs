use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SolveSettings;
use crate::gen::Manifest;
use crate::solve::{load_instance, solve_instance, Algo};
use crate::{io_err, CliError};

/// Iteration limits at which convergence fractions are reported.
pub const CONVERGENCE_LIMITS: [usize; 4] = [125, 250, 500, 1000];

pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub algo: Algo,
    pub best_cost: Option<f64>,
    /// Best cost over the unsplit function count.
    pub normalized_cost: Option<f64>,
    pub converged_at: Option<usize>,
    pub wall_time_secs: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub algo: Algo,
    pub solved: usize,
    pub failed: usize,
    pub mean_normalized_cost: f64,
    /// `(mean - best mean) / best mean` over the compared algorithms.
    pub gap: f64,
    /// Fraction of instances converged by each of [`CONVERGENCE_LIMITS`].
    pub convergence: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Manifest order, then algorithm order.
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<AlgoSummary>,
}

impl BenchReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn summary(&self, algo: Algo) -> Option<&AlgoSummary> {
        self.summaries.iter().find(|s| s.algo == algo)
    }

    pub fn write_csv(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join(ROWS_FILE);
        let csv_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Csv { path, source }
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;

        let path = out_dir.join(SUMMARY_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header: Vec<String> = ["algo", "solved", "failed", "mean_normalized_cost", "gap"]
            .map(String::from)
            .to_vec();
        header.extend(
            CONVERGENCE_LIMITS
                .iter()
                .map(|l| format!("converged_by_{l}")),
        );
        w.write_record(&header).map_err(csv_err(&path))?;
        for s in &self.summaries {
            let mut rec = vec![
                s.algo.to_string(),
                s.solved.to_string(),
                s.failed.to_string(),
                s.mean_normalized_cost.to_string(),
                s.gap.to_string(),
            ];
            rec.extend(s.convergence.iter().map(|(_, f)| f.to_string()));
            w.write_record(&rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))
    }
}

/// Runs every algorithm on every manifest instance. Per-instance failures
/// become rows with an `error` and do not stop the run. `workers` of `None`
/// uses rayon's default pool size.
pub fn cmd_bench(
    manifest_path: &Path,
    algos: &[Algo],
    settings: &SolveSettings,
    workers: Option<usize>,
) -> Result<BenchReport, CliError> {
    if algos.is_empty() {
        return Err(CliError::Invalid("no algorithms given".into()));
    }
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let jobs: Vec<_> = manifest
        .instances
        .iter()
        .flat_map(|e| algos.iter().map(move |&a| (e, a)))
        .collect();

    let run = || {
        jobs.par_iter()
            .map(|&(entry, algo)| {
                let outcome = load_instance(&base.join(&entry.file))
                    .and_then(|inst| solve_instance(&inst, algo, settings, entry.seed));
                match outcome {
                    Ok(o) => BenchRow {
                        instance: entry.id.clone(),
                        algo,
                        best_cost: Some(o.summary.best_cost),
                        normalized_cost: Some(o.summary.normalized_cost),
                        converged_at: o.summary.converged_at,
                        wall_time_secs: Some(o.summary.wall_time_secs),
                        error: None,
                    },
                    Err(e) => BenchRow {
                        instance: entry.id.clone(),
                        algo,
                        best_cost: None,
                        normalized_cost: None,
                        converged_at: None,
                        wall_time_secs: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect::<Vec<_>>()
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Invalid(format!("worker pool: {e}")))?;
    let rows = pool.install(run);
    let summaries = summarize(&rows, algos, manifest.instances.len());
    Ok(BenchReport { rows, summaries })
}

/// Aggregates rows per algorithm. Failed rows count as unconverged.
pub fn summarize(rows: &[BenchRow], algos: &[Algo], num_instances: usize) -> Vec<AlgoSummary> {
    let mut out: Vec<AlgoSummary> = algos
        .iter()
        .map(|&algo| {
            let mine: Vec<_> = rows.iter().filter(|r| r.algo == algo).collect();
            let costs: Vec<f64> = mine.iter().filter_map(|r| r.normalized_cost).collect();
            let mean = if costs.is_empty() {
                f64::NAN
            } else {
                costs.iter().sum::<f64>() / costs.len() as f64
            };
            let convergence = CONVERGENCE_LIMITS
                .iter()
                .map(|&limit| {
                    let hits = mine
                        .iter()
                        .filter(|r| r.converged_at.is_some_and(|t| t <= limit))
                        .count();
                    (limit, hits as f64 / num_instances.max(1) as f64)
                })
                .collect();
            AlgoSummary {
                algo,
                solved: costs.len(),
                failed: mine.len() - costs.len(),
                mean_normalized_cost: mean,
                gap: f64::NAN,
                convergence,
            }
        })
        .collect();
    let best = out
        .iter()
        .map(|s| s.mean_normalized_cost)
        .filter(|m| !m.is_nan())
        .fold(f64::INFINITY, f64::min);
    for s in &mut out {
        s.gap = gap(s.mean_normalized_cost, best);
    }
    out
}

fn gap(cost: f64, best: f64) -> f64 {
    if cost.is_nan() || !best.is_finite() {
        f64::NAN
    } else if cost == best {
        0.0
    } else {
        (cost - best) / best.abs()
    }
}
