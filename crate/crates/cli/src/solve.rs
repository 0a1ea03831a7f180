use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use dabp::diff::ParameterStore;
use dabp::factor_graph::{deserialize, Assignment, CopInstance};
use dabp::model::{Mode, ModelParameters};
use dabp::oracle::solve_exact_with_cap;
use dabp::trainer::{run_baseline, run_online, Baseline, IterationRecord, RunTrace};
use serde::{Deserialize, Serialize};

use crate::config::SolveSettings;
use crate::{io_err, CliError};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Bp,
    Dbp,
    DbpScfg,
    Dabp,
    DabpHeter,
    DabpHomo,
    Exact,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Bp => "bp",
            Algo::Dbp => "dbp",
            Algo::DbpScfg => "dbp-scfg",
            Algo::Dabp => "dabp",
            Algo::DabpHeter => "dabp-heter",
            Algo::DabpHomo => "dabp-homo",
            Algo::Exact => "exact",
        }
    }

    fn mode(self) -> Option<Mode> {
        match self {
            Algo::Dabp => Some(Mode::Full),
            Algo::DabpHeter => Some(Mode::HeterLambda),
            Algo::DabpHomo => Some(Mode::HomoLambda),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algo: Algo,
    pub best_cost: f64,
    /// Best cost divided by the function count of the unsplit instance.
    pub normalized_cost: f64,
    pub converged_at: Option<usize>,
    pub iterations: usize,
    pub updates: usize,
    pub aborted_restarts: usize,
    pub wall_time_secs: f64,
    pub assignment: Assignment,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub summary: Summary,
    /// Empty for `exact`.
    pub records: Vec<IterationRecord>,
}

pub fn load_instance(path: &Path) -> Result<CopInstance, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    deserialize(&text).map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })
}

fn read_store(path: &Path) -> Result<ParameterStore, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    ParameterStore::read_checkpoint(BufReader::new(file)).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn write_store(store: &ParameterStore, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    store
        .write_checkpoint(&mut w)
        .and_then(|()| w.flush().map_err(Into::into))
        .map_err(|source| CliError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })
}

/// Runs one solver on one instance. `seed_offset` is mixed into the model
/// seed so batch runs give each instance its own initialization.
pub fn solve_instance(
    instance: &CopInstance,
    algo: Algo,
    settings: &SolveSettings,
    seed_offset: u64,
) -> Result<SolveOutcome, CliError> {
    let num_functions = instance.num_functions();
    let trace = match algo {
        Algo::Exact => {
            let start = Instant::now();
            let res = solve_exact_with_cap(instance, settings.exact_cap)?;
            RunTrace {
                records: Vec::new(),
                best_assignment: res.assignment,
                best_cost: res.cost,
                converged_at: None,
                wall_time: start.elapsed(),
                updates: 0,
                aborted: Vec::new(),
            }
        }
        Algo::Bp => run_baseline(instance, Baseline::Bp, &settings.train)?,
        Algo::Dbp => run_baseline(
            instance,
            Baseline::Dbp {
                lambda: settings.lambda,
            },
            &settings.train,
        )?,
        Algo::DbpScfg => run_baseline(
            instance,
            Baseline::DbpScfg {
                lambda: settings.lambda,
                rho: settings.rho,
            },
            &settings.train,
        )?,
        Algo::Dabp | Algo::DabpHeter | Algo::DabpHomo => {
            run_learned(instance, algo, settings, seed_offset)?
        }
    };
    let iterations = trace.records.len();
    let summary = Summary {
        algo,
        best_cost: trace.best_cost,
        normalized_cost: trace.best_cost / num_functions.max(1) as f64,
        converged_at: trace.converged_at,
        iterations,
        updates: trace.updates,
        aborted_restarts: trace.aborted.len(),
        wall_time_secs: trace.wall_time.as_secs_f64(),
        assignment: trace.best_assignment,
    };
    Ok(SolveOutcome {
        summary,
        records: trace.records,
    })
}

fn run_learned(
    instance: &CopInstance,
    algo: Algo,
    settings: &SolveSettings,
    seed_offset: u64,
) -> Result<RunTrace, CliError> {
    let split;
    let work = if settings.scfg {
        split = instance.split_scfg(settings.rho)?;
        &split
    } else {
        instance
    };
    let mut model = settings.model;
    if model.msg_width == 0 {
        model.msg_width = instance.max_domain();
    }
    if let Some(mode) = algo.mode() {
        model.mode = mode;
    }
    let seed = settings.train.seed.wrapping_add(seed_offset);
    let mut params = ModelParameters::new(model, seed)?;
    if let Some(path) = &settings.load_params {
        let saved = read_store(path)?;
        params
            .store_mut()
            .load_from(&saved)
            .map_err(|source| CliError::Checkpoint {
                path: path.clone(),
                source,
            })?;
    }
    let mut trace = run_online(work, &mut params, &settings.train)?;
    if let Some(path) = &settings.save_params {
        write_store(params.store(), path)?;
    }
    // the split form differs only in summation order; report on the original
    trace.best_cost = instance.total_cost(&trace.best_assignment)?;
    Ok(trace)
}

/// Solves one instance file and writes `trace.jsonl` plus `summary.json` into
/// `out_dir`.
pub fn cmd_solve(
    instance_path: &Path,
    algo: Algo,
    settings: &SolveSettings,
    out_dir: &Path,
) -> Result<Summary, CliError> {
    let instance = load_instance(instance_path)?;
    let outcome = solve_instance(&instance, algo, settings, 0)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_trace(&outcome.records, &out_dir.join(TRACE_FILE))?;
    let path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(outcome.summary)
}

pub fn write_trace(records: &[IterationRecord], path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| CliError::Json {
                path: PathBuf::from(path),
                source,
            })
        })
        .collect()
}
