//! Online self-supervised training of the hyperparameter model on the
//! instance being solved, plus the non-learned baselines.
//!
//! The training signal is the expected total cost under independent
//! per-variable `softmax(-belief)` distributions. Every `t_upd` iterations the
//! lowest-cost iterations of the window contribute their losses, Adam takes
//! one step, and the recorded history is cut so gradients never span windows.

mod loss;
mod session;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use loss::{assignment_probs, decision_gap, select_effective, smoothed_loss};
pub use session::{OnlineSession, StepRecord};

use crate::bp_engine::{self, BpError, Damping, MessageSet};
use crate::diff::DiffError;
use crate::factor_graph::{Assignment, CopInstance, FactorGraph, InstanceError};
use crate::model::{ModelError, ModelParameters};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("every restart aborted; last reason: {0}")]
    AllRestartsAborted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub restarts: usize,
    pub t_max: usize,
    pub t_upd: usize,
    pub t_eff: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Messages count as converged once no entry moves by more than this.
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            t_max: 1000,
            t_upd: 20,
            t_eff: 2,
            lr: 1e-4,
            weight_decay: 5e-5,
            eps: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.restarts == 0 {
            return fail("restarts must be positive");
        }
        if self.t_upd == 0 || self.t_upd > self.t_max {
            return fail("t_upd must lie in 1..=t_max");
        }
        if self.t_eff == 0 || self.t_eff > self.t_upd {
            return fail("t_eff must lie in 1..=t_upd");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight decay must be non-negative");
        }
        if self.eps.is_nan() || self.eps < 0.0 {
            return fail("eps must be non-negative");
        }
        Ok(())
    }
}

/// One iteration of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub restart: usize,
    /// 1-based within the restart.
    pub iteration: usize,
    pub cost: f64,
    /// Smoothed cost; absent for the non-learned solvers.
    pub loss: Option<f64>,
    pub converged: bool,
    /// Best cost seen so far in the whole run.
    pub best_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub best_assignment: Assignment,
    pub best_cost: f64,
    /// Earliest iteration at which any restart converged.
    pub converged_at: Option<usize>,
    pub wall_time: Duration,
    pub updates: usize,
    /// `(restart, reason)` for every restart cut short by a numerical failure.
    pub aborted: Vec<(usize, String)>,
}

struct Best {
    assignment: Option<Assignment>,
    cost: f64,
}

impl Best {
    fn new() -> Self {
        Self {
            assignment: None,
            cost: f64::INFINITY,
        }
    }

    fn offer(&mut self, a: &Assignment, cost: f64) {
        if cost < self.cost || self.assignment.is_none() {
            self.cost = cost;
            self.assignment = Some(a.clone());
        }
    }
}

/// Solves `instance` while training `params` online. `params` keeps the
/// trained weights afterwards.
pub fn run_online(
    instance: &CopInstance,
    params: &mut ModelParameters,
    cfg: &TrainConfig,
) -> Result<RunTrace, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut best = Best::new();
    let mut converged_at: Option<usize> = None;
    let mut aborted = Vec::new();
    let mut updates = 0;

    for restart in 0..cfg.restarts {
        let mut session = OnlineSession::new(instance, params, cfg.eps)?;
        let mut since_update = 0;
        for t in 1..=cfg.t_max {
            let step = match session.step() {
                Ok(step) => step,
                Err(reason) => {
                    aborted.push((restart, reason.to_string()));
                    break;
                }
            };
            since_update += 1;
            best.offer(&step.assignment, step.cost);
            records.push(IterationRecord {
                restart,
                iteration: t,
                cost: step.cost,
                loss: Some(step.loss),
                converged: step.converged,
                best_cost: best.cost,
            });
            if !step.loss.is_finite() {
                aborted.push((restart, format!("non-finite loss at iteration {t}")));
                break;
            }
            if since_update == cfg.t_upd || (step.converged && since_update > 0) {
                if let Err(reason) = session.update(params, cfg) {
                    aborted.push((restart, reason.to_string()));
                    break;
                }
                updates += 1;
                since_update = 0;
            }
            if step.converged {
                converged_at = Some(converged_at.map_or(t, |c| c.min(t)));
                break;
            }
        }
    }

    let Some(best_assignment) = best.assignment else {
        let reason = aborted.last().map(|(_, r)| r.clone()).unwrap_or_default();
        return Err(TrainError::AllRestartsAborted(reason));
    };
    Ok(RunTrace {
        records,
        best_assignment,
        best_cost: best.cost,
        converged_at,
        wall_time: start.elapsed(),
        updates,
        aborted,
    })
}

/// Non-learned solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "algo")]
pub enum Baseline {
    Bp,
    Dbp { lambda: f64 },
    DbpScfg { lambda: f64, rho: f64 },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Bp => "bp",
            Baseline::Dbp { .. } => "dbp",
            Baseline::DbpScfg { .. } => "dbp-scfg",
        }
    }
}

/// Runs a fixed-rule solver once for up to `cfg.t_max` iterations. Costs are
/// measured on `instance` even when the messages run on its split form.
/// Restarts are not repeated since every restart would be identical.
pub fn run_baseline(
    instance: &CopInstance,
    algo: Baseline,
    cfg: &TrainConfig,
) -> Result<RunTrace, TrainError> {
    if cfg.t_max == 0 {
        return Err(TrainError::Config("t_max must be positive".into()));
    }
    let (work, lambda) = match algo {
        Baseline::Bp => (None, 0.0),
        Baseline::Dbp { lambda } => (None, lambda),
        Baseline::DbpScfg { lambda, rho } => (Some(instance.split_scfg(rho)?), lambda),
    };
    // zero damping is plain BP
    let damping = match lambda {
        0.0 => Damping::None,
        l if l > 0.0 && l <= 1.0 => Damping::Constant(l),
        l => return Err(BpError::InvalidDamping(l).into()),
    };
    let work = work.as_ref().unwrap_or(instance);
    let graph = FactorGraph::new(work);
    let start = Instant::now();
    let mut msgs = MessageSet::zeros(&graph);
    let mut best = Best::new();
    let mut records = Vec::new();
    let mut converged_at = None;
    for t in 1..=cfg.t_max {
        let next = bp_engine::iterate(&graph, work, &msgs, damping)?;
        let assignment = bp_engine::decide(&bp_engine::beliefs(&graph, &next.f2v));
        let cost = instance.total_cost(&assignment)?;
        best.offer(&assignment, cost);
        let converged = bp_engine::converged(&next, &msgs, cfg.eps)?;
        records.push(IterationRecord {
            restart: 0,
            iteration: t,
            cost,
            loss: None,
            converged,
            best_cost: best.cost,
        });
        msgs = next;
        if converged {
            converged_at = Some(t);
            break;
        }
    }
    Ok(RunTrace {
        records,
        best_assignment: best.assignment.expect("t_max >= 1"),
        best_cost: best.cost,
        converged_at,
        wall_time: start.elapsed(),
        updates: 0,
        aborted: Vec::new(),
    })
}
