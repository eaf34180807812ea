//! Decomposition drivers: the classical loop with exact master solves, the
//! agent-in-the-loop variant with feasibility screening and budgeted bound
//! certification, and the exhaustive enumeration oracle.
//!
//! Every run produces a [`GbdTrace`] with one record per iteration. The
//! classical driver additionally emits one dataset sample per master solve:
//! the encoded pre-solve master state labeled with the exact optimum, which
//! is exactly what the policy later imitates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts::{
    check_feasible, make_feasibility_cut, make_optimality_cut, mu_hat, CutRecord, CutStore,
    CUT_FEAS_TOL,
};
use crate::graph::{encode, BipartiteGraph, DatasetSample, FeasCutRow, DATASET_SCHEMA};
use crate::master::{solve_budgeted, solve_exact};
use crate::policy::{independent_predict, predict, HeadKind, PolicyParams, INDEPENDENT_THRESHOLDS};
use crate::problem::{
    enumerate_admissible, evaluate_constraints, Assignment, InstanceRecord, ProblemInstance,
    PureBinaryConstraints,
};
use crate::solver::{solve_phase1, solve_subproblem_from, TOL_FEAS};

/// Schema tag for trace files.
pub const TRACE_SCHEMA: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriverConfig {
    /// Termination gap.
    pub epsilon: f64,
    /// Acceptance slack when comparing the agent objective against the
    /// budgeted incumbent.
    pub eps_tol: f64,
    /// Node budgets of the time-limited master solve stand-in.
    pub budget_min: usize,
    pub budget_max: usize,
    pub max_iterations: usize,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            eps_tol: 1e-6,
            budget_min: 4,
            budget_max: 64,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    /// Every admissible assignment has an infeasible subproblem.
    #[error("instance infeasible: no admissible assignment has a feasible subproblem")]
    AllInfeasible,
    /// The continuous solver failed to converge somewhere.
    #[error("continuous solver did not converge")]
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The screened prediction was kept as the next iterate.
    AgentAccepted,
    /// The budgeted solve found a better incumbent; it replaced the
    /// prediction.
    SolverOverride,
    /// The prediction was rejected (missing, inadmissible, or violating a
    /// feasibility cut) and the master was solved exactly.
    SolverFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationCap,
    MasterInfeasible,
    SolverFailure,
}

/// One iteration of a decomposition run. Bounds are `None` while infinite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub y: Assignment,
    pub subproblem_feasible: bool,
    /// Subproblem optimum when feasible, total slack otherwise.
    pub z_or_slack: f64,
    pub cut: CutRecord,
    pub ubd: Option<f64>,
    pub lbd: Option<f64>,
    /// True when a master solve ran this iteration (the terminal converged
    /// iteration has none).
    pub master_solved: bool,
    pub decision: Option<Decision>,
    pub node_budget: Option<usize>,
    /// Raw policy proposal before screening (agent modes).
    pub predicted: Option<Assignment>,
    /// Objective induced by the accepted prediction under the optimality
    /// cuts, when the budgeted path ran and the value is finite.
    pub mu_hat_pred: Option<f64>,
    /// Incumbent objective of the budgeted solve, when finite.
    pub mu_bar: Option<f64>,
    /// Certified bound of the master solve, when finite.
    pub master_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdTrace {
    pub schema: String,
    pub mode: String,
    pub instance: InstanceRecord,
    pub iterations: Vec<IterationRecord>,
    pub final_objective: Option<f64>,
    pub final_y: Option<Assignment>,
    pub iteration_count: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Classical run output: the trace plus the expert dataset samples.
#[derive(Debug, Clone)]
pub struct ClassicalOutput {
    pub trace: GbdTrace,
    pub samples: Vec<DatasetSample>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Node budget from the normalized optimality gap: the minimum while the
/// gap is at its reference value (or either bound still infinite), growing
/// linearly to the maximum as the gap closes.
pub fn budget_schedule(gap: f64, gap0: f64, budget_min: usize, budget_max: usize) -> usize {
    if !gap.is_finite() || !gap0.is_finite() || gap0 <= 0.0 {
        return budget_min;
    }
    let frac = 1.0 - gap / gap0;
    let raw = budget_min as f64 + (budget_max - budget_min) as f64 * frac;
    (raw.round() as i64).clamp(budget_min as i64, budget_max as i64) as usize
}

/// Anything that proposes the next master assignment from the encoded
/// state. The proposal may be inadmissible or cut-violating; the driver
/// screens it and falls back to the exact solver.
pub trait MasterPredictor {
    fn propose(&self, graph: &BipartiteGraph, admissible: &[Assignment]) -> Option<Assignment>;
}

impl MasterPredictor for PolicyParams {
    fn propose(&self, graph: &BipartiteGraph, admissible: &[Assignment]) -> Option<Assignment> {
        match self.descriptor.head {
            HeadKind::Combination => {
                let (idx, _) = predict(self, graph, admissible).expect("combination head");
                Some(admissible[idx])
            }
            HeadKind::Independent => {
                independent_predict(self, graph, INDEPENDENT_THRESHOLDS).expect("independent head")
            }
        }
    }
}

struct LoopState {
    store: CutStore,
    ubd: f64,
    lbd: f64,
    best: Option<(f64, Assignment)>,
    records: Vec<IterationRecord>,
}

impl LoopState {
    fn new() -> Self {
        Self {
            store: CutStore::new(),
            ubd: f64::INFINITY,
            lbd: f64::NEG_INFINITY,
            best: None,
            records: Vec::new(),
        }
    }
}

/// Solves the subproblem at the iterate, updates the upper bound and
/// appends the resulting cut. Returns the record skeleton for this
/// iteration, or an error when the continuous solver fails.
fn subproblem_step(
    inst: &ProblemInstance,
    state: &mut LoopState,
    y: &Assignment,
    k: usize,
) -> Result<(bool, f64, CutRecord), DriverError> {
    let ph1 = solve_phase1(inst, y);
    if !ph1.converged {
        return Err(DriverError::SolverFailure);
    }
    if ph1.slack_sum <= TOL_FEAS {
        let sub = solve_subproblem_from(inst, y, &ph1).map_err(|_| DriverError::SolverFailure)?;
        if !sub.converged {
            return Err(DriverError::SolverFailure);
        }
        if sub.z_value < state.ubd {
            state.ubd = sub.z_value;
            state.best = Some((sub.z_value, *y));
        }
        let cut = make_optimality_cut(inst, &sub, y, k).map_err(|_| DriverError::SolverFailure)?;
        let record = CutRecord::from(&cut);
        state.store.push(cut);
        Ok((true, sub.z_value, record))
    } else {
        let cut = make_feasibility_cut(inst, &ph1, y, k).map_err(|_| DriverError::SolverFailure)?;
        let record = CutRecord::from(&cut);
        state.store.push(cut);
        Ok((false, ph1.slack_sum, record))
    }
}

fn finish(
    mode: &str,
    inst: &ProblemInstance,
    state: LoopState,
    termination: Termination,
) -> GbdTrace {
    let converged = termination == Termination::Converged;
    GbdTrace {
        schema: TRACE_SCHEMA.to_string(),
        mode: mode.to_string(),
        instance: InstanceRecord::from(inst),
        iteration_count: state.records.len(),
        iterations: state.records,
        final_objective: if converged { state.best.map(|(z, _)| z) } else { None },
        final_y: if converged { state.best.map(|(_, y)| y) } else { None },
        converged,
        termination,
    }
}

/// Classical decomposition: the master problem is solved exactly at every
/// iteration, and each master solve is recorded as one expert dataset
/// sample (pre-solve state, exact-optimum label).
pub fn solve_classical(inst: &ProblemInstance, config: &DriverConfig) -> ClassicalOutput {
    let pbc = PureBinaryConstraints::family();
    let admissible = enumerate_admissible(&pbc).expect("family admissible set");
    let mut state = LoopState::new();
    let mut samples = Vec::new();
    let mut y = admissible[0];
    let mut k = 0;

    let termination = loop {
        if k >= config.max_iterations {
            break Termination::IterationCap;
        }
        let (feasible, z_or_slack, cut_record) = match subproblem_step(inst, &mut state, &y, k) {
            Ok(t) => t,
            Err(_) => break Termination::SolverFailure,
        };
        let mut record = IterationRecord {
            k,
            y,
            subproblem_feasible: feasible,
            z_or_slack,
            cut: cut_record,
            ubd: finite(state.ubd),
            lbd: finite(state.lbd),
            master_solved: false,
            decision: None,
            node_budget: None,
            predicted: None,
            mu_hat_pred: None,
            mu_bar: None,
            master_bound: None,
        };

        if state.ubd - state.lbd <= config.epsilon {
            state.records.push(record);
            break Termination::Converged;
        }

        let graph = encode(&state.store, &y);
        record.master_solved = true;
        let master = match solve_exact(&state.store, &admissible) {
            Ok(m) => m,
            Err(_) => {
                state.records.push(record);
                break Termination::MasterInfeasible;
            }
        };
        let label_index = admissible
            .iter()
            .position(|a| *a == master.y_best)
            .expect("master optimum admissible");
        samples.push(DatasetSample {
            schema: DATASET_SCHEMA.to_string(),
            instance_seed: inst.seed,
            iteration: k,
            label_index,
            graph,
            feasibility_cuts: state
                .store
                .feasibility
                .iter()
                .map(|c| FeasCutRow {
                    alpha: c.alpha,
                    beta: c.beta,
                })
                .collect(),
        });

        // Exact master optima are nondecreasing as cuts accumulate, so the
        // assignment is direct.
        state.lbd = master.mu_best;
        record.lbd = finite(state.lbd);
        record.master_bound = finite(master.best_bound);
        state.records.push(record);
        y = master.y_best;
        k += 1;
    };

    ClassicalOutput {
        trace: finish("classical", inst, state, termination),
        samples,
    }
}

/// Agent-in-the-loop decomposition. The prediction is screened against the
/// pure binary constraints and the accumulated feasibility cuts; when it
/// survives, a budgeted master solve warm-started at the prediction
/// certifies a valid bound and arbitrates acceptance; otherwise the master
/// is solved exactly. The lower bound is explicitly kept monotone.
pub fn solve_agent_with(
    inst: &ProblemInstance,
    predictor: &dyn MasterPredictor,
    mode: &str,
    config: &DriverConfig,
) -> GbdTrace {
    let pbc = PureBinaryConstraints::family();
    let admissible = enumerate_admissible(&pbc).expect("family admissible set");
    let mut state = LoopState::new();
    let mut y = admissible[0];
    let mut k = 0;
    let mut gap0: Option<f64> = None;

    let termination = loop {
        if k >= config.max_iterations {
            break Termination::IterationCap;
        }
        let (feasible, z_or_slack, cut_record) = match subproblem_step(inst, &mut state, &y, k) {
            Ok(t) => t,
            Err(_) => break Termination::SolverFailure,
        };
        let mut record = IterationRecord {
            k,
            y,
            subproblem_feasible: feasible,
            z_or_slack,
            cut: cut_record,
            ubd: finite(state.ubd),
            lbd: finite(state.lbd),
            master_solved: false,
            decision: None,
            node_budget: None,
            predicted: None,
            mu_hat_pred: None,
            mu_bar: None,
            master_bound: None,
        };

        if state.ubd - state.lbd <= config.epsilon {
            state.records.push(record);
            break Termination::Converged;
        }

        let graph = encode(&state.store, &y);
        record.master_solved = true;
        let proposal = predictor.propose(&graph, &admissible);
        record.predicted = proposal;
        let screened = proposal.filter(|p| {
            pbc.is_admissible(p) && check_feasible(&state.store, p, CUT_FEAS_TOL)
        });

        match screened {
            Some(y_hat) => {
                let gap = state.ubd - state.lbd;
                if gap0.is_none() && gap.is_finite() {
                    gap0 = Some(gap);
                }
                let budget = match gap0 {
                    Some(g0) => budget_schedule(gap, g0, config.budget_min, config.budget_max),
                    None => config.budget_min,
                };
                let master = match solve_budgeted(&state.store, &pbc, budget, &y_hat) {
                    Ok(m) => m,
                    Err(_) => {
                        state.records.push(record);
                        break Termination::MasterInfeasible;
                    }
                };
                let mu_hat_pred = mu_hat(&state.store, &y_hat);
                let accepted = mu_hat_pred <= master.mu_best + config.eps_tol;
                record.node_budget = Some(budget);
                record.mu_hat_pred = finite(mu_hat_pred);
                record.mu_bar = finite(master.mu_best);
                record.master_bound = finite(master.best_bound);
                record.decision = Some(if accepted {
                    Decision::AgentAccepted
                } else {
                    Decision::SolverOverride
                });
                y = if accepted { y_hat } else { master.y_best };
                state.lbd = state.lbd.max(master.best_bound);
            }
            None => {
                let master = match solve_exact(&state.store, &admissible) {
                    Ok(m) => m,
                    Err(_) => {
                        state.records.push(record);
                        break Termination::MasterInfeasible;
                    }
                };
                record.decision = Some(Decision::SolverFallback);
                record.mu_bar = finite(master.mu_best);
                record.master_bound = finite(master.best_bound);
                y = master.y_best;
                state.lbd = state.lbd.max(master.mu_best);
            }
        }
        record.lbd = finite(state.lbd);
        state.records.push(record);
        k += 1;
    };

    finish(mode, inst, state, termination)
}

/// Agent run with a trained policy; the trace mode is derived from the
/// model's head.
pub fn solve_agent(inst: &ProblemInstance, params: &PolicyParams, config: &DriverConfig) -> GbdTrace {
    let mode = match params.descriptor.head {
        HeadKind::Combination => "agent",
        HeadKind::Independent => "agent-independent",
    };
    solve_agent_with(inst, params, mode, config)
}

/// Solves the subproblem at every admissible assignment and returns the
/// feasible minimizer (the lexicographically first on ties).
pub fn oracle_solve(inst: &ProblemInstance) -> Result<(Assignment, f64), DriverError> {
    let admissible =
        enumerate_admissible(&PureBinaryConstraints::family()).expect("family admissible set");
    let mut best: Option<(f64, Assignment)> = None;
    for y in &admissible {
        let ph1 = solve_phase1(inst, y);
        if !ph1.converged {
            return Err(DriverError::SolverFailure);
        }
        if ph1.slack_sum > TOL_FEAS {
            continue;
        }
        let sub = solve_subproblem_from(inst, y, &ph1).map_err(|_| DriverError::SolverFailure)?;
        if !sub.converged {
            return Err(DriverError::SolverFailure);
        }
        if best.as_ref().is_none_or(|(z, _)| sub.z_value < *z) {
            best = Some((sub.z_value, *y));
        }
    }
    best.map(|(z, y)| (y, z)).ok_or(DriverError::AllInfeasible)
}

/// Cheap feasibility screen for instance selection: checks the origin
/// certificate first (all constraint rows are nonpositive at x = 0 for
/// every feasible assignment of this family), then falls back to the slack
/// solver.
pub fn instance_is_feasible(inst: &ProblemInstance) -> bool {
    let admissible =
        enumerate_admissible(&PureBinaryConstraints::family()).expect("family admissible set");
    for y in &admissible {
        let (g, _) = evaluate_constraints(inst, &[0.0; 6], y).expect("origin in domain");
        if g.iter().all(|gi| *gi <= 0.0) {
            return true;
        }
    }
    admissible
        .iter()
        .any(|y| solve_phase1(inst, y).slack_sum <= TOL_FEAS)
}
