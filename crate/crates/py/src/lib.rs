//! Python bindings for the decomposition workbench: instance sampling,
//! subproblem solves, the enumeration oracle and the solver drivers.
//!
//! Build the importable module with
//! `cargo build -p gbd-agent-py --release --features extension-module`
//! and see `python/smoke_test.py` for loading it without maturin.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gbd_agent::driver::{
    instance_is_feasible, oracle_solve, solve_agent, solve_classical, DriverConfig, GbdTrace,
};
use gbd_agent::policy::load_params;
use gbd_agent::problem::{
    enumerate_admissible, evaluate_objective, sample_instance, Assignment, ProblemInstance,
    PureBinaryConstraints,
};
use gbd_agent::solver::{solve_phase1, solve_subproblem, TOL_FEAS};

#[pyclass(name = "Instance", from_py_object)]
#[derive(Clone)]
struct PyInstance {
    inner: ProblemInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    fn new(seed: u64, gamma: [f64; 5], u: f64, rho: [f64; 2]) -> Self {
        Self {
            inner: ProblemInstance::new(seed, gamma, u, rho),
        }
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn gamma(&self) -> [f64; 5] {
        self.inner.gamma
    }

    #[getter]
    fn u(&self) -> f64 {
        self.inner.big_u
    }

    #[getter]
    fn rho(&self) -> [f64; 2] {
        self.inner.rho
    }

    fn is_feasible(&self) -> bool {
        instance_is_feasible(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(seed={}, gamma={:?}, u={}, rho={:?})",
            self.inner.seed, self.inner.gamma, self.inner.big_u, self.inner.rho
        )
    }
}

#[pyclass(name = "SolveSummary")]
struct PySolveSummary {
    #[pyo3(get)]
    mode: String,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    objective: Option<f64>,
    #[pyo3(get)]
    assignment: Option<[u32; 5]>,
    #[pyo3(get)]
    iterations: usize,
    trace_json: String,
}

#[pymethods]
impl PySolveSummary {
    /// Full per-iteration trace as JSON.
    fn trace_json(&self) -> &str {
        &self.trace_json
    }

    fn __repr__(&self) -> String {
        let objective = match self.objective {
            Some(z) => format!("{z}"),
            None => "None".to_string(),
        };
        format!(
            "SolveSummary(mode={:?}, converged={}, objective={objective}, iterations={})",
            self.mode,
            if self.converged { "True" } else { "False" },
            self.iterations
        )
    }
}

fn summary_from(trace: GbdTrace) -> PyResult<PySolveSummary> {
    let trace_json = serde_json::to_string(&trace)
        .map_err(|e| PyRuntimeError::new_err(format!("trace serialization failed: {e}")))?;
    Ok(PySolveSummary {
        mode: trace.mode.clone(),
        converged: trace.converged,
        objective: trace.final_objective,
        assignment: trace.final_y.map(|y| widen(y.0)),
        iterations: trace.iteration_count,
        trace_json,
    })
}

fn assignment_from(bits: [u32; 5]) -> PyResult<Assignment> {
    if bits.iter().any(|b| *b > 1) {
        return Err(PyValueError::new_err("assignment bits must be 0 or 1"));
    }
    let mut out = [0u8; 5];
    for (o, b) in out.iter_mut().zip(bits.iter()) {
        *o = *b as u8;
    }
    Ok(Assignment(out))
}

/// u8 arrays convert to Python bytes; widen so assignments arrive as lists
/// of ints.
fn widen(bits: [u8; 5]) -> [u32; 5] {
    let mut out = [0u32; 5];
    for (o, b) in out.iter_mut().zip(bits.iter()) {
        *o = u32::from(*b);
    }
    out
}

/// Draws the eight instance parameters uniformly from their ranges;
/// deterministic in the seed.
#[pyfunction]
#[pyo3(name = "sample_instance")]
fn py_sample_instance(seed: u64) -> PyInstance {
    PyInstance {
        inner: sample_instance(seed),
    }
}

/// All binary assignments satisfying the pure binary constraints, in the
/// canonical lexicographic order.
#[pyfunction]
fn admissible_assignments() -> PyResult<Vec<[u32; 5]>> {
    let adm = enumerate_admissible(&PureBinaryConstraints::family())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(adm.into_iter().map(|y| widen(y.0)).collect())
}

/// Objective value and gradient with respect to the continuous variables.
#[pyfunction]
#[pyo3(name = "evaluate_objective")]
fn py_evaluate_objective(
    inst: &PyInstance,
    x: [f64; 6],
    y: [u32; 5],
) -> PyResult<(f64, [f64; 6])> {
    let y = assignment_from(y)?;
    evaluate_objective(&inst.inner, &x, &y).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Solves the continuous subproblem at a fixed assignment; returns
/// `(objective, x_star, inequality_duals)`. Raises when the assignment's
/// subproblem is infeasible.
#[pyfunction]
#[pyo3(name = "solve_subproblem")]
fn py_solve_subproblem(
    inst: &PyInstance,
    y: [u32; 5],
) -> PyResult<(f64, [f64; 6], [f64; 12])> {
    let y = assignment_from(y)?;
    let sub =
        solve_subproblem(&inst.inner, &y).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((sub.z_value, sub.x_star, sub.duals_mu))
}

/// Total constraint violation of the best slack point at a fixed
/// assignment; zero (up to tolerance) means the subproblem is feasible.
#[pyfunction]
#[pyo3(name = "feasibility_slack")]
fn py_feasibility_slack(inst: &PyInstance, y: [u32; 5]) -> PyResult<f64> {
    let y = assignment_from(y)?;
    Ok(solve_phase1(&inst.inner, &y).slack_sum)
}

/// Exhaustive reference solve over the admissible assignments; returns
/// `(assignment, objective)`.
#[pyfunction]
#[pyo3(name = "oracle_solve")]
fn py_oracle_solve(inst: &PyInstance) -> PyResult<([u32; 5], f64)> {
    oracle_solve(&inst.inner)
        .map(|(y, z)| (widen(y.0), z))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs a decomposition driver on the instance. `mode` is `"classical"`,
/// `"agent"` or `"agent-independent"`; the agent modes need a trained model
/// file produced by the `gbd-agent train` command.
#[pyfunction]
#[pyo3(signature = (inst, mode, model_path=None))]
fn solve(inst: &PyInstance, mode: &str, model_path: Option<&str>) -> PyResult<PySolveSummary> {
    let config = DriverConfig::default();
    let trace = match mode {
        "classical" => solve_classical(&inst.inner, &config).trace,
        "agent" | "agent-independent" => {
            let path = model_path
                .ok_or_else(|| PyValueError::new_err(format!("mode {mode:?} needs model_path")))?;
            let params = load_params(std::path::Path::new(path))
                .map_err(|e| PyValueError::new_err(e.to_string()))?;
            let expected_independent = mode == "agent-independent";
            let is_independent =
                params.descriptor.head == gbd_agent::policy::HeadKind::Independent;
            if expected_independent != is_independent {
                return Err(PyValueError::new_err(format!(
                    "model head {:?} does not match mode {mode:?}",
                    params.descriptor.head
                )));
            }
            solve_agent(&inst.inner, &params, &config)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown mode {other:?} (classical, agent or agent-independent)"
            )))
        }
    };
    summary_from(trace)
}

/// Feasibility tolerance used to decide whether a slack optimum counts as
/// feasible.
#[pyfunction]
fn feasibility_tolerance() -> f64 {
    TOL_FEAS
}

#[pymodule]
fn gbd_agent_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PySolveSummary>()?;
    m.add_function(wrap_pyfunction!(py_sample_instance, m)?)?;
    m.add_function(wrap_pyfunction!(admissible_assignments, m)?)?;
    m.add_function(wrap_pyfunction!(py_evaluate_objective, m)?)?;
    m.add_function(wrap_pyfunction!(py_solve_subproblem, m)?)?;
    m.add_function(wrap_pyfunction!(py_feasibility_slack, m)?)?;
    m.add_function(wrap_pyfunction!(py_oracle_solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(feasibility_tolerance, m)?)?;
    Ok(())
}
