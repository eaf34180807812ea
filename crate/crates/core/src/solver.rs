//! Log-barrier Newton solver for the fixed-assignment continuous subproblem
//! and its slack feasibility variant.
//!
//! Both problems are solved in the same penalized form
//!
//! ```text
//! minimize  c_f * F(x) + c_a * sum_i alpha_i
//! s.t.      g_i(x) <= alpha_i,  alpha_i >= 0,  a <= x <= b
//! ```
//!
//! with `(c_f, c_a) = (0, 1)` for the feasibility problem and `(1, M)` for
//! the subproblem itself. The slack variables have a closed-form inner
//! minimizer under the log barrier, so Newton runs on the six continuous
//! variables only. This matters here: several assignments pin variables to
//! equalities (e.g. rows 3 and 11 force x9 = x16 whenever y5 = 0), so the
//! raw constraint set has no strictly interior point and a barrier over it
//! could not even start. The penalized form is strictly feasible everywhere
//! and its duals `mu_i = mu / (alpha_i - g_i)` converge to multipliers of
//! the original problem.
//!
//! Barrier parameter: divided by 10 per outer stage, from 1 down to 1e-8.
//! Inequality duals are recovered from the final stage; variable bounds are
//! separate barrier terms and yield the bound multipliers.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::problem::{
    self, Assignment, ProblemInstance, LOWER_BOUNDS, NUM_G, NUM_X, UPPER_BOUNDS,
};

/// Stationarity tolerance on the Lagrangian residual (max norm).
pub const TOL_KKT: f64 = 1e-7;
/// Complementary slackness tolerance.
pub const TOL_COMP: f64 = 1e-6;
/// Objective-value tolerance of the reported optimum.
pub const TOL_OBJ: f64 = 1e-6;
/// A feasibility-problem value at or below this counts as feasible.
pub const TOL_FEAS: f64 = 1e-6;
/// Newton iteration cap per barrier stage.
pub const MAX_NEWTON_PER_STAGE: usize = 60;

/// Penalty weight on the slacks in the subproblem solve. Any value safely
/// above the largest multiplier of the family works; multipliers here stay
/// below ~100.
const SLACK_PENALTY: f64 = 1e4;

const MU_FIRST: f64 = 1.0;
const MU_LAST: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SolverError {
    /// `solve_subproblem` was called on an assignment whose feasibility
    /// problem has a positive optimum.
    #[error("subproblem infeasible: feasibility slack sum {slack_sum}")]
    SubproblemInfeasible { slack_sum: f64 },
    /// The feasibility solve preceding the subproblem did not converge.
    #[error("feasibility phase did not converge")]
    Phase1NotConverged,
    #[error(transparent)]
    Problem(#[from] problem::ProblemError),
}

/// Result of the slack feasibility problem.
#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub x_bar: [f64; NUM_X],
    /// Optimal total slack; zero (up to [`TOL_FEAS`]) iff the subproblem is
    /// feasible at this assignment.
    pub slack_sum: f64,
    /// Multipliers of `g_i(x) <= alpha_i`; always in `[0, 1]`.
    pub duals_mu_bar: [f64; NUM_G],
    pub converged: bool,
    pub iterations: usize,
}

/// KKT point of the fixed-assignment subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub x_star: [f64; NUM_X],
    /// Objective value at `x_star` (including the binary cost term).
    pub z_value: f64,
    /// Inequality multipliers, one per constraint row.
    pub duals_mu: [f64; NUM_G],
    /// Multipliers of the lower bounds `x_j >= a_j`.
    pub bound_duals_lower: [f64; NUM_X],
    /// Multipliers of the upper bounds `x_j <= b_j`; zero where unbounded.
    pub bound_duals_upper: [f64; NUM_X],
    pub converged: bool,
    pub iterations: usize,
}

/// Closed-form minimizer of `c*a - mu*ln(a - g) - mu*ln(a)` over `a`.
///
/// The stationarity condition is the quadratic
/// `c a^2 - (c g + 2 mu) a + mu g = 0`, whose discriminant simplifies to
/// `(c g)^2 + 4 mu^2`; the positive root exceeds `max(0, g)`.
#[derive(Debug, Clone, Copy)]
struct SlackTerm {
    /// Optimal slack value.
    alpha: f64,
    /// First derivative of the reduced term with respect to `g`: the row
    /// multiplier `mu / (alpha - g)`.
    d1: f64,
    /// Second derivative `mu / (r^2 + alpha^2)`.
    d2: f64,
    /// Value of the reduced term.
    value: f64,
}

fn slack_term(g: f64, mu: f64, c: f64) -> SlackTerm {
    let b = c * g + 2.0 * mu;
    let sqrt_d = f64::hypot(c * g, 2.0 * mu);
    // Stable positive root of the quadratic.
    let alpha = if b >= 0.0 {
        (b + sqrt_d) / (2.0 * c)
    } else {
        2.0 * mu * g / (b - sqrt_d)
    };
    let r = alpha - g;
    let d1 = mu / r;
    let d2 = mu / (r * r + alpha * alpha);
    let value = c * alpha - mu * r.ln() - mu * alpha.ln();
    SlackTerm {
        alpha,
        d1,
        d2,
        value,
    }
}

struct BarrierSpec<'a> {
    inst: &'a ProblemInstance,
    y: [f64; 5],
    /// Weight on the smooth objective `F(x)` (0 for the feasibility phase).
    obj_weight: f64,
    /// Penalty on the slacks.
    slack_cost: f64,
}

struct BarrierOutcome {
    x: [f64; NUM_X],
    converged: bool,
    iterations: usize,
}

/// True if `x` is strictly inside the variable bounds and the log domain.
fn strictly_in_box(x: &[f64; NUM_X]) -> bool {
    for j in 0..NUM_X {
        if x[j] <= LOWER_BOUNDS[j] {
            return false;
        }
        if let Some(b) = UPPER_BOUNDS[j] {
            if x[j] >= b {
                return false;
            }
        }
    }
    x[3] + x[4] + 1.0 > 0.0
}

/// Barrier value at `x`, or `None` outside the domain.
fn barrier_value(spec: &BarrierSpec, x: &[f64; NUM_X], mu: f64) -> Option<f64> {
    if !strictly_in_box(x) {
        return None;
    }
    let g = problem::constraints_real(spec.inst, x, &spec.y).ok()?;
    let mut val = 0.0;
    if spec.obj_weight != 0.0 {
        let (fv, _) = problem::objective_real(spec.inst, x, &[0.0; 5]).ok()?;
        val += spec.obj_weight * fv;
    }
    for gi in g {
        val += slack_term(gi, mu, spec.slack_cost).value;
    }
    for j in 0..NUM_X {
        val -= mu * (x[j] - LOWER_BOUNDS[j]).ln();
        if let Some(b) = UPPER_BOUNDS[j] {
            val -= mu * (b - x[j]).ln();
        }
    }
    Some(val)
}

/// Gradient and Hessian of the barrier at an interior point.
fn barrier_derivs(
    spec: &BarrierSpec,
    x: &[f64; NUM_X],
    mu: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let g = problem::constraints_real(spec.inst, x, &spec.y).expect("interior point");
    let jac = problem::constraint_jacobian(x).expect("interior point");
    let mut grad = DVector::zeros(NUM_X);
    let mut hess = DMatrix::zeros(NUM_X, NUM_X);

    if spec.obj_weight != 0.0 {
        let (_, fg) = problem::objective_real(spec.inst, x, &[0.0; 5]).expect("interior point");
        for j in 0..NUM_X {
            grad[j] += spec.obj_weight * fg[j];
        }
        problem::add_objective_hessian(x, spec.obj_weight, &mut hess);
    }

    for i in 0..NUM_G {
        let t = slack_term(g[i], mu, spec.slack_cost);
        for j in 0..NUM_X {
            grad[j] += t.d1 * jac[i][j];
        }
        problem::add_constraint_hessian(x, i, t.d1, &mut hess);
        for j in 0..NUM_X {
            if jac[i][j] == 0.0 {
                continue;
            }
            for l in 0..NUM_X {
                hess[(j, l)] += t.d2 * jac[i][j] * jac[i][l];
            }
        }
    }

    for j in 0..NUM_X {
        let lo = x[j] - LOWER_BOUNDS[j];
        grad[j] -= mu / lo;
        hess[(j, j)] += mu / (lo * lo);
        if let Some(b) = UPPER_BOUNDS[j] {
            let hi = b - x[j];
            grad[j] += mu / hi;
            hess[(j, j)] += mu / (hi * hi);
        }
    }
    (grad, hess)
}

fn solve_barrier(spec: &BarrierSpec, x0: [f64; NUM_X]) -> BarrierOutcome {
    let mut x = x0;
    let mut total_iters = 0;
    let mut converged = true;

    let mut mu = MU_FIRST;
    while mu >= MU_LAST * 0.999 {
        let tol = f64::max(TOL_KKT, 1e-2 * mu);
        let mut stage_ok = false;
        for _ in 0..MAX_NEWTON_PER_STAGE {
            let (grad, hess) = barrier_derivs(spec, &x, mu);
            if grad.amax() <= tol {
                stage_ok = true;
                break;
            }
            total_iters += 1;

            // Newton direction, with a diagonal jitter fallback.
            let mut jitter = 0.0;
            let dir = loop {
                let mut h = hess.clone();
                if jitter > 0.0 {
                    for j in 0..NUM_X {
                        h[(j, j)] += jitter;
                    }
                }
                match h.cholesky() {
                    Some(ch) => break ch.solve(&(-&grad)),
                    None => {
                        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
                        if jitter > 1e6 {
                            break -&grad;
                        }
                    }
                }
            };

            // The squared Newton decrement measures the remaining gap in the
            // metric of the (possibly very stiff) Hessian; once it reaches
            // the f64 floor no representable step improves the point.
            let slope: f64 = grad.dot(&dir);
            if -slope <= 1e-16 {
                stage_ok = true;
                break;
            }

            let base = barrier_value(spec, &x, mu).expect("current point interior");
            let noise = 1e-13 * (1.0 + base.abs());
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut cand = x;
                for j in 0..NUM_X {
                    cand[j] += t * dir[j];
                }
                if let Some(val) = barrier_value(spec, &cand, mu) {
                    if val <= base + 0.25 * t * slope + noise {
                        x = cand;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                // No representable progress along the Newton direction.
                stage_ok = -slope <= 1e-12;
                break;
            }
        }
        if !stage_ok {
            converged = false;
        }
        mu /= 10.0;
    }

    BarrierOutcome {
        x,
        converged,
        iterations: total_iters,
    }
}

/// Strictly interior starting point: midpoints of the bounded coordinates,
/// 0.5 for the unbounded ones.
fn phase1_start() -> [f64; NUM_X] {
    let mut x = [0.0; NUM_X];
    for j in 0..NUM_X {
        x[j] = match UPPER_BOUNDS[j] {
            Some(b) => 0.5 * (LOWER_BOUNDS[j] + b),
            None => 0.5,
        };
    }
    x
}

/// Pulls a point strictly inside the box before restarting Newton.
fn clamp_interior(mut x: [f64; NUM_X]) -> [f64; NUM_X] {
    const MARGIN: f64 = 1e-9;
    for j in 0..NUM_X {
        x[j] = x[j].max(LOWER_BOUNDS[j] + MARGIN);
        if let Some(b) = UPPER_BOUNDS[j] {
            x[j] = x[j].min(b - MARGIN);
        }
    }
    x
}

/// Solves the slack feasibility problem at `y`: minimize the total
/// constraint violation over the variable box.
pub fn solve_phase1(inst: &ProblemInstance, y: &Assignment) -> Phase1Result {
    let spec = BarrierSpec {
        inst,
        y: y.as_f64(),
        obj_weight: 0.0,
        slack_cost: 1.0,
    };
    let out = solve_barrier(&spec, phase1_start());
    let g = problem::constraints_real(inst, &out.x, &spec.y).expect("interior");
    let mut slack_sum = 0.0;
    let mut duals = [0.0; NUM_G];
    for i in 0..NUM_G {
        let t = slack_term(g[i], MU_LAST, 1.0);
        slack_sum += t.alpha;
        duals[i] = t.d1;
    }
    Phase1Result {
        x_bar: out.x,
        slack_sum,
        duals_mu_bar: duals,
        converged: out.converged,
        iterations: out.iterations,
    }
}

/// Solves the subproblem at `y` to a KKT point, running the feasibility
/// phase first. Errors if that phase reports an infeasible assignment.
pub fn solve_subproblem(
    inst: &ProblemInstance,
    y: &Assignment,
) -> Result<SubproblemResult, SolverError> {
    let ph1 = solve_phase1(inst, y);
    solve_subproblem_from(inst, y, &ph1)
}

/// Subproblem solve warm-started from an already-computed feasibility
/// result, so drivers that branch on feasibility do not pay for the phase
/// twice.
pub fn solve_subproblem_from(
    inst: &ProblemInstance,
    y: &Assignment,
    ph1: &Phase1Result,
) -> Result<SubproblemResult, SolverError> {
    if !ph1.converged {
        return Err(SolverError::Phase1NotConverged);
    }
    if ph1.slack_sum > TOL_FEAS {
        return Err(SolverError::SubproblemInfeasible {
            slack_sum: ph1.slack_sum,
        });
    }
    let spec = BarrierSpec {
        inst,
        y: y.as_f64(),
        obj_weight: 1.0,
        slack_cost: SLACK_PENALTY,
    };
    let out = solve_barrier(&spec, clamp_interior(ph1.x_bar));
    let g = problem::constraints_real(inst, &out.x, &spec.y).expect("interior");
    let mut duals = [0.0; NUM_G];
    for i in 0..NUM_G {
        duals[i] = slack_term(g[i], MU_LAST, SLACK_PENALTY).d1;
    }
    let mut lower = [0.0; NUM_X];
    let mut upper = [0.0; NUM_X];
    for j in 0..NUM_X {
        lower[j] = MU_LAST / (out.x[j] - LOWER_BOUNDS[j]);
        if let Some(b) = UPPER_BOUNDS[j] {
            upper[j] = MU_LAST / (b - out.x[j]);
        }
    }
    polish_duals(inst, &out.x, y, &mut duals, &mut lower, &mut upper);
    let (z_value, _) = problem::evaluate_objective(inst, &out.x, y)?;
    Ok(SubproblemResult {
        x_star: out.x,
        z_value,
        duals_mu: duals,
        bound_duals_lower: lower,
        bound_duals_upper: upper,
        converged: out.converged && ph1.converged,
        iterations: out.iterations + ph1.iterations,
    })
}

/// Nonnegative least squares by active-set pruning: minimizes `||a w - b||`
/// over `w >= 0`. Starts from the unconstrained minimum-norm solution and
/// drops the most negative coordinate until the rest are nonnegative.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut free: Vec<usize> = (0..n).collect();
    let mut w = DVector::zeros(n);
    while !free.is_empty() {
        let sub = a.select_columns(free.iter());
        let svd = sub.svd(true, true);
        let sol = match svd.solve(b, 1e-12) {
            Ok(s) => s,
            Err(_) => break,
        };
        let (worst_pos, worst_val) = sol
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, v)| {
                if *v < acc.1 {
                    (k, *v)
                } else {
                    acc
                }
            });
        if worst_val >= -1e-10 {
            for (k, idx) in free.iter().enumerate() {
                w[*idx] = sol[k].max(0.0);
            }
            return w;
        }
        free.remove(worst_pos);
    }
    w
}

/// Recomputes the active multipliers at the terminal point.
///
/// Barrier-recovered duals of strongly active rows inherit the stiffness of
/// the final barrier stage, and on degenerate assignments (several rows plus
/// bounds pinning a low-dimensional face) the barrier drifts up a dual ray,
/// reporting needlessly large multipliers. The terminal `x` is fine; the
/// multipliers of the near-active columns are re-fit by nonnegative least
/// squares against the stationarity residual, which lands on a moderate
/// point of the optimal dual face. Inactive rows keep their (tiny) barrier
/// values so complementarity stays at the barrier level.
fn polish_duals(
    inst: &ProblemInstance,
    x: &[f64; NUM_X],
    y: &Assignment,
    duals: &mut [f64; NUM_G],
    lower: &mut [f64; NUM_X],
    upper: &mut [f64; NUM_X],
) {
    const NEAR_ACTIVE_SLACK: f64 = 1e-6;
    const NEAR_ACTIVE_DUAL: f64 = 1e-6;
    let (_, fgrad) = problem::evaluate_objective(inst, x, y).expect("interior");
    let g = problem::constraints_real(inst, x, &y.as_f64()).expect("interior");
    let jac = problem::constraint_jacobian(x).expect("interior");

    enum Col {
        Row(usize),
        Lower(usize),
        Upper(usize),
    }
    let mut cols = Vec::new();
    for i in 0..NUM_G {
        if g[i] >= -NEAR_ACTIVE_SLACK || duals[i] >= NEAR_ACTIVE_DUAL {
            cols.push(Col::Row(i));
        }
    }
    for j in 0..NUM_X {
        if x[j] - LOWER_BOUNDS[j] <= NEAR_ACTIVE_SLACK || lower[j] >= NEAR_ACTIVE_DUAL {
            cols.push(Col::Lower(j));
        }
        if let Some(b) = UPPER_BOUNDS[j] {
            if b - x[j] <= NEAR_ACTIVE_SLACK || upper[j] >= NEAR_ACTIVE_DUAL {
                cols.push(Col::Upper(j));
            }
        }
    }
    if cols.is_empty() {
        return;
    }

    // Residual carried by the columns that stay fixed.
    let mut base = DVector::zeros(NUM_X);
    for j in 0..NUM_X {
        base[j] = fgrad[j];
    }
    let mut fixed_row = [true; NUM_G];
    let mut fixed_lower = [true; NUM_X];
    let mut fixed_upper = [true; NUM_X];
    for col in &cols {
        match col {
            Col::Row(i) => fixed_row[*i] = false,
            Col::Lower(j) => fixed_lower[*j] = false,
            Col::Upper(j) => fixed_upper[*j] = false,
        }
    }
    for i in 0..NUM_G {
        if fixed_row[i] {
            for j in 0..NUM_X {
                base[j] += duals[i] * jac[i][j];
            }
        }
    }
    for j in 0..NUM_X {
        if fixed_lower[j] {
            base[j] -= lower[j];
        }
        if fixed_upper[j] {
            base[j] += upper[j];
        }
    }

    let mut a = DMatrix::zeros(NUM_X, cols.len());
    for (k, col) in cols.iter().enumerate() {
        match col {
            Col::Row(i) => {
                for j in 0..NUM_X {
                    a[(j, k)] = jac[*i][j];
                }
            }
            Col::Lower(j) => a[(*j, k)] = -1.0,
            Col::Upper(j) => a[(*j, k)] = 1.0,
        }
    }

    let w = nnls(&a, &(-&base));
    for (k, col) in cols.iter().enumerate() {
        match col {
            Col::Row(i) => duals[*i] = w[k],
            Col::Lower(j) => lower[*j] = w[k],
            Col::Upper(j) => upper[*j] = w[k],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{enumerate_admissible, sample_instance, PureBinaryConstraints};

    fn instance(u: f64, rho1: f64, rho2: f64) -> ProblemInstance {
        let mut inst = sample_instance(0);
        inst.big_u = u;
        inst.rho = [rho1, rho2];
        inst
    }

    #[test]
    fn feasible_assignment_has_zero_slack() {
        // x = 0 satisfies every row at this assignment; checked directly.
        let inst = instance(10.0, 1.0, 1.0);
        let y = Assignment([1, 0, 1, 1, 0]);
        let (g, _) = problem::evaluate_constraints(&inst, &[0.0; 6], &y).unwrap();
        assert!(g.iter().all(|gi| *gi <= 0.0));

        let ph1 = solve_phase1(&inst, &y);
        assert!(ph1.converged);
        assert!(ph1.slack_sum <= 1e-6, "slack {}", ph1.slack_sum);
    }

    #[test]
    fn feasible_at_loose_parameters() {
        let inst = instance(14.0, 2.0, 2.0);
        let ph1 = solve_phase1(&inst, &Assignment([1, 0, 1, 1, 0]));
        assert!(ph1.converged);
        assert!(ph1.slack_sum <= 1e-6);
    }

    #[test]
    fn infeasible_assignment_slack_matches_analytic_value() {
        // With y = (0,1,0,0,0) and rho1 = 0.5 the only violated row is
        // exp(x3) - rho1 <= 0, and min exp(x3) on [0,2] is 1, so the optimal
        // total slack is 0.5.
        let inst = instance(10.0, 0.5, 1.5);
        let y = Assignment([0, 1, 0, 0, 0]);
        let ph1 = solve_phase1(&inst, &y);
        assert!(ph1.converged);
        assert!(
            (ph1.slack_sum - 0.5).abs() <= 1e-5,
            "slack {}",
            ph1.slack_sum
        );
        for d in ph1.duals_mu_bar {
            assert!((-1e-9..=1.0 + 1e-9).contains(&d), "dual {d}");
        }

        // Dense grid cross-check: the grid attains 0.5 (at x = 0) and never
        // goes below it.
        let mut best = f64::INFINITY;
        let steps = 6;
        let mut idx = [0usize; 6];
        loop {
            let mut x = [0.0; 6];
            for j in 0..6 {
                let hi = UPPER_BOUNDS[j].unwrap_or(3.0);
                x[j] = hi * idx[j] as f64 / steps as f64;
            }
            let (g, _) = problem::evaluate_constraints(&inst, &x, &y).unwrap();
            let total: f64 = g.iter().map(|gi| gi.max(0.0)).sum();
            best = best.min(total);
            let mut j = 0;
            loop {
                idx[j] += 1;
                if idx[j] <= steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
                if j == 6 {
                    break;
                }
            }
            if j == 6 {
                break;
            }
        }
        assert!((best - 0.5).abs() <= 1e-12, "grid min {best}");
    }

    #[test]
    fn subproblem_errors_on_infeasible_assignment() {
        let inst = instance(10.0, 0.5, 1.5);
        let err = solve_subproblem(&inst, &Assignment([0, 1, 0, 0, 0]));
        assert!(matches!(
            err,
            Err(SolverError::SubproblemInfeasible { .. })
        ));
    }

    #[test]
    fn subproblem_kkt_conditions_hold() {
        let adm = enumerate_admissible(&PureBinaryConstraints::family()).unwrap();
        let inst = instance(10.0, 1.5, 1.5);
        for y in &adm {
            let ph1 = solve_phase1(&inst, y);
            if ph1.slack_sum > TOL_FEAS {
                continue;
            }
            let sub = solve_subproblem_from(&inst, y, &ph1).unwrap();
            assert!(sub.converged, "assignment {y}");
            let (g, jac) = problem::evaluate_constraints(&inst, &sub.x_star, y).unwrap();
            // Dual feasibility and complementary slackness.
            for i in 0..NUM_G {
                assert!(sub.duals_mu[i] >= -1e-9);
                assert!(
                    (sub.duals_mu[i] * g[i]).abs() <= TOL_COMP,
                    "comp slack row {i}: mu {} g {}",
                    sub.duals_mu[i],
                    g[i]
                );
            }
            // Stationarity with the reported multipliers.
            let (_, fgrad) = problem::evaluate_objective(&inst, &sub.x_star, y).unwrap();
            for j in 0..NUM_X {
                let mut r = fgrad[j] - sub.bound_duals_lower[j] + sub.bound_duals_upper[j];
                for i in 0..NUM_G {
                    r += sub.duals_mu[i] * jac[i][j];
                }
                assert!(r.abs() <= 1e-6, "stationarity[{j}] = {r} at {y}");
            }
        }
    }

    #[test]
    fn gamma_shift_moves_objective_not_solution() {
        let inst = instance(10.0, 1.5, 1.5);
        let y = Assignment([1, 0, 1, 0, 0]);
        let base = solve_subproblem(&inst, &y).unwrap();

        let mut shifted = inst.clone();
        shifted.gamma[0] += 3.25;
        let moved = solve_subproblem(&shifted, &y).unwrap();
        assert_eq!(base.x_star, moved.x_star);
        assert!((moved.z_value - base.z_value - 3.25).abs() <= 1e-9);
    }

    #[test]
    fn weak_duality_against_grid_points() {
        let inst = instance(12.0, 1.5, 1.8);
        let y = Assignment([1, 0, 1, 1, 0]);
        let sub = solve_subproblem(&inst, &y).unwrap();
        // Any feasible grid point must not beat the reported optimum.
        let steps = 8;
        let mut idx = [0usize; 6];
        loop {
            let mut x = [0.0; 6];
            for j in 0..6 {
                let hi = UPPER_BOUNDS[j].unwrap_or(3.0);
                x[j] = hi * idx[j] as f64 / steps as f64;
            }
            let (g, _) = problem::evaluate_constraints(&inst, &x, &y).unwrap();
            if g.iter().all(|gi| *gi <= 0.0) {
                let (fv, _) = problem::evaluate_objective(&inst, &x, &y).unwrap();
                assert!(sub.z_value <= fv + TOL_OBJ, "grid point beats solver");
            }
            let mut j = 0;
            loop {
                idx[j] += 1;
                if idx[j] <= steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
                if j == 6 {
                    break;
                }
            }
            if j == 6 {
                break;
            }
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let inst = instance(11.0, 0.7, 1.2);
        let y = Assignment([1, 0, 1, 1, 0]);
        let a = solve_subproblem(&inst, &y).unwrap();
        let b = solve_subproblem(&inst, &y).unwrap();
        assert_eq!(a.x_star, b.x_star);
        assert_eq!(a.z_value.to_bits(), b.z_value.to_bits());
        assert_eq!(a.duals_mu, b.duals_mu);
    }

    /// Feasibility of each admissible assignment agrees with a direct
    /// certificate search over candidate points.
    #[test]
    fn slack_zero_iff_certificate_exists() {
        let adm = enumerate_admissible(&PureBinaryConstraints::family()).unwrap();
        for seed in [3, 10, 21, 33, 47] {
            let inst = sample_instance(seed);
            for y in &adm {
                let ph1 = solve_phase1(&inst, y);
                assert!(ph1.converged);
                let solver_feasible = ph1.slack_sum <= TOL_FEAS;

                let mut found = false;
                // Candidate scan: the origin plus a coarse grid.
                'outer: for steps in [1usize, 4] {
                    let mut idx = [0usize; 6];
                    loop {
                        let mut x = [0.0; 6];
                        for j in 0..6 {
                            let hi = UPPER_BOUNDS[j].unwrap_or(3.0);
                            x[j] = hi * idx[j] as f64 / steps as f64;
                        }
                        let (g, _) = problem::evaluate_constraints(&inst, &x, y).unwrap();
                        if g.iter().all(|gi| *gi <= 1e-12) {
                            found = true;
                            break 'outer;
                        }
                        let mut j = 0;
                        loop {
                            idx[j] += 1;
                            if idx[j] <= steps {
                                break;
                            }
                            idx[j] = 0;
                            j += 1;
                            if j == 6 {
                                break;
                            }
                        }
                        if j == 6 {
                            break;
                        }
                    }
                }
                assert_eq!(
                    solver_feasible, found,
                    "seed {seed} assignment {y}: solver {} certificate {}",
                    ph1.slack_sum, found
                );
            }
        }
    }
}
