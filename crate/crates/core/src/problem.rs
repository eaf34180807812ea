//! The parameterized convex MINLP family solved by this workbench.
//!
//! The family has six continuous variables, five binary variables, twelve
//! inequality constraints and two pure binary constraints. Instances differ
//! only in eight sampled parameters: five binary cost coefficients
//! `gamma[0..5]`, a capacity `U` and two right-hand sides `rho[0..2]`.
//!
//! Continuous variables keep their legacy process-synthesis names; the slice
//! layout is fixed everywhere:
//!
//! ```text
//! x[0] = x3    x[1] = x5    x[2] = x9    x[3] = x11   x[4] = x13   x[5] = x16
//! ```
//!
//! Inequality rows, all written `g_i(x, y) <= 0`, in the frozen order used by
//! every dual vector, cut and test:
//!
//! ```text
//!  0: -ln(x11 + x13 + 1)
//!  1: -x3 - x5 - 2 x9 + x11 + 2 x16
//!  2: -x3 - x5 - 0.75 x9 + x11 + 2 x16
//!  3: x9 - x16
//!  4: 2 x9 - x11 - 2 x16
//!  5: -0.5 x11 + x13
//!  6: 0.2 x11 - x13
//!  7: exp(x3) - U y1 - rho1
//!  8: exp(x5 / 1.2) - U y2 - rho2
//!  9: 1.25 x9 - U y3
//! 10: x11 + x13 - U y4
//! 11: -2 x9 + 2 x16 - U y5
//! ```
//!
//! Bounds: `0 <= x`, upper bounds `(2, 2, 2, -, -, 3)` (x11 and x13 have no
//! upper bound; the region stays bounded through rows 5, 6 and 10).
//! Pure binary constraints: `y1 + y2 = 1` and `y4 + y5 <= 1`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of continuous variables.
pub const NUM_X: usize = 6;
/// Number of binary variables.
pub const NUM_Y: usize = 5;
/// Number of inequality constraints.
pub const NUM_G: usize = 12;

/// Lower bounds on the continuous variables.
pub const LOWER_BOUNDS: [f64; NUM_X] = [0.0; NUM_X];
/// Upper bounds on the continuous variables; `None` for the unbounded ones.
pub const UPPER_BOUNDS: [Option<f64>; NUM_X] =
    [Some(2.0), Some(2.0), Some(2.0), None, None, Some(3.0)];

#[derive(Debug, Error)]
pub enum ProblemError {
    /// The log term `ln(x11 + x13 + 1)` is undefined at the queried point.
    #[error("log domain violation: x11 + x13 + 1 = {0} <= 0")]
    LogDomain(f64),
    /// No binary assignment satisfies the pure binary constraints.
    #[error("pure binary constraints admit no assignment")]
    EmptyAdmissibleSet,
}

/// One sampled instance of the family.
///
/// `lower_bounds` and `upper_bounds` are fixed for the whole family and are
/// populated by the constructors; only `{seed, gamma, big_u, rho}` go on the
/// wire (see [`InstanceRecord`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub seed: u64,
    pub gamma: [f64; NUM_Y],
    pub big_u: f64,
    pub rho: [f64; 2],
    pub lower_bounds: [f64; NUM_X],
    pub upper_bounds: [Option<f64>; NUM_X],
}

impl ProblemInstance {
    pub fn new(seed: u64, gamma: [f64; NUM_Y], big_u: f64, rho: [f64; 2]) -> Self {
        Self {
            seed,
            gamma,
            big_u,
            rho,
            lower_bounds: LOWER_BOUNDS,
            upper_bounds: UPPER_BOUNDS,
        }
    }
}

/// Wire form of an instance: one JSON object `{seed, gamma[5], U, rho[2]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceRecord {
    pub seed: u64,
    pub gamma: [f64; NUM_Y],
    #[serde(rename = "U")]
    pub big_u: f64,
    pub rho: [f64; 2],
}

impl From<&ProblemInstance> for InstanceRecord {
    fn from(inst: &ProblemInstance) -> Self {
        Self {
            seed: inst.seed,
            gamma: inst.gamma,
            big_u: inst.big_u,
            rho: inst.rho,
        }
    }
}

impl From<InstanceRecord> for ProblemInstance {
    fn from(rec: InstanceRecord) -> Self {
        ProblemInstance::new(rec.seed, rec.gamma, rec.big_u, rec.rho)
    }
}

/// A binary assignment `(y1, ..., y5)`, each component 0 or 1.
///
/// `Ord` is the derived lexicographic order on the components; it defines the
/// canonical enumeration order of the admissible set and every tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assignment(pub [u8; NUM_Y]);

impl Assignment {
    pub fn bit(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    pub fn as_f64(&self) -> [f64; NUM_Y] {
        let mut out = [0.0; NUM_Y];
        for (o, b) in out.iter_mut().zip(self.0.iter()) {
            *o = f64::from(*b);
        }
        out
    }
}

impl std::fmt::Display for Assignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Constraints involving only the binary variables, known a priori.
///
/// Stored as explicit equality and inequality rows; [`general_form`] flattens
/// the equalities into pairs of `<=` rows to give the single matrix form
/// `K y <= b` used by the branch-and-bound pruning rules.
///
/// [`general_form`]: PureBinaryConstraints::general_form
#[derive(Debug, Clone)]
pub struct PureBinaryConstraints {
    /// `(coefficients, rhs)` rows with `coeffs . y == rhs`.
    pub eq_rows: Vec<(Vec<f64>, f64)>,
    /// `(coefficients, rhs)` rows with `coeffs . y <= rhs`.
    pub le_rows: Vec<(Vec<f64>, f64)>,
}

impl PureBinaryConstraints {
    /// The family's constraints: `y1 + y2 = 1` and `y4 + y5 <= 1`.
    pub fn family() -> Self {
        Self {
            eq_rows: vec![(vec![1.0, 1.0, 0.0, 0.0, 0.0], 1.0)],
            le_rows: vec![(vec![0.0, 0.0, 0.0, 1.0, 1.0], 1.0)],
        }
    }

    /// All rows as `K y <= b`, equalities expanded into `<=` pairs.
    pub fn general_form(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut k = Vec::new();
        let mut b = Vec::new();
        for (row, rhs) in &self.eq_rows {
            k.push(row.clone());
            b.push(*rhs);
            k.push(row.iter().map(|c| -c).collect());
            b.push(-rhs);
        }
        for (row, rhs) in &self.le_rows {
            k.push(row.clone());
            b.push(*rhs);
        }
        (k, b)
    }

    pub fn is_admissible(&self, y: &Assignment) -> bool {
        let yf = y.as_f64();
        let dot = |row: &[f64]| row.iter().zip(yf.iter()).map(|(a, b)| a * b).sum::<f64>();
        self.eq_rows.iter().all(|(row, rhs)| (dot(row) - rhs).abs() <= 1e-9)
            && self.le_rows.iter().all(|(row, rhs)| dot(row) <= rhs + 1e-9)
    }
}

/// Every assignment satisfying the pure binary constraints, in lexicographic
/// order. The position of an assignment in this sequence is its canonical
/// index, used for policy outputs and expert labels.
///
/// Exhaustive enumeration; fine for the family's five binaries (and for
/// anything up to ~20).
pub fn enumerate_admissible(pbc: &PureBinaryConstraints) -> Result<Vec<Assignment>, ProblemError> {
    let mut out = Vec::new();
    for code in 0u32..(1 << NUM_Y) {
        let mut bits = [0u8; NUM_Y];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = ((code >> (NUM_Y - 1 - i)) & 1) as u8;
        }
        let y = Assignment(bits);
        if pbc.is_admissible(&y) {
            out.push(y);
        }
    }
    if out.is_empty() {
        return Err(ProblemError::EmptyAdmissibleSet);
    }
    Ok(out)
}

/// Index of `y` in the canonical admissible ordering, if admissible.
pub fn admissible_index(admissible: &[Assignment], y: &Assignment) -> Option<usize> {
    admissible.iter().position(|a| a == y)
}

/// Draws the eight parameters uniformly and independently from their ranges
/// using a ChaCha8 stream seeded with `seed`. Draw order is fixed:
/// gamma1..gamma5, U, rho1, rho2.
pub fn sample_instance(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let gamma = [
        draw(1.0, 39.0),
        draw(1.0, 39.0),
        draw(1.0, 39.0),
        draw(1.0, 39.0),
        draw(1.0, 7.0),
    ];
    let big_u = draw(6.0, 14.0);
    let rho = [draw(0.0, 2.0), draw(0.0, 2.0)];
    ProblemInstance::new(seed, gamma, big_u, rho)
}

fn log_arg(x: &[f64; NUM_X]) -> Result<f64, ProblemError> {
    let s = x[3] + x[4] + 1.0;
    if s <= 0.0 {
        Err(ProblemError::LogDomain(s))
    } else {
        Ok(s)
    }
}

/// Objective value and x-gradient at a (possibly relaxed) binary vector.
pub(crate) fn objective_real(
    inst: &ProblemInstance,
    x: &[f64; NUM_X],
    y: &[f64; NUM_Y],
) -> Result<(f64, [f64; NUM_X]), ProblemError> {
    let s = log_arg(x)?;
    let gy: f64 = inst.gamma.iter().zip(y.iter()).map(|(g, v)| g * v).sum();
    let e3 = x[0].exp();
    let e5 = (x[1] / 1.2).exp();
    let value = gy - 10.0 * x[0] - 15.0 * x[1] - 15.0 * x[2] + 15.0 * x[3] + 5.0 * x[4]
        - 20.0 * x[5]
        + e3
        + e5
        - 60.0 * s.ln()
        + 140.0;
    let grad = [
        -10.0 + e3,
        -15.0 + e5 / 1.2,
        -15.0,
        15.0 - 60.0 / s,
        5.0 - 60.0 / s,
        -20.0,
    ];
    Ok((value, grad))
}

/// Constraint values at a (possibly relaxed) binary vector, in row order.
pub(crate) fn constraints_real(
    inst: &ProblemInstance,
    x: &[f64; NUM_X],
    y: &[f64; NUM_Y],
) -> Result<[f64; NUM_G], ProblemError> {
    let s = log_arg(x)?;
    let u = inst.big_u;
    Ok([
        -s.ln(),
        -x[0] - x[1] - 2.0 * x[2] + x[3] + 2.0 * x[5],
        -x[0] - x[1] - 0.75 * x[2] + x[3] + 2.0 * x[5],
        x[2] - x[5],
        2.0 * x[2] - x[3] - 2.0 * x[5],
        -0.5 * x[3] + x[4],
        0.2 * x[3] - x[4],
        x[0].exp() - u * y[0] - inst.rho[0],
        (x[1] / 1.2).exp() - u * y[1] - inst.rho[1],
        1.25 * x[2] - u * y[2],
        x[3] + x[4] - u * y[3],
        -2.0 * x[2] + 2.0 * x[5] - u * y[4],
    ])
}

/// Constraint Jacobian with respect to x (the rows are affine in y, so the
/// Jacobian does not depend on y).
pub(crate) fn constraint_jacobian(x: &[f64; NUM_X]) -> Result<[[f64; NUM_X]; NUM_G], ProblemError> {
    let s = log_arg(x)?;
    let e3 = x[0].exp();
    let e5 = (x[1] / 1.2).exp();
    Ok([
        [0.0, 0.0, 0.0, -1.0 / s, -1.0 / s, 0.0],
        [-1.0, -1.0, -2.0, 1.0, 0.0, 2.0],
        [-1.0, -1.0, -0.75, 1.0, 0.0, 2.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        [0.0, 0.0, 2.0, -1.0, 0.0, -2.0],
        [0.0, 0.0, 0.0, -0.5, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.2, -1.0, 0.0],
        [e3, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, e5 / 1.2, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.25, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        [0.0, 0.0, -2.0, 0.0, 0.0, 2.0],
    ])
}

/// Adds `w * hess(f restricted to x)` into the top-left 6x6 block of `h`.
pub(crate) fn add_objective_hessian(x: &[f64; NUM_X], w: f64, h: &mut DMatrix<f64>) {
    let s = x[3] + x[4] + 1.0;
    h[(0, 0)] += w * x[0].exp();
    h[(1, 1)] += w * (x[1] / 1.2).exp() / 1.44;
    let c = w * 60.0 / (s * s);
    h[(3, 3)] += c;
    h[(3, 4)] += c;
    h[(4, 3)] += c;
    h[(4, 4)] += c;
}

/// Adds `w * hess(g_row restricted to x)` into the top-left 6x6 block of `h`.
/// Only rows 0, 7 and 8 are nonlinear.
pub(crate) fn add_constraint_hessian(x: &[f64; NUM_X], row: usize, w: f64, h: &mut DMatrix<f64>) {
    match row {
        0 => {
            let s = x[3] + x[4] + 1.0;
            let c = w / (s * s);
            h[(3, 3)] += c;
            h[(3, 4)] += c;
            h[(4, 3)] += c;
            h[(4, 4)] += c;
        }
        7 => h[(0, 0)] += w * x[0].exp(),
        8 => h[(1, 1)] += w * (x[1] / 1.2).exp() / 1.44,
        _ => {}
    }
}

/// Objective value and analytic x-gradient at `(x, y)`.
pub fn evaluate_objective(
    inst: &ProblemInstance,
    x: &[f64; NUM_X],
    y: &Assignment,
) -> Result<(f64, [f64; NUM_X]), ProblemError> {
    objective_real(inst, x, &y.as_f64())
}

/// Constraint values (row order above) and analytic Jacobian at `(x, y)`.
#[allow(clippy::type_complexity)]
pub fn evaluate_constraints(
    inst: &ProblemInstance,
    x: &[f64; NUM_X],
    y: &Assignment,
) -> Result<([f64; NUM_G], [[f64; NUM_X]; NUM_G]), ProblemError> {
    let g = constraints_real(inst, x, &y.as_f64())?;
    let jac = constraint_jacobian(x)?;
    Ok((g, jac))
}
