//! Master problem solvers: exact enumeration over the admissible set, and a
//! deterministic budgeted branch-and-bound that additionally certifies a
//! valid lower bound on the exact optimum.
//!
//! The budgeted search is the stand-in for a time-limited integer solve:
//! node budgets replace wall-clock limits so that "tighter budget, possibly
//! weaker bound" stays deterministic and testable.

use thiserror::Error;

use crate::cuts::{check_feasible, mu_hat, CutStore, CUT_FEAS_TOL};
use crate::problem::{Assignment, PureBinaryConstraints, NUM_Y};

#[derive(Debug, Error)]
pub enum MasterError {
    /// The feasibility cuts exclude every admissible assignment.
    #[error("master problem infeasible: all admissible assignments cut off")]
    Infeasible,
    /// The warm start must satisfy the pure binary constraints.
    #[error("warm start violates the pure binary constraints")]
    InvalidWarmStart,
    /// The node budget ran out before any feasible point was found, so
    /// neither an incumbent nor an infeasibility proof exists.
    #[error("node budget exhausted with no incumbent")]
    NoIncumbent,
}

/// Outcome of a master solve.
///
/// `best_bound <= mu_best` always, and `best_bound` is a valid lower bound
/// on the exact master optimum regardless of the budget. `optimal` is set
/// when the two coincide (within 1e-9).
#[derive(Debug, Clone, PartialEq)]
pub struct MasterResult {
    pub y_best: Assignment,
    pub mu_best: f64,
    pub best_bound: f64,
    pub nodes_used: usize,
    pub optimal: bool,
}

/// Solves the master problem by scanning the admissible set in canonical
/// order: keeps the assignments passing every feasibility cut, evaluates the
/// optimality-cut max on each, returns the minimizer (the first one on
/// ties, i.e. the lexicographically smallest). With no optimality cuts the
/// objective is the negative-infinity sentinel and the first surviving
/// assignment wins.
pub fn solve_exact(
    store: &CutStore,
    admissible: &[Assignment],
) -> Result<MasterResult, MasterError> {
    let mut best: Option<(f64, Assignment)> = None;
    for y in admissible {
        if !check_feasible(store, y, CUT_FEAS_TOL) {
            continue;
        }
        let v = mu_hat(store, y);
        let better = match &best {
            None => true,
            Some((bv, _)) => v < *bv,
        };
        if better {
            best = Some((v, *y));
        }
    }
    let (mu_best, y_best) = best.ok_or(MasterError::Infeasible)?;
    Ok(MasterResult {
        y_best,
        mu_best,
        best_bound: mu_best,
        nodes_used: admissible.len(),
        optimal: true,
    })
}

struct Node {
    depth: usize,
    bits: [u8; NUM_Y],
    /// Valid lower bound on the optimality-cut max over every completion.
    bound: f64,
}

/// Interval bound helpers over a partial assignment: fixed coordinates
/// contribute their value, free coordinates their worst case.
fn row_min(coeffs: &[f64], bits: &[u8; NUM_Y], depth: usize) -> f64 {
    let mut v = 0.0;
    for (i, c) in coeffs.iter().enumerate() {
        if i < depth {
            v += c * f64::from(bits[i]);
        } else {
            v += c.min(0.0);
        }
    }
    v
}

fn node_bound(store: &CutStore, bits: &[u8; NUM_Y], depth: usize) -> f64 {
    store
        .optimality
        .iter()
        .map(|c| c.alpha + row_min(&c.beta, bits, depth))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Every completion of the node provably violates a feasibility cut or a
/// pure binary row.
fn node_infeasible(
    store: &CutStore,
    kb: &(Vec<Vec<f64>>, Vec<f64>),
    bits: &[u8; NUM_Y],
    depth: usize,
) -> bool {
    if store
        .feasibility
        .iter()
        .any(|c| c.alpha + row_min(&c.beta, bits, depth) > CUT_FEAS_TOL)
    {
        return true;
    }
    kb.0.iter()
        .zip(kb.1.iter())
        .any(|(row, rhs)| row_min(row, bits, depth) > rhs + 1e-9)
}

/// Depth-first branch-and-bound over the binaries in fixed order, zero
/// branch first, exploring at most `node_budget` nodes.
///
/// The incumbent starts from the warm start when it passes the feasibility
/// cuts, so `mu_best` never exceeds the warm start's objective. Incumbent
/// updates break value ties toward the lexicographically smaller
/// assignment, and subtree pruning requires a strict bound improvement;
/// together these make an unbounded-budget search reproduce `solve_exact`
/// exactly, ties included. The returned `best_bound` folds the bounds of
/// whatever the budget left unexplored.
pub fn solve_budgeted(
    store: &CutStore,
    pbc: &PureBinaryConstraints,
    node_budget: usize,
    warm_start: &Assignment,
) -> Result<MasterResult, MasterError> {
    if !pbc.is_admissible(warm_start) {
        return Err(MasterError::InvalidWarmStart);
    }
    let kb = pbc.general_form();

    let mut incumbent: Option<(f64, Assignment)> = None;
    if check_feasible(store, warm_start, CUT_FEAS_TOL) {
        incumbent = Some((mu_hat(store, warm_start), *warm_start));
    }

    let mut stack = vec![Node {
        depth: 0,
        bits: [0; NUM_Y],
        bound: node_bound(store, &[0; NUM_Y], 0),
    }];
    let mut nodes_used = 0;

    while let Some(node) = stack.pop() {
        if nodes_used >= node_budget {
            stack.push(node);
            break;
        }
        nodes_used += 1;

        if let Some((inc_v, _)) = &incumbent {
            if node.bound > *inc_v {
                continue;
            }
        }
        if node_infeasible(store, &kb, &node.bits, node.depth) {
            continue;
        }

        if node.depth == NUM_Y {
            let y = Assignment(node.bits);
            if !pbc.is_admissible(&y) || !check_feasible(store, &y, CUT_FEAS_TOL) {
                continue;
            }
            let v = mu_hat(store, &y);
            let better = match &incumbent {
                None => true,
                Some((inc_v, inc_y)) => v < *inc_v || (v == *inc_v && y < *inc_y),
            };
            if better {
                incumbent = Some((v, y));
            }
            continue;
        }

        // Zero child on top of the stack so it is explored first.
        for bit in [1u8, 0u8] {
            let mut bits = node.bits;
            bits[node.depth] = bit;
            stack.push(Node {
                depth: node.depth + 1,
                bits,
                bound: node_bound(store, &bits, node.depth + 1),
            });
        }
    }

    let exhausted = !stack.is_empty();
    match incumbent {
        None => Err(if exhausted {
            MasterError::NoIncumbent
        } else {
            MasterError::Infeasible
        }),
        Some((mu_best, y_best)) => {
            let mut best_bound = mu_best;
            for node in &stack {
                best_bound = best_bound.min(node.bound);
            }
            let optimal = mu_best - best_bound <= 1e-9 || (!exhausted);
            Ok(MasterResult {
                y_best,
                mu_best,
                best_bound,
                nodes_used,
                optimal,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cuts::{AffineCut, CutKind};
    use crate::problem::enumerate_admissible;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opt_cut(alpha: f64, beta: [f64; 5]) -> AffineCut {
        AffineCut {
            kind: CutKind::Optimality,
            alpha,
            beta,
            origin_iteration: 0,
            origin_assignment: Assignment([1, 0, 0, 0, 0]),
        }
    }

    fn feas_cut(alpha: f64, beta: [f64; 5]) -> AffineCut {
        AffineCut {
            kind: CutKind::Feasibility,
            alpha,
            beta,
            origin_iteration: 0,
            origin_assignment: Assignment([1, 0, 0, 0, 0]),
        }
    }

    fn family() -> (PureBinaryConstraints, Vec<Assignment>) {
        let pbc = PureBinaryConstraints::family();
        let adm = enumerate_admissible(&pbc).unwrap();
        (pbc, adm)
    }

    /// Independent brute force: all 32 binary vectors, filtered by the raw
    /// constraint rows and cut inequalities, minimum of the cut max.
    fn brute_force(store: &CutStore, pbc: &PureBinaryConstraints) -> Option<(f64, Assignment)> {
        let mut best: Option<(f64, Assignment)> = None;
        for code in 0u32..32 {
            let mut bits = [0u8; 5];
            for (i, b) in bits.iter_mut().enumerate() {
                *b = ((code >> (4 - i)) & 1) as u8;
            }
            let y = Assignment(bits);
            let yf = y.as_f64();
            let dot = |row: &[f64]| row.iter().zip(yf.iter()).map(|(a, b)| a * b).sum::<f64>();
            if !pbc.eq_rows.iter().all(|(r, rhs)| (dot(r) - rhs).abs() <= 1e-9) {
                continue;
            }
            if !pbc.le_rows.iter().all(|(r, rhs)| dot(r) <= rhs + 1e-9) {
                continue;
            }
            if !store
                .feasibility
                .iter()
                .all(|c| c.alpha + dot(&c.beta) <= CUT_FEAS_TOL)
            {
                continue;
            }
            let v = store
                .optimality
                .iter()
                .map(|c| c.alpha + dot(&c.beta))
                .fold(f64::NEG_INFINITY, f64::max);
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, y));
            }
        }
        best
    }

    fn random_store(rng: &mut ChaCha8Rng) -> CutStore {
        let mut store = CutStore::new();
        let n_opt = rng.random_range(1..=4);
        let n_feas = rng.random_range(0..=3);
        for _ in 0..n_opt {
            let mut beta = [0.0; 5];
            for b in beta.iter_mut() {
                *b = rng.random_range(-10.0..10.0);
            }
            store.push(opt_cut(rng.random_range(-20.0..20.0), beta));
        }
        for _ in 0..n_feas {
            let mut beta = [0.0; 5];
            for b in beta.iter_mut() {
                *b = rng.random_range(-4.0..4.0);
            }
            store.push(feas_cut(rng.random_range(-4.0..2.0), beta));
        }
        store
    }

    #[test]
    fn hand_enumerated_single_cut() {
        let (_, adm) = family();
        let mut store = CutStore::new();
        store.push(opt_cut(10.0, [-3.0, 0.0, -1.0, 0.0, 0.0]));
        let res = solve_exact(&store, &adm).unwrap();
        assert_eq!(res.y_best, Assignment([1, 0, 1, 0, 0]));
        assert_eq!(res.mu_best, 6.0);
        assert!(res.optimal);
    }

    #[test]
    fn empty_store_returns_sentinel_and_lex_smallest() {
        let (_, adm) = family();
        let res = solve_exact(&CutStore::new(), &adm).unwrap();
        assert_eq!(res.y_best, Assignment([0, 1, 0, 0, 0]));
        assert_eq!(res.mu_best, f64::NEG_INFINITY);
    }

    #[test]
    fn fully_cut_off_master_is_infeasible() {
        let (_, adm) = family();
        let mut store = CutStore::new();
        // y1 + y2 >= something impossible: alpha 0.5 minus nothing.
        store.push(feas_cut(0.5, [0.0; 5]));
        assert!(matches!(
            solve_exact(&store, &adm),
            Err(MasterError::Infeasible)
        ));
    }

    #[test]
    fn exact_matches_brute_force_on_random_stores() {
        let (pbc, adm) = family();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let store = random_store(&mut rng);
            match (solve_exact(&store, &adm), brute_force(&store, &pbc)) {
                (Ok(res), Some((bv, by))) => {
                    assert_eq!(res.y_best, by);
                    assert_eq!(res.mu_best, bv);
                }
                (Err(MasterError::Infeasible), None) => {}
                (a, b) => panic!("mismatch: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn budgeted_with_large_budget_equals_exact() {
        let (pbc, adm) = family();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let store = random_store(&mut rng);
            let exact = solve_exact(&store, &adm);
            let warm = adm
                .iter()
                .find(|y| check_feasible(&store, y, CUT_FEAS_TOL))
                .copied();
            match (exact, warm) {
                (Ok(exact), Some(warm)) => {
                    let res = solve_budgeted(&store, &pbc, 1 << 10, &warm).unwrap();
                    assert_eq!(res.y_best, exact.y_best, "trial {trial}");
                    assert_eq!(res.mu_best, exact.mu_best);
                    assert!(res.optimal);
                    assert!((res.best_bound - exact.mu_best).abs() <= 1e-9);
                }
                (Err(MasterError::Infeasible), None) => {
                    let res = solve_budgeted(&store, &pbc, 1 << 10, &adm[0]);
                    assert!(matches!(res, Err(MasterError::Infeasible)));
                }
                (a, b) => panic!("inconsistent: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn budget_one_returns_warm_start() {
        let (pbc, adm) = family();
        let mut store = CutStore::new();
        store.push(opt_cut(5.0, [1.0, -2.0, 0.5, 0.0, -1.0]));
        let warm = adm[5];
        let exact = solve_exact(&store, &adm).unwrap();
        let res = solve_budgeted(&store, &pbc, 1, &warm).unwrap();
        assert_eq!(res.y_best, warm);
        assert_eq!(res.mu_best, mu_hat(&store, &warm));
        assert!(res.best_bound <= exact.mu_best + 1e-9);
        assert_eq!(res.nodes_used, 1);
    }

    #[test]
    fn bounds_are_valid_and_incumbents_monotone_in_budget() {
        let (pbc, adm) = family();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..50 {
            let store = random_store(&mut rng);
            let exact = match solve_exact(&store, &adm) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let warm = adm
                .iter()
                .find(|y| check_feasible(&store, y, CUT_FEAS_TOL))
                .copied()
                .unwrap();
            let mut prev_mu = f64::INFINITY;
            for budget in [1usize, 2, 4, 8, 16, 64, 1024] {
                let res = solve_budgeted(&store, &pbc, budget, &warm).unwrap();
                assert!(
                    res.best_bound <= exact.mu_best + 1e-9,
                    "invalid bound {} > {}",
                    res.best_bound,
                    exact.mu_best
                );
                assert!(res.best_bound <= res.mu_best + 1e-9);
                assert!(res.mu_best <= mu_hat(&store, &warm));
                assert!(res.mu_best <= prev_mu);
                prev_mu = res.mu_best;
            }
        }
    }

    #[test]
    fn inadmissible_warm_start_is_rejected() {
        let (pbc, _) = family();
        let store = CutStore::new();
        assert!(matches!(
            solve_budgeted(&store, &pbc, 8, &Assignment([0, 0, 0, 0, 0])),
            Err(MasterError::InvalidWarmStart)
        ));
    }

    #[test]
    fn deterministic_node_counts() {
        let (pbc, adm) = family();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = random_store(&mut rng);
        let warm = adm
            .iter()
            .find(|y| check_feasible(&store, y, CUT_FEAS_TOL))
            .copied()
            .unwrap();
        let a = solve_budgeted(&store, &pbc, 16, &warm).unwrap();
        let b = solve_budgeted(&store, &pbc, 16, &warm).unwrap();
        assert_eq!(a, b);
    }
}
