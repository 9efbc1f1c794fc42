//! Dense convex QP solver for the contact-force distribution problem.
//!
//! Minimizes 1/2 x^T H x + f^T x subject to A_in x <= b_in and
//! A_eq x = b_eq, with H symmetric positive definite. The solver is an
//! active-set iteration on the working set of inequality constraints: each
//! step solves the equality-constrained KKT system, then either adds the
//! lowest-index most-violated constraint or drops the one with the most
//! negative multiplier. Problems here have at most 12 variables, so every
//! subproblem is a small dense LU solve.

use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;

/// Feasibility tolerance on constraint violations.
const FEAS_TOL: f64 = 1e-9;
/// Multiplier sign tolerance.
const MULT_TOL: f64 = 1e-10;
/// Ridge added to a degenerate Hessian.
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite Hessian, n x n.
    pub h: DMatrix<f64>,
    /// Linear objective term, length n.
    pub f: DVector<f64>,
    /// Inequality rows, m x n: a_in * x <= b_in.
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Equality rows, p x n: a_eq * x = b_eq.
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.f.dot(x)
    }

    /// Plain-text dump of the matrix blocks, for offline debugging.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let block = |out: &mut String, name: &str, m: &DMatrix<f64>| {
            let _ = writeln!(out, "{} {}x{}", name, m.nrows(), m.ncols());
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        let vec_block = |out: &mut String, name: &str, v: &DVector<f64>| {
            let _ = writeln!(out, "{} {}", name, v.len());
            let row: Vec<String> = v.iter().map(|x| format!("{:.17e}", x)).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        };
        block(&mut out, "H", &self.h);
        vec_block(&mut out, "f", &self.f);
        block(&mut out, "A_in", &self.a_in);
        vec_block(&mut out, "b_in", &self.b_in);
        block(&mut out, "A_eq", &self.a_eq);
        vec_block(&mut out, "b_eq", &self.b_eq);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpStatus::Optimal => write!(f, "optimal"),
            QpStatus::Infeasible => write!(f, "infeasible"),
            QpStatus::IterLimit => write!(f, "iter_limit"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of inequality constraints active at the solution.
    pub active_set: Vec<usize>,
    /// Inequality multipliers, full length m (zero off the active set).
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Active-set solver with reusable workspace. One solver per thread; the
/// previous active set warm-starts the next solve.
#[derive(Debug, Default, Clone)]
pub struct QpSolver {
    last_active: Vec<usize>,
    warned_ridge: bool,
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop the warm-start active set (used when the problem shape changes).
    pub fn reset(&mut self) {
        self.last_active.clear();
    }

    pub fn solve(&mut self, p: &QpProblem) -> QpSolution {
        let sol = self.solve_inner(p, true);
        self.last_active = sol.active_set.clone();
        sol
    }

    fn solve_inner(&mut self, p: &QpProblem, allow_phase1: bool) -> QpSolution {
        let n = p.num_vars();
        let m = p.b_in.len();
        let neq = p.b_eq.len();

        // Symmetrize and regularize the Hessian if needed.
        let mut h = (&p.h + p.h.transpose()) * 0.5;
        if h.clone().cholesky().is_none() {
            if !self.warned_ridge {
                eprintln!("qp: degenerate Hessian, adding {RIDGE:e} ridge");
                self.warned_ridge = true;
            }
            for i in 0..n {
                h[(i, i)] += RIDGE;
            }
        }

        // Feasible starting point: least-squares onto the equalities, then
        // phase 1 if any inequality is still violated.
        let mut x0 = DVector::zeros(n);
        if neq > 0 {
            if let Ok(x_eq) = p.a_eq.clone().svd(true, true).solve(&p.b_eq, 1e-12) {
                x0 = x_eq;
            }
            if ((&p.a_eq * &x0) - &p.b_eq).amax() > 1e-8 {
                return infeasible_solution(n, m, neq, 0);
            }
        }
        if m > 0 && ((&p.a_in * &x0) - &p.b_in).amax() > FEAS_TOL {
            if !allow_phase1 {
                return infeasible_solution(n, m, neq, 0);
            }
            match phase1_point(p, &x0) {
                Some(xf) => x0 = xf,
                None => return infeasible_solution(n, m, neq, 0),
            }
        }

        let warm: Vec<usize> = self
            .last_active
            .iter()
            .copied()
            .filter(|&i| i < m)
            .collect();
        primal_loop(p, &h, x0, &warm)
    }
}

/// Standard primal active-set iteration from a feasible point: solve the
/// equality-constrained subproblem on the working set, take the longest
/// feasible step toward it, add the blocking row, and drop working rows
/// whose multipliers go negative once stationary. The objective never
/// increases along the way.
fn primal_loop(
    p: &QpProblem,
    h: &DMatrix<f64>,
    mut x: DVector<f64>,
    warm: &[usize],
) -> QpSolution {
    let n = p.num_vars();
    let m = p.b_in.len();
    let neq = p.b_eq.len();
    let iter_cap = 20 * (n + m).max(4);

    // Warm-start rows must hold with equality at the start point.
    let mut working: Vec<usize> = Vec::new();
    if m > 0 {
        let resid = (&p.a_in * &x) - &p.b_in;
        for &i in warm {
            if resid[i].abs() <= 1e-8 {
                working.push(i);
            }
        }
    }
    working.sort_unstable();
    working.dedup();

    let mut iterations = 0;
    loop {
        if iterations >= iter_cap {
            // x is feasible but optimality was not certified.
            return QpSolution {
                x,
                active_set: working,
                ineq_multipliers: DVector::zeros(m),
                eq_multipliers: DVector::zeros(neq),
                kkt_residual: f64::INFINITY,
                status: QpStatus::IterLimit,
                iterations,
            };
        }
        iterations += 1;

        let solved = solve_kkt(h, &p.f, &p.a_eq, &p.b_eq, &p.a_in, &p.b_in, &working);
        let (x_eqp, nu, lambda_w) = match solved {
            Some(t) => t,
            None => {
                // Rank-deficient working set: drop the most recently added
                // row; with nothing left the equalities are inconsistent.
                if working.pop().is_none() {
                    return infeasible_solution(n, m, neq, iterations);
                }
                continue;
            }
        };
        let step = &x_eqp - &x;
        if step.amax() <= 1e-11 {
            // Stationary on the working set; check multiplier signs.
            let mut most_neg = -MULT_TOL;
            let mut leave = None;
            for (k, &lam) in lambda_w.iter().enumerate() {
                if lam < most_neg - 1e-12 {
                    most_neg = lam;
                    leave = Some(k);
                }
            }
            if let Some(k) = leave {
                working.remove(k);
                continue;
            }
            let mut ineq_mult = DVector::zeros(m);
            for (k, &i) in working.iter().enumerate() {
                ineq_mult[i] = lambda_w[k].max(0.0);
            }
            let mut sol = QpSolution {
                x: x_eqp,
                active_set: working.clone(),
                ineq_multipliers: ineq_mult,
                eq_multipliers: nu,
                kkt_residual: 0.0,
                status: QpStatus::Optimal,
                iterations,
            };
            sol.kkt_residual = kkt_residual(p, &sol);
            return sol;
        }

        // Ratio test against the rows outside the working set; the lowest
        // index wins ties within 1e-12.
        let mut alpha = 1.0;
        let mut blocker = None;
        if m > 0 {
            let ax = &p.a_in * &x;
            let ap = &p.a_in * &step;
            for i in 0..m {
                if working.contains(&i) || ap[i] <= 1e-12 {
                    continue;
                }
                let t = (p.b_in[i] - ax[i]) / ap[i];
                if t < alpha - 1e-12 {
                    alpha = t;
                    blocker = Some(i);
                }
            }
        }
        x += step * alpha.max(0.0);
        if let Some(i) = blocker {
            working.push(i);
            working.sort_unstable();
        }
    }
}

fn infeasible_solution(n: usize, m: usize, neq: usize, iterations: usize) -> QpSolution {
    QpSolution {
        x: DVector::zeros(n),
        active_set: Vec::new(),
        ineq_multipliers: DVector::zeros(m),
        eq_multipliers: DVector::zeros(neq),
        kkt_residual: f64::INFINITY,
        status: QpStatus::Infeasible,
        iterations,
    }
}

/// Solve the KKT system for the equality constraints plus working set.
/// Returns (x, eq multipliers, working-set multipliers), or None when the
/// constraint rows are rank deficient.
#[allow(clippy::too_many_arguments)]
fn solve_kkt(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = f.len();
    let p = b_eq.len();
    let w = working.len();
    let dim = n + p + w;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..p {
        for j in 0..n {
            kkt[(n + i, j)] = a_eq[(i, j)];
            kkt[(j, n + i)] = a_eq[(i, j)];
        }
        rhs[n + i] = b_eq[i];
    }
    for (k, &row) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + p + k, j)] = a_in[(row, j)];
            kkt[(j, n + p + k)] = a_in[(row, j)];
        }
        rhs[n + p + k] = b_in[row];
    }
    for j in 0..n {
        rhs[j] = -f[j];
    }

    let lu = kkt.full_piv_lu();
    // Reject near-singular systems so dependent rows get dropped.
    let diag_max = (0..dim).map(|i| lu.u()[(i, i)].abs()).fold(0.0, f64::max);
    let diag_min = (0..dim).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min / diag_max < 1e-13 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, p).into_owned();
    let lambda = sol.rows(n + p, w).into_owned();
    Some((x, nu, lambda))
}

/// Phase 1: minimize squared per-row slacks from a trivially feasible
/// start. Returns a feasible point for the original inequalities, or None
/// when the minimum slack stays positive (certified infeasible).
fn phase1_point(p: &QpProblem, x0: &DVector<f64>) -> Option<DVector<f64>> {
    let n = p.num_vars();
    let m = p.b_in.len();
    let neq = p.b_eq.len();
    let dim = n + m;

    let mut h = DMatrix::zeros(dim, dim);
    for i in 0..n {
        h[(i, i)] = 1e-8;
    }
    for i in 0..m {
        h[(n + i, n + i)] = 1.0;
    }
    // Rows: a_i x - s_i <= b_i, then -s_i <= 0.
    let mut a_in = DMatrix::zeros(2 * m, dim);
    let mut b_in = DVector::zeros(2 * m);
    for i in 0..m {
        for j in 0..n {
            a_in[(i, j)] = p.a_in[(i, j)];
        }
        a_in[(i, n + i)] = -1.0;
        b_in[i] = p.b_in[i];
        a_in[(m + i, n + i)] = -1.0;
    }
    let mut a_eq = DMatrix::zeros(neq, dim);
    for i in 0..neq {
        for j in 0..n {
            a_eq[(i, j)] = p.a_eq[(i, j)];
        }
    }
    let relaxed = QpProblem {
        h: h.clone(),
        f: DVector::zeros(dim),
        a_in,
        b_in,
        a_eq,
        b_eq: p.b_eq.clone(),
    };

    let mut z0 = DVector::zeros(dim);
    z0.rows_mut(0, n).copy_from(x0);
    let resid = (&p.a_in * x0) - &p.b_in;
    for i in 0..m {
        z0[n + i] = resid[i].max(0.0);
    }

    let sol = primal_loop(&relaxed, &h, z0, &[]);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let max_slack = (0..m).map(|i| sol.x[n + i]).fold(0.0, f64::max);
    if max_slack > 1e-8 {
        return None;
    }
    Some(sol.x.rows(0, n).into_owned())
}

/// Max KKT violation of a candidate solution: stationarity, primal
/// feasibility, and complementary slackness.
pub fn kkt_residual(p: &QpProblem, s: &QpSolution) -> f64 {
    let stat = &p.h * &s.x
        + &p.f
        + p.a_in.transpose() * &s.ineq_multipliers
        + p.a_eq.transpose() * &s.eq_multipliers;
    let mut res = stat.amax();
    if p.b_eq.len() > 0 {
        res = res.max((&p.a_eq * &s.x - &p.b_eq).amax());
    }
    if p.b_in.len() > 0 {
        let slack = &p.a_in * &s.x - &p.b_in;
        for i in 0..p.b_in.len() {
            res = res.max(slack[i].max(0.0));
            res = res.max((s.ineq_multipliers[i] * slack[i]).abs());
            res = res.max((-s.ineq_multipliers[i]).max(0.0));
        }
    }
    res
}
