//! Solvers for `min ½|z|²  s.t.  E z = r,  G z ≤ h,  |F_j z| ≤ b_j`.
//!
//! Equality constraints are eliminated exactly with an SVD: `z = z_p + N w`
//! with `z_p = E⁺r` orthogonal to the null-space basis `N`, so the cost
//! becomes `½|z_p|² + ½|w|²` and every iterate satisfies `E z = r` to
//! rounding. The remaining inequality/cone problem in `w` is solved by ADMM,
//! followed by an active-set polish when no cone is active.
//!
//! Multipliers follow the Lagrangian `½|z|² + λᵀ(Ez − r) + μᵀ(Gz − h) + …`.

pub mod admm;
pub mod factor;
mod ldp;
pub mod sparse;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::galerkin::EqualitySystem;
use crate::sets::{CoefficientSet, NormConstraint};

use admm::{AdmmProblem, AdmmSettings, AdmmState, AdmmStatus, BallBlock};
use sparse::CsrMatrix;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Minimum-norm QP over stacked coefficients `z = (η_x, η_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    nx: usize,
    e: DMatrix<f64>,
    r: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    cones: Vec<NormConstraint>,
}

impl ConicProgram {
    /// Combines the equality system with constraint sets on `η_x` and `η_u`.
    pub fn new(eq: &EqualitySystem, state: &CoefficientSet, input: &CoefficientSet) -> Result<Self> {
        let nx = eq.e_x.ncols();
        let nu = eq.e_u.ncols();
        if state.dim() != nx {
            return Err(mismatch("state constraint set", nx, state.dim()));
        }
        if input.dim() != nu {
            return Err(mismatch("input constraint set", nu, input.dim()));
        }
        let dim = nx + nu;
        let rows = state.linear.len() + input.linear.len();
        let mut g = DMatrix::zeros(rows, dim);
        let mut h = DVector::zeros(rows);
        for (k, (c, offset)) in state
            .linear
            .iter()
            .map(|c| (c, 0))
            .chain(input.linear.iter().map(|c| (c, nx)))
            .enumerate()
        {
            g.view_mut((k, offset), (1, c.a.len())).copy_from(&c.a.transpose());
            h[k] = c.b;
        }
        let mut cones = Vec::new();
        for (c, offset) in state
            .norms
            .iter()
            .map(|c| (c, 0))
            .chain(input.norms.iter().map(|c| (c, nx)))
        {
            let mut map = DMatrix::zeros(c.map.nrows(), dim);
            map.view_mut((0, offset), c.map.shape()).copy_from(&c.map);
            cones.push(NormConstraint { map, bound: c.bound });
        }
        Ok(Self {
            nx,
            e: eq.stacked(),
            r: eq.rhs.clone(),
            g,
            h,
            cones,
        })
    }

    pub fn equality_only(eq: &EqualitySystem) -> Self {
        let dim = eq.e_x.ncols() + eq.e_u.ncols();
        Self {
            nx: eq.e_x.ncols(),
            e: eq.stacked(),
            r: eq.rhs.clone(),
            g: DMatrix::zeros(0, dim),
            h: DVector::zeros(0),
            cones: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn has_inequalities(&self) -> bool {
        self.g.nrows() > 0 || !self.cones.is_empty()
    }

    pub fn equality_matrix(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn equality_rhs(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn linear_rows(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.g, &self.h)
    }

    pub fn cones(&self) -> &[NormConstraint] {
        &self.cones
    }

    /// `(η_x, η_u)` parts of a stacked vector.
    pub fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            z.rows(0, self.nx).into_owned(),
            z.rows(self.nx, z.len() - self.nx).into_owned(),
        )
    }

    /// Largest violation of any equality, halfspace or cone constraint.
    pub fn primal_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = if self.r.is_empty() { 0.0 } else { (&self.e * z - &self.r).amax() };
        let lin = (&self.g * z - &self.h).iter().fold(0.0_f64, |a, &v| a.max(v));
        let cone = self
            .cones
            .iter()
            .map(|c| (&c.map * z).norm() - c.bound)
            .fold(0.0_f64, f64::max);
        eq.max(lin).max(cone)
    }

    /// `Gᵀμ + Σ F_jᵀ ν_j` for `dual_ineq = (μ, ν_1, ν_2, …)`.
    pub fn inequality_force(&self, dual_ineq: &DVector<f64>) -> DVector<f64> {
        let m = self.g.nrows();
        let mut force = self.g.transpose() * dual_ineq.rows(0, m);
        let mut offset = m;
        for c in &self.cones {
            let q = c.map.nrows();
            force += c.map.transpose() * dual_ineq.rows(offset, q);
            offset += q;
        }
        force
    }

    fn dual_ineq_len(&self) -> usize {
        self.g.nrows() + self.cones.iter().map(|c| c.map.nrows()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Stacked `(η_x, η_u)`.
    pub z: DVector<f64>,
    /// Equality multipliers `λ`.
    pub dual_eq: DVector<f64>,
    /// Halfspace multipliers followed by one block per norm cone.
    pub dual_ineq: DVector<f64>,
    pub status: SolveStatus,
    pub primal_residual: f64,
    /// KKT stationarity `|z + Eᵀλ + Gᵀμ + Σ F_jᵀν_j|∞`.
    pub dual_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    /// `E` has dependent rows, so `dual_eq` is the minimum-norm choice.
    pub rank_deficient: bool,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// SVD-based description of `{z : E z = r}`.
struct EqualityBasis {
    z_p: DVector<f64>,
    null: DMatrix<f64>,
    u_r: DMatrix<f64>,
    sigma_r: DVector<f64>,
    v_r: DMatrix<f64>,
    rows: usize,
    consistent: bool,
}

impl EqualityBasis {
    fn new(e: &DMatrix<f64>, r: &DVector<f64>) -> Self {
        let (k, d) = e.shape();
        if k == 0 {
            return Self {
                z_p: DVector::zeros(d),
                null: DMatrix::identity(d, d),
                u_r: DMatrix::zeros(0, 0),
                sigma_r: DVector::zeros(0),
                v_r: DMatrix::zeros(d, 0),
                rows: 0,
                consistent: true,
            };
        }
        // pad to at least square so the SVD returns a full right basis
        let size = k.max(d);
        let mut padded = DMatrix::zeros(size, d);
        padded.rows_mut(0, k).copy_from(e);
        let svd = padded.svd(true, true);
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested Vᵀ").transpose();
        let sv = svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        let sigma_max = sv.iter().copied().fold(0.0, f64::max);
        let cutoff = sigma_max * size as f64 * f64::EPSILON * 10.0;
        let ranked: Vec<usize> = order.iter().copied().filter(|&i| sv[i] > cutoff).collect();
        let nulls: Vec<usize> = order.iter().copied().filter(|&i| sv[i] <= cutoff).collect();
        let rank = ranked.len();

        let u_r = DMatrix::from_fn(k, rank, |row, c| u[(row, ranked[c])]);
        let v_r = DMatrix::from_fn(d, rank, |row, c| v[(row, ranked[c])]);
        let sigma_r = DVector::from_fn(rank, |c, _| sv[ranked[c]]);
        let null = DMatrix::from_fn(d, nulls.len(), |row, c| v[(row, nulls[c])]);

        let coeffs = (u_r.transpose() * r).component_div(&sigma_r);
        let z_p = &v_r * coeffs;
        let residual = (e * &z_p - r).amax();
        let consistent = residual <= 1e-9 * (1.0 + r.amax() + sigma_max * z_p.amax());
        Self {
            z_p,
            null,
            u_r,
            sigma_r,
            v_r,
            rows: k,
            consistent,
        }
    }

    fn rank(&self) -> usize {
        self.sigma_r.len()
    }

    /// Minimum-norm `λ` with `Eᵀλ ≈ −g`.
    fn multipliers(&self, g: &DVector<f64>) -> DVector<f64> {
        if self.rows == 0 {
            return DVector::zeros(0);
        }
        let coeffs = (self.v_r.transpose() * g).component_div(&self.sigma_r);
        -(&self.u_r * coeffs)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid("tol", format!("must be positive and finite, got {tol}")));
    }
    Ok(())
}

/// Residuals, objective and status for a candidate primal/dual pair.
fn finalize(
    prog: &ConicProgram,
    basis: &EqualityBasis,
    z: DVector<f64>,
    dual_ineq: DVector<f64>,
    iterations: usize,
    tol: f64,
) -> Solution {
    let force = prog.inequality_force(&dual_ineq);
    let stationarity = &z + &force;
    let dual_eq = basis.multipliers(&stationarity);
    let et_lambda = prog.e.transpose() * &dual_eq;
    let dual_residual = (&stationarity + &et_lambda).amax();
    let primal_residual = prog.primal_violation(&z);
    let ez = &prog.e * &z;
    let gz = &prog.g * &z;
    let scale_p = [ez.amax(), prog.r.amax(), gz.amax()]
        .into_iter()
        .fold(0.0, f64::max);
    let scale_d = [z.amax(), et_lambda.amax(), force.amax()]
        .into_iter()
        .fold(0.0, f64::max);
    let optimal = primal_residual <= tol * (1.0 + scale_p) && dual_residual <= tol * (1.0 + scale_d);
    let mu_ok = dual_ineq.rows(0, prog.g.nrows()).iter().all(|&m| m >= -tol * (1.0 + scale_d));
    Solution {
        objective: 0.5 * z.norm_squared(),
        z,
        dual_eq,
        dual_ineq,
        status: if optimal && mu_ok { SolveStatus::Optimal } else { SolveStatus::MaxIter },
        primal_residual,
        dual_residual,
        iterations,
        rank_deficient: basis.rank() < basis.rows,
    }
}

fn infeasible(prog: &ConicProgram, basis: &EqualityBasis, iterations: usize) -> Solution {
    let z = basis.z_p.clone();
    Solution {
        objective: 0.5 * z.norm_squared(),
        primal_residual: prog.primal_violation(&z),
        dual_residual: f64::NAN,
        z,
        dual_eq: DVector::zeros(prog.r.len()),
        dual_ineq: DVector::zeros(prog.dual_ineq_len()),
        status: SolveStatus::Infeasible,
        iterations,
        rank_deficient: basis.rank() < basis.rows,
    }
}

/// Exact minimum-norm solution of `E z = r`: `z = E⁺r`, `λ = −(Eᵀ)⁺z`.
/// An inconsistent system yields [`SolveStatus::Infeasible`].
pub fn solve_equality_qp(prog: &ConicProgram) -> Result<Solution> {
    solve_equality_with_tol(prog, DEFAULT_TOL)
}

fn solve_equality_with_tol(prog: &ConicProgram, tol: f64) -> Result<Solution> {
    if prog.has_inequalities() {
        return Err(invalid("prog", "equality solver called with inequality constraints"));
    }
    let basis = EqualityBasis::new(&prog.e, &prog.r);
    if !basis.consistent {
        return Ok(infeasible(prog, &basis, 0));
    }
    let z = basis.z_p.clone();
    Ok(finalize(prog, &basis, z, DVector::zeros(0), 0, tol))
}

/// Inequality/cone-constrained solve. Falls back to the exact equality solver
/// when there are no inequalities.
pub fn solve_conic_qp(prog: &ConicProgram, tol: f64, max_iter: usize) -> Result<Solution> {
    solve_conic_qp_warm(prog, tol, max_iter, None)
}

/// As [`solve_conic_qp`], starting the iteration from `warm` (a stacked `z`).
pub fn solve_conic_qp_warm(
    prog: &ConicProgram,
    tol: f64,
    max_iter: usize,
    warm: Option<&DVector<f64>>,
) -> Result<Solution> {
    check_tol(tol)?;
    if max_iter == 0 {
        return Err(invalid("max_iter", "must be at least 1"));
    }
    if let Some(w) = warm {
        if w.len() != prog.dim() {
            return Err(mismatch("warm start", prog.dim(), w.len()));
        }
    }
    if !prog.has_inequalities() {
        return solve_equality_with_tol(prog, tol);
    }
    let basis = EqualityBasis::new(&prog.e, &prog.r);
    if !basis.consistent {
        return Ok(infeasible(prog, &basis, 0));
    }
    let reduced = match Reduced::new(prog, &basis) {
        Some(r) => r,
        None => return Ok(infeasible(prog, &basis, 0)),
    };
    let nw = basis.null.ncols();
    if nw == 0 || reduced.rows() == 0 {
        // the feasible point is unique, or the kept constraints are trivially satisfied
        let z = basis.z_p.clone();
        if nw == 0 && prog.primal_violation(&z) > tol * (1.0 + z.amax()) {
            return Ok(infeasible(prog, &basis, 0));
        }
        return Ok(finalize(prog, &basis, z, DVector::zeros(prog.dual_ineq_len()), 0, tol));
    }

    let problem = reduced.admm_problem();
    let mut state = AdmmState::zeros(nw, reduced.rows(), 0.1);
    if let Some(z0) = warm {
        state.x = basis.null.transpose() * (z0 - &basis.z_p);
        let mut z = problem.a.mul_vec(&state.x);
        for i in 0..z.len() {
            z[i] = z[i].min(problem.upper[i]);
        }
        state.z = z;
    }

    let ladder = [1e-3, 1e-5, 1e-7, 0.1 * tol, 0.01 * tol, 1e-3 * tol];
    let mut used = 0;
    let mut last: Option<Solution> = None;
    for &stage_tol in ladder.iter().filter(|&&t| t >= 1e-3 * tol) {
        if used >= max_iter {
            break;
        }
        let settings = AdmmSettings {
            eps_abs: stage_tol,
            eps_rel: stage_tol,
            max_iter: max_iter - used,
            ..AdmmSettings::default()
        };
        let outcome = admm::solve(&problem, &settings, &mut state)?;
        used += outcome.iterations;
        match outcome.status {
            AdmmStatus::PrimalInfeasible => return Ok(infeasible(prog, &basis, used)),
            AdmmStatus::MaxIter => {
                if let Some((w, y)) = reduced.polish(&state.x, &state.y, tol) {
                    let sol = reduced.to_solution(prog, &basis, &w, &y, used, tol);
                    if sol.is_optimal() {
                        return Ok(sol);
                    }
                }
                let mut sol = reduced.to_solution(prog, &basis, &state.x, &state.y, used, tol);
                sol.status = SolveStatus::MaxIter;
                return Ok(sol);
            }
            AdmmStatus::Converged => {}
        }
        if let Some((w, y)) = reduced.polish(&state.x, &state.y, tol) {
            let sol = reduced.to_solution(prog, &basis, &w, &y, used, tol);
            if sol.is_optimal() {
                return Ok(sol);
            }
        }
        let sol = reduced.to_solution(prog, &basis, &state.x, &state.y, used, tol);
        if sol.is_optimal() {
            return Ok(sol);
        }
        last = Some(sol);
    }
    let mut sol = last.unwrap_or_else(|| reduced.to_solution(prog, &basis, &state.x, &state.y, used, tol));
    sol.status = SolveStatus::MaxIter;
    Ok(sol)
}

/// Inequality part in the null-space coordinates, with unit-norm rows.
struct Reduced {
    /// Rows: kept halfspaces, then ball blocks.
    c: DMatrix<f64>,
    upper: DVector<f64>,
    lin_index: Vec<usize>,
    lin_scale: Vec<f64>,
    balls: Vec<ReducedBall>,
    lin_total: usize,
}

struct ReducedBall {
    cone: usize,
    start: usize,
    scale: f64,
    center: DVector<f64>,
    radius: f64,
}

impl Reduced {
    /// `None` when a constraint that does not depend on `w` is violated.
    fn new(prog: &ConicProgram, basis: &EqualityBasis) -> Option<Self> {
        let nw = basis.null.ncols();
        let gn = &prog.g * &basis.null;
        let slack = &prog.h - &prog.g * &basis.z_p;
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut upper = Vec::new();
        let mut lin_index = Vec::new();
        let mut lin_scale = Vec::new();
        for i in 0..gn.nrows() {
            let row = gn.row(i).transpose();
            let norm = row.norm();
            let scale_ref = 1.0 + prog.h[i].abs();
            if norm <= 1e-13 * (1.0 + prog.g.row(i).norm()) {
                if slack[i] < -1e-10 * scale_ref {
                    return None;
                }
                continue;
            }
            rows.push(row / norm);
            upper.push(slack[i] / norm);
            lin_index.push(i);
            lin_scale.push(1.0 / norm);
        }
        let mut balls = Vec::new();
        for (j, cone) in prog.cones.iter().enumerate() {
            let fn_ = &cone.map * &basis.null;
            let center = -(&cone.map * &basis.z_p);
            let norm = fn_.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
            if norm <= 1e-13 * (1.0 + cone.map.amax()) {
                if center.norm() > cone.bound * (1.0 + 1e-10) + 1e-12 {
                    return None;
                }
                continue;
            }
            let start = rows.len();
            for r in fn_.row_iter() {
                rows.push(r.transpose() / norm);
                upper.push(f64::INFINITY);
            }
            balls.push(ReducedBall {
                cone: j,
                start,
                scale: 1.0 / norm,
                center: center / norm,
                radius: cone.bound / norm,
            });
        }
        let mut c = DMatrix::zeros(rows.len(), nw);
        for (i, r) in rows.iter().enumerate() {
            c.row_mut(i).copy_from(&r.transpose());
        }
        Some(Self {
            c,
            upper: DVector::from_vec(upper),
            lin_total: lin_index.len(),
            lin_index,
            lin_scale,
            balls,
        })
    }

    fn rows(&self) -> usize {
        self.c.nrows()
    }

    fn admm_problem(&self) -> AdmmProblem {
        let nw = self.c.ncols();
        let m = self.rows();
        AdmmProblem {
            p: DVector::from_element(nw, 1.0),
            q: DVector::zeros(nw),
            a: CsrMatrix::from_dense(&self.c),
            lower: DVector::from_element(m, f64::NEG_INFINITY),
            upper: self.upper.clone(),
            balls: self
                .balls
                .iter()
                .map(|b| BallBlock {
                    start: b.start,
                    center: b.center.clone(),
                    radius: b.radius,
                })
                .collect(),
        }
    }

    fn to_solution(
        &self,
        prog: &ConicProgram,
        basis: &EqualityBasis,
        w: &DVector<f64>,
        y: &DVector<f64>,
        iterations: usize,
        tol: f64,
    ) -> Solution {
        let z = &basis.z_p + &basis.null * w;
        let mut dual = DVector::zeros(prog.dual_ineq_len());
        for (k, (&i, &s)) in self.lin_index.iter().zip(&self.lin_scale).enumerate() {
            dual[i] = y[k] * s;
        }
        let mut offsets = Vec::with_capacity(prog.cones.len());
        let mut off = prog.g.nrows();
        for c in &prog.cones {
            offsets.push(off);
            off += c.map.nrows();
        }
        for b in &self.balls {
            let q = b.center.len();
            let block = y.rows(b.start, q) * b.scale;
            dual.rows_mut(offsets[b.cone], q).copy_from(&block);
        }
        finalize(prog, basis, z, dual, iterations, tol)
    }

    /// Solves the equality-constrained problem on a guessed active set and
    /// accepts it if it satisfies every KKT condition.
    fn polish(&self, w: &DVector<f64>, y: &DVector<f64>, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        let cw = &self.c * w;
        for b in &self.balls {
            let dist = (cw.rows(b.start, b.center.len()) - &b.center).norm();
            if dist >= b.radius * (1.0 - 1e-6) {
                return None;
            }
        }
        let m = self.lin_total;
        let ymax = y.rows(0, m).amax().max(1e-300);
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        for rel in [1e-2, 1e-4, 1e-6, 1e-8] {
            candidates.push((0..m).filter(|&i| y[i] > rel * ymax).collect());
        }
        candidates.push(
            (0..m)
                .filter(|&i| self.upper[i] - cw[i] <= 1e-7 * (1.0 + self.upper[i].abs()))
                .collect(),
        );
        if self.balls.is_empty() {
            if let Some(set) = ldp::active_set(&self.c, &self.upper) {
                candidates.push(set);
            }
        }
        candidates.dedup();
        let feas_tol = 0.1 * tol;
        for active in candidates {
            let (w_new, mu) = if active.is_empty() {
                (DVector::zeros(w.len()), DVector::zeros(0))
            } else {
                let ca = DMatrix::from_fn(active.len(), w.len(), |r, c| self.c[(active[r], c)]);
                let da = DVector::from_fn(active.len(), |r, _| self.upper[active[r]]);
                let basis = EqualityBasis::new(&ca, &da);
                if !basis.consistent {
                    continue;
                }
                let w_new = basis.z_p.clone();
                let mu = basis.multipliers(&w_new);
                (w_new, mu)
            };
            let scale = 1.0 + w_new.amax();
            if mu.iter().any(|&v| v < -feas_tol * scale) {
                continue;
            }
            let cw_new = &self.c * &w_new;
            let lin_ok = (0..m).all(|i| cw_new[i] <= self.upper[i] + feas_tol * (1.0 + self.upper[i].abs()));
            let balls_ok = self
                .balls
                .iter()
                .all(|b| (cw_new.rows(b.start, b.center.len()) - &b.center).norm() <= b.radius);
            if lin_ok && balls_ok {
                let mut y_new = DVector::zeros(self.rows());
                for (k, &i) in active.iter().enumerate() {
                    y_new[i] = mu[k].max(0.0);
                }
                return Some((w_new, y_new));
            }
        }
        None
    }
}

/// Primal objective minus the Lagrangian dual objective at the solution's
/// multipliers (halfspace multipliers clamped at zero).
///
/// With `v = Eᵀλ + Gᵀμ + Σ F_jᵀν_j` the dual function is
/// `−½|v|² − λᵀr − μᵀh − Σ b_j|ν_j|`; for the lower problem `−λᵀr` is the
/// initial-state term `p̃(0)ᵀx0`.
pub fn duality_gap(prog: &ConicProgram, sol: &Solution) -> f64 {
    let m = prog.g.nrows();
    let mut dual_ineq = sol.dual_ineq.clone();
    for i in 0..m {
        dual_ineq[i] = dual_ineq[i].max(0.0);
    }
    let v = prog.e.transpose() * &sol.dual_eq + prog.inequality_force(&dual_ineq);
    let mut support = sol.dual_eq.dot(&prog.r) + dual_ineq.rows(0, m).dot(&prog.h);
    let mut offset = m;
    for c in &prog.cones {
        let q = c.map.nrows();
        support += c.bound * dual_ineq.rows(offset, q).norm();
        offset += q;
    }
    let dual = -0.5 * v.norm_squared() - support;
    0.5 * sol.z.norm_squared() - dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::galerkin::{assemble_lower, assemble_upper, LtiProblem};
    use crate::sets::{
        build_lower_set, build_upper_set, default_grid, nested_weights, SetDescription, SetMode, UpperSetMode,
    };
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    pub(super) fn integrator(x0: f64) -> LtiProblem {
        LtiProblem::unconstrained(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, x0),
        )
        .unwrap()
    }

    pub(super) fn boxed_integrator() -> LtiProblem {
        LtiProblem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::symmetric_box(&[0.4]).unwrap(),
        )
        .unwrap()
    }

    pub(super) fn upper_program(prob: &LtiProblem, spec: &BasisSpec) -> ConicProgram {
        let eq = assemble_upper(prob, spec);
        let grid = default_grid(spec.p());
        let xs = build_upper_set(prob.state_set(), prob.n(), spec, &grid, UpperSetMode::Sampled).unwrap();
        let us = build_upper_set(prob.input_set(), prob.m(), spec, &grid, UpperSetMode::Sampled).unwrap();
        ConicProgram::new(&eq, &xs, &us).unwrap()
    }

    pub(super) fn lower_program(prob: &LtiProblem, spec: &BasisSpec) -> ConicProgram {
        let eq = assemble_lower(prob, spec);
        let w = nested_weights(spec, None);
        let xs = build_lower_set(prob.state_set(), prob.n(), spec, &w).unwrap();
        let us = build_lower_set(prob.input_set(), prob.m(), spec, &w).unwrap();
        ConicProgram::new(&eq, &xs, &us).unwrap()
    }

    #[test]
    fn degenerate_active_set_reaches_optimum() {
        // many nearly-active grid samples; plain ADMM stalls here
        let prob = boxed_integrator();
        let mut prev = f64::INFINITY;
        for s in 14..=18 {
            let prog = upper_program(&prob, &BasisSpec::laguerre(1.0, s).unwrap());
            let sol = solve_conic_qp(&prog, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert!(sol.is_optimal(), "s = {s}: {:?}", sol.status);
            assert!(sol.objective <= prev + 1e-10);
            prev = sol.objective;
        }
    }

    #[test]
    fn hand_kkt_examples() {
        let prog = ConicProgram::equality_only(&assemble_upper(&integrator(1.0), &BasisSpec::laguerre(1.0, 1).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert!(sol.is_optimal());
        assert_relative_eq!(sol.z[0], 1.0 / SQRT2, max_relative = 1e-14);
        assert_relative_eq!(sol.z[1], -1.0 / SQRT2, max_relative = 1e-14);
        assert_relative_eq!(sol.objective, 0.5, max_relative = 1e-14);

        let prog = ConicProgram::equality_only(&assemble_upper(&integrator(1.0), &BasisSpec::laguerre(2.0, 1).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert_relative_eq!(sol.z[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(sol.z[1], -1.0, max_relative = 1e-14);
        assert_relative_eq!(sol.objective, 0.625, max_relative = 1e-14);

        let prog = ConicProgram::equality_only(&assemble_lower(&integrator(1.0), &BasisSpec::laguerre(2.0, 1).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert_relative_eq!(sol.z[0], 0.8, max_relative = 1e-14);
        assert_relative_eq!(sol.z[1], -0.4, max_relative = 1e-14);
        assert_relative_eq!(sol.objective, 0.4, max_relative = 1e-14);
        assert!(duality_gap(&prog, &sol).abs() <= 1e-12);
    }

    #[test]
    fn lower_multiplier_matches_hand_value() {
        // stationarity: z + Eᵀλ = 0 with E = [−2, 1] → λ = 0.4; dual = −½|Eᵀλ|² − λ r = −0.4 + 0.8
        let prog = ConicProgram::equality_only(&assemble_lower(&integrator(1.0), &BasisSpec::laguerre(2.0, 1).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert_relative_eq!(sol.dual_eq[0], 0.4, max_relative = 1e-14);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn inconsistent_equality_is_infeasible() {
        // double integrator at s = 1: four rows, three unknowns
        let prob = LtiProblem::unconstrained(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DVector::from_column_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let prog = ConicProgram::equality_only(&assemble_upper(&prob, &BasisSpec::laguerre(1.0, 1).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let sol2 = ConicProgram::equality_only(&assemble_upper(&prob, &BasisSpec::laguerre(1.0, 2).unwrap()));
        assert!(solve_equality_qp(&sol2).unwrap().is_optimal());
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let eq = EqualitySystem {
            e_x: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            e_u: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            rhs: DVector::from_column_slice(&[1.0, 2.0]),
        };
        let sol = solve_equality_qp(&ConicProgram::equality_only(&eq)).unwrap();
        assert!(sol.is_optimal());
        assert!(sol.rank_deficient);
        assert_relative_eq!(sol.z[0], 0.5, max_relative = 1e-14);
        assert!(sol.dual_residual < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let prog = ConicProgram::equality_only(&assemble_upper(&integrator(0.0), &BasisSpec::laguerre(1.0, 4).unwrap()));
        let sol = solve_equality_qp(&prog).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(duality_gap(&prog, &sol), 0.0);
    }

    #[test]
    fn conic_without_inequalities_matches_equality() {
        let spec = BasisSpec::laguerre(2.0, 5).unwrap();
        let prog = ConicProgram::equality_only(&assemble_lower(&integrator(1.0), &spec));
        let a = solve_equality_qp(&prog).unwrap();
        let b = solve_conic_qp(&prog, 1e-8, 1000).unwrap();
        assert!((a.z - b.z).amax() <= 1e-7);
    }

    #[test]
    fn huge_bounds_are_inactive() {
        let prob = LtiProblem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            SetDescription::symmetric_box(&[1e6]).unwrap(),
            SetDescription::symmetric_box(&[1e6]).unwrap(),
        )
        .unwrap();
        for s in [2, 5] {
            let spec = BasisSpec::laguerre(2.0, s).unwrap();
            for prog in [upper_program(&prob, &spec), lower_program(&prob, &spec)] {
                let free = solve_equality_qp(&ConicProgram::equality_only(&EqualitySystem {
                    e_x: prog.e.columns(0, s).into_owned(),
                    e_u: prog.e.columns(s, s).into_owned(),
                    rhs: prog.r.clone(),
                }))
                .unwrap();
                let sol = solve_conic_qp(&prog, 1e-8, 20_000).unwrap();
                assert!(sol.is_optimal());
                assert!((sol.z - free.z).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn input_bound_raises_upper_cost() {
        let prob = boxed_integrator();
        // u(0) = −1 is forced at s = 1
        let sol = solve_conic_qp(&upper_program(&prob, &BasisSpec::laguerre(1.0, 1).unwrap()), 1e-8, 20_000).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        let mut found = false;
        for s in 2..=8 {
            let prog = upper_program(&prob, &BasisSpec::laguerre(1.0, s).unwrap());
            let sol = solve_conic_qp(&prog, 1e-8, 20_000).unwrap();
            if sol.is_optimal() {
                found = true;
                assert!(sol.objective >= 0.5);
                assert!(prog.primal_violation(&sol.z) <= 1e-8);
            }
        }
        assert!(found);
    }

    #[test]
    fn lower_constrained_gap_and_stationarity() {
        let prob = boxed_integrator();
        for s in [1, 3, 6, 10] {
            let prog = lower_program(&prob, &BasisSpec::laguerre(1.0, s).unwrap());
            let sol = solve_conic_qp(&prog, 1e-8, 20_000).unwrap();
            assert!(sol.is_optimal(), "s={s} {:?}", sol.status);
            assert!(sol.dual_residual <= 1e-7);
            let gap = duality_gap(&prog, &sol);
            assert!(gap.abs() <= 1e-6 * (1.0 + sol.objective), "s={s} gap={gap}");
        }
    }

    #[test]
    fn ball_constraints() {
        let prob = LtiProblem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::ball(0.5).unwrap(),
        )
        .unwrap();
        let spec = BasisSpec::laguerre(1.0, 4).unwrap();
        let lo = lower_program(&prob, &spec);
        let sol = solve_conic_qp(&lo, 1e-8, 20_000).unwrap();
        assert!(sol.is_optimal());
        assert!(duality_gap(&lo, &sol).abs() <= 1e-6 * (1.0 + sol.objective));
        let eq = assemble_upper(&prob, &spec);
        let grid = default_grid(1.0);
        let xs = CoefficientSet::unconstrained(4, SetMode::SampledWithTail);
        let us = build_upper_set(prob.input_set(), 1, &spec, &grid, UpperSetMode::SampledWithTail).unwrap();
        let up = ConicProgram::new(&eq, &xs, &us).unwrap();
        let sol_up = solve_conic_qp(&up, 1e-8, 20_000).unwrap();
        if sol_up.is_optimal() {
            assert!(sol_up.objective >= sol.objective - 1e-7);
        }
    }

    #[test]
    fn warm_starts_agree() {
        let prob = boxed_integrator();
        let mut rng = StdRng::seed_from_u64(21);
        for prog in [
            lower_program(&prob, &BasisSpec::laguerre(1.0, 6).unwrap()),
            upper_program(&prob, &BasisSpec::laguerre(1.0, 6).unwrap()),
        ] {
            let base = solve_conic_qp(&prog, 1e-8, 20_000).unwrap();
            assert!(base.is_optimal());
            for _ in 0..4 {
                let warm = DVector::from_fn(prog.dim(), |_, _| rng.gen_range(-3.0..3.0));
                let sol = solve_conic_qp_warm(&prog, 1e-8, 20_000, Some(&warm)).unwrap();
                assert!(sol.is_optimal());
                assert!((&sol.z - &base.z).amax() <= 1e-7);
            }
        }
    }

    #[test]
    fn truncated_iteration_reports_max_iter() {
        // the duality gap sign is only guaranteed for feasible iterates; this
        // deterministic three-step iterate is a positive witness. A ball-shaped
        // input set keeps the exact halfspace fallback out of play.
        let prob = LtiProblem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::ball(0.4).unwrap(),
        )
        .unwrap();
        let prog = upper_program(&prob, &BasisSpec::laguerre(1.0, 2).unwrap());
        let sol = solve_conic_qp(&prog, 1e-8, 3).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIter);
        assert_eq!(sol.iterations, 3);
        assert!(duality_gap(&prog, &sol) > 1e-3);
    }

    #[test]
    fn truncated_halfspace_solve_is_exact_or_flagged() {
        let prog = upper_program(&boxed_integrator(), &BasisSpec::laguerre(1.0, 2).unwrap());
        let sol = solve_conic_qp(&prog, 1e-8, 3).unwrap();
        assert!(sol.iterations <= 3);
        if sol.is_optimal() {
            assert!(duality_gap(&prog, &sol).abs() < 1e-10);
        } else {
            assert_eq!(sol.status, SolveStatus::MaxIter);
        }
    }

    #[test]
    fn feasible_suboptimal_points_have_positive_gap() {
        // a tighter input bound gives a feasible, suboptimal point; so does
        // every convex combination with the optimum
        let spec = BasisSpec::laguerre(1.0, 6).unwrap();
        let prog = lower_program(&boxed_integrator(), &spec);
        let opt = solve_conic_qp(&prog, 1e-8, 20_000).unwrap();
        let tight = LtiProblem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::symmetric_box(&[0.3]).unwrap(),
        )
        .unwrap();
        let inner = solve_conic_qp(&lower_program(&tight, &spec), 1e-8, 20_000).unwrap();
        for theta in [0.0, 0.3, 0.7] {
            let mut cand = opt.clone();
            cand.z = &opt.z * theta + &inner.z * (1.0 - theta);
            assert!(prog.primal_violation(&cand.z) <= 1e-12);
            let excess = 0.5 * cand.z.norm_squared() - opt.objective;
            assert!(excess > 0.0);
            assert!(duality_gap(&prog, &cand) >= excess - 1e-9);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let prog = lower_program(&boxed_integrator(), &BasisSpec::laguerre(1.0, 2).unwrap());
        assert!(solve_conic_qp(&prog, 0.0, 10).is_err());
        assert!(solve_conic_qp(&prog, 1e-8, 0).is_err());
        assert!(solve_equality_qp(&prog).is_err());
        assert!(solve_conic_qp_warm(&prog, 1e-8, 10, Some(&DVector::zeros(1))).is_err());
    }
}
