//! Reference values for the infinite-horizon cost: the algebraic Riccati
//! equation when no constraints are present, and a fine trapezoidal
//! discretization with a Riccati terminal cost otherwise.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::galerkin::LtiProblem;
use crate::sets::SetDescription;
use crate::solver::admm::{self, AdmmProblem, AdmmSettings, AdmmState, AdmmStatus, BallBlock};
use crate::solver::sparse::CsrMatrix;

type C64 = Complex<f64>;

/// Stabilizing solution of `AᵀP + PA − PBBᵀP + I = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub closed_loop_eigs: Vec<C64>,
    pub residual: f64,
}

impl RiccatiSolution {
    /// Unconstrained optimal cost `½ x0ᵀ P x0`.
    pub fn cost(&self, x0: &DVector<f64>) -> f64 {
        0.5 * x0.dot(&(&self.p * x0))
    }

    /// Slowest closed-loop decay rate `min |Re λ|`.
    pub fn decay_rate(&self) -> f64 {
        self.closed_loop_eigs
            .iter()
            .map(|l| l.re.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let r = a.transpose() * p + p * a - p * b * b.transpose() * p + DMatrix::identity(n, n);
    r.amax()
}

/// PBH test: every eigenvalue with `Re λ ≥ 0` must keep `[A − λI, B]` at full rank.
fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    let scale = a.amax().max(b.amax()).max(1.0);
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.re < -1e-9 * scale {
            continue;
        }
        let mut pbh = DMatrix::<C64>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = C64::new(a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lambda;
            for j in 0..m {
                pbh[(i, n + j)] = C64::new(b[(i, j)], 0.0);
            }
        }
        let smallest = pbh
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if smallest <= 1e-9 * scale {
            return Err(Error::NotStabilizable {
                re: lambda.re,
                im: lambda.im,
            });
        }
    }
    Ok(())
}

/// Swaps the adjacent diagonal entries `k`, `k+1` of the upper-triangular `t`
/// with a unitary rotation, updating the Schur vectors `q`.
fn swap_adjacent(t: &mut DMatrix<C64>, q: &mut DMatrix<C64>, k: usize) {
    let a = t[(k, k)];
    let b = t[(k, k + 1)];
    let c = t[(k + 1, k + 1)];
    // eigenvector of the 2×2 block for eigenvalue c
    let (mut v1, mut v2) = (b, c - a);
    let norm = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
    if norm == 0.0 {
        return;
    }
    v1 /= norm;
    v2 /= norm;
    // G = [[v1, −v2*], [v2, v1*]], unitary with first column v
    let g11 = v1;
    let g12 = -v2.conj();
    let g21 = v2;
    let g22 = v1.conj();
    let size = t.nrows();
    // T ← T G on columns k, k+1
    for i in 0..size {
        let x = t[(i, k)];
        let y = t[(i, k + 1)];
        t[(i, k)] = x * g11 + y * g21;
        t[(i, k + 1)] = x * g12 + y * g22;
    }
    // T ← Gᴴ T on rows k, k+1
    for j in 0..size {
        let x = t[(k, j)];
        let y = t[(k + 1, j)];
        t[(k, j)] = g11.conj() * x + g21.conj() * y;
        t[(k + 1, j)] = g12.conj() * x + g22.conj() * y;
    }
    t[(k + 1, k)] = C64::new(0.0, 0.0);
    for i in 0..size {
        let x = q[(i, k)];
        let y = q[(i, k + 1)];
        q[(i, k)] = x * g11 + y * g21;
        q[(i, k + 1)] = x * g12 + y * g22;
    }
}

/// Solves the Lyapunov equation `FᵀX + XF = −W` by vectorization.
fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(FᵀX + XF) = (I ⊗ Fᵀ + Fᵀ ⊗ I) vec(X)
    let ft = f.transpose();
    let op = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DVector::from_column_slice((-w).as_slice());
    let x = op.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// Stabilizing CARE solution from the stable invariant subspace of the
/// Hamiltonian `[[A, −BBᵀ], [−I, −Aᵀ]]`, refined by Newton steps.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<RiccatiSolution> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(mismatch("A", "a nonempty square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != n || b.ncols() == 0 {
        return Err(mismatch("B", format!("{n} rows"), format!("{}x{}", b.nrows(), b.ncols())));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("A/B", "non-finite entry"));
    }
    check_stabilizable(a, b)?;

    let bbt = b * b.transpose();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&bbt));
    h.view_mut((n, 0), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let hc = h.map(|v| C64::new(v, 0.0));
    let schur = hc
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Riccati("Schur iteration did not converge".into()))?;
    let (mut q, mut t) = schur.unpack();
    let size = 2 * n;
    let scale = h.amax().max(1.0);
    let stable = |z: C64| z.re < -1e-10 * scale;
    let count = (0..size).filter(|&i| stable(t[(i, i)])).count();
    if count != n {
        return Err(Error::Riccati(format!(
            "Hamiltonian has {count} stable eigenvalues, expected {n} (eigenvalue on the imaginary axis)"
        )));
    }
    // bubble the stable eigenvalues to the leading block
    for _ in 0..size {
        let mut swapped = false;
        for k in 0..size - 1 {
            if !stable(t[(k, k)]) && stable(t[(k + 1, k + 1)]) {
                swap_adjacent(&mut t, &mut q, k);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
    let u11 = q.view((0, 0), (n, n)).into_owned();
    let u21 = q.view((n, 0), (n, n)).into_owned();
    let u11_inv = u11
        .try_inverse()
        .ok_or_else(|| Error::Riccati("stable subspace is not a graph over the state".into()))?;
    let pc = u21 * u11_inv;
    let p = DMatrix::from_fn(n, n, |i, j| 0.5 * (pc[(i, j)].re + pc[(j, i)].re));

    let mut best = p;
    let mut best_res = care_residual(a, b, &best);
    for _ in 0..4 {
        if best_res <= 1e-14 * scale {
            break;
        }
        let k = b.transpose() * &best;
        let f = a - b * &k;
        let w = DMatrix::<f64>::identity(n, n) + k.transpose() * &k;
        let Some(next) = solve_lyapunov(&f, &w) else { break };
        let res = care_residual(a, b, &next);
        if res < best_res {
            best = next;
            best_res = res;
        } else {
            break;
        }
    }

    let closed = a - &bbt * &best;
    let eigs: Vec<C64> = closed.complex_eigenvalues().iter().copied().collect();
    if eigs.iter().any(|l| l.re >= 0.0) {
        return Err(Error::Riccati("closed loop is not stable".into()));
    }
    Ok(RiccatiSolution {
        p: best,
        closed_loop_eigs: eigs,
        residual: best_res,
    })
}

/// Default horizon `30 / min |Re λ(A − BBᵀP)|`.
pub fn default_horizon(care: &RiccatiSolution) -> f64 {
    30.0 / care.decay_rate()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocationResult {
    /// Cost on the finer grid (`2N` intervals).
    pub cost: f64,
    /// Cost on the coarse grid (`N` intervals).
    pub coarse_cost: f64,
    /// `|cost(N) − cost(2N)|`.
    pub estimate: f64,
    /// False when a solve stopped early or the estimate is large.
    pub converged: bool,
}

struct DiscreteSolve {
    cost: f64,
    converged: bool,
}

/// Trapezoidal discretization of the constrained problem on `[0, T]` with
/// terminal cost `½ x(T)ᵀ P x(T)`, solved with `N` and `2N` intervals.
pub fn collocation_cost(prob: &LtiProblem, horizon: f64, intervals: usize) -> Result<CollocationResult> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    if intervals < 10 {
        return Err(invalid("N", format!("need at least 10 intervals, got {intervals}")));
    }
    let care = solve_care(prob.a(), prob.b())?;
    let coarse = solve_discrete(prob, &care.p, horizon, intervals)?;
    let fine = solve_discrete(prob, &care.p, horizon, 2 * intervals)?;
    let estimate = (coarse.cost - fine.cost).abs();
    Ok(CollocationResult {
        cost: fine.cost,
        coarse_cost: coarse.cost,
        estimate,
        converged: coarse.converged && fine.converged && estimate <= 1e-2 * (1.0 + fine.cost.abs()),
    })
}

fn solve_discrete(prob: &LtiProblem, p_term: &DMatrix<f64>, horizon: f64, intervals: usize) -> Result<DiscreteSolve> {
    let (n, m) = (prob.n(), prob.m());
    let stride = n + m;
    let nodes = intervals + 1;
    let h = horizon / intervals as f64;
    // variables: [x_k, u_k] per node, then ξ = Lᵀ x_N with P = L Lᵀ
    let xi = nodes * stride;
    let dim = xi + n;
    let chol = p_term
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Riccati("terminal weight is not positive definite".into()))?;
    let lt = chol.l().transpose();

    let mut p = DVector::zeros(dim);
    for k in 0..nodes {
        let w = if k == 0 || k == intervals { 0.5 } else { 1.0 };
        p.rows_mut(k * stride, stride).fill(w);
    }
    // cost scaled by 1/h
    p.rows_mut(xi, n).fill(1.0 / h);

    let mut trip = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut balls = Vec::new();
    let mut row = 0;
    let mut push_eq = |trip: &mut Vec<(usize, usize, f64)>, entries: Vec<(usize, f64)>, rhs: f64, row: &mut usize| {
        for (c, v) in entries {
            if v != 0.0 {
                trip.push((*row, c, v));
            }
        }
        lower.push(rhs);
        upper.push(rhs);
        *row += 1;
    };
    // x_0 = x0
    for i in 0..n {
        push_eq(&mut trip, vec![(i, 1.0)], prob.x0()[i], &mut row);
    }
    // (x_{k+1} − x_k)/h − ½(A x_k + B u_k + A x_{k+1} + B u_{k+1}) = 0
    let (a, b) = (prob.a(), prob.b());
    for k in 0..intervals {
        let base0 = k * stride;
        let base1 = (k + 1) * stride;
        for i in 0..n {
            let mut e = Vec::with_capacity(2 * stride);
            for j in 0..n {
                let diag = if i == j { 1.0 / h } else { 0.0 };
                e.push((base0 + j, -diag - 0.5 * a[(i, j)]));
                e.push((base1 + j, diag - 0.5 * a[(i, j)]));
            }
            for j in 0..m {
                e.push((base0 + n + j, -0.5 * b[(i, j)]));
                e.push((base1 + n + j, -0.5 * b[(i, j)]));
            }
            push_eq(&mut trip, e, 0.0, &mut row);
        }
    }
    // ξ − Lᵀ x_N = 0
    let last = intervals * stride;
    for i in 0..n {
        let mut e = vec![(xi + i, 1.0)];
        for j in 0..n {
            e.push((last + j, -lt[(i, j)]));
        }
        push_eq(&mut trip, e, 0.0, &mut row);
    }
    let mut lower: Vec<f64> = lower;
    let mut upper: Vec<f64> = upper;
    // pointwise constraints at every node
    for k in 0..nodes {
        for (set, offset, q) in [
            (prob.state_set(), 0, n),
            (prob.input_set(), n, m),
        ] {
            let base = k * stride + offset;
            match set {
                SetDescription::Unconstrained => {}
                SetDescription::Polyhedron { g, h: hv } => {
                    for (gr, &hk) in g.row_iter().zip(hv.iter()) {
                        for (j, &v) in gr.iter().enumerate() {
                            if v != 0.0 {
                                trip.push((row, base + j, v));
                            }
                        }
                        lower.push(f64::NEG_INFINITY);
                        upper.push(hk);
                        row += 1;
                    }
                }
                SetDescription::Ball { radius } => {
                    balls.push(BallBlock {
                        start: row,
                        center: DVector::zeros(q),
                        radius: *radius,
                    });
                    for j in 0..q {
                        trip.push((row, base + j, 1.0));
                        lower.push(0.0);
                        upper.push(0.0);
                        row += 1;
                    }
                }
            }
        }
    }
    let problem = AdmmProblem {
        p,
        q: DVector::zeros(dim),
        a: CsrMatrix::from_triplets(row, dim, trip),
        lower: DVector::from_vec(lower),
        upper: DVector::from_vec(upper),
        balls,
    };
    let settings = AdmmSettings {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        max_iter: 50_000,
        rho: 1.0,
        check_interval: 10,
        ..AdmmSettings::default()
    };
    let mut state = AdmmState::zeros(dim, row, settings.rho);
    let outcome = admm::solve(&problem, &settings, &mut state)?;
    if outcome.status == AdmmStatus::PrimalInfeasible {
        return Err(Error::Solver("discretized problem is infeasible".into()));
    }
    let cost = 0.5 * h * problem.p.component_mul(&state.x).dot(&state.x);
    Ok(DiscreteSolve {
        cost,
        converged: outcome.status == AdmmStatus::Converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn scalar_care_examples() {
        let s = solve_care(&m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap();
        assert_relative_eq!(s.p[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(s.cost(&DVector::from_element(1, 1.0)), 0.5, max_relative = 1e-12);
        let s = solve_care(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0])).unwrap();
        assert_relative_eq!(s.p[(0, 0)], 2f64.sqrt() - 1.0, max_relative = 1e-12);
        let s = solve_care(&m(1, 1, &[2.0]), &m(1, 1, &[1.0])).unwrap();
        // P² − 4P − 1 = 0
        assert_relative_eq!(s.p[(0, 0)], 2.0 + 5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn double_integrator_care() {
        let s = solve_care(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]), &m(2, 1, &[0.0, 1.0])).unwrap();
        let r3 = 3f64.sqrt();
        assert!((&s.p - m(2, 2, &[r3, 1.0, 1.0, r3])).amax() < 1e-12);
        assert!(s.residual <= 1e-10);
        assert!(s.closed_loop_eigs.iter().all(|l| l.re < 0.0));
        assert_relative_eq!(s.cost(&DVector::from_column_slice(&[1.0, 0.0])), r3 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn complex_closed_loop_and_coupled_inputs() {
        let a = m(3, 3, &[0.0, 1.0, 0.0, -2.0, 0.1, 1.0, 0.5, 0.0, 0.3]);
        let b = m(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let s = solve_care(&a, &b).unwrap();
        assert!(s.residual <= 1e-10);
        assert!((&s.p - s.p.transpose()).amax() == 0.0);
        assert!(s.p.clone().cholesky().is_some());
    }

    #[test]
    fn detects_unstabilizable_pair() {
        let err = solve_care(&m(2, 2, &[1.0, 0.0, 0.0, -1.0]), &m(2, 1, &[0.0, 1.0])).unwrap_err();
        match err {
            Error::NotStabilizable { re, im } => {
                assert_relative_eq!(re, 1.0, max_relative = 1e-12);
                assert_eq!(im, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // uncontrollable but stable modes are fine
        assert!(solve_care(&m(2, 2, &[-1.0, 0.0, 0.0, 1.0]), &m(2, 1, &[0.0, 1.0])).is_ok());
        assert!(solve_care(&m(1, 2, &[0.0, 1.0]), &m(1, 1, &[1.0])).is_err());
    }

    #[test]
    fn collocation_unconstrained_scalar() {
        let prob = LtiProblem::unconstrained(m(1, 1, &[0.0]), m(1, 1, &[1.0]), DVector::from_element(1, 1.0)).unwrap();
        let r = collocation_cost(&prob, 15.0, 3000).unwrap();
        assert!(r.converged);
        assert!((r.cost - 0.5).abs() <= 1e-4, "cost {}", r.cost);
        assert!((r.cost - 0.5).abs() <= r.estimate.max(1e-9) * 10.0);
    }

    #[test]
    fn collocation_rejects_bad_arguments() {
        let prob = LtiProblem::unconstrained(m(1, 1, &[0.0]), m(1, 1, &[1.0]), DVector::from_element(1, 1.0)).unwrap();
        assert!(collocation_cost(&prob, 0.0, 100).is_err());
        assert!(collocation_cost(&prob, 10.0, 5).is_err());
    }

    #[test]
    fn collocation_constrained_scalar() {
        // |u| ≤ 0.4 from x0 = 1: saturate until x = 0.4, then u = −x;
        // cost 0.08 + 0.39 + 0.12 = 0.59
        let prob = LtiProblem::new(
            m(1, 1, &[0.0]),
            m(1, 1, &[1.0]),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::symmetric_box(&[0.4]).unwrap(),
        )
        .unwrap();
        let r = collocation_cost(&prob, 30.0, 1000).unwrap();
        assert!(r.converged);
        assert!(r.cost >= 0.5);
        assert!((r.cost - 0.59).abs() <= 1e-3, "cost {} est {}", r.cost, r.estimate);
    }

    #[test]
    fn collocation_double_integrator() {
        let prob = LtiProblem::unconstrained(
            m(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            m(2, 1, &[0.0, 1.0]),
            DVector::from_column_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let care = solve_care(prob.a(), prob.b()).unwrap();
        let horizon = default_horizon(&care);
        let r = collocation_cost(&prob, horizon, 3000).unwrap();
        assert!(r.converged);
        assert!((r.cost - 3f64.sqrt() / 2.0).abs() <= 1e-3, "cost {}", r.cost);
    }

    #[test]
    fn collocation_ladder_approaches_from_above() {
        let prob = LtiProblem::new(
            m(1, 1, &[0.0]),
            m(1, 1, &[1.0]),
            DVector::from_element(1, 1.0),
            SetDescription::Unconstrained,
            SetDescription::symmetric_box(&[0.4]).unwrap(),
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for (t, n) in [(5.0, 50), (10.0, 200), (20.0, 800), (30.0, 2000)] {
            let r = collocation_cost(&prob, t, n).unwrap();
            assert!(r.cost <= prev + r.estimate);
            assert!(r.cost >= 0.59 - r.estimate - 1e-9);
            prev = r.cost;
        }
    }
}
