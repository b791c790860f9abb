//! Operator-splitting iteration for
//! `min ½ xᵀ diag(p) x + qᵀx  s.t.  A x ∈ K`,
//! where `K` is a product of intervals `[l_i, u_i]` and Euclidean balls.
//!
//! The update is the standard relaxed ADMM on the splitting `z = A x`, with a
//! per-row step size (stiffer on equality rows), periodic step adaptation and
//! a primal infeasibility certificate from successive dual differences.

use nalgebra::DVector;

use super::factor::SpdFactor;
use super::sparse::CsrMatrix;
use crate::error::Result;

/// Rows `start..start+len` of `A x` must lie in the ball `|v − center| ≤ radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallBlock {
    pub start: usize,
    pub center: DVector<f64>,
    pub radius: f64,
}

impl BallBlock {
    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct AdmmProblem {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub a: CsrMatrix,
    /// Interval bounds; ignored on ball rows.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub balls: Vec<BallBlock>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdmmSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub adapt_interval: usize,
    pub check_interval: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            alpha: 1.6,
            sigma: 1e-6,
            rho: 0.1,
            adapt_interval: 25,
            check_interval: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Converged,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub rho: f64,
}

impl AdmmState {
    pub fn zeros(n: usize, m: usize, rho: f64) -> Self {
        Self {
            x: DVector::zeros(n),
            z: DVector::zeros(m),
            y: DVector::zeros(m),
            rho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOutcome {
    pub status: AdmmStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

const EQUALITY_RHO_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

impl AdmmProblem {
    fn is_ball_row(&self) -> Vec<bool> {
        let mut mask = vec![false; self.a.nrows()];
        for b in &self.balls {
            mask[b.start..b.start + b.len()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    fn project(&self, v: &mut DVector<f64>, ball_rows: &[bool]) {
        for i in 0..v.len() {
            if !ball_rows[i] {
                v[i] = v[i].clamp(self.lower[i], self.upper[i]);
            }
        }
        for b in &self.balls {
            let mut seg = v.rows_mut(b.start, b.len());
            let d = &seg - &b.center;
            let norm = d.norm();
            if norm > b.radius {
                let scaled = &b.center + d * (b.radius / norm);
                seg.copy_from(&scaled);
            }
        }
    }

    /// Support function of the constraint set in direction `d`.
    fn support(&self, d: &DVector<f64>, ball_rows: &[bool], floor: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..d.len() {
            if ball_rows[i] {
                continue;
            }
            let di = d[i];
            if di > floor {
                total += if self.upper[i].is_finite() { self.upper[i] * di } else { f64::INFINITY };
            } else if di < -floor {
                total += if self.lower[i].is_finite() { self.lower[i] * di } else { f64::INFINITY };
            }
        }
        for b in &self.balls {
            let seg = d.rows(b.start, b.len());
            total += seg.dot(&b.center) + b.radius * seg.norm();
        }
        total
    }

    fn rho_vector(&self, rho: f64, ball_rows: &[bool]) -> DVector<f64> {
        DVector::from_fn(self.a.nrows(), |i, _| {
            if !ball_rows[i] && self.lower[i] == self.upper[i] {
                rho * EQUALITY_RHO_SCALE
            } else {
                rho
            }
        })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Runs the iteration from `state` (used as a warm start) and leaves the final
/// iterate in it.
pub fn solve(problem: &AdmmProblem, settings: &AdmmSettings, state: &mut AdmmState) -> Result<AdmmOutcome> {
    let m = problem.a.nrows();
    let ball_rows = problem.is_ball_row();
    let mut rho_vec = problem.rho_vector(state.rho, &ball_rows);
    let mut factor = SpdFactor::normal_matrix(&problem.p, settings.sigma, &problem.a, &rho_vec)?;

    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut outcome = AdmmOutcome {
        status: AdmmStatus::MaxIter,
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
    };
    if m == 0 {
        // unconstrained: one linear solve
        let x = factor.solve(&(-&problem.q));
        state.x = x;
        outcome.status = AdmmStatus::Converged;
        outcome.primal_residual = 0.0;
        outcome.dual_residual = inf_norm(&(problem.p.component_mul(&state.x) + &problem.q));
        return Ok(outcome);
    }

    for k in 1..=settings.max_iter {
        let rhs = &state.x * sigma - &problem.q
            + problem.a.mul_t_vec(&(rho_vec.component_mul(&state.z) - &state.y));
        let x_tilde = factor.solve(&rhs);
        let z_tilde = problem.a.mul_vec(&x_tilde);
        let x_new = &x_tilde * alpha + &state.x * (1.0 - alpha);
        let z_hat = &z_tilde * alpha + &state.z * (1.0 - alpha);
        let mut z_new = &z_hat + state.y.component_div(&rho_vec);
        problem.project(&mut z_new, &ball_rows);
        let y_new = &state.y + rho_vec.component_mul(&(&z_hat - &z_new));
        let delta_y = &y_new - &state.y;
        state.x = x_new;
        state.z = z_new;
        state.y = y_new;
        outcome.iterations = k;

        let adapt = settings.adapt_interval > 0 && k % settings.adapt_interval == 0;
        if k % settings.check_interval != 0 && !adapt && k != settings.max_iter {
            continue;
        }
        let ax = problem.a.mul_vec(&state.x);
        let px = problem.p.component_mul(&state.x);
        let aty = problem.a.mul_t_vec(&state.y);
        let r_prim = inf_norm(&(&ax - &state.z));
        let r_dual = inf_norm(&(&px + &problem.q + &aty));
        let scale_p = inf_norm(&ax).max(inf_norm(&state.z));
        let scale_d = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&problem.q));
        outcome.primal_residual = r_prim;
        outcome.dual_residual = r_dual;
        if r_prim <= settings.eps_abs + settings.eps_rel * scale_p
            && r_dual <= settings.eps_abs + settings.eps_rel * scale_d
        {
            outcome.status = AdmmStatus::Converged;
            return Ok(outcome);
        }

        let dy_norm = inf_norm(&delta_y);
        if dy_norm > 0.0 {
            let eps = settings.eps_infeasible * dy_norm;
            if inf_norm(&problem.a.mul_t_vec(&delta_y)) <= eps
                && problem.support(&delta_y, &ball_rows, eps) < -eps
            {
                outcome.status = AdmmStatus::PrimalInfeasible;
                return Ok(outcome);
            }
        }

        if adapt {
            let num = r_prim / scale_p.max(1e-30);
            let den = r_dual / scale_d.max(1e-30);
            if num > 0.0 && den > 0.0 {
                let ratio = (num / den).sqrt();
                let new_rho = (state.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * state.rho || new_rho < 0.2 * state.rho {
                    state.rho = new_rho;
                    rho_vec = problem.rho_vector(new_rho, &ball_rows);
                    factor = SpdFactor::normal_matrix(&problem.p, sigma, &problem.a, &rho_vec)?;
                }
            }
        }
    }
    Ok(outcome)
}
