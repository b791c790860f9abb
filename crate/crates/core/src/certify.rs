//! Sweeps the basis size, solves both finite problems at every size and
//! checks the relations they must satisfy: upper costs decrease, lower costs
//! increase, the two sandwich the reference value, consecutive upper
//! solutions obey the Cauchy bound, and primal/dual trajectories satisfy the
//! dynamics and adjoint equations pointwise.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, MAX_BASIS_SIZE};
use crate::error::{invalid, mismatch, Error, Result};
use crate::galerkin::{assemble_lower, assemble_upper, dynamics_residual, residual_grid, LtiProblem, ParamVector};
use crate::oracle::{collocation_cost, default_horizon, solve_care};
use crate::sets::{build_lower_set, build_upper_set, default_grid, nested_weights, UpperSetMode};
use crate::solver::{
    duality_gap, solve_conic_qp, solve_equality_qp, ConicProgram, Solution, SolveStatus, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};

/// Slack on monotonicity and sandwich checks, in units of the solver tolerance.
pub const MONOTONE_SLACK: f64 = 10.0;
/// Slack on the Cauchy bound, in units of the solver tolerance.
pub const CAUCHY_SLACK: f64 = 40.0;
/// Relative bound on pointwise dynamics/adjoint residuals and duality gaps.
pub const EXACTNESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    /// CARE when unconstrained, collocation otherwise.
    #[default]
    Auto,
    Care,
    Collocation,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub s_min: usize,
    pub s_max: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub upper_mode: UpperSetMode,
    pub weight_count: Option<usize>,
    /// Sample times for upper sets; `None` uses [`default_grid`].
    pub grid: Option<Vec<f64>>,
    pub residual_points: usize,
    pub oracle: OracleChoice,
    /// Collocation horizon; `None` uses [`default_horizon`].
    pub horizon: Option<f64>,
    pub intervals: usize,
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            s_min: 1,
            s_max: 10,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            upper_mode: UpperSetMode::Sampled,
            weight_count: None,
            grid: None,
            residual_points: 1000,
            oracle: OracleChoice::Auto,
            horizon: None,
            intervals: 3000,
            threads: None,
        }
    }
}

/// Results for one basis size. Costs are `None` when the problem is
/// infeasible or the solve did not reach optimality (an infinite bound).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub s: usize,
    #[serde(rename = "J_s")]
    pub upper_cost: Option<f64>,
    #[serde(rename = "Jtilde_s")]
    pub lower_cost: Option<f64>,
    pub upper_status: Option<SolveStatus>,
    pub lower_status: Option<SolveStatus>,
    pub gap: Option<f64>,
    pub dyn_residual: Option<f64>,
    pub eta_norm: Option<f64>,
    pub adjoint_residual: Option<f64>,
    pub eta_p_norm: Option<f64>,
    pub upper_duality_gap: Option<f64>,
    pub lower_duality_gap: Option<f64>,
    /// Cauchy check between this size and the next.
    pub cauchy_lhs: Option<f64>,
    pub cauchy_rhs: Option<f64>,
    pub cauchy_ok: Option<bool>,
    pub error: Option<String>,
}

impl SweepRecord {
    fn empty(s: usize) -> Self {
        Self {
            s,
            upper_cost: None,
            lower_cost: None,
            upper_status: None,
            lower_status: None,
            gap: None,
            dyn_residual: None,
            eta_norm: None,
            adjoint_residual: None,
            eta_p_norm: None,
            upper_duality_gap: None,
            lower_duality_gap: None,
            cauchy_lhs: None,
            cauchy_rhs: None,
            cauchy_ok: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSource {
    Care,
    Collocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBlock {
    #[serde(rename = "J_inf")]
    pub value: f64,
    pub source: OracleSource,
    /// Half-width of the reference band (0 for the Riccati value).
    pub band: f64,
    pub converged: bool,
}

/// `None` means the check does not apply (suppressed for the mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub upper_monotone: Option<bool>,
    pub lower_monotone: bool,
    pub sandwich_ok: Option<bool>,
    pub cauchy_ok: Option<bool>,
    pub dynamics_exact: bool,
    pub adjoint_exact: bool,
    pub strong_duality: bool,
}

impl Flags {
    pub fn all_pass(&self) -> bool {
        self.upper_monotone.unwrap_or(true)
            && self.lower_monotone
            && self.sandwich_ok.unwrap_or(true)
            && self.cauchy_ok.unwrap_or(true)
            && self.dynamics_exact
            && self.adjoint_exact
            && self.strong_duality
    }

    /// Names of the enabled flags that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.upper_monotone == Some(false) {
            out.push("upper_monotone");
        }
        if !self.lower_monotone {
            out.push("lower_monotone");
        }
        if self.sandwich_ok == Some(false) {
            out.push("sandwich_ok");
        }
        if self.cauchy_ok == Some(false) {
            out.push("cauchy_ok");
        }
        if !self.dynamics_exact {
            out.push("dynamics_exact");
        }
        if !self.adjoint_exact {
            out.push("adjoint_exact");
        }
        if !self.strong_duality {
            out.push("strong_duality");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub s_first: usize,
    pub s_last: usize,
    pub gap_first: f64,
    pub gap_last: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub p: f64,
    pub tol: f64,
    pub upper_mode: UpperSetMode,
    /// First size with a finite upper bound.
    pub n0: Option<usize>,
    pub records: Vec<SweepRecord>,
    pub oracle: Option<OracleBlock>,
    pub flags: Flags,
    /// Number of sizes where a solve stopped without a verdict or errored.
    pub solver_failures: usize,
    /// Whether the last finite gap is small (`≤ 1e-4·(1 + J_s)`): agreement of
    /// the two limits is observed, not asserted.
    pub limits_agree_observed: Option<bool>,
}

/// `|i_s(η_s) − η_{s+1}|² ≤ 4 (J_s − J_{s+1})` for consecutive upper solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Coefficients and cost of an optimal upper solution.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperIterate {
    pub eta_x: ParamVector,
    pub eta_u: ParamVector,
    pub cost: f64,
}

pub fn check_cauchy(a: &UpperIterate, b: &UpperIterate, tol: f64) -> Result<CauchyCheck> {
    let s1 = b.eta_x.block_size();
    if s1 < a.eta_x.block_size() || a.eta_x.dims() != b.eta_x.dims() || a.eta_u.dims() != b.eta_u.dims() {
        return Err(mismatch(
            "cauchy pair",
            "same dimensions with a larger second basis",
            format!("sizes {} and {}", a.eta_x.block_size(), s1),
        ));
    }
    let dx = a.eta_x.include(s1)?.into_coeffs() - b.eta_x.coeffs();
    let du = a.eta_u.include(s1)?.into_coeffs() - b.eta_u.coeffs();
    let lhs = dx.norm_squared() + du.norm_squared();
    let rhs = 4.0 * (a.cost - b.cost);
    Ok(CauchyCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + CAUCHY_SLACK * tol,
    })
}

/// Largest pointwise residual `|ṗ + Aᵀp + v|` of the adjoint equation, with
/// `p = (I ⊗ τ)ᵀ η_p` from the multipliers of the dynamics rows and
/// `v` from stationarity in `η_x`.
///
/// Exact (to solver accuracy) for the lower problem, whose dynamics rows are
/// the weak form; the upper problem's multipliers generally leave a residual.
pub fn check_adjoint_exactness(
    prog: &ConicProgram,
    sol: &Solution,
    prob: &LtiProblem,
    spec: &BasisSpec,
    t_grid: &[f64],
) -> Result<f64> {
    let (n, s) = (prob.n(), spec.size());
    if prog.nx() != n * s || sol.z.len() != prog.dim() || sol.dual_eq.len() < n * s {
        return Err(mismatch("solution", format!("{} state coefficients", n * s), prog.nx()));
    }
    let eta_p = ParamVector::new(sol.dual_eq.rows(0, n * s).into_owned(), s)?;
    let force = prog.inequality_force(&sol.dual_ineq);
    let eta_v = ParamVector::new(sol.z.rows(0, n * s) + force.rows(0, n * s), s)?;
    let at = prob.a().transpose();
    let mut worst = 0.0_f64;
    for &t in t_grid {
        let tau = spec.eval(t)?;
        let dtau = spec.generator() * &tau;
        let p = eta_p.combine(&tau);
        let dp = eta_p.combine(&dtau);
        let v = eta_v.combine(&tau);
        worst = worst.max((dp + &at * p + v).norm());
    }
    Ok(worst)
}

/// Gap shrinkage between the first and last sizes where both bounds are finite.
pub fn convergence_summary(report: &BoundReport) -> Result<ConvergenceSummary> {
    let finite: Vec<(usize, f64)> = report
        .records
        .iter()
        .filter_map(|r| r.gap.map(|g| (r.s, g)))
        .collect();
    if finite.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need two sizes with both bounds finite, found {}",
            finite.len()
        )));
    }
    let (s_first, gap_first) = finite[0];
    let (s_last, gap_last) = finite[finite.len() - 1];
    let ratio = if gap_first.abs() <= f64::MIN_POSITIVE {
        if gap_last.abs() <= f64::MIN_POSITIVE { 0.0 } else { f64::INFINITY }
    } else {
        gap_last / gap_first
    };
    Ok(ConvergenceSummary {
        s_first,
        s_last,
        gap_first,
        gap_last,
        ratio,
    })
}

struct SizeOutcome {
    record: SweepRecord,
    upper: Option<UpperIterate>,
}

fn solve_program(prog: &ConicProgram, cfg: &SweepConfig) -> Result<Solution> {
    if prog.has_inequalities() {
        solve_conic_qp(prog, cfg.tol, cfg.max_iter)
    } else {
        solve_equality_qp(prog)
    }
}

fn solve_size(prob: &LtiProblem, p: f64, s: usize, cfg: &SweepConfig, grid: &[f64]) -> SizeOutcome {
    let mut record = SweepRecord::empty(s);
    match solve_size_inner(prob, p, s, cfg, grid, &mut record) {
        Ok(upper) => SizeOutcome { record, upper },
        Err(e) => {
            record.error = Some(e.to_string());
            SizeOutcome { record, upper: None }
        }
    }
}

fn solve_size_inner(
    prob: &LtiProblem,
    p: f64,
    s: usize,
    cfg: &SweepConfig,
    grid: &[f64],
    record: &mut SweepRecord,
) -> Result<Option<UpperIterate>> {
    let spec = BasisSpec::laguerre(p, s)?;
    let res_grid = residual_grid(p, cfg.residual_points);
    let (n, m) = (prob.n(), prob.m());

    let up_eq = assemble_upper(prob, &spec);
    let xs = build_upper_set(prob.state_set(), n, &spec, grid, cfg.upper_mode)?;
    let us = build_upper_set(prob.input_set(), m, &spec, grid, cfg.upper_mode)?;
    let up_prog = ConicProgram::new(&up_eq, &xs, &us)?;
    let up = solve_program(&up_prog, cfg)?;
    record.upper_status = Some(up.status);
    let mut upper = None;
    if up.is_optimal() {
        let (ex, eu) = up_prog.split(&up.z);
        let eta_x = ParamVector::new(ex, s)?;
        let eta_u = ParamVector::new(eu, s)?;
        record.upper_cost = Some(up.objective);
        record.dyn_residual = Some(dynamics_residual(&eta_x, &eta_u, prob, &spec, &res_grid)?);
        record.eta_norm = Some(up.z.norm());
        record.upper_duality_gap = Some(duality_gap(&up_prog, &up));
        upper = Some(UpperIterate {
            eta_x,
            eta_u,
            cost: up.objective,
        });
    }

    let lo_eq = assemble_lower(prob, &spec);
    let weights = nested_weights(&spec, cfg.weight_count);
    let xs = build_lower_set(prob.state_set(), n, &spec, &weights)?;
    let us = build_lower_set(prob.input_set(), m, &spec, &weights)?;
    let lo_prog = ConicProgram::new(&lo_eq, &xs, &us)?;
    let lo = solve_program(&lo_prog, cfg)?;
    record.lower_status = Some(lo.status);
    if lo.is_optimal() {
        record.lower_cost = Some(lo.objective);
        record.lower_duality_gap = Some(duality_gap(&lo_prog, &lo));
        record.adjoint_residual = Some(check_adjoint_exactness(&lo_prog, &lo, prob, &spec, &res_grid)?);
        record.eta_p_norm = Some(lo.dual_eq.norm());
    }
    if let (Some(j), Some(jt)) = (record.upper_cost, record.lower_cost) {
        record.gap = Some(j - jt);
    }
    Ok(upper)
}

fn compute_oracle(prob: &LtiProblem, cfg: &SweepConfig) -> Option<OracleBlock> {
    let choice = match cfg.oracle {
        OracleChoice::None => return None,
        OracleChoice::Auto if prob.is_unconstrained() => OracleChoice::Care,
        OracleChoice::Auto => OracleChoice::Collocation,
        other => other,
    };
    let care = solve_care(prob.a(), prob.b()).ok()?;
    match choice {
        OracleChoice::Care => Some(OracleBlock {
            value: care.cost(prob.x0()),
            source: OracleSource::Care,
            band: 0.0,
            converged: true,
        }),
        _ => {
            let horizon = cfg.horizon.unwrap_or_else(|| default_horizon(&care));
            let c = collocation_cost(prob, horizon, cfg.intervals).ok()?;
            Some(OracleBlock {
                value: c.cost,
                source: OracleSource::Collocation,
                band: c.estimate,
                converged: c.converged,
            })
        }
    }
}

fn validate(p: f64, cfg: &SweepConfig) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return Err(invalid("p", format!("must be positive and finite, got {p}")));
    }
    if cfg.s_min == 0 || cfg.s_max < cfg.s_min {
        return Err(invalid("s_range", format!("empty range {}..={}", cfg.s_min, cfg.s_max)));
    }
    if cfg.s_max > MAX_BASIS_SIZE {
        return Err(invalid("s_max", format!("at most {MAX_BASIS_SIZE}")));
    }
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(invalid("tol", "must be positive and finite"));
    }
    if cfg.max_iter == 0 {
        return Err(invalid("max_iter", "must be at least 1"));
    }
    if cfg.threads == Some(0) {
        return Err(invalid("threads", "must be at least 1"));
    }
    Ok(())
}

/// Solves both problems for every `s` in the configured range and evaluates
/// all flags. Per-size failures are recorded, not propagated.
pub fn run_sweep(prob: &LtiProblem, p: f64, cfg: &SweepConfig) -> Result<BoundReport> {
    validate(p, cfg)?;
    let grid = cfg.grid.clone().unwrap_or_else(|| default_grid(p));
    let sizes: Vec<usize> = (cfg.s_min..=cfg.s_max).collect();
    let work = || -> (Vec<SizeOutcome>, Option<OracleBlock>) {
        rayon::join(
            || {
                sizes
                    .par_iter()
                    .map(|&s| solve_size(prob, p, s, cfg, &grid))
                    .collect()
            },
            || compute_oracle(prob, cfg),
        )
    };
    let (mut outcomes, oracle) = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Solver(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let sampled = cfg.upper_mode == UpperSetMode::Sampled;
    if sampled {
        for i in 0..outcomes.len().saturating_sub(1) {
            let check = match (&outcomes[i].upper, &outcomes[i + 1].upper) {
                (Some(a), Some(b)) => Some(check_cauchy(a, b, cfg.tol)?),
                _ => None,
            };
            if let Some(c) = check {
                let rec = &mut outcomes[i].record;
                rec.cauchy_lhs = Some(c.lhs);
                rec.cauchy_rhs = Some(c.rhs);
                rec.cauchy_ok = Some(c.ok);
            }
        }
    }
    let records: Vec<SweepRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let flags = evaluate_flags(&records, oracle.as_ref(), cfg);
    let n0 = records.iter().find(|r| r.upper_cost.is_some()).map(|r| r.s);
    let solver_failures = records
        .iter()
        .filter(|r| {
            r.error.is_some()
                || r.upper_status == Some(SolveStatus::MaxIter)
                || r.lower_status == Some(SolveStatus::MaxIter)
        })
        .count();
    let limits_agree_observed = records
        .iter()
        .rev()
        .find_map(|r| r.gap.zip(r.upper_cost))
        .map(|(g, j)| g.abs() <= 1e-4 * (1.0 + j.abs()));
    Ok(BoundReport {
        p,
        tol: cfg.tol,
        upper_mode: cfg.upper_mode,
        n0,
        records,
        oracle,
        flags,
        solver_failures,
        limits_agree_observed,
    })
}

fn evaluate_flags(records: &[SweepRecord], oracle: Option<&OracleBlock>, cfg: &SweepConfig) -> Flags {
    let slack = MONOTONE_SLACK * cfg.tol;
    let sampled = cfg.upper_mode == UpperSetMode::Sampled;
    let upper_monotone = sampled.then(|| {
        records
            .windows(2)
            .all(|w| match (w[0].upper_cost, w[1].upper_cost) {
                (Some(a), Some(b)) => b <= a + slack,
                // once finite, the bound must stay finite
                (Some(_), None) => w[1].upper_status == Some(SolveStatus::MaxIter) || w[1].error.is_some(),
                _ => true,
            })
    });
    let lower_monotone = records.windows(2).all(|w| match (w[0].lower_cost, w[1].lower_cost) {
        (Some(a), Some(b)) => b >= a - slack,
        _ => true,
    });
    let sandwich_ok = oracle.map(|o| {
        records.iter().all(|r| {
            let lo_ok = r.lower_cost.is_none_or(|jt| jt - slack - o.band <= o.value);
            let up_ok = r.upper_cost.is_none_or(|j| o.value <= j + slack + o.band);
            let gap_ok = r.gap.is_none_or(|g| g >= -slack);
            lo_ok && up_ok && gap_ok
        })
    });
    let cauchy_ok = sampled.then(|| records.iter().all(|r| r.cauchy_ok != Some(false)));
    let dynamics_exact = records.iter().all(|r| match (r.dyn_residual, r.eta_norm) {
        (Some(res), Some(norm)) => res <= EXACTNESS_TOL * (1.0 + norm),
        _ => true,
    });
    let adjoint_exact = records.iter().all(|r| match (r.adjoint_residual, r.eta_p_norm) {
        (Some(res), Some(norm)) => res <= EXACTNESS_TOL * (1.0 + norm),
        _ => true,
    });
    let strong_duality = records.iter().all(|r| match (r.lower_duality_gap, r.lower_cost) {
        (Some(g), Some(j)) => g.abs() <= EXACTNESS_TOL * (1.0 + j.abs()),
        _ => true,
    });
    Flags {
        upper_monotone,
        lower_monotone,
        sandwich_ok,
        cauchy_ok,
        dynamics_exact,
        adjoint_exact,
        strong_duality,
    }
}

/// Stacked coefficient vector of an [`UpperIterate`], convenient for tests.
pub fn stacked(it: &UpperIterate) -> DVector<f64> {
    let (x, u) = (it.eta_x.coeffs(), it.eta_u.coeffs());
    let mut out = DVector::zeros(x.len() + u.len());
    out.rows_mut(0, x.len()).copy_from(x);
    out.rows_mut(x.len(), u.len()).copy_from(u);
    out
}
