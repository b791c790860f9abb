//! Pointwise constraint sets and their finite-dimensional coefficient versions.
//!
//! Upper problem: constraints are imposed at fixed sample times (optionally
//! with a norm cone certifying the tail). Because a fixed grid gives the same
//! trajectory values for zero-padded coefficients, the sampled sets are
//! nested in `s`.
//!
//! Lower problem: moment constraints `∫ w x dt ∈ (∫ w dt)·X` for weights `w ≥ 0`
//! in the span of the basis. If `x(t) ∈ X` pointwise, the weighted average of
//! `x` lies in the convex set `X`, and since `w` lies in the span,
//! `∫ w x_i dt = c_wᵀ π(x_i)` exactly. Weight lists are prefixes of one fixed
//! family, so they are nested in `s`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{invalid, mismatch, Error, Result};
use crate::galerkin::{check_param, ParamVector};
use crate::quadrature::GaussLaguerre;

/// A closed convex subset of `ℝ^q` containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum SetDescription {
    Unconstrained,
    /// `{x : G x ≤ h}` with `h ≥ 0`.
    Polyhedron { g: DMatrix<f64>, h: DVector<f64> },
    /// `{x : |x|₂ ≤ radius}`.
    Ball { radius: f64 },
}

impl SetDescription {
    pub fn polyhedron(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() != h.len() {
            return Err(mismatch("h", g.nrows(), h.len()));
        }
        if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("polyhedron", "non-finite entry"));
        }
        if h.iter().any(|&v| v < 0.0) {
            return Err(invalid("h", "every entry must be nonnegative so the set contains 0"));
        }
        Ok(Self::Polyhedron { g, h })
    }

    /// `{x : |x_i| ≤ bound_i}`.
    pub fn symmetric_box(bounds: &[f64]) -> Result<Self> {
        let q = bounds.len();
        let mut g = DMatrix::zeros(2 * q, q);
        let mut h = DVector::zeros(2 * q);
        for (i, &b) in bounds.iter().enumerate() {
            g[(2 * i, i)] = 1.0;
            g[(2 * i + 1, i)] = -1.0;
            h[2 * i] = b;
            h[2 * i + 1] = b;
        }
        Self::polyhedron(g, h)
    }

    pub fn ball(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid("radius", format!("must be positive and finite, got {radius}")));
        }
        Ok(Self::Ball { radius })
    }

    pub fn is_unconstrained(&self) -> bool {
        matches!(self, Self::Unconstrained)
    }

    pub(crate) fn check_dim(&self, q: usize, field: &str) -> Result<()> {
        match self {
            Self::Polyhedron { g, .. } if g.ncols() != q => {
                Err(mismatch(format!("{field}.g"), format!("{q} columns"), format!("{} columns", g.ncols())))
            }
            _ => Ok(()),
        }
    }

    /// Amount by which `x` lies outside the set (0 inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            Self::Unconstrained => 0.0,
            Self::Polyhedron { g, h } => (g * x - h).iter().fold(0.0_f64, |acc, &v| acc.max(v)),
            Self::Ball { radius } => (x.norm() - radius).max(0.0),
        }
    }

    /// Radius of the largest Euclidean ball around 0 inside the set.
    pub fn inradius(&self) -> Option<f64> {
        match self {
            Self::Unconstrained => None,
            Self::Polyhedron { g, h } => Some(
                g.row_iter()
                    .zip(h.iter())
                    .filter(|(row, _)| row.norm() > 0.0)
                    .map(|(row, &hk)| hk / row.norm())
                    .fold(f64::INFINITY, f64::min),
            ),
            Self::Ball { radius } => Some(*radius),
        }
    }

    /// True when some halfspace passes through the origin (`h_k = 0`).
    pub fn is_degenerate(&self) -> bool {
        match self {
            Self::Polyhedron { h, .. } => h.iter().any(|&v| v == 0.0),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetMode {
    Sampled,
    SampledWithTail,
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperSetMode {
    #[default]
    Sampled,
    SampledWithTail,
}

impl UpperSetMode {
    fn set_mode(self) -> SetMode {
        match self {
            Self::Sampled => SetMode::Sampled,
            Self::SampledWithTail => SetMode::SampledWithTail,
        }
    }
}

/// `aᵀη ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub b: f64,
}

/// `|F η|₂ ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConstraint {
    pub map: DMatrix<f64>,
    pub bound: f64,
}

/// Intersection of halfspaces and norm cones in coefficient space.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    dim: usize,
    mode: SetMode,
    pub linear: Vec<LinearConstraint>,
    pub norms: Vec<NormConstraint>,
}

impl CoefficientSet {
    pub fn unconstrained(dim: usize, mode: SetMode) -> Self {
        Self {
            dim,
            mode,
            linear: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> SetMode {
        self.mode
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty() && self.norms.is_empty()
    }

    pub fn max_violation(&self, eta: &DVector<f64>) -> f64 {
        let lin = self
            .linear
            .iter()
            .map(|c| c.a.dot(eta) - c.b)
            .fold(0.0_f64, f64::max);
        let cone = self
            .norms
            .iter()
            .map(|c| (&c.map * eta).norm() - c.bound)
            .fold(0.0_f64, f64::max);
        lin.max(cone)
    }

    pub fn contains(&self, eta: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(eta) <= tol
    }
}

/// Time grid for sampled constraints: `t = 0` plus 64 Chebyshev points on `[0, 12/p]`.
pub fn default_grid(p: f64) -> Vec<f64> {
    chebyshev_grid(12.0 / p, 64)
}

/// `t = 0` plus `count` Chebyshev nodes of the first kind on `[0, horizon]`.
pub fn chebyshev_grid(horizon: f64, count: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    let denom = 2.0 * count as f64;
    grid.extend((0..count).map(|k| {
        let theta = std::f64::consts::PI * (2 * k + 1) as f64 / denom;
        0.5 * horizon * (1.0 - theta.cos())
    }));
    grid
}

fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        None => return Err(invalid("grid", "empty time grid")),
        Some(&t0) if t0 != 0.0 => return Err(invalid("grid", "time grid must start at 0")),
        _ => {}
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid", "time grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// Row `(I_q ⊗ v)ᵀ` scaled by `g`: the functional `η ↦ gᵀ (I_q ⊗ v)ᵀ η`.
fn block_functional(g: &[f64], v: &DVector<f64>) -> DVector<f64> {
    let s = v.len();
    let mut a = DVector::zeros(g.len() * s);
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            a.rows_mut(i * s, s).axpy(gi, v, 0.0);
        }
    }
    a
}

/// `(I_q ⊗ v)ᵀ` as a `q × qs` matrix.
fn block_map(q: usize, v: &DVector<f64>) -> DMatrix<f64> {
    let s = v.len();
    let mut m = DMatrix::zeros(q, q * s);
    for i in 0..q {
        m.view_mut((i, i * s), (1, s)).copy_from(&v.transpose());
    }
    m
}

/// Coefficient set whose trajectories satisfy the pointwise constraint at
/// every time in `grid`. With [`UpperSetMode::SampledWithTail`], a norm cone
/// `‖τ(T)‖·|η| ≤ r_in` (with `T` the last grid time and `r_in` the inradius)
/// additionally keeps the trajectory inside the set for all `t ≥ T`, because
/// `‖τ(t)‖` is nonincreasing.
pub fn build_upper_set(
    set: &SetDescription,
    q: usize,
    spec: &BasisSpec,
    grid: &[f64],
    mode: UpperSetMode,
) -> Result<CoefficientSet> {
    check_grid(grid)?;
    set.check_dim(q, "set")?;
    let s = spec.size();
    let mut out = CoefficientSet::unconstrained(q * s, mode.set_mode());
    match set {
        SetDescription::Unconstrained => return Ok(out),
        SetDescription::Polyhedron { g, h } => {
            for &t in grid {
                let tau = spec.eval(t)?;
                for (row, &hk) in g.row_iter().zip(h.iter()) {
                    let gk: Vec<f64> = row.iter().copied().collect();
                    out.linear.push(LinearConstraint {
                        a: block_functional(&gk, &tau),
                        b: hk,
                    });
                }
            }
        }
        SetDescription::Ball { radius } => {
            for &t in grid {
                let tau = spec.eval(t)?;
                out.norms.push(NormConstraint {
                    map: block_map(q, &tau),
                    bound: *radius,
                });
            }
        }
    }
    if mode == UpperSetMode::SampledWithTail {
        let t_end = *grid.last().expect("grid checked nonempty");
        let tail = spec.eval(t_end)?.norm();
        let r_in = set.inradius().unwrap_or(f64::INFINITY);
        out.norms.push(NormConstraint {
            map: DMatrix::identity(q * s, q * s) * tail,
            bound: r_in,
        });
    }
    Ok(out)
}

/// Nonnegativity check of `w(t) = c_wᵀ τ(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCertificate {
    pub accepted: bool,
    pub min_value: f64,
}

const WEIGHT_TOLERANCE: f64 = -1e-10;

/// Dense-grid minimum of `c_wᵀτ(t)` on `[0, 40/p]` plus the sign of the
/// leading polynomial term, which decides the tail beyond the grid.
pub fn certify_nonnegative_weight(c_w: &DVector<f64>, spec: &BasisSpec) -> WeightCertificate {
    if c_w.len() != spec.size() || c_w.iter().any(|c| !c.is_finite()) {
        return WeightCertificate {
            accepted: false,
            min_value: f64::NAN,
        };
    }
    let horizon = 40.0 / spec.p();
    let points = 4000;
    let mut min_value = f64::INFINITY;
    for k in 0..=points {
        let t = horizon * k as f64 / points as f64;
        min_value = min_value.min(c_w.dot(&spec.eval_unchecked(t)));
    }
    // L_k has leading coefficient (−1)^k / k!, so the sign of the dominant
    // tail term of Σ c_i L_{i-1} is sign(c_i)·(−1)^{i-1} for the last nonzero c_i.
    let cutoff = 1e-12 * c_w.amax();
    let tail_ok = match c_w.iter().rposition(|c| c.abs() > cutoff) {
        None => true,
        Some(i) => {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * c_w[i] > 0.0
        }
    };
    WeightCertificate {
        accepted: min_value >= WEIGHT_TOLERANCE && tail_ok,
        min_value,
    }
}

/// One member of the nested weight family, described by its polynomial
/// factor; the weight is `poly(t)·e^{-pt}`.
#[derive(Debug, Clone, PartialEq)]
enum WeightShape {
    /// `(pt)^d`
    Monomial(usize),
    /// `ℓ_j(pt)²` where `ℓ_j` is the Lagrange polynomial on the zeros of `L_{k+1}`.
    Bump { k: usize, j: usize, nodes: Vec<f64> },
}

impl WeightShape {
    fn degree(&self) -> usize {
        match self {
            Self::Monomial(d) => *d,
            Self::Bump { k, .. } => 2 * k,
        }
    }

    fn poly(&self, u: f64) -> f64 {
        match self {
            Self::Monomial(d) => u.powi(*d as i32),
            Self::Bump { j, nodes, .. } => {
                let xj = nodes[*j];
                let l: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != j)
                    .map(|(_, &xi)| (u - xi) / (xj - xi))
                    .product();
                l * l
            }
        }
    }
}

/// Weight family ordered by polynomial degree: for each degree `d` the
/// monomial `(pt)^d e^{-pt}`, and for even `d = 2k ≥ 2` the `k + 1` squared
/// Lagrange bumps on the zeros of `L_{k+1}(pt)`. The family is fixed, so the
/// list available at size `s` (all shapes of degree `< s`) is a prefix of the
/// list at `s + 1`.
fn weight_family(s: usize) -> Vec<WeightShape> {
    let mut out = Vec::new();
    for d in 0..s {
        out.push(WeightShape::Monomial(d));
        if d >= 2 && d % 2 == 0 {
            let k = d / 2;
            let nodes = GaussLaguerre::new(k + 1)
                .map(|r| r.nodes().to_vec())
                .unwrap_or_default();
            for j in 0..=k {
                out.push(WeightShape::Bump {
                    k,
                    j,
                    nodes: nodes.clone(),
                });
            }
        }
    }
    out
}

/// Coefficient vectors of the nested weight family at basis size `s`,
/// normalized to unit length, optionally capped to the first `max_count`.
pub fn nested_weights(spec: &BasisSpec, max_count: Option<usize>) -> Vec<DVector<f64>> {
    let s = spec.size();
    let p = spec.p();
    let family = weight_family(s);
    let take = max_count.unwrap_or(usize::MAX);
    // integrand τ_i·w is a polynomial of degree < 2s times e^{-2pt}
    let rule = GaussLaguerre::new(2 * s + 2).expect("order is positive");
    let points: Vec<(f64, f64, DVector<f64>)> = rule
        .points_with_rate(p)
        .map(|(t, w)| (t, w, spec.eval_unchecked(t)))
        .collect();
    family
        .iter()
        .take(take)
        .map(|shape| {
            debug_assert!(shape.degree() < s);
            let mut c = DVector::zeros(s);
            for (t, w, tau) in &points {
                let value = shape.poly(p * t) * (-p * t).exp();
                c.axpy(w * value, tau, 1.0);
            }
            // coefficients beyond the polynomial degree vanish exactly
            for i in (shape.degree() + 1)..s {
                c[i] = 0.0;
            }
            let norm = c.norm();
            c / norm
        })
        .collect()
}

/// Moment relaxation of the pointwise constraint: for each weight `w` with
/// coefficients `c_w`, `(I_q ⊗ c_w)ᵀ η ∈ (c_wᵀ ∫τ dt)·X`.
pub fn build_lower_set(
    set: &SetDescription,
    q: usize,
    spec: &BasisSpec,
    weights: &[DVector<f64>],
) -> Result<CoefficientSet> {
    set.check_dim(q, "set")?;
    let s = spec.size();
    let mut out = CoefficientSet::unconstrained(q * s, SetMode::Moment);
    if set.is_unconstrained() {
        return Ok(out);
    }
    let integral = spec.integral();
    for c in weights {
        if c.len() != s {
            return Err(mismatch("weight", s, c.len()));
        }
        let cert = certify_nonnegative_weight(c, spec);
        if !cert.accepted {
            return Err(Error::WeightNotNonnegative {
                min_value: cert.min_value,
            });
        }
        let mass = c.dot(&integral);
        match set {
            SetDescription::Unconstrained => {}
            SetDescription::Polyhedron { g, h } => {
                for (row, &hk) in g.row_iter().zip(h.iter()) {
                    let gk: Vec<f64> = row.iter().copied().collect();
                    out.linear.push(LinearConstraint {
                        a: block_functional(&gk, c),
                        b: hk * mass,
                    });
                }
            }
            SetDescription::Ball { radius } => out.norms.push(NormConstraint {
                map: block_map(q, c),
                bound: radius * mass,
            }),
        }
    }
    Ok(out)
}

/// Largest pointwise constraint violation of the trajectory over `grid`.
pub fn max_pointwise_violation(
    eta: &ParamVector,
    set: &SetDescription,
    spec: &BasisSpec,
    grid: &[f64],
) -> Result<f64> {
    if set.is_unconstrained() {
        return Ok(0.0);
    }
    check_param(eta, eta.dims(), spec, "eta")?;
    let mut worst = 0.0_f64;
    for &t in grid {
        let x = eta.eval(spec, t)?;
        worst = worst.max(set.violation(&x));
    }
    Ok(worst)
}
