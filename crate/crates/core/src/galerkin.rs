//! Finite-dimensional representation of the dynamics.
//!
//! Trajectories are `x̃(t) = (I_n ⊗ τ(t))ᵀ η_x`, so coefficient vectors are
//! coordinate-major: block `i` holds the `s` coefficients of coordinate `i`.
//! With an orthonormal basis the Galerkin integrals collapse to Kronecker
//! products of the system matrices with the basis generator.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::basis::BasisSpec;
use crate::error::{invalid, mismatch, Error, Result};
use crate::quadrature::GaussLaguerre;
use crate::sets::SetDescription;

/// Stacked basis coefficients of a vector-valued trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    coeffs: DVector<f64>,
    block: usize,
}

impl ParamVector {
    pub fn new(coeffs: DVector<f64>, block: usize) -> Result<Self> {
        if block == 0 {
            return Err(invalid("block", "block size must be at least 1"));
        }
        if !coeffs.len().is_multiple_of(block) {
            return Err(mismatch(
                "coeffs",
                format!("a multiple of {block}"),
                coeffs.len(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coeffs", "non-finite coefficient"));
        }
        Ok(Self { coeffs, block })
    }

    pub fn from_slice(coeffs: &[f64], block: usize) -> Result<Self> {
        Self::new(DVector::from_column_slice(coeffs), block)
    }

    pub fn zeros(dims: usize, block: usize) -> Self {
        Self {
            coeffs: DVector::zeros(dims * block),
            block: block.max(1),
        }
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    /// Number of coefficients per coordinate (the basis size `s`).
    pub fn block_size(&self) -> usize {
        self.block
    }

    /// Number of trajectory coordinates `q`.
    pub fn dims(&self) -> usize {
        self.coeffs.len() / self.block
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.coeffs.rows(i * self.block, self.block)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    /// Zero-pads every coordinate block to `s_to` coefficients. The trajectory
    /// is unchanged because the basis is nested.
    pub fn include(&self, s_to: usize) -> Result<Self> {
        if s_to < self.block {
            return Err(invalid(
                "s_to",
                format!("inclusion target {s_to} is smaller than the block size {}", self.block),
            ));
        }
        let q = self.dims();
        let mut out = DVector::zeros(q * s_to);
        for i in 0..q {
            out.rows_mut(i * s_to, self.block).copy_from(&self.block(i));
        }
        Ok(Self {
            coeffs: out,
            block: s_to,
        })
    }

    /// Keeps the first `s_to` coefficients of every block; this is the
    /// orthogonal projection onto the smaller span.
    pub fn truncate(&self, s_to: usize) -> Result<Self> {
        if s_to > self.block || s_to == 0 {
            return Err(invalid(
                "s_to",
                format!("truncation target {s_to} must be in 1..={}", self.block),
            ));
        }
        let q = self.dims();
        let mut out = DVector::zeros(q * s_to);
        for i in 0..q {
            out.rows_mut(i * s_to, s_to)
                .copy_from(&self.coeffs.rows(i * self.block, s_to));
        }
        Ok(Self {
            coeffs: out,
            block: s_to,
        })
    }

    fn check_spec(&self, spec: &BasisSpec) -> Result<()> {
        if spec.size() != self.block {
            return Err(mismatch("basis size", self.block, spec.size()));
        }
        Ok(())
    }

    /// Trajectory value `(I_q ⊗ τ(t))ᵀ η`.
    pub fn eval(&self, spec: &BasisSpec, t: f64) -> Result<DVector<f64>> {
        self.check_spec(spec)?;
        let tau = spec.eval(t)?;
        Ok(self.combine(&tau))
    }

    /// Trajectory derivative `(I_q ⊗ Mτ(t))ᵀ η`.
    pub fn eval_derivative(&self, spec: &BasisSpec, t: f64) -> Result<DVector<f64>> {
        self.check_spec(spec)?;
        let dtau = spec.eval_derivative(t)?;
        Ok(self.combine(&dtau))
    }

    /// Per-coordinate dot product with an `s`-vector.
    pub(crate) fn combine(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dims(), |i, _| self.block(i).dot(v))
    }
}

/// Continuous-time LTI plant `ẋ = Ax + Bu`, `x(0) = x0`, with pointwise
/// state and input sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiProblem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x0: DVector<f64>,
    state_set: SetDescription,
    input_set: SetDescription,
}

impl LtiProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        x0: DVector<f64>,
        state_set: SetDescription,
        input_set: SetDescription,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(invalid("A", "state dimension must be at least 1"));
        }
        if a.ncols() != n {
            return Err(mismatch("A", format!("{n}x{n}"), format!("{}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(mismatch("B", format!("{n} rows"), format!("{} rows", b.nrows())));
        }
        if b.ncols() == 0 {
            return Err(invalid("B", "input dimension must be at least 1"));
        }
        if x0.len() != n {
            return Err(mismatch("x0", n, x0.len()));
        }
        if a.iter().chain(b.iter()).chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("problem", "non-finite entry in A, B or x0"));
        }
        state_set.check_dim(n, "state_set")?;
        input_set.check_dim(b.ncols(), "input_set")?;
        Ok(Self {
            a,
            b,
            x0,
            state_set,
            input_set,
        })
    }

    pub fn unconstrained(a: DMatrix<f64>, b: DMatrix<f64>, x0: DVector<f64>) -> Result<Self> {
        Self::new(a, b, x0, SetDescription::Unconstrained, SetDescription::Unconstrained)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn state_set(&self) -> &SetDescription {
        &self.state_set
    }

    pub fn input_set(&self) -> &SetDescription {
        &self.input_set
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_unconstrained(&self) -> bool {
        self.state_set.is_unconstrained() && self.input_set.is_unconstrained()
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            x0,
            self.state_set.clone(),
            self.input_set.clone(),
        )
    }
}

/// `E_x η_x + E_u η_u = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualitySystem {
    pub e_x: DMatrix<f64>,
    pub e_u: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl EqualitySystem {
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    /// `[E_x E_u]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let k = self.rows();
        let (nx, nu) = (self.e_x.ncols(), self.e_u.ncols());
        let mut out = DMatrix::zeros(k, nx + nu);
        out.columns_mut(0, nx).copy_from(&self.e_x);
        out.columns_mut(nx, nu).copy_from(&self.e_u);
        out
    }

    pub fn residual(&self, eta_x: &DVector<f64>, eta_u: &DVector<f64>) -> DVector<f64> {
        &self.e_x * eta_x + &self.e_u * eta_u - &self.rhs
    }
}

/// Constraints of the upper problem: the dynamics rows
/// `(A ⊗ I_s − I_n ⊗ Mᵀ) η_x + (B ⊗ I_s) η_u = 0` followed by the
/// initial-condition rows `(I_n ⊗ τ(0))ᵀ η_x = x0`.
///
/// The residual `Ax̃ + Bũ − ẋ̃` lies in the span of the basis, so any solution
/// satisfies the dynamics pointwise, not only in the weak sense.
pub fn assemble_upper(prob: &LtiProblem, spec: &BasisSpec) -> EqualitySystem {
    let (n, s) = (prob.n(), spec.size());
    let eye_s = DMatrix::<f64>::identity(s, s);
    let eye_n = DMatrix::<f64>::identity(n, n);
    let dyn_x = prob.a().kronecker(&eye_s) - eye_n.kronecker(&spec.generator().transpose());
    let dyn_u = prob.b().kronecker(&eye_s);
    let ic_x = eye_n.kronecker(&spec.tau0().transpose());

    let rows = n * s + n;
    let mut e_x = DMatrix::zeros(rows, n * s);
    e_x.rows_mut(0, n * s).copy_from(&dyn_x);
    e_x.rows_mut(n * s, n).copy_from(&ic_x);
    let mut e_u = DMatrix::zeros(rows, prob.m() * s);
    e_u.rows_mut(0, n * s).copy_from(&dyn_u);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(n * s, n).copy_from(prob.x0());
    EqualitySystem { e_x, e_u, rhs }
}

/// Constraints of the lower problem, the weak form with the initial condition
/// folded in through `M + Mᵀ = −τ(0)τ(0)ᵀ`:
/// `(A ⊗ I_s + I_n ⊗ M) η_x + (B ⊗ I_s) η_u = −(I_n ⊗ τ(0)) x0`.
pub fn assemble_lower(prob: &LtiProblem, spec: &BasisSpec) -> EqualitySystem {
    let (n, s) = (prob.n(), spec.size());
    let eye_s = DMatrix::<f64>::identity(s, s);
    let eye_n = DMatrix::<f64>::identity(n, n);
    let e_x = prob.a().kronecker(&eye_s) + eye_n.kronecker(spec.generator());
    let e_u = prob.b().kronecker(&eye_s);
    let rhs = -(eye_n.kronecker(spec.tau0()) * prob.x0());
    EqualitySystem { e_x, e_u, rhs }
}

/// Galerkin coefficients `∫ (I_q ⊗ τ) f dt` of a function `f: [0, ∞) → ℝ^q`.
///
/// Evaluated with two Gauss–Laguerre orders; fails with
/// [`Error::QuadratureNotConverged`] when they disagree by more than `1e-6`
/// relative. `f` must decay at least exponentially.
pub fn project_function<F>(f: F, q: usize, spec: &BasisSpec) -> Result<ParamVector>
where
    F: Fn(f64) -> DVector<f64>,
{
    let s = spec.size();
    let order = (4 * s).max(80);
    let coarse = project_with_order(&f, q, spec, order)?;
    let fine = project_with_order(&f, q, spec, 2 * order)?;
    let scale = fine.norm().max(1e-300);
    let discrepancy = (&fine - &coarse).norm() / scale;
    if discrepancy > 1e-6 && (&fine - &coarse).norm() > 1e-14 {
        return Err(Error::QuadratureNotConverged { discrepancy });
    }
    ParamVector::new(fine, s)
}

fn project_with_order<F>(f: &F, q: usize, spec: &BasisSpec, order: usize) -> Result<DVector<f64>>
where
    F: Fn(f64) -> DVector<f64>,
{
    let s = spec.size();
    let rule = GaussLaguerre::new(order)?;
    let mut out = DVector::zeros(q * s);
    for (t, w) in rule.points_with_rate(spec.p()) {
        let value = f(t);
        if value.len() != q {
            return Err(mismatch("f(t)", q, value.len()));
        }
        let tau = spec.eval_unchecked(t);
        for i in 0..q {
            out.rows_mut(i * s, s).axpy(w * value[i], &tau, 1.0);
        }
    }
    Ok(out)
}

/// Uniform grid of `points` times on `[0, 20/p]`.
pub fn residual_grid(p: f64, points: usize) -> Vec<f64> {
    let horizon = 20.0 / p;
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|k| horizon * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `max_t |A x̃(t) + B ũ(t) − ẋ̃(t)|₂` over `t_grid`.
pub fn dynamics_residual(
    eta_x: &ParamVector,
    eta_u: &ParamVector,
    prob: &LtiProblem,
    spec: &BasisSpec,
    t_grid: &[f64],
) -> Result<f64> {
    check_param(eta_x, prob.n(), spec, "eta_x")?;
    check_param(eta_u, prob.m(), spec, "eta_u")?;
    let mut worst = 0.0_f64;
    for &t in t_grid {
        let tau = spec.eval(t)?;
        let dtau = spec.generator() * &tau;
        let x = eta_x.combine(&tau);
        let u = eta_u.combine(&tau);
        let dx = eta_x.combine(&dtau);
        let r = prob.a() * x + prob.b() * u - dx;
        worst = worst.max(r.norm());
    }
    Ok(worst)
}

pub(crate) fn check_param(eta: &ParamVector, q: usize, spec: &BasisSpec, name: &str) -> Result<()> {
    if eta.block_size() != spec.size() || eta.dims() != q {
        return Err(mismatch(
            name,
            format!("{q} blocks of {}", spec.size()),
            format!("{} blocks of {}", eta.dims(), eta.block_size()),
        ));
    }
    Ok(())
}
