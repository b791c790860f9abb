//! Orthonormal exponential basis on `[0, ∞)`: scaled Laguerre functions
//! `τ_i(t) = √(2p) L_{i-1}(2pt) e^{-pt}`.
//!
//! The family satisfies `τ̇ = M τ` with a lower-triangular generator (diagonal
//! `-p`, strictly lower part `-2p`) and `τ(0) = √(2p)·1`, so the
//! integration-by-parts identity `M + Mᵀ + τ(0)τ(0)ᵀ = 0` holds exactly.
//!
//! Laguerre functions are total in `L²[0, ∞)`; density in the uniform topology
//! on compactly supported smooth functions is assumed, not checked.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::quadrature::{laguerre_functions, GaussLaguerre};

/// Largest supported basis size; orthonormality degrades in double precision beyond it.
pub const MAX_BASIS_SIZE: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    p: f64,
    generator: DMatrix<f64>,
    tau0: DVector<f64>,
}

impl BasisSpec {
    /// Laguerre basis with decay rate `p` and `s` functions.
    pub fn laguerre(p: f64, s: usize) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid("p", format!("decay rate must be positive and finite, got {p}")));
        }
        if s == 0 {
            return Err(invalid("s", "basis size must be at least 1"));
        }
        if s > MAX_BASIS_SIZE {
            return Err(invalid("s", format!("basis size {s} exceeds the cap {MAX_BASIS_SIZE}")));
        }
        let generator = DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                -p
            } else if i > j {
                -2.0 * p
            } else {
                0.0
            }
        });
        let tau0 = DVector::from_element(s, (2.0 * p).sqrt());
        Ok(Self { p, generator, tau0 })
    }

    /// Builds a spec from arbitrary parts without checking the generator
    /// identity. Used for fault injection in self-tests.
    pub fn from_raw_parts(p: f64, generator: DMatrix<f64>, tau0: DVector<f64>) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid("p", format!("decay rate must be positive and finite, got {p}")));
        }
        let s = tau0.len();
        if s == 0 {
            return Err(invalid("tau0", "empty initial vector"));
        }
        if generator.shape() != (s, s) {
            return Err(mismatch("generator", format!("{s}x{s}"), format!("{:?}", generator.shape())));
        }
        Ok(Self { p, generator, tau0 })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn size(&self) -> usize {
        self.tau0.len()
    }

    /// The generator `M` with `τ̇ = M τ`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn tau0(&self) -> &DVector<f64> {
        &self.tau0
    }

    /// `τ(t)`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> DVector<f64> {
        let scale = (2.0 * self.p).sqrt();
        let values = laguerre_functions(2.0 * self.p * t, self.size());
        DVector::from_iterator(self.size(), values.into_iter().map(|v| scale * v))
    }

    /// `τ̇(t) = M τ(t)`.
    pub fn eval_derivative(&self, t: f64) -> Result<DVector<f64>> {
        check_time(t)?;
        Ok(&self.generator * self.eval_unchecked(t))
    }

    /// `∫₀^∞ τ τᵀ dt` by Gauss–Laguerre quadrature of the given order.
    pub fn gram_matrix(&self, quad_order: usize) -> Result<DMatrix<f64>> {
        let s = self.size();
        if quad_order < s {
            return Err(invalid(
                "quad_order",
                format!("quadrature order {quad_order} is below the basis size {s}"),
            ));
        }
        let rule = GaussLaguerre::new(quad_order)?;
        let mut gram = DMatrix::zeros(s, s);
        for (t, w) in rule.points_with_rate(self.p) {
            let tau = self.eval_unchecked(t);
            gram.ger(w, &tau, &tau, 1.0);
        }
        Ok(gram)
    }

    /// `∫₀^∞ τ dt = -M⁻¹ τ(0)`, by forward substitution on the lower-triangular generator.
    pub fn integral(&self) -> DVector<f64> {
        let neg_m = -&self.generator;
        neg_m
            .solve_lower_triangular(&self.tau0)
            .unwrap_or_else(|| DVector::from_element(self.size(), f64::NAN))
    }

    /// `max |M + Mᵀ + τ(0)τ(0)ᵀ|`.
    pub fn generator_identity_residual(&self) -> f64 {
        let r = &self.generator + self.generator.transpose() + &self.tau0 * self.tau0.transpose();
        r.amax()
    }

    /// Returns the spec with `s` functions of the same family.
    pub fn resized(&self, s: usize) -> Result<Self> {
        Self::laguerre(self.p, s)
    }
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(invalid("t", format!("time must be finite, got {t}")));
    }
    if t < 0.0 {
        return Err(invalid("t", format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}
