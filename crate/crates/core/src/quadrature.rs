//! Gauss–Laguerre quadrature on `[0, ∞)`.
//!
//! Nodes come from the symmetric tridiagonal Jacobi matrix of the Laguerre
//! polynomials (Golub–Welsch), refined by Newton steps. Weights are evaluated
//! from the Christoffel function `1/w_k = Σ_{j<n} L_j(u_k)²`, a sum of positive
//! terms, instead of the eigenvector components.
//!
//! The rule stores *scaled* weights `w_k e^{u_k}`, so `integrate` approximates
//! `∫₀^∞ g(u) du` directly for integrands that decay like `e^{-u}` times a
//! polynomial.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Values `e^{-u/2} L_k(u)` for `k = 0..count`, computed with the three-term
/// recurrence and a running exponent so neither the polynomial nor the
/// exponential factor overflows.
pub fn laguerre_functions(u: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    // Unscaled recurrence values are `prev`, `cur`; their true magnitude is
    // multiplied by exp(log_scale).
    let mut log_scale = 0.0_f64;
    let mut prev = 0.0_f64;
    let mut cur = 1.0_f64;
    for k in 0..count {
        out.push(cur * (log_scale - 0.5 * u).exp());
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - u) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e150 {
            prev /= 1e150;
            cur /= 1e150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    out
}

/// Returns `(L_n(u), L_{n-1}(u))` up to a common positive factor.
fn laguerre_pair_scaled(u: f64, n: usize) -> (f64, f64) {
    let mut prev = 0.0_f64;
    let mut cur = 1.0_f64;
    for k in 0..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - u) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e150 {
            prev /= 1e150;
            cur /= 1e150;
        }
    }
    (cur, prev)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussLaguerre {
    nodes: Vec<f64>,
    scaled_weights: Vec<f64>,
}

impl GaussLaguerre {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("order", "quadrature order must be at least 1"));
        }
        let n = order;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            jacobi[(i, i)] = 2.0 * i as f64 + 1.0;
            if i + 1 < n {
                let off = (i + 1) as f64;
                jacobi[(i, i + 1)] = off;
                jacobi[(i + 1, i)] = off;
            }
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        for u in nodes.iter_mut() {
            for _ in 0..6 {
                // u L_n' = n (L_n - L_{n-1})
                let (ln, lnm1) = laguerre_pair_scaled(*u, n);
                let denom = n as f64 * (ln - lnm1);
                if denom == 0.0 {
                    break;
                }
                let step = *u * ln / denom;
                if !step.is_finite() {
                    break;
                }
                *u -= step;
                if step.abs() <= 4.0 * f64::EPSILON * u.abs() {
                    break;
                }
            }
        }

        // Christoffel function: 1/w_k = Σ_j L_j(u_k)², a sum of positive terms.
        let scaled_weights = nodes
            .iter()
            .map(|&u| {
                let sum: f64 = laguerre_functions(u, n).iter().map(|v| v * v).sum();
                1.0 / sum
            })
            .collect();
        Ok(Self {
            nodes,
            scaled_weights,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `w_k e^{u_k}`.
    pub fn scaled_weights(&self) -> &[f64] {
        &self.scaled_weights
    }

    /// Approximates `∫₀^∞ g(u) du`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.scaled_weights)
            .map(|(&u, &w)| w * g(u))
            .sum()
    }

    /// Approximates `∫₀^∞ f(t) dt` after the substitution `u = 2 p t`, which
    /// makes the rule exact for `f = polynomial × e^{-2 p t}`.
    pub fn integrate_with_rate<F: FnMut(f64) -> f64>(&self, p: f64, mut f: F) -> f64 {
        let inv = 1.0 / (2.0 * p);
        self.integrate(|u| f(u * inv)) * inv
    }

    /// Node/weight pairs in the `t` variable for decay rate `p`.
    pub fn points_with_rate(&self, p: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let inv = 1.0 / (2.0 * p);
        self.nodes
            .iter()
            .zip(&self.scaled_weights)
            .map(move |(&u, &w)| (u * inv, w * inv))
    }
}
