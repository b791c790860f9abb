//! Least-distance programming, `min |w| s.t. C w ≤ d`, through nonnegative
//! least squares (Lawson and Hanson's reduction).

use nalgebra::{DMatrix, DVector};

/// Lawson–Hanson active-set NNLS: `min |E u − f|` over `u ≥ 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let n = e.ncols();
    let mut u = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-13 * (1.0 + e.amax()) * (1.0 + f.amax()) * (n as f64).max(1.0);
    let mut iter = 0;
    loop {
        let grad = e.transpose() * (f - e * &u);
        let next = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(t) = next else { break };
        passive[t] = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return u;
            }
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ep = DMatrix::from_fn(e.nrows(), idx.len(), |r, c| e[(r, idx[c])]);
            let Ok(zp) = ep.svd(true, true).solve(f, 1e-14) else {
                return u;
            };
            if zp.iter().all(|&v| v > 0.0) {
                u.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    u[j] = zp[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if zp[k] <= 0.0 {
                    alpha = alpha.min(u[j] / (u[j] - zp[k]));
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                u[j] += alpha * (zp[k] - u[j]);
                if u[j] <= 1e-15 * (1.0 + u.amax()) {
                    u[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    u
}

/// Indices of the constraints that carry weight in the least-distance
/// solution, or `None` when the system looks infeasible.
pub fn active_set(c: &DMatrix<f64>, d: &DVector<f64>) -> Option<Vec<usize>> {
    let (m, n) = c.shape();
    // G w ≥ h with G = −C, h = −d; E = [Gᵀ; hᵀ], f = e_{n+1}
    let e = DMatrix::from_fn(n + 1, m, |r, j| if r < n { -c[(j, r)] } else { -d[j] });
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f, 10 * (m + n) + 100);
    let resid = &e * &u - &f;
    if resid.norm() <= 1e-12 {
        return None;
    }
    Some((0..m).filter(|&j| u[j] > 0.0).collect())
}
