//! Quasi-Newton minimizer: BFGS on the inverse Hessian with a
//! cubic-interpolation line search enforcing the strong Wolfe conditions
//! (Nocedal & Wright, Algorithms 3.5/3.6). Gradients come from the caller;
//! directional derivatives inside the line search use central differences
//! along the search direction, which costs two function values instead of a
//! full gradient.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

pub const FD_REL_STEP: f64 = 6.055_454_452_393_339e-6;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const ALPHA_MAX: f64 = 1e3;
const MAX_LINE_TRIALS: usize = 25;
const MAX_ZOOM: usize = 40;

/// Minimization target. `value` may return +inf or NaN for points outside
/// the usable region; the line search backs off from them.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Central finite-difference gradient with the step scaled per coordinate,
/// evaluated coordinate-parallel.
pub fn fd_gradient<F>(f: F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            let mut up = x.to_vec();
            up[i] += h;
            let mut dn = x.to_vec();
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Central second-difference Hessian, evaluated pair-parallel.
pub fn fd_hessian<F>(f: F, x: &[f64], rel_step: f64) -> Array2<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let k = x.len();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i..k).map(move |j| (i, j)))
        .collect();
    let entries: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let hi = steps[i];
            let hj = steps[j];
            let v = if i == j {
                let mut up = x.to_vec();
                up[i] += hi;
                let mut dn = x.to_vec();
                dn[i] -= hi;
                (f(&up) - 2.0 * f0 + f(&dn)) / (hi * hi)
            } else {
                let mut pp = x.to_vec();
                pp[i] += hi;
                pp[j] += hj;
                let mut pm = x.to_vec();
                pm[i] += hi;
                pm[j] -= hj;
                let mut mp = x.to_vec();
                mp[i] -= hi;
                mp[j] += hj;
                let mut mm = x.to_vec();
                mm[i] -= hi;
                mm[j] -= hj;
                (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * hi * hj)
            };
            ((i, j), v)
        })
        .collect();
    let mut h = Array2::<f64>::zeros((k, k));
    for ((i, j), v) in entries {
        h[[i, j]] = v;
        h[[j, i]] = v;
    }
    h
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    /// Initial inverse-Hessian diagonal (a preconditioner, e.g. reciprocal
    /// curvatures measured at the start point). Identity when absent.
    pub h0_diag: Option<Vec<f64>>,
    /// Print one diagnostic line per iteration to stderr.
    pub trace: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tolerance: 1e-6,
            h0_diag: None,
            trace: false,
        }
    }
}

fn sanitized(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

struct LinePoint {
    alpha: f64,
    value: f64,
}

/// Minimize with BFGS. Accepted steps always satisfy the Armijo condition,
/// so the objective is non-increasing across iterations.
pub fn minimize<O: Objective>(obj: &O, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "start point dimension mismatch");
    let mut x = Array1::from(x0.to_vec());
    let mut f = sanitized(obj.value(x.as_slice().unwrap()));
    let mut g = Array1::from(obj.gradient(x.as_slice().unwrap()));
    let preconditioner = opts.h0_diag.as_ref().filter(|d| {
        d.len() == n && d.iter().all(|v| v.is_finite() && *v > 0.0)
    });
    let fresh_h = || -> Array2<f64> {
        match preconditioner {
            Some(d) => Array2::from_diag(&Array1::from(d.clone())),
            None => Array2::eye(n),
        }
    };
    let mut h_inv = fresh_h();
    let mut first_update_pending = preconditioner.is_none();

    let mut best_x = x.clone();
    let mut best_f = f;

    let phi = |x_base: &Array1<f64>, d: &Array1<f64>, alpha: f64| -> f64 {
        let trial = x_base + &(d * alpha);
        sanitized(obj.value(trial.as_slice().unwrap()))
    };
    // directional derivative by central differences along d
    let dphi = |x_base: &Array1<f64>, d: &Array1<f64>, alpha: f64, d_norm: f64| -> f64 {
        let h = FD_REL_STEP * (1.0 + alpha.abs()) / d_norm.max(1e-12);
        (phi(x_base, d, alpha + h) - phi(x_base, d, alpha - h)) / (2.0 * h)
    };

    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..opts.max_iterations {
        iterations = iter;
        let grad_norm = g.dot(&g).sqrt();
        if !grad_norm.is_finite() {
            break;
        }
        if grad_norm <= opts.grad_tolerance {
            converged = true;
            break;
        }

        let mut d = -h_inv.dot(&g);
        let mut dphi0 = g.dot(&d);
        if !(dphi0 < 0.0) {
            // curvature information went bad; restart the approximation
            h_inv = fresh_h();
            first_update_pending = preconditioner.is_none();
            d = -h_inv.dot(&g);
            dphi0 = g.dot(&d);
            if !(dphi0 < 0.0) {
                break;
            }
        }
        let d_norm = d.dot(&d).sqrt();
        let alpha_init = if iter == 0 {
            (1.0 / d_norm.max(1.0)).min(1.0)
        } else {
            1.0
        };

        let accepted = line_search(
            &phi,
            &dphi,
            &x,
            &d,
            d_norm,
            f,
            dphi0,
            alpha_init,
        );
        let (alpha, f_new) = match accepted {
            Some(pt) => (pt.alpha, pt.value),
            None => break,
        };
        if opts.trace {
            eprintln!(
                "iter {iter:4}  f {f:+.10e}  |g| {grad_norm:.3e}  alpha {alpha:.3e}  step {:.3e}",
                alpha * d_norm
            );
        }

        let x_new = &x + &(&d * alpha);
        let g_new = Array1::from(obj.gradient(x_new.as_slice().unwrap()));
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.dot(&s).sqrt() * y.dot(&y).sqrt() {
            if first_update_pending {
                let scale = sy / y.dot(&y);
                if scale.is_finite() && scale > 0.0 {
                    h_inv = Array2::eye(n) * scale;
                }
                first_update_pending = false;
            }
            let rho = 1.0 / sy;
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let hy = h_inv.dot(&y);
            let yhy = y.dot(&hy);
            let n_dim = n;
            for i in 0..n_dim {
                for j in 0..n_dim {
                    h_inv[[i, j]] += rho * rho * yhy * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * s[i] * s[j];
                }
            }
        }

        x = x_new;
        f = f_new;
        g = g_new;
        if f < best_f {
            best_f = f;
            best_x = x.clone();
        }
        iterations = iter + 1;
    }

    if !converged && f > best_f {
        x = best_x;
        f = best_f;
        g = Array1::from(obj.gradient(x.as_slice().unwrap()));
    }
    let grad_norm = g.dot(&g).sqrt();
    OptimResult {
        x: x.to_vec(),
        value: f,
        grad_norm,
        iterations,
        converged: converged || grad_norm <= opts.grad_tolerance,
    }
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn line_search(
    phi: &dyn Fn(&Array1<f64>, &Array1<f64>, f64) -> f64,
    dphi: &dyn Fn(&Array1<f64>, &Array1<f64>, f64, f64) -> f64,
    x: &Array1<f64>,
    d: &Array1<f64>,
    d_norm: f64,
    f0: f64,
    dphi0: f64,
    alpha_init: f64,
) -> Option<LinePoint> {
    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut alpha = alpha_init.clamp(1e-16, ALPHA_MAX);
    for trial in 0..MAX_LINE_TRIALS {
        let f_a = phi(x, d, alpha);
        if f_a > f0 + C1 * alpha * dphi0 || (trial > 0 && f_a >= f_prev) {
            return zoom(
                phi, dphi, x, d, d_norm, f0, dphi0, alpha_prev, f_prev, alpha, f_a,
            );
        }
        let dphi_a = dphi(x, d, alpha, d_norm);
        if dphi_a.abs() <= -C2 * dphi0 {
            return Some(LinePoint {
                alpha,
                value: f_a,
            });
        }
        if dphi_a >= 0.0 {
            return zoom(
                phi, dphi, x, d, d_norm, f0, dphi0, alpha, f_a, alpha_prev, f_prev,
            );
        }
        alpha_prev = alpha;
        f_prev = f_a;
        alpha = (2.0 * alpha).min(ALPHA_MAX);
        if alpha >= ALPHA_MAX && trial > 3 {
            return Some(LinePoint {
                alpha: alpha_prev,
                value: f_prev,
            });
        }
    }
    if f_prev < f0 {
        return Some(LinePoint {
            alpha: alpha_prev,
            value: f_prev,
        });
    }
    None
}

// cubic minimizer of the interpolant through (a, fa, da) and (b, fb, db),
// falling back to bisection when degenerate (Nocedal & Wright eq. 3.59)
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return 0.5 * (a + b);
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let step = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    if !step.is_finite() {
        return 0.5 * (a + b);
    }
    // keep the trial safely interior
    let lo = a.min(b);
    let hi = a.max(b);
    let margin = 0.1 * (hi - lo);
    step.clamp(lo + margin, hi - margin)
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn zoom(
    phi: &dyn Fn(&Array1<f64>, &Array1<f64>, f64) -> f64,
    dphi: &dyn Fn(&Array1<f64>, &Array1<f64>, f64, f64) -> f64,
    x: &Array1<f64>,
    d: &Array1<f64>,
    d_norm: f64,
    f0: f64,
    dphi0: f64,
    mut alpha_lo: f64,
    mut f_lo: f64,
    mut alpha_hi: f64,
    mut f_hi: f64,
) -> Option<LinePoint> {
    let mut dphi_lo = dphi(x, d, alpha_lo, d_norm);
    for _ in 0..MAX_ZOOM {
        if (alpha_hi - alpha_lo).abs() * d_norm < 1e-14 {
            break;
        }
        let dphi_hi = dphi(x, d, alpha_hi, d_norm);
        let alpha_j = cubic_step(alpha_lo, f_lo, dphi_lo, alpha_hi, f_hi, dphi_hi);
        let f_j = phi(x, d, alpha_j);
        if f_j > f0 + C1 * alpha_j * dphi0 || f_j >= f_lo {
            alpha_hi = alpha_j;
            f_hi = f_j;
        } else {
            let dphi_j = dphi(x, d, alpha_j, d_norm);
            if dphi_j.abs() <= -C2 * dphi0 {
                return Some(LinePoint {
                    alpha: alpha_j,
                    value: f_j,
                });
            }
            if dphi_j * (alpha_hi - alpha_lo) >= 0.0 {
                alpha_hi = alpha_lo;
                f_hi = f_lo;
            }
            alpha_lo = alpha_j;
            f_lo = f_j;
            dphi_lo = dphi_j;
        }
    }
    if f_lo < f0 && alpha_lo > 0.0 {
        Some(LinePoint {
            alpha: alpha_lo,
            value: f_lo,
        })
    } else {
        None
    }
}
