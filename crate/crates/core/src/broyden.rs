//! Broyden's method for square nonlinear systems, using the "good" update of
//! the inverse Jacobian and a backtracking line search on `||f||`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroydenOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Step halvings tried by the line search before giving up on a direction.
    pub max_halvings: usize,
    /// Relative finite-difference step for Jacobian resets.
    pub fd_step: f64,
}

impl Default for BroydenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 200,
            max_halvings: 30,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroydenReport {
    pub x: Vec<f64>,
    pub fx: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Times the inverse Jacobian was rebuilt from finite differences.
    pub jacobian_resets: usize,
    pub evaluations: usize,
}

fn norm(v: &DVector<f64>) -> f64 {
    if v.iter().all(|x| x.is_finite()) {
        v.norm()
    } else {
        f64::INFINITY
    }
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> Vec<f64>> Counted<F> {
    fn eval(&mut self, x: &DVector<f64>) -> DVector<f64> {
        self.calls += 1;
        DVector::from_vec((self.f)(x.as_slice()))
    }
}

fn fd_inverse<F: FnMut(&[f64]) -> Vec<f64>>(
    f: &mut Counted<F>,
    x: &DVector<f64>,
    fx: &DVector<f64>,
    rel_step: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let mut xh = x.clone();
        xh[j] += h;
        let fh = f.eval(&xh);
        for i in 0..n {
            let d = (fh[i] - fx[i]) / h;
            jac[(i, j)] = if d.is_finite() { d } else { 0.0 };
        }
    }
    match jac.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv,
        _ => jac.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::identity(n, n)),
    }
}

/// Solves `f(x) = 0` starting from `x0`. Never panics on a bad `f`: a
/// non-finite value is treated as an infinitely large residual.
pub fn broyden<F>(f: F, x0: &[f64], opts: &BroydenOptions) -> BroydenReport
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut f = Counted { f, calls: 0 };
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f.eval(&x);
    let mut fnorm = norm(&fx);
    let mut resets = 0;
    let mut iterations = 0;

    let report = |x: DVector<f64>, fx: DVector<f64>, fnorm: f64, iterations, converged, resets, calls| BroydenReport {
        x: x.as_slice().to_vec(),
        fx: fx.as_slice().to_vec(),
        residual_norm: fnorm,
        iterations,
        converged,
        jacobian_resets: resets,
        evaluations: calls,
    };

    if n == 0 || fnorm <= opts.tol {
        let calls = f.calls;
        return report(x, fx, fnorm, 0, fnorm <= opts.tol, 0, calls);
    }
    if !fnorm.is_finite() {
        let calls = f.calls;
        return report(x, fx, fnorm, 0, false, 0, calls);
    }

    let mut h = fd_inverse(&mut f, &x, &fx, opts.fd_step);
    resets += 1;
    let mut fresh = true;

    while iterations < opts.max_iters {
        iterations += 1;
        let d = -(&h * &fx);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let xt = &x + &d * t;
            let ft = f.eval(&xt);
            let nt = norm(&ft);
            if nt < fnorm {
                accepted = Some((xt, ft, nt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, n_new)) = accepted else {
            if fresh {
                // A freshly reset Jacobian gives no descent: stagnation.
                break;
            }
            h = fd_inverse(&mut f, &x, &fx, opts.fd_step);
            resets += 1;
            fresh = true;
            continue;
        };

        let s = &x_new - &x;
        let y = &f_new - &fx;
        let hy = &h * &y;
        let denom = s.dot(&hy);
        x = x_new;
        fx = f_new;
        fnorm = n_new;
        if fnorm <= opts.tol {
            let calls = f.calls;
            return report(x, fx, fnorm, iterations, true, resets, calls);
        }
        if denom.abs() > 1e-14 * s.norm() * hy.norm() && denom.is_finite() {
            let sh = s.transpose() * &h;
            h += (&s - &hy) * sh / denom;
            fresh = false;
        } else {
            h = fd_inverse(&mut f, &x, &fx, opts.fd_step);
            resets += 1;
            fresh = true;
        }
    }
    let calls = f.calls;
    report(x, fx, fnorm, iterations, false, resets, calls)
}
