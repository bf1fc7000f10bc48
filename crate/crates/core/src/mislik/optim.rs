//! Quasi-Newton minimizer: BFGS on the inverse Hessian with a backtracking
//! Armijo line search. The objective returns `None` where it cannot be
//! evaluated (non-finite); the line search treats that as a too-long step.

use ndarray::{Array1, Array2};

use crate::num::{real, Scalar};

#[derive(Debug, Clone)]
pub struct MinimizeOptions<F> {
    pub max_iter: usize,
    /// Converged when `||g||_inf <= grad_tol_rel * max(1, |f|)`.
    pub grad_tol_rel: F,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult<F> {
    pub x: Array1<F>,
    pub value: F,
    pub grad_norm_inf: F,
    pub iterations: usize,
    pub converged: bool,
    /// Final inverse-Hessian approximation; a good starting metric when
    /// minimizing a nearby objective (bootstrap refits).
    pub h_inv: Array2<F>,
}

fn inf_norm<F: Scalar>(v: &Array1<F>) -> F {
    v.iter().fold(F::zero(), |m, x| m.max(x.abs()))
}

/// Minimizes `objective`, returning `None` only when it cannot be evaluated
/// at the start. Non-convergence within the iteration budget still returns
/// the best point found, flagged through `converged`.
pub(crate) fn minimize<F, E>(
    objective: &mut E,
    x0: Array1<F>,
    h0: Option<Array2<F>>,
    options: &MinimizeOptions<F>,
) -> Option<MinimizeResult<F>>
where
    F: Scalar,
    E: FnMut(&Array1<F>) -> Option<(F, Array1<F>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut scaled_h = h0.is_some();
    let mut h = match h0 {
        Some(h) if h.dim() == (n, n) => h,
        _ => {
            scaled_h = false;
            Array2::<F>::eye(n)
        }
    };
    let c1: F = real(1e-4);
    let half: F = real(0.5);

    let tol = |f: F| options.grad_tol_rel * F::one().max(f.abs());
    let mut iterations = 0;

    for it in 1..=options.max_iter {
        if inf_norm(&g) <= tol(f) {
            let gn = inf_norm(&g);
            return Some(MinimizeResult {
                x,
                value: f,
                grad_norm_inf: gn,
                iterations,
                converged: true,
                h_inv: h,
            });
        }
        iterations = it;

        let mut direction = h.dot(&g).mapv(|v| -v);
        let mut slope = direction.iter().zip(g.iter()).map(|(d, gi)| *d * *gi).sum::<F>();
        if slope >= F::zero() || !slope.is_finite() {
            // Lost positive definiteness; restart from steepest descent.
            h = Array2::eye(n);
            scaled_h = false;
            direction = g.mapv(|v| -v);
            slope = -g.iter().map(|v| *v * *v).sum::<F>();
        }

        // Backtracking Armijo search.
        let mut step = F::one();
        let mut accepted: Option<(Array1<F>, F, Array1<F>)> = None;
        for _ in 0..40 {
            let trial: Array1<F> =
                x.iter().zip(direction.iter()).map(|(xi, di)| *xi + step * *di).collect();
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && ft <= f + c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= half;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No acceptable step; report the current point.
            let gn = inf_norm(&g);
            return Some(MinimizeResult {
                x,
                value: f,
                grad_norm_inf: gn,
                iterations,
                converged: gn <= tol(f),
                h_inv: h,
            });
        };

        let s: Array1<F> = x_new.iter().zip(x.iter()).map(|(a, b)| *a - *b).collect();
        let yv: Array1<F> = g_new.iter().zip(g.iter()).map(|(a, b)| *a - *b).collect();
        let sy = s.iter().zip(yv.iter()).map(|(a, b)| *a * *b).sum::<F>();
        let ss = s.iter().map(|v| *v * *v).sum::<F>().sqrt();
        let yy = yv.iter().map(|v| *v * *v).sum::<F>().sqrt();

        if sy > real::<F>(1e-12) * ss * yy {
            if !scaled_h {
                // One-time scaling of the initial inverse Hessian.
                let y2 = yv.iter().map(|v| *v * *v).sum::<F>();
                if y2 > F::zero() {
                    h = Array2::eye(n) * (sy / y2);
                }
                scaled_h = true;
            }
            // H <- H - rho (s (Hy)' + (Hy) s') + rho (1 + rho y'Hy) s s'
            let rho = F::one() / sy;
            let hy = h.dot(&yv);
            let yhy = yv.iter().zip(hy.iter()).map(|(a, b)| *a * *b).sum::<F>();
            let coef = rho * (F::one() + rho * yhy);
            for i in 0..n {
                for j in 0..n {
                    h[[i, j]] = h[[i, j]] - rho * (s[i] * hy[j] + hy[i] * s[j]) + coef * s[i] * s[j];
                }
            }
        }

        x = x_new;
        f = f_new;
        g = g_new;
    }

    let gn = inf_norm(&g);
    Some(MinimizeResult { x, value: f, grad_norm_inf: gn, iterations, converged: gn <= tol(f), h_inv: h })
}
