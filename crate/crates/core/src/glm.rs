//! Plain logistic regression and ordinary least squares.
//!
//! Logistic fitting is iteratively reweighted least squares with step-halving
//! whenever a full step would decrease the log-likelihood. Each weighted
//! solve goes through the pivoted QR of `linalg`, so rank deficiency is
//! detected rather than silently regularized. Complete separation is reported
//! through `separation_flag` (diverging coefficient norm), never truncated,
//! so simulation harnesses can count failed replications.

use ndarray::{Array1, ArrayView1, ArrayView2, CowArray, Ix2};
use thiserror::Error;

use crate::linalg::QrPivot;
use crate::num::{expit, log1p_exp, real, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum GlmError {
    #[error("design matrix is rank deficient (rank {rank} of {columns} columns; first dependent column {column})")]
    RankDeficient { rank: usize, columns: usize, column: usize },
    #[error("design has {rows} rows but {columns} columns; need rows >= columns")]
    InsufficientRows { rows: usize, columns: usize },
    #[error("response length {response} does not match {rows} design rows")]
    ResponseLength { response: usize, rows: usize },
}

/// Iteration controls for [`fit_logistic`].
#[derive(Debug, Clone)]
pub struct GlmOptions<F> {
    /// Convergence tolerance on the max-abs score (gradient) entry.
    pub tol: F,
    pub max_iter: usize,
    /// Max-abs coefficient beyond which the fit is flagged as separated.
    pub separation_threshold: F,
    /// Starting coefficients (zeros when absent); a warm start cuts the
    /// iteration count when refitting resampled data.
    pub init: Option<Array1<F>>,
}

impl<F: Scalar> Default for GlmOptions<F> {
    fn default() -> Self {
        GlmOptions { tol: real(1e-8), max_iter: 100, separation_threshold: real(50.0), init: None }
    }
}

/// A fitted logistic regression.
#[derive(Debug, Clone)]
pub struct GlmFit<F> {
    pub coefficients: Array1<F>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-abs entry of the score vector at the returned coefficients.
    pub max_abs_score: F,
    pub separation_flag: bool,
}

/// Bernoulli log-likelihood of `response` under logits `eta`.
pub fn bernoulli_log_likelihood<F: Scalar>(eta: ArrayView1<F>, response: &[bool]) -> F {
    let mut ll = F::zero();
    for (e, &y) in eta.iter().zip(response) {
        let ye = if y { *e } else { F::zero() };
        ll += ye - log1p_exp(*e);
    }
    ll
}

#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        s += *x * *y;
    }
    s
}

fn eta_into<F: Scalar>(rows: &CowArray<F, Ix2>, beta: &Array1<F>, eta: &mut [F]) {
    let b = beta.as_slice().expect("contiguous");
    for (i, e) in eta.iter_mut().enumerate() {
        *e = dot(rows.row(i).as_slice().expect("row-major"), b);
    }
}

/// Maximum-likelihood logistic regression of a binary response on `design`.
pub fn fit_logistic<F: Scalar>(
    design: ArrayView2<F>,
    response: &[bool],
    options: &GlmOptions<F>,
) -> Result<GlmFit<F>, GlmError> {
    let (n, k) = design.dim();
    if response.len() != n {
        return Err(GlmError::ResponseLength { response: response.len(), rows: n });
    }
    if n < k {
        return Err(GlmError::InsufficientRows { rows: n, columns: k });
    }
    let design = design.as_standard_layout();

    let mut beta: Array1<F> = match &options.init {
        Some(b) if b.len() == k => b.clone(),
        _ => Array1::zeros(k),
    };
    let mut eta = vec![F::zero(); n];
    eta_into(&design, &beta, &mut eta);
    let ll_of = |eta: &[F]| -> F {
        let mut ll = F::zero();
        for (e, &y) in eta.iter().zip(response) {
            ll += (if y { *e } else { F::zero() }) - log1p_exp(*e);
        }
        ll
    };
    let score_of = |eta: &[F], score: &mut Array1<F>| {
        score.fill(F::zero());
        let s = score.as_slice_mut().expect("contiguous");
        for (i, e) in eta.iter().enumerate() {
            let r = (if response[i] { F::one() } else { F::zero() }) - expit(*e);
            for (sj, xj) in s.iter_mut().zip(design.row(i).as_slice().expect("row-major")) {
                *sj += *xj * r;
            }
        }
    };

    let mut ll = ll_of(&eta);
    let mut score = Array1::zeros(k);
    score_of(&eta, &mut score);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    let w_floor: F = real(1e-10);
    let mut wx: Vec<F> = vec![F::zero(); n * k];
    let mut wz: Vec<F> = vec![F::zero(); n];
    let mut trial_eta = vec![F::zero(); n];

    for it in 1..=options.max_iter {
        iterations = it;
        if max_abs(&score) <= options.tol {
            converged = true;
            iterations = it - 1;
            break;
        }

        // Weighted least-squares step: minimize || sqrt(w) (z - X b) ||^2
        // with working response z = eta + (y - p) / w.
        for i in 0..n {
            let p = expit(eta[i]);
            let w = (p * (F::one() - p)).max(w_floor);
            let sw = w.sqrt();
            let y = if response[i] { F::one() } else { F::zero() };
            wz[i] = sw * (eta[i] + (y - p) / w);
            let row = design.row(i);
            let row = row.as_slice().expect("row-major");
            for (j, xj) in row.iter().enumerate() {
                wx[j * n + i] = sw * *xj;
            }
        }
        let qr = QrPivot::factor(std::mem::take(&mut wx), n, k, real(crate::linalg::RANK_REL_TOL));
        if !qr.is_full_rank() {
            return Err(GlmError::RankDeficient {
                rank: qr.rank(),
                columns: k,
                column: qr.deficient_column().unwrap_or(0),
            });
        }
        let proposal = qr.solve(ArrayView1::from(&wz[..])).expect("full-rank solve");
        wx = qr.into_buffer();

        // Step-halving on likelihood decrease.
        let mut step = F::one();
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Array1<F> = beta
                .iter()
                .zip(proposal.iter())
                .map(|(b, p)| *b + step * (*p - *b))
                .collect();
            eta_into(&design, &trial, &mut trial_eta);
            let trial_ll = ll_of(&trial_eta);
            if trial_ll.is_finite() && trial_ll >= ll - real(1e-12) {
                beta = trial;
                std::mem::swap(&mut eta, &mut trial_eta);
                ll = trial_ll;
                accepted = true;
                break;
            }
            step = step * real(0.5);
        }
        if !accepted {
            break;
        }
        score_of(&eta, &mut score);
        if max_abs(&beta) > options.separation_threshold {
            separation = true;
            break;
        }
    }

    let max_abs_score = max_abs(&score);
    if max_abs_score <= options.tol && !separation {
        converged = true;
    }
    Ok(GlmFit { coefficients: beta, converged, iterations, max_abs_score, separation_flag: separation })
}

fn max_abs<F: Scalar>(v: &Array1<F>) -> F {
    v.iter().fold(F::zero(), |m, x| m.max(x.abs()))
}

/// Least-squares coefficients of `response` on `design`.
pub fn fit_ols<F: Scalar>(
    design: ArrayView2<F>,
    response: ArrayView1<F>,
) -> Result<Array1<F>, GlmError> {
    let (n, k) = design.dim();
    if response.len() != n {
        return Err(GlmError::ResponseLength { response: response.len(), rows: n });
    }
    if n < k {
        return Err(GlmError::InsufficientRows { rows: n, columns: k });
    }
    let qr = QrPivot::with_default_tol(design);
    if !qr.is_full_rank() {
        return Err(GlmError::RankDeficient {
            rank: qr.rank(),
            columns: k,
            column: qr.deficient_column().unwrap_or(0),
        });
    }
    Ok(qr.solve(response).expect("full-rank solve"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::logit;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn options() -> GlmOptions<f64> {
        GlmOptions::default()
    }

    #[test]
    fn intercept_only_recovers_sample_logit() {
        let design = Array2::from_elem((8, 1), 1.0);
        let response = [true, true, false, false, false, false, false, false];
        let fit = fit_logistic(design.view(), &response, &options()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - logit(0.25)).abs() < 1e-10);
        assert!((fit.coefficients[0] - (-1.0986122886681098)).abs() < 1e-10);
    }

    fn simulate_logistic(
        n: usize,
        coef: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, Vec<bool>) {
        let k = coef.len();
        let mut x = Array2::zeros((n, k));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x[[i, 0]] = 1.0;
            for j in 1..k {
                x[[i, j]] = rng.random::<f64>() * 2.0 - 1.0;
            }
            let eta: f64 = (0..k).map(|j| coef[j] * x[[i, j]]).sum();
            y.push(rng.random::<f64>() < expit(eta));
        }
        (x, y)
    }

    #[test]
    fn fitted_point_is_a_local_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, y) = simulate_logistic(400, &[0.3, -0.8, 0.5], &mut rng);
        let fit = fit_logistic(x.view(), &y, &options()).unwrap();
        assert!(fit.converged);
        let ll_hat = bernoulli_log_likelihood(x.dot(&fit.coefficients).view(), &y);
        for j in 0..3 {
            for delta in [-0.01, 0.01] {
                let mut b = fit.coefficients.clone();
                b[j] += delta;
                let ll = bernoulli_log_likelihood(x.dot(&b).view(), &y);
                assert!(ll <= ll_hat + 1e-12, "perturbation improved the likelihood");
            }
        }
    }

    #[test]
    fn response_flip_negates_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = simulate_logistic(500, &[0.2, 0.7, -0.4], &mut rng);
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let fit = fit_logistic(x.view(), &y, &options()).unwrap();
        let fit_flip = fit_logistic(x.view(), &flipped, &options()).unwrap();
        for j in 0..3 {
            assert!((fit.coefficients[j] + fit_flip.coefficients[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn warm_start_reaches_the_same_optimum_faster() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (x, y) = simulate_logistic(800, &[0.2, 0.7, -0.4], &mut rng);
        let cold = fit_logistic(x.view(), &y, &options()).unwrap();
        let warm_opts = GlmOptions { init: Some(cold.coefficients.clone()), ..options() };
        let warm = fit_logistic(x.view(), &y, &warm_opts).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= cold.iterations);
        for j in 0..3 {
            assert!((warm.coefficients[j] - cold.coefficients[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicating_rows_leaves_fits_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (x, y) = simulate_logistic(120, &[0.1, 0.6], &mut rng);
        let mut x2 = Array2::zeros((240, 2));
        let mut y2 = Vec::new();
        for i in 0..120 {
            for rep in 0..2 {
                for j in 0..2 {
                    x2[[2 * i + rep, j]] = x[[i, j]];
                }
            }
            y2.push(y[i]);
            y2.push(y[i]);
        }
        let f1 = fit_logistic(x.view(), &y, &options()).unwrap();
        let f2 = fit_logistic(x2.view(), &y2, &options()).unwrap();
        for j in 0..2 {
            assert!((f1.coefficients[j] - f2.coefficients[j]).abs() < 1e-8);
        }
        // Same check for least squares.
        let r: Array1<f64> = (0..120).map(|i| x[[i, 1]] * 2.0 + 0.3).collect();
        let r2: Array1<f64> = (0..240).map(|i| x2[[i, 1]] * 2.0 + 0.3).collect();
        let c1 = fit_ols(x.view(), r.view()).unwrap();
        let c2 = fit_ols(x2.view(), r2.view()).unwrap();
        for j in 0..2 {
            assert!((c1[j] - c2[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_interpolates_square_system() {
        let x: Array2<f64> = array![[1.0, 0.0], [0.0, 1.0]];
        let c = fit_ols(x.view(), array![3.0, 5.0].view()).unwrap();
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_fit_zero_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random::<f64>());
        let truth = array![1.0, -2.5, 0.75];
        let y = x.dot(&truth);
        let c = fit_ols(x.view(), y.view()).unwrap();
        let resid = &y - &x.dot(&c);
        assert!(resid.iter().map(|v| v * v).sum::<f64>() < 1e-10);
    }

    #[test]
    fn ols_invariant_to_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Array2::from_shape_fn((25, 2), |_| rng.random::<f64>());
        let y = Array1::from_shape_fn(25, |_| rng.random::<f64>());
        let c = fit_ols(x.view(), y.view()).unwrap();
        let mut xr = Array2::zeros((25, 2));
        let mut yr = Array1::zeros(25);
        for i in 0..25 {
            for j in 0..2 {
                xr[[24 - i, j]] = x[[i, j]];
            }
            yr[24 - i] = y[i];
        }
        let cr = fit_ols(xr.view(), yr.view()).unwrap();
        for j in 0..2 {
            assert!((c[j] - cr[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = Array2::from_shape_fn((30, 3), |_| rng.random::<f64>());
        for i in 0..30 {
            x[[i, 2]] = x[[i, 1]];
        }
        let y: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        assert!(matches!(
            fit_logistic(x.view(), &y, &options()),
            Err(GlmError::RankDeficient { .. })
        ));
        let r = Array1::zeros(30);
        assert!(matches!(fit_ols(x.view(), r.view()), Err(GlmError::RankDeficient { .. })));
    }

    #[test]
    fn complete_separation_is_flagged() {
        // Perfectly separated data: y = 1 exactly when x > 0.
        let mut x = Array2::zeros((40, 2));
        let mut y = Vec::new();
        for i in 0..40 {
            let v = (i as f64 - 19.5) / 10.0;
            x[[i, 0]] = 1.0;
            x[[i, 1]] = v;
            y.push(v > 0.0);
        }
        let fit = fit_logistic(x.view(), &y, &options()).unwrap();
        assert!(fit.separation_flag);
        assert!(!fit.converged);
    }

    #[test]
    fn f32_instantiation_smoke() {
        let design = Array2::<f32>::from_elem((6, 1), 1.0);
        let response = [true, false, false, true, true, true];
        let opts = GlmOptions::<f32> { tol: 1e-4, ..Default::default() };
        let fit = fit_logistic(design.view(), &response, &opts).unwrap();
        assert!((fit.coefficients[0] - logit(4.0f32 / 6.0)).abs() < 1e-3);
    }
}
