//! Joint likelihood for the misclassified-outcome model and its maximizer.
//!
//! The final-stage outcome model is `P(Y=1 | h, a) = expit(beta' h0 + (psi' h1) a)`.
//! With surrogate outcomes observed everywhere and true outcomes only on the
//! validation block, the total log-likelihood adds, per validation row,
//!
//! ```text
//!   y* y  log[(1-g01) p] + y*(1-y) log[g10 (1-p)]
//! + (1-y*) y log[g01 p]  + (1-y*)(1-y) log[(1-g10)(1-p)]
//! ```
//!
//! and, per main-study row,
//!
//! ```text
//!   y* log[g10 + (1-g10-g01) p] + (1-y*) log[(1-g10) - (1-g10-g01) p]
//! ```
//!
//! where `(g10, g01)` are the misclassification rates. The rates are optimized
//! on the logit scale so the problem is unconstrained; the monotonicity
//! condition `g10 + g01 < 1` is checked after the fact and reported, never
//! imposed. Optimization is quasi-Newton (BFGS) with the analytic gradient and
//! a backtracking line search, multi-started from the naive and
//! validation-only logistic fits.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::core::{MisclassRates, Stage, StageColumns, StageModel, StudyDataset};
use crate::glm::{fit_logistic, GlmError, GlmOptions};
use crate::linalg::QrPivot;
use crate::num::{expit, log1p_exp, logit, real, Scalar};

mod optim;

pub use optim::{MinimizeOptions, MinimizeResult};

/// Floor applied to log arguments (and matching divisors) in clamp mode.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MisLikError {
    #[error(transparent)]
    Core(#[from] crate::core::CoreError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error("misclassification rates are not identifiable without validation data; fix them or supply n_v >= 1")]
    NotIdentifiable,
    #[error("log-likelihood term underflowed (argument <= {LOG_FLOOR}) in strict mode")]
    LogUnderflow,
    #[error("surrogate outcome missing on trajectory {0}")]
    MissingSurrogate(usize),
    #[error("non-finite log-likelihood or gradient at the requested parameters")]
    NonFinite,
    #[error("no optimizer start could be constructed: {0}")]
    NoUsableStart(String),
}

/// How to treat log-argument underflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClampMode {
    /// Clamp arguments below [`LOG_FLOOR`] and count the occurrences.
    #[default]
    Clamp,
    /// Error out instead.
    Strict,
}

/// Misclassification-rate block of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec<F> {
    /// Rates estimated on the logit scale.
    Free { logit10: F, logit01: F },
    /// Rates held fixed (the sensitivity-analysis mode).
    Fixed(MisclassRates<F>),
}

impl<F: Scalar> GammaSpec<F> {
    pub fn free_from_rates(gamma10: F, gamma01: F) -> Self {
        GammaSpec::Free { logit10: logit(gamma10), logit01: logit(gamma01) }
    }

    /// Implied `(gamma10, gamma01)` on the probability scale.
    pub fn rates(&self) -> (F, F) {
        match self {
            GammaSpec::Free { logit10, logit01 } => (expit(*logit10), expit(*logit01)),
            GammaSpec::Fixed(r) => (r.gamma10(), r.gamma01()),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, GammaSpec::Fixed(_))
    }
}

/// Full parameter vector of the corrected model.
#[derive(Debug, Clone, PartialEq)]
pub struct MisLikParams<F> {
    pub beta: Array1<F>,
    pub psi: Array1<F>,
    pub gamma: GammaSpec<F>,
}

impl<F: Scalar> MisLikParams<F> {
    fn pack(&self) -> Array1<F> {
        let extra = if self.gamma.is_fixed() { 0 } else { 2 };
        let mut x = Array1::zeros(self.beta.len() + self.psi.len() + extra);
        for (i, b) in self.beta.iter().enumerate() {
            x[i] = *b;
        }
        for (i, p) in self.psi.iter().enumerate() {
            x[self.beta.len() + i] = *p;
        }
        if let GammaSpec::Free { logit10, logit01 } = self.gamma {
            x[self.beta.len() + self.psi.len()] = logit10;
            x[self.beta.len() + self.psi.len() + 1] = logit01;
        }
        x
    }

    fn unpack(x: &Array1<F>, kb: usize, kp: usize, template: &GammaSpec<F>) -> Self {
        let beta = Array1::from_iter(x.iter().take(kb).copied());
        let psi = Array1::from_iter(x.iter().skip(kb).take(kp).copied());
        let gamma = match template {
            GammaSpec::Fixed(r) => GammaSpec::Fixed(*r),
            GammaSpec::Free { .. } => GammaSpec::Free { logit10: x[kb + kp], logit01: x[kb + kp + 1] },
        };
        MisLikParams { beta, psi, gamma }
    }
}

/// Final-stage design plus outcomes, the input to likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Stage2Data<F> {
    pub treatment_free: Array2<F>,
    pub blip: Array2<F>,
    pub treatment: Array1<F>,
    /// Surrogate outcome for every row.
    pub surrogate: Vec<bool>,
    /// True outcome for the first `n_v` rows.
    pub truth: Vec<bool>,
    pub n_v: usize,
}

impl<F: Scalar> Stage2Data<F> {
    /// Builds the evaluation data from a dataset and a stage layout.
    pub fn from_dataset(
        dataset: &StudyDataset<F>,
        columns: &StageColumns,
        stage: Stage,
    ) -> Result<Self, MisLikError> {
        let design = crate::core::build_design_rows(dataset, columns, stage)?;
        let mut surrogate = Vec::with_capacity(dataset.n());
        for (i, t) in dataset.trajectories().iter().enumerate() {
            surrogate.push(t.surrogate_outcome().ok_or(MisLikError::MissingSurrogate(i))?);
        }
        let truth: Vec<bool> =
            dataset.validation().iter().map(|t| t.true_outcome().expect("validated")).collect();
        Ok(Stage2Data {
            treatment_free: design.treatment_free,
            blip: design.blip,
            treatment: design.treatment,
            surrogate,
            truth,
            n_v: dataset.n_validation(),
        })
    }

    pub fn n(&self) -> usize {
        self.surrogate.len()
    }

    fn dims(&self) -> (usize, usize) {
        (self.treatment_free.ncols(), self.blip.ncols())
    }

    fn linear_predictor(&self, params: &MisLikParams<F>) -> Array1<F> {
        let mut eta = self.treatment_free.dot(&params.beta);
        let blip = self.blip.dot(&params.psi);
        for i in 0..eta.len() {
            eta[i] += blip[i] * self.treatment[i];
        }
        eta
    }
}

/// Probability of the surrogate taking value 1 given the true-outcome
/// probability: `g10 + (1 - g10 - g01) p`.
#[inline]
pub fn surrogate_prob<F: Scalar>(p_true: F, rates: &MisclassRates<F>) -> F {
    rates.gamma10() + (F::one() - rates.gamma10() - rates.gamma01()) * p_true
}

/// A log-likelihood value plus the number of clamped terms.
#[derive(Debug, Clone, Copy)]
pub struct LikValue<F> {
    pub value: F,
    pub clamped_terms: usize,
}

struct Clamper<F> {
    mode: ClampMode,
    floor: F,
    count: usize,
    underflow: bool,
}

impl<F: Scalar> Clamper<F> {
    fn new(mode: ClampMode) -> Self {
        Clamper { mode, floor: real(LOG_FLOOR), count: 0, underflow: false }
    }

    #[inline]
    fn guard(&mut self, x: F) -> F {
        if x < self.floor {
            self.count += 1;
            if self.mode == ClampMode::Strict {
                self.underflow = true;
            }
            self.floor
        } else {
            x
        }
    }
}

/// Total log-likelihood of the corrected model.
pub fn log_likelihood<F: Scalar>(
    params: &MisLikParams<F>,
    data: &Stage2Data<F>,
    mode: ClampMode,
) -> Result<LikValue<F>, MisLikError> {
    let (g10, g01) = params.gamma.rates();
    let eta = data.linear_predictor(params);
    let mut clamp = Clamper::new(mode);

    // Per-row gamma factors for the four validation cells.
    let log_1m_g01 = clamp.guard(F::one() - g01).ln();
    let log_g10 = clamp.guard(g10).ln();
    let log_g01 = clamp.guard(g01).ln();
    let log_1m_g10 = clamp.guard(F::one() - g10).ln();

    let mut ll = F::zero();
    for i in 0..data.n() {
        let s = data.surrogate[i];
        if i < data.n_v {
            let y = data.truth[i];
            // log p and log(1-p) are evaluated through log1p_exp, which never
            // underflows; only the gamma factors need the clamp.
            let log_p = -log1p_exp(-eta[i]);
            let log_1m_p = -log1p_exp(eta[i]);
            ll += if y { log_p } else { log_1m_p };
            ll += match (s, y) {
                (true, true) => log_1m_g01,
                (true, false) => log_g10,
                (false, true) => log_g01,
                (false, false) => log_1m_g10,
            };
        } else {
            let p = expit(eta[i]);
            let q = g10 + (F::one() - g10 - g01) * p;
            let arg = if s { q } else { F::one() - q };
            ll += clamp.guard(arg).ln();
        }
    }
    if clamp.underflow {
        return Err(MisLikError::LogUnderflow);
    }
    if !ll.is_finite() {
        return Err(MisLikError::NonFinite);
    }
    Ok(LikValue { value: ll, clamped_terms: clamp.count })
}

/// Analytic gradient of [`log_likelihood`] with respect to the packed
/// parameter vector `(beta, psi[, logit g10, logit g01])`. The rate block is
/// chain-ruled through the logit parameterization and omitted when the rates
/// are fixed.
pub fn log_likelihood_gradient<F: Scalar>(
    params: &MisLikParams<F>,
    data: &Stage2Data<F>,
    mode: ClampMode,
) -> Result<Array1<F>, MisLikError> {
    Ok(value_and_gradient(params, data, mode)?.1)
}

/// Log-likelihood and gradient in one pass.
pub fn value_and_gradient<F: Scalar>(
    params: &MisLikParams<F>,
    data: &Stage2Data<F>,
    mode: ClampMode,
) -> Result<(LikValue<F>, Array1<F>), MisLikError> {
    let (kb, kp) = data.dims();
    let (g10, g01) = params.gamma.rates();
    let free = !params.gamma.is_fixed();
    let eta = data.linear_predictor(params);
    let mut clamp = Clamper::new(mode);

    let log_1m_g01 = clamp.guard(F::one() - g01).ln();
    let log_g10 = clamp.guard(g10).ln();
    let log_g01 = clamp.guard(g01).ln();
    let log_1m_g10 = clamp.guard(F::one() - g10).ln();

    let mut ll = F::zero();
    let n = data.n();
    let mut w = Array1::<F>::zeros(n);
    let mut d10 = F::zero();
    let mut d01 = F::zero();
    let slope = F::one() - g10 - g01;

    for i in 0..n {
        let s = data.surrogate[i];
        let p = expit(eta[i]);
        if i < data.n_v {
            let y = data.truth[i];
            ll += if y { -log1p_exp(-eta[i]) } else { -log1p_exp(eta[i]) };
            let yf = if y { F::one() } else { F::zero() };
            w[i] = yf - p;
            match (s, y) {
                (true, true) => {
                    ll += log_1m_g01;
                    d01 -= F::one() / clamp.guard(F::one() - g01);
                }
                (true, false) => {
                    ll += log_g10;
                    d10 += F::one() / clamp.guard(g10);
                }
                (false, true) => {
                    ll += log_g01;
                    d01 += F::one() / clamp.guard(g01);
                }
                (false, false) => {
                    ll += log_1m_g10;
                    d10 -= F::one() / clamp.guard(F::one() - g10);
                }
            }
        } else {
            let q = g10 + slope * p;
            let (arg, r) = if s {
                let qc = clamp.guard(q);
                (qc, F::one() / qc)
            } else {
                let qc = clamp.guard(F::one() - q);
                (qc, -F::one() / qc)
            };
            ll += arg.ln();
            w[i] = slope * p * (F::one() - p) * r;
            d10 += r * (F::one() - p);
            d01 -= r * p;
        }
    }
    if clamp.underflow {
        return Err(MisLikError::LogUnderflow);
    }

    let mut grad = Array1::zeros(kb + kp + if free { 2 } else { 0 });
    let gb = data.treatment_free.t().dot(&w);
    let wa: Array1<F> =
        w.iter().zip(data.treatment.iter()).map(|(wi, ai)| *wi * *ai).collect();
    let gp = data.blip.t().dot(&wa);
    for j in 0..kb {
        grad[j] = gb[j];
    }
    for j in 0..kp {
        grad[kb + j] = gp[j];
    }
    if free {
        grad[kb + kp] = d10 * g10 * (F::one() - g10);
        grad[kb + kp + 1] = d01 * g01 * (F::one() - g01);
    }
    if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(MisLikError::NonFinite);
    }
    Ok((LikValue { value: ll, clamped_terms: clamp.count }, grad))
}

/// Controls for [`fit_mle`].
#[derive(Debug, Clone)]
pub struct MisLikOptions<F> {
    pub max_iter: usize,
    /// Converged when `||grad||_inf <= grad_tol_rel * max(1, |logL|)`.
    pub grad_tol_rel: F,
    pub clamp: ClampMode,
    /// Try both default starts (naive fit; validation fit with cross-table
    /// rates) and keep the better optimum.
    pub multistart: bool,
    /// Explicit start, e.g. a point estimate when refitting bootstrap
    /// resamples. Replaces the default starts unless `multistart` is set.
    pub init: Option<MisLikParams<F>>,
    /// Inverse-Hessian seed for the optimizer, typically taken from the fit
    /// that produced `init`.
    pub init_inverse_hessian: Option<ndarray::Array2<F>>,
    pub glm: GlmOptions<F>,
}

impl<F: Scalar> Default for MisLikOptions<F> {
    fn default() -> Self {
        MisLikOptions {
            max_iter: 500,
            grad_tol_rel: real(1e-6),
            clamp: ClampMode::Clamp,
            multistart: true,
            init: None,
            init_inverse_hessian: None,
            glm: GlmOptions::default(),
        }
    }
}

/// Whether the rates are estimated or held fixed during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMode<F> {
    Free,
    Fixed(MisclassRates<F>),
}

/// A maximum-likelihood fit of the corrected model.
#[derive(Debug, Clone)]
pub struct MleFit<F> {
    pub params: MisLikParams<F>,
    pub log_likelihood: F,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the gradient at the returned parameters.
    pub gradient_norm: F,
    /// True when the mapped-back rates land on `g10 + g01 >= 1`.
    pub monotonicity_violated: bool,
    pub clamped_terms: usize,
    pub(crate) h_inv: ndarray::Array2<F>,
}

impl<F: Scalar> MleFit<F> {
    /// Estimated rates, when they satisfy the monotonicity constraint.
    pub fn rates(&self) -> Option<MisclassRates<F>> {
        let (g10, g01) = self.params.gamma.rates();
        MisclassRates::new(g10, g01).ok()
    }
}

/// Maximizes the corrected log-likelihood over `(beta, psi)` and, unless
/// fixed, the logit-scale rates.
///
/// Free rates require at least one validation row; with fixed rates the
/// validation block may be empty (the sensitivity-analysis mode).
pub fn fit_mle<F: Scalar>(
    data: &Stage2Data<F>,
    gamma: GammaMode<F>,
    options: &MisLikOptions<F>,
) -> Result<MleFit<F>, MisLikError> {
    let (kb, kp) = data.dims();
    let free = matches!(gamma, GammaMode::Free);
    if free && data.n_v == 0 {
        return Err(MisLikError::NotIdentifiable);
    }

    let template = match gamma {
        GammaMode::Free => GammaSpec::Free { logit10: F::zero(), logit01: F::zero() },
        GammaMode::Fixed(r) => GammaSpec::Fixed(r),
    };

    let mut starts: Vec<MisLikParams<F>> = Vec::new();
    if let Some(init) = &options.init {
        starts.push(init.clone());
    }
    if options.init.is_none() || options.multistart {
        starts.extend(default_starts(data, &gamma, &options.glm)?);
    }
    if starts.is_empty() {
        return Err(MisLikError::NoUsableStart("no start available".into()));
    }

    let opts = MinimizeOptions { max_iter: options.max_iter, grad_tol_rel: options.grad_tol_rel };
    let mut strict_err: Option<MisLikError> = None;
    let mut best: Option<MinimizeResult<F>> = None;
    for (si, start) in starts.iter().enumerate() {
        let x0 = start.pack();
        let h0 = if si == 0 && options.init.is_some() {
            options.init_inverse_hessian.clone()
        } else {
            None
        };
        let mut objective = |x: &Array1<F>| {
            let p = MisLikParams::unpack(x, kb, kp, &template);
            match value_and_gradient(&p, data, options.clamp) {
                Ok((lik, grad)) => Some((-lik.value, grad.mapv(|g| -g))),
                Err(MisLikError::NonFinite) => None,
                Err(e) => {
                    strict_err = Some(e);
                    None
                }
            }
        };
        let result = optim::minimize(&mut objective, x0, h0, &opts);
        if let Some(e) = strict_err.take() {
            return Err(e);
        }
        let Some(result) = result else { continue };
        let better = match &best {
            None => true,
            Some(b) => result.value < b.value,
        };
        if better {
            best = Some(result);
        }
    }
    let best = best.ok_or_else(|| {
        MisLikError::NoUsableStart("objective not evaluable at any start".into())
    })?;

    let params = MisLikParams::unpack(&best.x, kb, kp, &template);
    let lik = log_likelihood(&params, data, options.clamp)?;
    let (g10, g01) = params.gamma.rates();
    Ok(MleFit {
        params,
        log_likelihood: lik.value,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.grad_norm_inf,
        monotonicity_violated: free && g10 + g01 >= F::one(),
        clamped_terms: lik.clamped_terms,
        h_inv: best.h_inv,
    })
}

/// Default optimizer starts: (a) the naive logistic fit on the surrogate with
/// rates started at 0.05, and (b) when estimating free rates with validation
/// data, the validation-only logistic fit with rates from the validation
/// cross-table, floored and capped to [0.01, 0.49].
fn default_starts<F: Scalar>(
    data: &Stage2Data<F>,
    gamma: &GammaMode<F>,
    glm_options: &GlmOptions<F>,
) -> Result<Vec<MisLikParams<F>>, MisLikError> {
    let n = data.n();
    let (kb, kp) = data.dims();
    let stacked = |rows: std::ops::Range<usize>| -> Array2<F> {
        let mut d = Array2::zeros((rows.len(), kb + kp));
        for (r, i) in rows.clone().enumerate() {
            for j in 0..kb {
                d[[r, j]] = data.treatment_free[[i, j]];
            }
            for j in 0..kp {
                d[[r, kb + j]] = data.blip[[i, j]] * data.treatment[i];
            }
        }
        d
    };

    let mut starts = Vec::new();
    let naive_design = stacked(0..n);
    let naive = fit_logistic(naive_design.view(), &data.surrogate, glm_options)?;
    let split = |coef: &Array1<F>| {
        (
            Array1::from_iter(coef.iter().take(kb).copied()),
            Array1::from_iter(coef.iter().skip(kb).copied()),
        )
    };
    let (beta, psi) = split(&naive.coefficients);
    let g_init: F = real(0.05);
    starts.push(MisLikParams {
        beta,
        psi,
        gamma: match gamma {
            GammaMode::Fixed(r) => GammaSpec::Fixed(*r),
            GammaMode::Free => GammaSpec::free_from_rates(g_init, g_init),
        },
    });

    if matches!(gamma, GammaMode::Free) && data.n_v >= kb + kp {
        let val_design = stacked(0..data.n_v);
        if let Ok(val_fit) = fit_logistic(val_design.view(), &data.truth, glm_options) {
            let (beta, psi) = split(&val_fit.coefficients);
            let (g10, g01) = cross_table_rates(data);
            starts.push(MisLikParams { beta, psi, gamma: GammaSpec::free_from_rates(g10, g01) });
        }
    }
    Ok(starts)
}

/// Validation cross-table estimates of the rates:
/// `#(y*=1, y=0) / #(y=0)` and `#(y*=0, y=1) / #(y=1)`, clamped to
/// `[0.01, 0.49]`.
fn cross_table_rates<F: Scalar>(data: &Stage2Data<F>) -> (F, F) {
    let mut n0 = 0usize;
    let mut n1 = 0usize;
    let mut flip01 = 0usize;
    let mut flip10 = 0usize;
    for i in 0..data.n_v {
        if data.truth[i] {
            n1 += 1;
            if !data.surrogate[i] {
                flip10 += 1;
            }
        } else {
            n0 += 1;
            if data.surrogate[i] {
                flip01 += 1;
            }
        }
    }
    let est = |num: usize, den: usize| -> F {
        let raw = if den == 0 { 0.05 } else { num as f64 / den as f64 };
        real(raw.clamp(0.01, 0.49))
    };
    (est(flip01, n0), est(flip10, n1))
}

/// Runtime diagnostics for the identifiability conditions that are checkable
/// from data: design rank and conditioning, the monotonicity margin, and
/// fitted probabilities sitting on the boundary of (0, 1).
#[derive(Debug, Clone)]
pub struct IdentifiabilityReport<F> {
    pub design_rank: usize,
    pub design_columns: usize,
    pub condition_estimate: F,
    /// `1 - (g10 + g01)`; non-positive means the monotonicity condition fails.
    pub monotonicity_margin: F,
    pub monotonicity_violated: bool,
    /// Number of fitted probabilities within 1e-6 of 0 or 1.
    pub boundary_probabilities: usize,
}

impl<F: Scalar> IdentifiabilityReport<F> {
    pub fn rank_deficient(&self) -> bool {
        self.design_rank < self.design_columns
    }

    pub fn all_checks_pass(&self) -> bool {
        !self.rank_deficient() && !self.monotonicity_violated && self.boundary_probabilities == 0
    }
}

/// Diagnostic checks for a fitted (or hypothesized) stage model and rate
/// estimates against the identifiability conditions.
pub fn check_identifiability<F: Scalar>(
    dataset: &StudyDataset<F>,
    model: &StageModel<F>,
    stage: Stage,
    gamma10: F,
    gamma01: F,
) -> Result<IdentifiabilityReport<F>, MisLikError> {
    let design = crate::core::build_design_rows(dataset, model.columns(), stage)?;
    let n = dataset.n();
    let kb = design.treatment_free.ncols();
    let kp = design.blip.ncols();
    let mut stacked = Array2::zeros((n, kb + kp));
    for i in 0..n {
        for j in 0..kb {
            stacked[[i, j]] = design.treatment_free[[i, j]];
        }
        for j in 0..kp {
            stacked[[i, kb + j]] = design.blip[[i, j]] * design.treatment[i];
        }
    }
    let qr = QrPivot::with_default_tol(stacked.view());

    let boundary_tol: F = real(1e-6);
    let mut boundary = 0usize;
    for i in 0..n {
        let mut eta = F::zero();
        for j in 0..kb {
            eta += model.beta()[j] * design.treatment_free[[i, j]];
        }
        let mut blip = F::zero();
        for j in 0..kp {
            blip += model.psi()[j] * design.blip[[i, j]];
        }
        let p = expit(eta + blip * design.treatment[i]);
        if p < boundary_tol || p > F::one() - boundary_tol {
            boundary += 1;
        }
    }

    let margin = F::one() - gamma10 - gamma01;
    Ok(IdentifiabilityReport {
        design_rank: qr.rank(),
        design_columns: kb + kp,
        condition_estimate: qr.condition_estimate(),
        monotonicity_margin: margin,
        monotonicity_violated: margin <= F::zero(),
        boundary_probabilities: boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{ColumnSpec, MisclassRates, StageColumns, Trajectory, Treatment};
    use crate::glm::bernoulli_log_likelihood;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar oracle: sums the likelihood cell by cell straight
    /// from the four-cell validation table and the two-term main-study form.
    /// Kept free of any shared code with the implementation under test.
    fn brute_force_ll(
        rows_val: &[(bool, bool, f64)],
        rows_main: &[(bool, f64)],
        g10: f64,
        g01: f64,
    ) -> f64 {
        let mut ll = 0.0;
        for &(s, y, p) in rows_val {
            ll += match (s, y) {
                (true, true) => ((1.0 - g01) * p).ln(),
                (true, false) => (g10 * (1.0 - p)).ln(),
                (false, true) => (g01 * p).ln(),
                (false, false) => ((1.0 - g10) * (1.0 - p)).ln(),
            };
        }
        for &(s, p) in rows_main {
            let q = g10 + (1.0 - g10 - g01) * p;
            ll += if s { q.ln() } else { (1.0 - q).ln() };
        }
        ll
    }

    /// Builds Stage2Data whose fitted probabilities are exactly `expit(eta)`
    /// for chosen per-row eta values, via an identity-like design.
    fn data_from_etas(etas_val: &[(bool, bool, f64)], etas_main: &[(bool, f64)]) -> Stage2Data<f64> {
        let n = etas_val.len() + etas_main.len();
        let mut tf = Array2::zeros((n, 1));
        let blip = Array2::zeros((n, 1));
        let treatment = Array1::from_elem(n, 1.0);
        let mut surrogate = Vec::new();
        let mut truth = Vec::new();
        for (i, &(s, y, eta)) in etas_val.iter().enumerate() {
            tf[[i, 0]] = eta;
            surrogate.push(s);
            truth.push(y);
        }
        for (i, &(s, eta)) in etas_main.iter().enumerate() {
            tf[[etas_val.len() + i, 0]] = eta;
            surrogate.push(s);
        }
        Stage2Data { treatment_free: tf, blip, treatment, surrogate, truth, n_v: etas_val.len() }
    }

    fn params_unit_beta(g10: f64, g01: f64) -> MisLikParams<f64> {
        MisLikParams {
            beta: array![1.0],
            psi: array![0.0],
            gamma: GammaSpec::free_from_rates(g10, g01),
        }
    }

    #[test]
    fn surrogate_prob_examples() {
        let r = MisclassRates::<f64>::new(0.0, 0.0).unwrap();
        assert_eq!(surrogate_prob(0.5, &r), 0.5);
        let r = MisclassRates::<f64>::new(0.2, 0.2).unwrap();
        assert!((surrogate_prob(0.5, &r) - 0.5).abs() < 1e-15);
        let r = MisclassRates::<f64>::new(0.1, 0.3).unwrap();
        // Direct evaluation and total-probability enumeration agree.
        assert!((surrogate_prob(0.8, &r) - 0.58).abs() < 1e-15);
        assert!((surrogate_prob(0.8, &r) - (0.7 * 0.8 + 0.1 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_four_row_dataset() {
        // 2 validation rows, 2 main rows, hand-set probabilities. The frozen
        // expected value was computed from the scalar oracle ahead of the
        // implementation.
        let p = |x: f64| logit(x);
        let val = [(true, false, p(0.5)), (false, true, p(0.3))];
        let main = [(true, p(0.8)), (false, p(0.25))];
        let data = data_from_etas(&val, &main);
        let params = params_unit_beta(0.2, 0.1);
        let got = log_likelihood(&params, &data, ClampMode::Strict).unwrap().value;
        let oracle = brute_force_ll(
            &[(true, false, 0.5), (false, true, 0.3)],
            &[(true, 0.8), (false, 0.25)],
            0.2,
            0.1,
        );
        assert!((got - oracle).abs() < 1e-10);
        assert!((got - (-6.553583465261523)).abs() < 1e-10);
    }

    #[test]
    fn single_validation_cell_value() {
        // y*=1, y=0, p=0.5, rates (0.2, 0.1): contribution log(0.2 * 0.5).
        let data = data_from_etas(&[(true, false, 0.0)], &[]);
        let params = params_unit_beta(0.2, 0.1);
        let got = log_likelihood(&params, &data, ClampMode::Strict).unwrap().value;
        assert!((got - 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_oracle_on_random_small_datasets() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..10 {
            let nv = rng.random_range(1..4usize);
            let nm = rng.random_range(0..4usize);
            let val: Vec<(bool, bool, f64)> = (0..nv)
                .map(|_| (rng.random(), rng.random(), rng.random::<f64>() * 0.9 + 0.05))
                .collect();
            let main: Vec<(bool, f64)> =
                (0..nm).map(|_| (rng.random(), rng.random::<f64>() * 0.9 + 0.05)).collect();
            let g10 = rng.random::<f64>() * 0.4 + 0.05;
            let g01 = rng.random::<f64>() * 0.4 + 0.05;
            let val_eta: Vec<(bool, bool, f64)> =
                val.iter().map(|&(s, y, p)| (s, y, logit(p))).collect();
            let main_eta: Vec<(bool, f64)> = main.iter().map(|&(s, p)| (s, logit(p))).collect();
            let data = data_from_etas(&val_eta, &main_eta);
            let params = params_unit_beta(g10, g01);
            let got = log_likelihood(&params, &data, ClampMode::Strict).unwrap().value;
            let want = brute_force_ll(&val, &main, g10, g01);
            assert!((got - want).abs() < 1e-10, "got {got}, oracle {want}");
        }
    }

    fn random_data(n: usize, nv: usize, rng: &mut ChaCha8Rng) -> Stage2Data<f64> {
        let tf = Array2::from_shape_fn((n, 2), |(_, j)| {
            if j == 0 {
                1.0
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        });
        let blip = Array2::from_shape_fn((n, 2), |(_, j)| {
            if j == 0 {
                1.0
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        });
        let treatment =
            Array1::from_shape_fn(n, |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let surrogate = (0..n).map(|_| rng.random()).collect();
        let truth = (0..nv).map(|_| rng.random()).collect();
        Stage2Data { treatment_free: tf, blip, treatment, surrogate, truth, n_v: nv }
    }

    #[test]
    fn reduces_to_bernoulli_when_rates_vanish_and_all_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 60;
        let data = random_data(n, n, &mut rng);
        let beta = array![0.3, -0.7];
        let psi = array![0.4, 0.2];
        let params = MisLikParams {
            beta: beta.clone(),
            psi: psi.clone(),
            gamma: GammaSpec::Fixed(MisclassRates::zero()),
        };
        // With g = 0 and all rows validated, the surrogate equals the truth
        // cell-wise only when y* == y; build that data explicitly.
        let mut data = data;
        data.surrogate = data.truth.clone();
        let got = log_likelihood(&params, &data, ClampMode::Clamp).unwrap().value;
        let eta = data.linear_predictor(&params);
        let want = bernoulli_log_likelihood(eta.view(), &data.truth);
        assert!((got - want).abs() < 1e-10);

        // And the (beta, psi) gradient block equals the logistic score.
        let grad = log_likelihood_gradient(&params, &data, ClampMode::Clamp).unwrap();
        let resid: Array1<f64> = eta
            .iter()
            .zip(&data.truth)
            .map(|(e, &y)| (if y { 1.0 } else { 0.0 }) - expit(*e))
            .collect();
        let gb = data.treatment_free.t().dot(&resid);
        let wa: Array1<f64> =
            resid.iter().zip(data.treatment.iter()).map(|(r, a)| r * a).collect();
        let gp = data.blip.t().dot(&wa);
        for j in 0..2 {
            assert!((grad[j] - gb[j]).abs() < 1e-10);
            assert!((grad[2 + j] - gp[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..20 {
            let n = 40;
            let nv = rng.random_range(5..20usize);
            let data = random_data(n, nv, &mut rng);
            // Include points near the monotonicity boundary (sum ~ 0.95).
            let (g10, g01) = if trial % 4 == 0 {
                (0.55, 0.40)
            } else {
                (rng.random::<f64>() * 0.4 + 0.05, rng.random::<f64>() * 0.4 + 0.05)
            };
            let params = MisLikParams {
                beta: array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
                psi: array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
                gamma: GammaSpec::free_from_rates(g10, g01),
            };
            let grad = log_likelihood_gradient(&params, &data, ClampMode::Strict).unwrap();
            let x0 = params.pack();
            let h = 1e-6;
            for j in 0..x0.len() {
                let mut xp = x0.clone();
                xp[j] += h;
                let mut xm = x0.clone();
                xm[j] -= h;
                let template = params.gamma;
                let fp = log_likelihood(
                    &MisLikParams::unpack(&xp, 2, 2, &template),
                    &data,
                    ClampMode::Strict,
                )
                .unwrap()
                .value;
                let fm = log_likelihood(
                    &MisLikParams::unpack(&xm, 2, 2, &template),
                    &data,
                    ClampMode::Strict,
                )
                .unwrap()
                .value;
                let fd = (fp - fm) / (2.0 * h);
                let denom = grad[j].abs().max(1.0);
                assert!(
                    ((grad[j] - fd) / denom).abs() < 1e-4,
                    "trial {trial} coord {j}: analytic {} fd {}",
                    grad[j],
                    fd
                );
            }
        }
    }

    #[test]
    fn label_swap_symmetry() {
        // Flipping the true outcome, negating (beta, psi), and replacing the
        // rates by (1 - g01, 1 - g10) leaves the likelihood unchanged; the
        // surrogate stays as it is. This is the symmetry that motivates the
        // monotonicity condition.
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let n = 12;
            let nv = rng.random_range(1..8usize);
            let data = random_data(n, nv, &mut rng);
            let g10 = rng.random::<f64>() * 0.4 + 0.05;
            let g01 = rng.random::<f64>() * 0.4 + 0.05;
            let beta = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let psi = array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let params = MisLikParams {
                beta: beta.clone(),
                psi: psi.clone(),
                gamma: GammaSpec::free_from_rates(g10, g01),
            };
            let base = log_likelihood(&params, &data, ClampMode::Strict).unwrap().value;

            let mut swapped = data.clone();
            swapped.truth = data.truth.iter().map(|y| !y).collect();
            let params_swapped = MisLikParams {
                beta: beta.mapv(|b| -b),
                psi: psi.mapv(|p| -p),
                gamma: GammaSpec::free_from_rates(1.0 - g01, 1.0 - g10),
            };
            let flipped =
                log_likelihood(&params_swapped, &swapped, ClampMode::Strict).unwrap().value;
            assert!((base - flipped).abs() < 1e-10, "{base} vs {flipped}");
        }
    }

    #[test]
    fn likelihood_invariant_to_within_block_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_data(20, 8, &mut rng);
        let params = params_for(&data, &mut rng);
        let base = log_likelihood(&params, &data, ClampMode::Clamp).unwrap().value;
        // Reverse each block independently.
        let mut permuted = data.clone();
        let n = data.n();
        let perm: Vec<usize> = (0..8).rev().chain((8..n).rev()).collect();
        let mut tf = Array2::zeros((n, 2));
        let mut blip = Array2::zeros((n, 2));
        let mut a = Array1::zeros(n);
        let mut s = vec![false; n];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for j in 0..2 {
                tf[[new_i, j]] = data.treatment_free[[old_i, j]];
                blip[[new_i, j]] = data.blip[[old_i, j]];
            }
            a[new_i] = data.treatment[old_i];
            s[new_i] = data.surrogate[old_i];
        }
        permuted.treatment_free = tf;
        permuted.blip = blip;
        permuted.treatment = a;
        permuted.surrogate = s;
        permuted.truth = data.truth.iter().rev().copied().collect();
        let shuffled = log_likelihood(&params, &permuted, ClampMode::Clamp).unwrap().value;
        assert!((base - shuffled).abs() < 1e-10);
    }

    fn params_for(data: &Stage2Data<f64>, rng: &mut ChaCha8Rng) -> MisLikParams<f64> {
        let _ = data;
        MisLikParams {
            beta: array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
            psi: array![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5],
            gamma: GammaSpec::free_from_rates(0.15, 0.2),
        }
    }

    #[test]
    fn strict_mode_errors_on_underflow() {
        let data = data_from_etas(&[(false, true, 0.0)], &[]);
        // g01 = 0 makes the (y*=0, y=1) cell impossible.
        let params = MisLikParams {
            beta: array![1.0],
            psi: array![0.0],
            gamma: GammaSpec::Fixed(MisclassRates::new(0.1, 0.0).unwrap()),
        };
        assert!(matches!(
            log_likelihood(&params, &data, ClampMode::Strict),
            Err(MisLikError::LogUnderflow)
        ));
        let clamped = log_likelihood(&params, &data, ClampMode::Clamp).unwrap();
        assert!(clamped.clamped_terms > 0);
        assert!(clamped.value.is_finite());
    }

    fn simulated_dataset(
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (StudyDataset<f64>, StageColumns) {
        let cols = StageColumns {
            treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0), ColumnSpec::Stage1(1)],
            blip: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(1)],
        };
        let mut trajs = Vec::with_capacity(n);
        for _ in 0..n {
            let z = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
            let x = rng.random::<f64>() * 2.0;
            let a = if rng.random::<f64>() < expit(1.0 - x) { Treatment::Pos } else { Treatment::Neg };
            let eta = 1.0 + 0.5 * z - x + (0.5 - 0.5 * x) * a.sign::<f64>();
            let y = rng.random::<f64>() < expit(eta);
            trajs.push(Trajectory::one_stage(vec![z, x], a, Some(y), Some(y)).unwrap());
        }
        (StudyDataset::new(trajs, n).unwrap(), cols)
    }

    #[test]
    fn fixed_zero_rates_full_validation_equals_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (ds, cols) = simulated_dataset(300, &mut rng);
        let data = Stage2Data::from_dataset(&ds, &cols, Stage::One).unwrap();
        let fit = fit_mle(
            &data,
            GammaMode::Fixed(MisclassRates::zero()),
            &MisLikOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);

        let mut stacked = Array2::zeros((300, 5));
        for i in 0..300 {
            for j in 0..3 {
                stacked[[i, j]] = data.treatment_free[[i, j]];
            }
            for j in 0..2 {
                stacked[[i, 3 + j]] = data.blip[[i, j]] * data.treatment[i];
            }
        }
        let glm = fit_logistic(stacked.view(), &data.surrogate, &GlmOptions::default()).unwrap();
        for j in 0..3 {
            assert!((fit.params.beta[j] - glm.coefficients[j]).abs() < 1e-6);
        }
        for j in 0..2 {
            assert!((fit.params.psi[j] - glm.coefficients[3 + j]).abs() < 1e-6);
        }
    }

    #[test]
    fn free_rates_without_validation_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data = random_data(30, 0, &mut rng);
        assert!(matches!(
            fit_mle(&data, GammaMode::Free, &MisLikOptions::default()),
            Err(MisLikError::NotIdentifiable)
        ));
    }

    #[test]
    fn maximizer_location_consistent_under_covariate_rescaling() {
        // Doubling a continuous covariate while halving its coefficient in the
        // initializer leaves fitted probabilities (and the halved coefficient)
        // unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (ds, cols) = simulated_dataset(400, &mut rng);
        let data = Stage2Data::from_dataset(&ds, &cols, Stage::One).unwrap();
        let fit = fit_mle(&data, GammaMode::Free, &MisLikOptions::default()).unwrap();

        let mut scaled = data.clone();
        for i in 0..scaled.treatment_free.nrows() {
            scaled.treatment_free[[i, 2]] *= 2.0;
            scaled.blip[[i, 1]] *= 2.0;
        }
        let mut init = fit.params.clone();
        init.beta[2] /= 2.0;
        init.psi[1] /= 2.0;
        let refit = fit_mle(
            &scaled,
            GammaMode::Free,
            &MisLikOptions { init: Some(init), multistart: false, ..Default::default() },
        )
        .unwrap();
        assert!((refit.params.beta[2] - fit.params.beta[2] / 2.0).abs() < 1e-6);
        assert!((refit.params.psi[1] - fit.params.psi[1] / 2.0).abs() < 1e-6);
        assert!((refit.params.beta[0] - fit.params.beta[0]).abs() < 1e-6);
    }

    #[test]
    fn identifiability_report_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let (ds, cols) = simulated_dataset(200, &mut rng);
        let model = StageModel::new(cols.clone(), array![1.0, 0.5, -1.0], array![0.5, -0.5]).unwrap();
        let ok = check_identifiability(&ds, &model, Stage::One, 0.2, 0.2).unwrap();
        assert!(ok.all_checks_pass(), "{ok:?}");

        // Monotonicity violation flagged.
        let bad = check_identifiability(&ds, &model, Stage::One, 0.6, 0.5).unwrap();
        assert!(bad.monotonicity_violated);

        // Duplicated column flagged as rank deficiency.
        let dup_cols = StageColumns {
            treatment_free: vec![
                ColumnSpec::Intercept,
                ColumnSpec::Stage1(1),
                ColumnSpec::Stage1(1),
            ],
            blip: vec![ColumnSpec::Intercept],
        };
        let dup_model = StageModel::new(dup_cols, array![0.0, 0.0, 0.0], array![0.0]).unwrap();
        let rep = check_identifiability(&ds, &dup_model, Stage::One, 0.1, 0.1).unwrap();
        assert!(rep.rank_deficient());
    }
}
