//! Stagewise Q-learning estimators for a binary outcome, with and without
//! misclassification correction, plus regime-prediction metrics.
//!
//! The backward pipeline: fit the final-stage model (logistic for the naive
//! and validation-only methods, the corrected likelihood for `MleCorrected`),
//! build the pseudo-outcome `beta' h20 + |psi' h21|` (the final-stage logit
//! maximized over the action), and regress it by least squares to obtain the
//! first-stage coefficients.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::core::{
    build_design_rows_for, CoreError, MisclassRates, Stage, StageColumns, StageModel,
    StudyDataset, Trajectory, Treatment,
};
use crate::glm::{fit_logistic, fit_ols, GlmError, GlmOptions};
use crate::mislik::{fit_mle, GammaMode, MisLikError, MisLikOptions, MleFit, Stage2Data};
use crate::num::{expit, Scalar};

/// Which estimator fits the final stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ValidationOnly,
    Naive,
    MleCorrected,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ValidationOnly, Method::Naive, Method::MleCorrected];

    pub fn label(&self) -> &'static str {
        match self {
            Method::ValidationOnly => "validation_only",
            Method::Naive => "naive",
            Method::MleCorrected => "mle_corrected",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum QLearnError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{method} stage-{stage} fit failed: {source}")]
    Glm { method: Method, stage: u8, source: GlmError },
    #[error("{method} stage-{stage} fit failed: {source}")]
    MisLik { method: Method, stage: u8, source: MisLikError },
    #[error("{0} requires at least one validation trajectory")]
    NeedsValidation(Method),
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prediction evaluation needs a two-stage fit")]
    TwoStageRequired,
    #[error("counterfactual evaluation requested but no counterfactual law was supplied")]
    MissingCounterfactualLaw,
}

/// Model layout for the whole problem.
#[derive(Debug, Clone)]
pub enum ProblemSpec {
    /// Single decision; the lone stage lives in the trajectory's stage-1
    /// slots and its fit is reported in `QLearnFit::stage2`.
    OneStage { stage: StageColumns },
    TwoStage { stage1: StageColumns, stage2: StageColumns },
}

impl ProblemSpec {
    fn terminal(&self) -> (&StageColumns, Stage) {
        match self {
            ProblemSpec::OneStage { stage } => (stage, Stage::One),
            ProblemSpec::TwoStage { stage2, .. } => (stage2, Stage::Two),
        }
    }
}

/// Options shared by all three estimators.
#[derive(Debug, Clone, Default)]
pub struct QLearnOptions<F: Scalar> {
    /// When set, `MleCorrected` holds the rates fixed at these values
    /// (sensitivity-analysis mode); validation data are then optional.
    pub fixed_rates: Option<MisclassRates<F>>,
    pub glm: GlmOptions<F>,
    pub mislik: MisLikOptions<F>,
}

/// Convergence/stability summary of a Q-learning fit.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub separation_flag: bool,
    pub monotonicity_violated: bool,
    pub iterations: usize,
}

impl FitDiagnostics {
    /// Whether a simulation harness should treat this fit as usable.
    pub fn usable(&self) -> bool {
        self.converged && !self.separation_flag && !self.monotonicity_violated
    }
}

/// A fitted Q-learning model: final stage always, first stage when the
/// problem has two decisions.
#[derive(Debug, Clone)]
pub struct QLearnFit<F: Scalar = crate::Real> {
    pub stage2: StageModel<F>,
    pub stage1: Option<StageModel<F>>,
    pub method: Method,
    pub mle_diagnostics: Option<MleFit<F>>,
    /// Estimated rates when the corrected method estimated them.
    pub gamma_estimates: Option<MisclassRates<F>>,
    pub diagnostics: FitDiagnostics,
}

impl<F: Scalar> QLearnFit<F> {
    /// Blip coefficients in reporting order: final stage first, then stage 1.
    pub fn blip_estimates(&self) -> Vec<F> {
        let mut out: Vec<F> = self.stage2.psi().iter().copied().collect();
        if let Some(s1) = &self.stage1 {
            out.extend(s1.psi().iter().copied());
        }
        out
    }

    /// Decision rules implied by the fitted blips.
    pub fn regime(&self) -> crate::core::Regime<F> {
        crate::core::Regime {
            stage1: self
                .stage1
                .as_ref()
                .map(|m| (m.columns().blip.clone(), m.psi().clone())),
            stage2: (self.stage2.columns().blip.clone(), self.stage2.psi().clone()),
        }
    }
}

/// `expit(beta' h20 + (psi' h21) a2)`, the final-stage outcome probability.
pub fn q2_probability<F: Scalar>(
    h20: ArrayView1<F>,
    h21: ArrayView1<F>,
    a2: Treatment,
    stage2: &StageModel<F>,
) -> Result<F, QLearnError> {
    if h20.len() != stage2.beta().len() {
        return Err(QLearnError::DimensionMismatch { expected: stage2.beta().len(), got: h20.len() });
    }
    if h21.len() != stage2.psi().len() {
        return Err(QLearnError::DimensionMismatch { expected: stage2.psi().len(), got: h21.len() });
    }
    let tf = stage2.beta().dot(&h20);
    let blip = stage2.psi().dot(&h21);
    Ok(expit(tf + blip * a2.sign::<F>()))
}

/// Sign rule for the optimal action: +1 when `psi' h > 0`, otherwise -1
/// (ties included).
pub fn optimal_action<F: Scalar>(psi: ArrayView1<F>, h_blip: ArrayView1<F>) -> Treatment {
    if psi.dot(&h_blip) > F::zero() {
        Treatment::Pos
    } else {
        Treatment::Neg
    }
}

/// The stage-1 pseudo-outcome: the final-stage logit maximized over the
/// action, `beta' h20 + |psi' h21|`.
pub fn pseudo_outcome<F: Scalar>(
    stage2: &StageModel<F>,
    h20: ArrayView1<F>,
    h21: ArrayView1<F>,
) -> Result<F, QLearnError> {
    if h20.len() != stage2.beta().len() {
        return Err(QLearnError::DimensionMismatch { expected: stage2.beta().len(), got: h20.len() });
    }
    if h21.len() != stage2.psi().len() {
        return Err(QLearnError::DimensionMismatch { expected: stage2.psi().len(), got: h21.len() });
    }
    Ok(stage2.beta().dot(&h20) + stage2.psi().dot(&h21).abs())
}

/// Row-binds `[tf | blip * a]`, optionally over a row subset.
fn stacked_rows<F: Scalar>(
    tf: &Array2<F>,
    blip: &Array2<F>,
    a: &Array1<F>,
    rows: Option<usize>,
) -> Array2<F> {
    let n = rows.unwrap_or(a.len());
    let kb = tf.ncols();
    let kp = blip.ncols();
    let mut out = Array2::zeros((n, kb + kp));
    for i in 0..n {
        let orow = out.row_mut(i).into_slice().expect("row-major");
        let trow = tf.row(i);
        let trow = trow.as_slice().expect("row-major");
        orow[..kb].copy_from_slice(trow);
        let brow = blip.row(i);
        let brow = brow.as_slice().expect("row-major");
        for (o, b) in orow[kb..].iter_mut().zip(brow) {
            *o = *b * a[i];
        }
    }
    out
}

fn split_coefficients<F: Scalar>(coef: &Array1<F>, kb: usize) -> (Array1<F>, Array1<F>) {
    (
        Array1::from_iter(coef.iter().take(kb).copied()),
        Array1::from_iter(coef.iter().skip(kb).copied()),
    )
}

/// Precomputed design matrices for the whole pipeline, built once per dataset
/// so that bootstrap refits can gather rows instead of re-evaluating column
/// specifications trajectory by trajectory.
pub(crate) struct FitMatrices<F> {
    pub tf2: Array2<F>,
    pub blip2: Array2<F>,
    pub a2: Array1<F>,
    /// Stage-1 design, present for two-stage problems.
    pub stage1: Option<(Array2<F>, Array2<F>, Array1<F>)>,
    pub ystar: Vec<bool>,
    /// True outcomes for the validation block.
    pub ytrue: Vec<bool>,
    pub n_v: usize,
}

/// Coefficient-level result of one method's pipeline run.
pub(crate) struct CoreFit<F: Scalar> {
    pub beta2: Array1<F>,
    pub psi2: Array1<F>,
    pub stage1: Option<(Array1<F>, Array1<F>)>,
    pub diagnostics: FitDiagnostics,
    pub mle: Option<MleFit<F>>,
    pub gamma_estimates: Option<MisclassRates<F>>,
}

impl<F: Scalar> CoreFit<F> {
    pub fn blips(&self) -> Vec<F> {
        let mut out: Vec<F> = self.psi2.iter().copied().collect();
        if let Some((_, psi1)) = &self.stage1 {
            out.extend(psi1.iter().copied());
        }
        out
    }
}

/// Warm-start information carried into bootstrap refits.
pub(crate) struct WarmStart<F: Scalar> {
    pub stacked2: Array1<F>,
    pub mle: Option<crate::mislik::MisLikParams<F>>,
    pub mle_h: Option<Array2<F>>,
}

impl<F: Scalar> WarmStart<F> {
    pub fn from_core(fit: &CoreFit<F>) -> Self {
        let stacked2 =
            Array1::from_iter(fit.beta2.iter().chain(fit.psi2.iter()).copied());
        WarmStart {
            stacked2,
            mle: fit.mle.as_ref().map(|m| m.params.clone()),
            mle_h: fit.mle.as_ref().map(|m| m.h_inv.clone()),
        }
    }

    pub fn from_fit(fit: &QLearnFit<F>) -> Self {
        let stacked2 = Array1::from_iter(
            fit.stage2.beta().iter().chain(fit.stage2.psi().iter()).copied(),
        );
        WarmStart {
            stacked2,
            mle: fit.mle_diagnostics.as_ref().map(|m| m.params.clone()),
            mle_h: fit.mle_diagnostics.as_ref().map(|m| m.h_inv.clone()),
        }
    }
}

impl<F: Scalar> FitMatrices<F> {
    pub fn from_dataset(
        dataset: &StudyDataset<F>,
        spec: &ProblemSpec,
    ) -> Result<Self, QLearnError> {
        let (terminal_cols, terminal_stage) = spec.terminal();
        let trajectories = dataset.trajectories();
        let d2 = build_design_rows_for(trajectories, terminal_cols, terminal_stage)?;
        let stage1 = match spec {
            ProblemSpec::OneStage { .. } => None,
            ProblemSpec::TwoStage { stage1, .. } => {
                let d1 = build_design_rows_for(trajectories, stage1, Stage::One)?;
                Some((d1.treatment_free, d1.blip, d1.treatment))
            }
        };
        let ystar: Vec<bool> = trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.surrogate_outcome().ok_or(QLearnError::MisLik {
                    method: Method::Naive,
                    stage: 2,
                    source: MisLikError::MissingSurrogate(i),
                })
            })
            .collect::<Result<_, _>>()?;
        let ytrue: Vec<bool> =
            dataset.validation().iter().map(|t| t.true_outcome().expect("validated")).collect();
        Ok(FitMatrices {
            tf2: d2.treatment_free,
            blip2: d2.blip,
            a2: d2.treatment,
            stage1,
            ystar,
            ytrue,
            n_v: dataset.n_validation(),
        })
    }

    pub fn n(&self) -> usize {
        self.ystar.len()
    }

    /// Row-gathered copy: `validation_idx` draws (into the validation block)
    /// come first, then `main_idx` draws.
    pub fn gather(&self, validation_idx: &[usize], main_idx: &[usize]) -> Self {
        let n = validation_idx.len() + main_idx.len();
        let gather2 = |src: &Array2<F>| {
            let k = src.ncols();
            let mut out = Array2::zeros((n, k));
            for (r, &i) in validation_idx.iter().chain(main_idx.iter()).enumerate() {
                out.row_mut(r)
                    .into_slice()
                    .expect("row-major")
                    .copy_from_slice(src.row(i).as_slice().expect("row-major"));
            }
            out
        };
        let gather1 = |src: &Array1<F>| -> Array1<F> {
            validation_idx.iter().chain(main_idx.iter()).map(|&i| src[i]).collect()
        };
        let gather_bool = |src: &[bool]| -> Vec<bool> {
            validation_idx.iter().chain(main_idx.iter()).map(|&i| src[i]).collect()
        };
        FitMatrices {
            tf2: gather2(&self.tf2),
            blip2: gather2(&self.blip2),
            a2: gather1(&self.a2),
            stage1: self
                .stage1
                .as_ref()
                .map(|(tf, blip, a)| (gather2(tf), gather2(blip), gather1(a))),
            ystar: gather_bool(&self.ystar),
            ytrue: validation_idx.iter().map(|&i| self.ytrue[i]).collect(),
            n_v: validation_idx.len(),
        }
    }

    /// Runs one method's pipeline on these matrices.
    pub fn fit(
        &self,
        method: Method,
        options: &QLearnOptions<F>,
        warm: Option<&WarmStart<F>>,
    ) -> Result<CoreFit<F>, QLearnError> {
        let n = self.n();
        let kb = self.tf2.ncols();
        // The validation-only method sees only the validation block.
        let rows = match method {
            Method::ValidationOnly => {
                if self.n_v == 0 {
                    return Err(QLearnError::NeedsValidation(method));
                }
                self.n_v
            }
            _ => n,
        };

        let mut diagnostics = FitDiagnostics::default();
        let mut mle = None;
        let mut gamma_estimates = None;

        let (beta2, psi2) = match method {
            Method::Naive | Method::ValidationOnly => {
                let response: &[bool] = match method {
                    Method::Naive => &self.ystar,
                    _ => &self.ytrue,
                };
                let stacked = stacked_rows(&self.tf2, &self.blip2, &self.a2, Some(rows));
                let mut glm_options = options.glm.clone();
                if let Some(w) = warm {
                    glm_options.init = Some(w.stacked2.clone());
                }
                let fit = fit_logistic(stacked.view(), &response[..rows], &glm_options)
                    .map_err(|e| QLearnError::Glm { method, stage: 2, source: e })?;
                diagnostics.converged = fit.converged;
                diagnostics.separation_flag = fit.separation_flag;
                diagnostics.iterations = fit.iterations;
                split_coefficients(&fit.coefficients, kb)
            }
            Method::MleCorrected => {
                let gamma = match options.fixed_rates {
                    Some(r) => GammaMode::Fixed(r),
                    None => GammaMode::Free,
                };
                if matches!(gamma, GammaMode::Free) && self.n_v == 0 {
                    return Err(QLearnError::NeedsValidation(method));
                }
                let data = Stage2Data {
                    treatment_free: self.tf2.clone(),
                    blip: self.blip2.clone(),
                    treatment: self.a2.clone(),
                    surrogate: self.ystar.clone(),
                    truth: self.ytrue.clone(),
                    n_v: self.n_v,
                };
                let mut mislik_options = options.mislik.clone();
                if let Some(w) = warm {
                    if let Some(p) = &w.mle {
                        mislik_options.init = Some(p.clone());
                        mislik_options.init_inverse_hessian = w.mle_h.clone();
                        mislik_options.multistart = false;
                    }
                }
                let fit = fit_mle(&data, gamma, &mislik_options)
                    .map_err(|e| QLearnError::MisLik { method, stage: 2, source: e })?;
                diagnostics.converged = fit.converged;
                diagnostics.monotonicity_violated = fit.monotonicity_violated;
                diagnostics.iterations = fit.iterations;
                if options.fixed_rates.is_none() {
                    gamma_estimates = fit.rates();
                }
                let coef = (fit.params.beta.clone(), fit.params.psi.clone());
                mle = Some(fit);
                coef
            }
        };

        let stage1 = match &self.stage1 {
            None => None,
            Some((tf1, blip1, a1)) => {
                // Pseudo-outcomes from the fitted final stage, then least
                // squares on the first-stage design.
                let mut pseudo = Array1::zeros(rows);
                for i in 0..rows {
                    let tf = dot_row(&self.tf2, i, &beta2);
                    let blip = dot_row(&self.blip2, i, &psi2);
                    pseudo[i] = tf + blip.abs();
                }
                let stacked = stacked_rows(tf1, blip1, a1, Some(rows));
                let coef = fit_ols(stacked.view(), pseudo.view())
                    .map_err(|e| QLearnError::Glm { method, stage: 1, source: e })?;
                Some(split_coefficients(&coef, tf1.ncols()))
            }
        };

        Ok(CoreFit { beta2, psi2, stage1, diagnostics, mle, gamma_estimates })
    }
}

fn dot_row<F: Scalar>(m: &Array2<F>, i: usize, coef: &Array1<F>) -> F {
    let row = m.row(i);
    let row = row.as_slice().expect("row-major");
    let mut s = F::zero();
    for (x, c) in row.iter().zip(coef.iter()) {
        s += *x * *c;
    }
    s
}

/// Runs the full backward pipeline for one method.
pub fn fit_qlearning<F: Scalar>(
    dataset: &StudyDataset<F>,
    spec: &ProblemSpec,
    method: Method,
    options: &QLearnOptions<F>,
) -> Result<QLearnFit<F>, QLearnError> {
    let matrices = FitMatrices::from_dataset(dataset, spec)?;
    let core = matrices.fit(method, options, None)?;
    let (terminal_cols, _) = spec.terminal();
    let stage2_model = StageModel::new(terminal_cols.clone(), core.beta2, core.psi2)?;
    let stage1_model = match (spec, core.stage1) {
        (ProblemSpec::TwoStage { stage1, .. }, Some((beta1, psi1))) => {
            Some(StageModel::new(stage1.clone(), beta1, psi1)?)
        }
        _ => None,
    };
    Ok(QLearnFit {
        stage2: stage2_model,
        stage1: stage1_model,
        method,
        mle_diagnostics: core.mle,
        gamma_estimates: core.gamma_estimates,
        diagnostics: core.diagnostics,
    })
}

/// The data-generating stage models, used as the reference when scoring
/// estimated regimes.
#[derive(Debug, Clone)]
pub struct TruthModels<F: Scalar> {
    pub stage2: StageModel<F>,
    pub stage1: StageModel<F>,
}

/// Regenerates post-stage-1 covariates for counterfactual action paths.
///
/// Implementations must be deterministic in the supplied RNG; the evaluator
/// replays one per-patient stream across action arms and across the
/// estimated/true paths so that arms share their random draws (common random
/// numbers).
pub trait CounterfactualLaw<F: Scalar> {
    fn stage2_covariates(
        &self,
        trajectory: &Trajectory<F>,
        a1: Treatment,
        rng: &mut ChaCha8Rng,
    ) -> Vec<F>;
}

/// How the second-stage history is formed when scoring a regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistorySource {
    /// Regenerate the stage-2 covariates under each rule's own stage-1 action
    /// through the counterfactual law (common random numbers across arms).
    #[default]
    Counterfactual,
    /// Score on the trajectories exactly as observed.
    Observed,
}

/// How predicted and realized outcomes are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutcomeRule {
    /// Classify both the fitted and the true outcome probability at 0.5.
    #[default]
    ThresholdBoth,
    /// Draw the realized outcome from the true probability instead of
    /// thresholding it (classification of the fitted probability unchanged).
    BernoulliDraw,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub history: HistorySource,
    pub outcome: OutcomeRule,
}

/// Regime and outcome prediction metrics over a test set.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PredictionMetrics {
    pub regime_accuracy_stage2: f64,
    pub regime_accuracy_stage1: f64,
    pub regime_accuracy_both: f64,
    pub outcome_error_rate: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl PredictionMetrics {
    pub const FIELDS: [&'static str; 6] = [
        "regime_accuracy_stage2",
        "regime_accuracy_stage1",
        "regime_accuracy_both",
        "outcome_error_rate",
        "sensitivity",
        "specificity",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.regime_accuracy_stage2,
            self.regime_accuracy_stage1,
            self.regime_accuracy_both,
            self.outcome_error_rate,
            self.sensitivity,
            self.specificity,
        ]
    }
}

/// Scores an estimated two-stage regime against the data-generating one on a
/// test set.
///
/// Per patient: the stage-1 actions come from the estimated and true blip
/// rules on the patient's stage-1 history; the stage-2 history is then formed
/// per [`HistorySource`]; stage-2 actions come from the blip rules on that
/// history; accuracy is the fraction of agreeing actions (both-stage counts
/// joint agreement). Outcome predictions classify the fitted probability
/// under the estimated action path at 0.5 against the reference outcome under
/// the true-optimal action path.
pub fn evaluate_predictions<F: Scalar>(
    fit: &QLearnFit<F>,
    truth: &TruthModels<F>,
    test: &StudyDataset<F>,
    counterfactual: Option<&dyn CounterfactualLaw<F>>,
    options: &EvalOptions,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionMetrics, QLearnError> {
    let stage1_fit = fit.stage1.as_ref().ok_or(QLearnError::TwoStageRequired)?;
    if options.history == HistorySource::Counterfactual && counterfactual.is_none() {
        return Err(QLearnError::MissingCounterfactualLaw);
    }

    let n = test.n();
    let mut agree1 = 0usize;
    let mut agree2 = 0usize;
    let mut agree_both = 0usize;
    let mut errors = 0usize;
    let mut pos_total = 0usize;
    let mut pos_hit = 0usize;
    let mut neg_total = 0usize;
    let mut neg_hit = 0usize;

    let half = crate::num::real::<F>(0.5);

    for t in test.trajectories() {
        if !t.is_two_stage() {
            return Err(QLearnError::TwoStageRequired);
        }
        // Per-patient stream, replayed across arms and paths.
        let patient_seed = rng.random::<u64>();

        let miss = |col: &str| QLearnError::Core(CoreError::MissingCovariate {
            index: 0,
            column: col.into(),
        });

        let a1_est = {
            let blip = stage1_fit.blip_value(t).ok_or_else(|| miss("stage-1 blip"))?;
            if blip > F::zero() { Treatment::Pos } else { Treatment::Neg }
        };
        let a1_true = {
            let blip = truth.stage1.blip_value(t).ok_or_else(|| miss("stage-1 blip"))?;
            if blip > F::zero() { Treatment::Pos } else { Treatment::Neg }
        };

        // Trajectory as seen along an action path.
        let path = |a1: Treatment| -> Trajectory<F> {
            match options.history {
                HistorySource::Observed => t.clone(),
                HistorySource::Counterfactual => {
                    let law = counterfactual.expect("checked above");
                    let mut arm_rng = ChaCha8Rng::seed_from_u64(patient_seed);
                    let covs = law.stage2_covariates(t, a1, &mut arm_rng);
                    t.with_treatment1(a1).with_stage2_covariates(covs)
                }
            }
        };

        let est_path = path(a1_est);
        let true_path = path(a1_true);

        let a2_est = {
            let blip = fit.stage2.blip_value(&est_path).ok_or_else(|| miss("stage-2 blip"))?;
            if blip > F::zero() { Treatment::Pos } else { Treatment::Neg }
        };
        let a2_true = {
            let blip = truth.stage2.blip_value(&true_path).ok_or_else(|| miss("stage-2 blip"))?;
            if blip > F::zero() { Treatment::Pos } else { Treatment::Neg }
        };

        let s1 = a1_est == a1_true;
        let s2 = a2_est == a2_true;
        agree1 += s1 as usize;
        agree2 += s2 as usize;
        agree_both += (s1 && s2) as usize;

        // Fitted probability under the estimated path, true probability under
        // the true-optimal path.
        let p_est = {
            let tf = fit.stage2.treatment_free_value(&est_path).ok_or_else(|| miss("stage-2"))?;
            let blip = fit.stage2.blip_value(&est_path).ok_or_else(|| miss("stage-2"))?;
            expit(tf + blip * a2_est.sign::<F>())
        };
        let p_true = {
            let tf = truth.stage2.treatment_free_value(&true_path).ok_or_else(|| miss("stage-2"))?;
            let blip = truth.stage2.blip_value(&true_path).ok_or_else(|| miss("stage-2"))?;
            expit(tf + blip * a2_true.sign::<F>())
        };
        let predicted = p_est > half;
        let realized = match options.outcome {
            OutcomeRule::ThresholdBoth => p_true > half,
            OutcomeRule::BernoulliDraw => {
                let mut outcome_rng = ChaCha8Rng::seed_from_u64(patient_seed ^ 0x9E37_79B9_7F4A_7C15);
                crate::num::real::<F>(outcome_rng.random::<f64>()) < p_true
            }
        };
        if predicted != realized {
            errors += 1;
        }
        if realized {
            pos_total += 1;
            pos_hit += predicted as usize;
        } else {
            neg_total += 1;
            neg_hit += !predicted as usize;
        }
    }

    let frac = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(PredictionMetrics {
        regime_accuracy_stage2: frac(agree2, n),
        regime_accuracy_stage1: frac(agree1, n),
        regime_accuracy_both: frac(agree_both, n),
        outcome_error_rate: frac(errors, n),
        sensitivity: frac(pos_hit, pos_total),
        specificity: frac(neg_hit, neg_total),
    })
}
