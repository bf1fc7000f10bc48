//! Scenario generators, the Monte Carlo replication harness, and the
//! percentile bootstrap.
//!
//! Reproducibility: every random draw comes from a ChaCha stream keyed by
//! `(seed, replication, purpose, substream)`, so generation, corruption,
//! splitting, bootstrap resampling and counterfactual evaluation are
//! independent named streams and any single replication can be replayed in
//! isolation. Replications run in parallel; results are collected in
//! replication order and reduced sequentially, so summaries are bit-identical
//! across thread counts.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::core::{
    corrupt_outcome, ColumnSpec, MisclassRates, StageColumns, StageModel, StudyDataset,
    Trajectory, Treatment,
};
use crate::num::expit;
use crate::qlearn::{
    evaluate_predictions, fit_qlearning, CounterfactualLaw, EvalOptions, FitMatrices, Method,
    PredictionMetrics, ProblemSpec, QLearnError, QLearnFit, QLearnOptions, TruthModels,
    WarmStart,
};
use crate::Real;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error(transparent)]
    QLearn(#[from] QLearnError),
    #[error("{failed} of {total} bootstrap refits failed (more than 20%)")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("{failed} of {total} replications failed for {method}; summaries attached")]
    ExcessiveFailures { method: Method, failed: usize, total: usize, report: Box<SimReport> },
    #[error("scenario {0:?} is not valid for this runner")]
    WrongScenario(Scenario),
}

/// Which simulation study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    OneStage,
    TwoStage,
    Predictive,
}

/// Full description of one simulation run.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    /// Test-set size; used by the predictive scenario only.
    pub test_n: usize,
    /// Validation ratio in (0, 1].
    pub rho: f64,
    pub rates: MisclassRates<Real>,
    pub replications: usize,
    /// Per-replication percentile-bootstrap resamples; 0 disables intervals.
    pub bootstrap_samples: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(SimError::Config(format!("rho = {} must be in (0, 1]", self.rho)));
        }
        if self.rho * (self.n as f64) < 1.0 {
            return Err(SimError::Config("rho * n must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(SimError::Config("replications must be >= 1".into()));
        }
        if self.bootstrap_samples > 0 && self.bootstrap_samples < 50 {
            return Err(SimError::Config("bootstrap_samples must be 0 or >= 50".into()));
        }
        if self.scenario == Scenario::Predictive && self.test_n == 0 {
            return Err(SimError::Config("predictive scenario needs test_n >= 1".into()));
        }
        Ok(())
    }
}

/// Named random-number streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Generate = 1,
    Corrupt = 2,
    Split = 3,
    Bootstrap = 4,
    TestGenerate = 5,
    Counterfactual = 6,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha stream keyed by `(seed, replication, purpose, substream)`.
pub fn stream(seed: u64, replication: u64, purpose: Purpose, substream: u64) -> ChaCha8Rng {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut state = mix(seed ^ 0x6A09_E667_F3BC_C909);
    for w in [replication, purpose as u64, substream] {
        state = mix(state.wrapping_add(GOLDEN).wrapping_add(w.wrapping_mul(0xD1B5_4A32_D192_ED03)));
    }
    let mut key = [0u8; 32];
    for chunk in 0..4 {
        state = state.wrapping_add(GOLDEN);
        key[chunk * 8..chunk * 8 + 8].copy_from_slice(&mix(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One-stage design: covariates stored as `[Z, X]`, treatment-free columns
/// `(1, Z, X)`, blip columns `(1, X)`.
pub fn one_stage_columns() -> StageColumns {
    StageColumns {
        treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0), ColumnSpec::Stage1(1)],
        blip: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(1)],
    }
}

/// True one-stage blip `(psi10, psi11)`.
pub fn one_stage_truth_psi() -> Vec<Real> {
    vec![0.5, -0.5]
}

/// Two-stage design: stage-1 covariates `[X1, Z1]`, stage-2 covariates
/// `[X2, Z2]`; stage-1 model `(1, X1, Z1 | 1, Z1)`, stage-2 model
/// `(1, X1, Z1, A1, Z1*A1, X2 | 1, Z2, A1)`.
pub fn two_stage_columns() -> (StageColumns, StageColumns) {
    let stage1 = StageColumns {
        treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0), ColumnSpec::Stage1(1)],
        blip: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(1)],
    };
    let stage2 = StageColumns {
        treatment_free: vec![
            ColumnSpec::Intercept,
            ColumnSpec::Stage1(0),
            ColumnSpec::Stage1(1),
            ColumnSpec::Treatment1,
            ColumnSpec::product(ColumnSpec::Stage1(1), ColumnSpec::Treatment1),
            ColumnSpec::Stage2(0),
        ],
        blip: vec![ColumnSpec::Intercept, ColumnSpec::Stage2(1), ColumnSpec::Treatment1],
    };
    (stage1, stage2)
}

/// True two-stage blips `(psi20, psi21, psi22, psi10, psi11)`; the stage-1
/// pair is implied by the data-generating parameters.
pub fn two_stage_truth_psi() -> Vec<Real> {
    vec![0.25, 0.5, 0.5, -0.3688, 0.0187]
}

/// Data-generating stage models of the two-stage scenario, used as the
/// reference regime in predictive evaluation.
pub fn two_stage_truth_models() -> TruthModels<Real> {
    let (s1, s2) = two_stage_columns();
    let stage2 = StageModel::new(
        s2,
        Array1::from(vec![0.0, 1.0, 0.0, -0.5, 0.0, 1.0]),
        Array1::from(vec![0.25, 0.5, 0.5]),
    )
    .expect("dimensions match");
    let stage1 = StageModel::new(
        s1,
        Array1::from(vec![0.0, 0.0, 0.0]),
        Array1::from(vec![-0.3688, 0.0187]),
    )
    .expect("dimensions match");
    TruthModels { stage2, stage1 }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

fn pm1(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// One-stage scenario: `X ~ N(1,1)`, `P(Z=1) = 0.5`,
/// `P(A=1) = expit(1 - X)`, `P(Y=1) = expit(1 + 0.5 Z - X + (0.5 - 0.5 X) A)`,
/// surrogate from the corruption model. Returned with every row in the
/// validation block (pre-split).
pub fn generate_one_stage(
    n: usize,
    rates: &MisclassRates<Real>,
    gen_rng: &mut ChaCha8Rng,
    corrupt_rng: &mut ChaCha8Rng,
) -> StudyDataset {
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let z = pm1(bernoulli(gen_rng, 0.5));
        let x = 1.0 + gen_rng.sample::<f64, _>(StandardNormal);
        let a = if bernoulli(gen_rng, expit(1.0 - x)) { Treatment::Pos } else { Treatment::Neg };
        let eta = 1.0 + 0.5 * z - x + (0.5 - 0.5 * x) * a.sign::<f64>();
        let y = bernoulli(gen_rng, expit(eta));
        let y_star = corrupt_outcome(y, rates, corrupt_rng.random::<f64>());
        trajectories
            .push(Trajectory::one_stage(vec![z, x], a, Some(y), Some(y_star)).expect("outcomes set"));
    }
    StudyDataset::new(trajectories, n).expect("pre-split dataset")
}

/// Two-stage scenario: `X1 ~ N(0,1)`, `X2 ~ N(-0.5 + 0.5 X1, 1)`,
/// `P(A_j = 1) = expit(-0.8 + 1.25 X_j)`, `P(Z1=1) = 0.5`,
/// `P(Z2=1 | Z1, A1) = expit(0.1 Z1 + 0.1 A1)`, and
/// `P(Y=1) = expit(X1 - 0.5 A1 + X2 + (0.25 + 0.5 Z2 + 0.5 A1) A2)`.
pub fn generate_two_stage(
    n: usize,
    rates: &MisclassRates<Real>,
    gen_rng: &mut ChaCha8Rng,
    corrupt_rng: &mut ChaCha8Rng,
) -> StudyDataset {
    let mut trajectories = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = gen_rng.sample(StandardNormal);
        let z1 = pm1(bernoulli(gen_rng, 0.5));
        let a1 = if bernoulli(gen_rng, expit(-0.8 + 1.25 * x1)) { Treatment::Pos } else { Treatment::Neg };
        let x2 = -0.5 + 0.5 * x1 + gen_rng.sample::<f64, _>(StandardNormal);
        let z2 = pm1(bernoulli(gen_rng, expit(0.1 * z1 + 0.1 * a1.sign::<f64>())));
        let a2 = if bernoulli(gen_rng, expit(-0.8 + 1.25 * x2)) { Treatment::Pos } else { Treatment::Neg };
        let eta = x1 - 0.5 * a1.sign::<f64>()
            + x2
            + (0.25 + 0.5 * z2 + 0.5 * a1.sign::<f64>()) * a2.sign::<f64>();
        let y = bernoulli(gen_rng, expit(eta));
        let y_star = corrupt_outcome(y, rates, corrupt_rng.random::<f64>());
        trajectories.push(
            Trajectory::two_stage(vec![x1, z1], a1, vec![x2, z2], a2, Some(y), Some(y_star))
                .expect("outcomes set"),
        );
    }
    StudyDataset::new(trajectories, n).expect("pre-split dataset")
}

/// Counterfactual law of the two-stage scenario. `X2` does not depend on the
/// stage-1 action, so the observed value is reused; `Z2` is redrawn from
/// `P(Z2=1 | Z1, a1)` with the patient's stream, which couples the arms
/// through a common uniform draw.
pub struct TwoStageLaw;

impl CounterfactualLaw<Real> for TwoStageLaw {
    fn stage2_covariates(
        &self,
        trajectory: &Trajectory<Real>,
        a1: Treatment,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Real> {
        let z1 = trajectory.stage1_covariates()[1];
        let x2 = trajectory.stage2_covariates()[0];
        let z2 = pm1(bernoulli(rng, expit(0.1 * z1 + 0.1 * a1.sign::<f64>())));
        vec![x2, z2]
    }
}

/// Randomly assigns `round(rho * n)` trajectories to the validation block
/// (kept with both outcomes) and blanks the true outcome on the rest. Order
/// is preserved within each block.
pub fn split_validation(
    dataset: &StudyDataset,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> StudyDataset {
    let n = dataset.n();
    let n_v = ((rho * n as f64).round() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..n_v {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut validation: Vec<usize> = indices[..n_v].to_vec();
    let mut main: Vec<usize> = indices[n_v..].to_vec();
    validation.sort_unstable();
    main.sort_unstable();

    let mut rows = Vec::with_capacity(n);
    for &i in &validation {
        rows.push(dataset.trajectories()[i].clone());
    }
    for &i in &main {
        let mut t = dataset.trajectories()[i].clone();
        t.clear_true_outcome();
        rows.push(t);
    }
    StudyDataset::new(rows, n_v).expect("split preserves invariants")
}

/// Summary of one parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub se: f64,
    pub rmse: f64,
    /// Fraction of replications whose percentile interval covered the truth;
    /// absent when the bootstrap was disabled.
    pub coverage: Option<f64>,
}

/// Per-method summary across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub parameters: Vec<ParamSummary>,
    /// Replications dropped for this method (fit error, non-convergence,
    /// separation, or a monotonicity violation).
    pub failure_count: usize,
    pub replications_used: usize,
    /// Replications whose bootstrap interval could not be formed.
    pub bootstrap_failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub summary: ReplicationSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub scenario: Scenario,
    pub methods: Vec<MethodSummary>,
}

impl Method {
    fn substream(self) -> u64 {
        match self {
            Method::ValidationOnly => 0,
            Method::Naive => 1,
            Method::MleCorrected => 2,
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

fn scenario_spec(scenario: Scenario) -> ProblemSpec {
    match scenario {
        Scenario::OneStage => ProblemSpec::OneStage { stage: one_stage_columns() },
        Scenario::TwoStage | Scenario::Predictive => {
            let (stage1, stage2) = two_stage_columns();
            ProblemSpec::TwoStage { stage1, stage2 }
        }
    }
}

fn scenario_truth(scenario: Scenario) -> (Vec<String>, Vec<f64>) {
    match scenario {
        Scenario::OneStage => {
            (vec!["psi10".into(), "psi11".into()], one_stage_truth_psi())
        }
        Scenario::TwoStage | Scenario::Predictive => (
            vec!["psi20".into(), "psi21".into(), "psi22".into(), "psi10".into(), "psi11".into()],
            two_stage_truth_psi(),
        ),
    }
}

fn generate(
    scenario: Scenario,
    n: usize,
    rates: &MisclassRates<Real>,
    gen_rng: &mut ChaCha8Rng,
    corrupt_rng: &mut ChaCha8Rng,
) -> StudyDataset {
    match scenario {
        Scenario::OneStage => generate_one_stage(n, rates, gen_rng, corrupt_rng),
        Scenario::TwoStage | Scenario::Predictive => {
            generate_two_stage(n, rates, gen_rng, corrupt_rng)
        }
    }
}

/// Linearly interpolated empirical quantile (the common "type 7" rule).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = q * (m - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Percentile-bootstrap intervals for the blip coefficients of one method.
///
/// Resampling is stratified on validation/main membership so every resample
/// keeps `n_v`. Refits start from the point estimate when one is supplied.
pub struct BootstrapCi {
    pub intervals: Vec<(f64, f64)>,
    /// Standard deviation of the bootstrap estimates per coordinate.
    pub se: Vec<f64>,
    pub failed: usize,
    pub samples: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn bootstrap_ci(
    dataset: &StudyDataset,
    spec: &ProblemSpec,
    method: Method,
    options: &QLearnOptions<Real>,
    warm: Option<&QLearnFit>,
    level: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BootstrapCi, SimError> {
    let matrices = FitMatrices::from_dataset(dataset, spec)?;
    let warm = warm.map(|w| WarmStart::from_fit(w));
    bootstrap_core(&matrices, method, options, warm.as_ref(), level, samples, rng)
}

/// Bootstrap over precomputed design matrices: resamples row indices
/// stratified on the validation/main blocks and refits from warm starts.
pub(crate) fn bootstrap_core(
    matrices: &FitMatrices<Real>,
    method: Method,
    options: &QLearnOptions<Real>,
    warm: Option<&WarmStart<Real>>,
    level: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BootstrapCi, SimError> {
    let n = matrices.n();
    let n_v = matrices.n_v;
    let mut per_coord: Vec<Vec<f64>> = Vec::new();
    let mut failed = 0usize;

    let mut val_idx = vec![0usize; n_v];
    let mut main_idx = vec![0usize; n - n_v];
    for _ in 0..samples {
        for v in val_idx.iter_mut() {
            *v = rng.random_range(0..n_v);
        }
        for v in main_idx.iter_mut() {
            *v = rng.random_range(n_v..n);
        }
        let resample = matrices.gather(&val_idx, &main_idx);
        match resample.fit(method, options, warm) {
            Ok(fit) if fit.diagnostics.usable() => {
                let est = fit.blips();
                if per_coord.is_empty() {
                    per_coord = vec![Vec::with_capacity(samples); est.len()];
                }
                for (c, v) in est.into_iter().enumerate() {
                    per_coord[c].push(v);
                }
            }
            _ => failed += 1,
        }
    }

    if failed * 5 > samples {
        return Err(SimError::BootstrapFailures { failed, total: samples });
    }
    let alpha = (1.0 - level) / 2.0;
    let mut intervals = Vec::with_capacity(per_coord.len());
    let mut se = Vec::with_capacity(per_coord.len());
    for values in per_coord.iter_mut() {
        values.sort_by(|a, b| a.total_cmp(b));
        intervals.push((quantile(values, alpha), quantile(values, 1.0 - alpha)));
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        se.push(var.sqrt());
    }
    Ok(BootstrapCi { intervals, se, failed, samples })
}

struct RepOutcome {
    /// Per method: blip estimates when the fit was usable.
    estimates: Vec<Option<Vec<f64>>>,
    /// Per method: percentile intervals when the bootstrap succeeded.
    intervals: Vec<Option<Vec<(f64, f64)>>>,
    bootstrap_failed: Vec<bool>,
}

/// Runs the estimation scenarios: per replication, generate, corrupt, split,
/// fit each method, and (optionally) bootstrap each fit; aggregate bias,
/// empirical SE, RMSE and interval coverage per blip coefficient.
///
/// Replications that fail to converge (or separate, or land on a monotonicity
/// violation) are dropped from the summaries and counted. An error is
/// returned when more than 5% of replications fail for some method.
pub fn run_replications(
    config: &ScenarioConfig,
    methods: &[Method],
) -> Result<SimReport, SimError> {
    config.validate()?;
    if config.scenario == Scenario::Predictive {
        return Err(SimError::WrongScenario(config.scenario));
    }
    let spec = scenario_spec(config.scenario);
    let (names, truth) = scenario_truth(config.scenario);

    let outcomes: Vec<RepOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let rep = rep as u64;
            let mut gen_rng = stream(config.seed, rep, Purpose::Generate, 0);
            let mut corrupt_rng = stream(config.seed, rep, Purpose::Corrupt, 0);
            let full =
                generate(config.scenario, config.n, &config.rates, &mut gen_rng, &mut corrupt_rng);
            let mut split_rng = stream(config.seed, rep, Purpose::Split, 0);
            let ds = split_validation(&full, config.rho, &mut split_rng);

            let options = QLearnOptions::default();
            let matrices = FitMatrices::from_dataset(&ds, &spec).expect("generator output");
            let mut estimates = Vec::with_capacity(methods.len());
            let mut intervals = Vec::with_capacity(methods.len());
            let mut bootstrap_failed = vec![false; methods.len()];
            for (mi, &method) in methods.iter().enumerate() {
                let fit = matrices.fit(method, &options, None);
                match fit {
                    Ok(fit) if fit.diagnostics.usable() => {
                        estimates.push(Some(fit.blips()));
                        if config.bootstrap_samples > 0 {
                            let warm = WarmStart::from_core(&fit);
                            let mut boot_rng =
                                stream(config.seed, rep, Purpose::Bootstrap, method.substream());
                            match bootstrap_core(
                                &matrices,
                                method,
                                &options,
                                Some(&warm),
                                0.95,
                                config.bootstrap_samples,
                                &mut boot_rng,
                            ) {
                                Ok(ci) => intervals.push(Some(ci.intervals)),
                                Err(_) => {
                                    intervals.push(None);
                                    bootstrap_failed[mi] = true;
                                }
                            }
                        } else {
                            intervals.push(None);
                        }
                    }
                    _ => {
                        estimates.push(None);
                        intervals.push(None);
                    }
                }
            }
            RepOutcome { estimates, intervals, bootstrap_failed }
        })
        .collect();

    let mut report = SimReport { scenario: config.scenario, methods: Vec::new() };
    for (mi, &method) in methods.iter().enumerate() {
        let mut used: Vec<&Vec<f64>> = Vec::new();
        let mut covered = vec![0usize; truth.len()];
        let mut with_ci = 0usize;
        let mut boot_failures = 0usize;
        for o in &outcomes {
            if let Some(est) = &o.estimates[mi] {
                used.push(est);
                if let Some(ci) = &o.intervals[mi] {
                    with_ci += 1;
                    for (c, &(lo, hi)) in ci.iter().enumerate() {
                        if truth[c] >= lo && truth[c] <= hi {
                            covered[c] += 1;
                        }
                    }
                }
            }
            if o.bootstrap_failed[mi] {
                boot_failures += 1;
            }
        }
        let r = used.len();
        let failure_count = config.replications - r;
        let mut parameters = Vec::with_capacity(truth.len());
        for c in 0..truth.len() {
            let vals: Vec<f64> = used.iter().map(|e| e[c]).collect();
            let mean = vals.iter().sum::<f64>() / r.max(1) as f64;
            let bias = mean - truth[c];
            let var = if r > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64
            } else {
                0.0
            };
            let mse =
                vals.iter().map(|v| (v - truth[c]) * (v - truth[c])).sum::<f64>() / r.max(1) as f64;
            parameters.push(ParamSummary {
                name: names[c].clone(),
                truth: truth[c],
                bias,
                se: var.sqrt(),
                rmse: mse.sqrt(),
                coverage: if with_ci > 0 { Some(covered[c] as f64 / with_ci as f64) } else { None },
            });
        }
        report.methods.push(MethodSummary {
            method,
            summary: ReplicationSummary {
                parameters,
                failure_count,
                replications_used: r,
                bootstrap_failures: boot_failures,
            },
        });
    }

    for ms in &report.methods {
        let failed = ms.summary.failure_count;
        if failed * 20 > config.replications {
            let method = ms.method;
            return Err(SimError::ExcessiveFailures {
                method,
                failed,
                total: config.replications,
                report: Box::new(report),
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictiveMethodSummary {
    pub method: Method,
    pub metrics: PredictionMetrics,
    pub failure_count: usize,
    pub replications_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictiveReport {
    pub methods: Vec<PredictiveMethodSummary>,
}

/// Runs the predictive scenario: per replication, fit every method on a
/// corrupted training set and score the estimated regimes on a clean test
/// set; metrics are averaged over the usable replications.
pub fn run_predictive(
    config: &ScenarioConfig,
    methods: &[Method],
) -> Result<PredictiveReport, SimError> {
    config.validate()?;
    if config.scenario != Scenario::Predictive {
        return Err(SimError::WrongScenario(config.scenario));
    }
    let spec = scenario_spec(Scenario::TwoStage);
    let truth = two_stage_truth_models();
    let law = TwoStageLaw;

    let per_rep: Vec<Vec<Option<PredictionMetrics>>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let rep = rep as u64;
            let mut gen_rng = stream(config.seed, rep, Purpose::Generate, 0);
            let mut corrupt_rng = stream(config.seed, rep, Purpose::Corrupt, 0);
            let train =
                generate_two_stage(config.n, &config.rates, &mut gen_rng, &mut corrupt_rng);
            let mut split_rng = stream(config.seed, rep, Purpose::Split, 0);
            let train = split_validation(&train, config.rho, &mut split_rng);

            let mut test_rng = stream(config.seed, rep, Purpose::TestGenerate, 0);
            let mut test_corrupt = stream(config.seed, rep, Purpose::TestGenerate, 1);
            let test = generate_two_stage(
                config.test_n,
                &MisclassRates::zero(),
                &mut test_rng,
                &mut test_corrupt,
            );

            let options = QLearnOptions::default();
            methods
                .iter()
                .map(|&method| {
                    let fit = fit_qlearning(&train, &spec, method, &options).ok()?;
                    if !fit.diagnostics.usable() {
                        return None;
                    }
                    // Counterfactual draws are shared across methods: the
                    // stream is re-created identically for each.
                    let mut cf_rng = stream(config.seed, rep, Purpose::Counterfactual, 0);
                    evaluate_predictions(
                        &fit,
                        &truth,
                        &test,
                        Some(&law),
                        &EvalOptions::default(),
                        &mut cf_rng,
                    )
                    .ok()
                })
                .collect()
        })
        .collect();

    let mut report = PredictiveReport { methods: Vec::new() };
    for (mi, &method) in methods.iter().enumerate() {
        let mut sums = [0.0f64; 6];
        let mut used = 0usize;
        for rep in &per_rep {
            if let Some(m) = &rep[mi] {
                used += 1;
                for (s, v) in sums.iter_mut().zip(m.values()) {
                    *s += v;
                }
            }
        }
        let denom = used.max(1) as f64;
        report.methods.push(PredictiveMethodSummary {
            method,
            metrics: PredictionMetrics {
                regime_accuracy_stage2: sums[0] / denom,
                regime_accuracy_stage1: sums[1] / denom,
                regime_accuracy_both: sums[2] / denom,
                outcome_error_rate: sums[3] / denom,
                sensitivity: sums[4] / denom,
                specificity: sums[5] / denom,
            },
            failure_count: config.replications - used,
            replications_used: used,
        });
    }
    Ok(report)
}
