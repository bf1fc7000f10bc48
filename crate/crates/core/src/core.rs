//! Domain types shared by every estimator: patient trajectories, the
//! validation/main study layout, stage model parameterizations, and the
//! non-differential outcome corruption model.
//!
//! Everything here is immutable after construction and free of hidden RNG
//! state; `corrupt_outcome` takes the uniform draw explicitly so callers own
//! reproducibility.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::num::Scalar;
use crate::Real;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("treatment value {0} is not -1 or +1")]
    InvalidTreatment(i64),
    #[error("trajectory must carry a true outcome, a surrogate outcome, or both")]
    MissingOutcome,
    #[error("one-stage trajectory must have no second-stage treatment and no second-stage covariates")]
    MalformedOneStage,
    #[error("two-stage trajectory at index {0} mixed with one-stage trajectories")]
    MixedStages(usize),
    #[error("validation count {validation} exceeds dataset size {total}")]
    ValidationCount { validation: usize, total: usize },
    #[error("trajectory {index} in the validation block lacks a {missing} outcome")]
    ValidationOutcome { index: usize, missing: &'static str },
    #[error("trajectory {index} in the main block lacks a surrogate outcome")]
    MainOutcome { index: usize },
    #[error("misclassification rates ({gamma10}, {gamma01}) are outside [0,1) or violate gamma10 + gamma01 < 1")]
    InvalidRates { gamma10: f64, gamma01: f64 },
    #[error("coefficient length {got} does not match the {expected} design columns")]
    CoefficientLength { got: usize, expected: usize },
    #[error("trajectory {index}: no value for design column {column}")]
    MissingCovariate { index: usize, column: String },
    #[error("column {0} is not a covariate and cannot be standardized")]
    NotACovariate(String),
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
}

/// Binary treatment coded as -1/+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Treatment {
    Neg,
    Pos,
}

impl Treatment {
    /// Parses the -1/+1 coding.
    pub fn from_pm1(value: i64) -> Result<Self, CoreError> {
        match value {
            -1 => Ok(Treatment::Neg),
            1 => Ok(Treatment::Pos),
            other => Err(CoreError::InvalidTreatment(other)),
        }
    }

    /// The treatment as the working scalar: -1 or +1.
    #[inline]
    pub fn sign<F: Scalar>(self) -> F {
        match self {
            Treatment::Neg => -F::one(),
            Treatment::Pos => F::one(),
        }
    }
}

/// One patient's record: covariates and treatment per stage, plus the true
/// and/or surrogate binary outcome measured after the final stage.
///
/// For one-stage problems the second-stage fields stay empty and the single
/// decision lives in the stage-1 slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F = Real> {
    stage1_covariates: Vec<F>,
    treatment1: Treatment,
    stage2_covariates: Vec<F>,
    treatment2: Option<Treatment>,
    true_outcome: Option<bool>,
    surrogate_outcome: Option<bool>,
}

impl<F: Scalar> Trajectory<F> {
    /// A single-decision trajectory.
    pub fn one_stage(
        covariates: Vec<F>,
        treatment: Treatment,
        true_outcome: Option<bool>,
        surrogate_outcome: Option<bool>,
    ) -> Result<Self, CoreError> {
        if true_outcome.is_none() && surrogate_outcome.is_none() {
            return Err(CoreError::MissingOutcome);
        }
        Ok(Trajectory {
            stage1_covariates: covariates,
            treatment1: treatment,
            stage2_covariates: Vec::new(),
            treatment2: None,
            true_outcome,
            surrogate_outcome,
        })
    }

    /// A two-decision trajectory.
    pub fn two_stage(
        stage1_covariates: Vec<F>,
        treatment1: Treatment,
        stage2_covariates: Vec<F>,
        treatment2: Treatment,
        true_outcome: Option<bool>,
        surrogate_outcome: Option<bool>,
    ) -> Result<Self, CoreError> {
        if true_outcome.is_none() && surrogate_outcome.is_none() {
            return Err(CoreError::MissingOutcome);
        }
        Ok(Trajectory {
            stage1_covariates,
            treatment1,
            stage2_covariates,
            treatment2: Some(treatment2),
            true_outcome,
            surrogate_outcome,
        })
    }

    pub fn stage1_covariates(&self) -> &[F] {
        &self.stage1_covariates
    }

    pub fn treatment1(&self) -> Treatment {
        self.treatment1
    }

    pub fn stage2_covariates(&self) -> &[F] {
        &self.stage2_covariates
    }

    pub fn treatment2(&self) -> Option<Treatment> {
        self.treatment2
    }

    pub fn true_outcome(&self) -> Option<bool> {
        self.true_outcome
    }

    pub fn surrogate_outcome(&self) -> Option<bool> {
        self.surrogate_outcome
    }

    pub fn is_two_stage(&self) -> bool {
        self.treatment2.is_some()
    }

    /// Copy with the stage-1 treatment replaced; used when evaluating a
    /// regime's counterfactual action path.
    pub fn with_treatment1(&self, treatment: Treatment) -> Self {
        let mut t = self.clone();
        t.treatment1 = treatment;
        t
    }

    /// Copy with the stage-2 covariates replaced.
    pub fn with_stage2_covariates(&self, covariates: Vec<F>) -> Self {
        let mut t = self.clone();
        t.stage2_covariates = covariates;
        t
    }

    pub(crate) fn clear_true_outcome(&mut self) {
        self.true_outcome = None;
    }

    pub(crate) fn set_stage1_covariate(&mut self, index: usize, value: F) {
        self.stage1_covariates[index] = value;
    }

    pub(crate) fn set_stage2_covariate(&mut self, index: usize, value: F) {
        self.stage2_covariates[index] = value;
    }
}

/// Ordered study data: the first `validation_count` trajectories form the
/// validation subset (true and surrogate outcome both observed), the rest the
/// main subset (surrogate only is required).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset<F = Real> {
    trajectories: Vec<Trajectory<F>>,
    validation_count: usize,
}

impl<F: Scalar> StudyDataset<F> {
    pub fn new(trajectories: Vec<Trajectory<F>>, validation_count: usize) -> Result<Self, CoreError> {
        let total = trajectories.len();
        if validation_count > total {
            return Err(CoreError::ValidationCount { validation: validation_count, total });
        }
        if let Some(first) = trajectories.first() {
            let two = first.is_two_stage();
            for (i, t) in trajectories.iter().enumerate() {
                if t.is_two_stage() != two {
                    return Err(CoreError::MixedStages(i));
                }
            }
        }
        for (i, t) in trajectories.iter().enumerate() {
            if i < validation_count {
                if t.true_outcome.is_none() {
                    return Err(CoreError::ValidationOutcome { index: i, missing: "true" });
                }
                if t.surrogate_outcome.is_none() {
                    return Err(CoreError::ValidationOutcome { index: i, missing: "surrogate" });
                }
            } else if t.surrogate_outcome.is_none() {
                return Err(CoreError::MainOutcome { index: i });
            }
        }
        Ok(StudyDataset { trajectories, validation_count })
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_validation(&self) -> usize {
        self.validation_count
    }

    pub fn trajectories(&self) -> &[Trajectory<F>] {
        &self.trajectories
    }

    pub fn validation(&self) -> &[Trajectory<F>] {
        &self.trajectories[..self.validation_count]
    }

    pub fn main_study(&self) -> &[Trajectory<F>] {
        &self.trajectories[self.validation_count..]
    }

    pub fn is_two_stage(&self) -> bool {
        self.trajectories.first().map(|t| t.is_two_stage()).unwrap_or(false)
    }

    /// Dataset restricted to the validation block.
    pub fn validation_only(&self) -> StudyDataset<F> {
        StudyDataset {
            trajectories: self.trajectories[..self.validation_count].to_vec(),
            validation_count: self.validation_count,
        }
    }

    pub(crate) fn trajectories_mut(&mut self) -> &mut [Trajectory<F>] {
        &mut self.trajectories
    }
}

/// Misclassification rates `gamma10 = P(Y*=1 | Y=0)` and
/// `gamma01 = P(Y*=0 | Y=1)`, constrained to the identifiable region
/// `gamma10 + gamma01 < 1` with each rate in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisclassRates<F = Real> {
    gamma10: F,
    gamma01: F,
}

impl<F: Scalar> MisclassRates<F> {
    pub fn new(gamma10: F, gamma01: F) -> Result<Self, CoreError> {
        let ok = gamma10 >= F::zero()
            && gamma01 >= F::zero()
            && gamma10 < F::one()
            && gamma01 < F::one()
            && gamma10 + gamma01 < F::one();
        if !ok {
            return Err(CoreError::InvalidRates {
                gamma10: gamma10.to_f64().unwrap_or(f64::NAN),
                gamma01: gamma01.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(MisclassRates { gamma10, gamma01 })
    }

    /// No misclassification.
    pub fn zero() -> Self {
        MisclassRates { gamma10: F::zero(), gamma01: F::zero() }
    }

    pub fn gamma10(&self) -> F {
        self.gamma10
    }

    pub fn gamma01(&self) -> F {
        self.gamma01
    }

    pub fn is_zero(&self) -> bool {
        self.gamma10 == F::zero() && self.gamma01 == F::zero()
    }
}

/// Applies the corruption model to a true outcome given a uniform draw on
/// `[0,1)`: a `0` flips to `1` when `draw < gamma10`, a `1` flips to `0` when
/// `draw < gamma01`.
#[inline]
pub fn corrupt_outcome<F: Scalar>(y: bool, rates: &MisclassRates<F>, draw: F) -> bool {
    if y {
        draw >= rates.gamma01
    } else {
        draw < rates.gamma10
    }
}

/// One design-matrix column: which piece of a trajectory's history it reads.
///
/// Intercepts are always explicit. `Product` covers interaction columns such
/// as the stage-1 covariate-by-treatment terms of the two-stage scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnSpec {
    Intercept,
    /// Index into the stage-1 covariate vector.
    Stage1(usize),
    /// Index into the stage-2 covariate vector.
    Stage2(usize),
    Treatment1,
    Product(Box<ColumnSpec>, Box<ColumnSpec>),
}

impl ColumnSpec {
    pub fn product(a: ColumnSpec, b: ColumnSpec) -> ColumnSpec {
        ColumnSpec::Product(Box::new(a), Box::new(b))
    }

    /// Evaluates the column for one trajectory.
    pub fn value<F: Scalar>(&self, t: &Trajectory<F>) -> Option<F> {
        match self {
            ColumnSpec::Intercept => Some(F::one()),
            ColumnSpec::Stage1(i) => t.stage1_covariates.get(*i).copied(),
            ColumnSpec::Stage2(i) => t.stage2_covariates.get(*i).copied(),
            ColumnSpec::Treatment1 => Some(t.treatment1.sign()),
            ColumnSpec::Product(a, b) => match (a.value(t), b.value(t)) {
                (Some(x), Some(y)) => Some(x * y),
                _ => None,
            },
        }
    }
}

impl std::fmt::Display for ColumnSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnSpec::Intercept => write!(f, "1"),
            ColumnSpec::Stage1(i) => write!(f, "x1[{i}]"),
            ColumnSpec::Stage2(i) => write!(f, "x2[{i}]"),
            ColumnSpec::Treatment1 => write!(f, "a1"),
            ColumnSpec::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

/// Column layout of one stage's Q-model: the treatment-free component and the
/// blip (treatment-interacting) component.
#[derive(Debug, Clone, PartialEq)]
pub struct StageColumns {
    pub treatment_free: Vec<ColumnSpec>,
    pub blip: Vec<ColumnSpec>,
}

/// A stage's Q-model layout together with its coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StageModel<F = Real> {
    columns: StageColumns,
    beta: Array1<F>,
    psi: Array1<F>,
}

impl<F: Scalar> StageModel<F> {
    pub fn new(columns: StageColumns, beta: Array1<F>, psi: Array1<F>) -> Result<Self, CoreError> {
        if beta.len() != columns.treatment_free.len() {
            return Err(CoreError::CoefficientLength {
                got: beta.len(),
                expected: columns.treatment_free.len(),
            });
        }
        if psi.len() != columns.blip.len() {
            return Err(CoreError::CoefficientLength { got: psi.len(), expected: columns.blip.len() });
        }
        Ok(StageModel { columns, beta, psi })
    }

    pub fn columns(&self) -> &StageColumns {
        &self.columns
    }

    pub fn beta(&self) -> &Array1<F> {
        &self.beta
    }

    pub fn psi(&self) -> &Array1<F> {
        &self.psi
    }

    /// Treatment-free linear predictor for one trajectory.
    pub fn treatment_free_value(&self, t: &Trajectory<F>) -> Option<F> {
        lin_comb(&self.columns.treatment_free, &self.beta, t)
    }

    /// Blip linear predictor (before multiplication by the stage treatment).
    pub fn blip_value(&self, t: &Trajectory<F>) -> Option<F> {
        lin_comb(&self.columns.blip, &self.psi, t)
    }
}

fn lin_comb<F: Scalar>(cols: &[ColumnSpec], coef: &Array1<F>, t: &Trajectory<F>) -> Option<F> {
    let mut acc = F::zero();
    for (c, w) in cols.iter().zip(coef.iter()) {
        acc += *w * c.value(t)?;
    }
    Some(acc)
}

/// Decision rules derived from fitted blip coefficients: at each stage the
/// recommended action is +1 exactly when `psi' h > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime<F = Real> {
    pub stage1: Option<(Vec<ColumnSpec>, Array1<F>)>,
    pub stage2: (Vec<ColumnSpec>, Array1<F>),
}

impl<F: Scalar> Regime<F> {
    /// Recommended final-stage action for a trajectory.
    pub fn decide_stage2(&self, t: &Trajectory<F>) -> Option<Treatment> {
        let (cols, psi) = &self.stage2;
        let blip = lin_comb(cols, psi, t)?;
        Some(if blip > F::zero() { Treatment::Pos } else { Treatment::Neg })
    }

    /// Recommended first-stage action, when the regime has two stages.
    pub fn decide_stage1(&self, t: &Trajectory<F>) -> Option<Treatment> {
        let (cols, psi) = self.stage1.as_ref()?;
        let blip = lin_comb(cols, psi, t)?;
        Some(if blip > F::zero() { Treatment::Pos } else { Treatment::Neg })
    }
}

/// Which stage's treatment multiplies the blip rows in a design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Design matrices for one stage over a whole dataset: row `i` belongs to
/// trajectory `i`. Blip rows are the raw `h` vectors; downstream linear
/// predictors multiply them by the stage treatment.
#[derive(Debug, Clone)]
pub struct DesignRows<F = Real> {
    pub treatment_free: Array2<F>,
    pub blip: Array2<F>,
    pub treatment: Array1<F>,
}

pub fn build_design_rows<F: Scalar>(
    dataset: &StudyDataset<F>,
    columns: &StageColumns,
    stage: Stage,
) -> Result<DesignRows<F>, CoreError> {
    build_design_rows_for(dataset.trajectories(), columns, stage)
}

pub fn build_design_rows_for<F: Scalar>(
    trajectories: &[Trajectory<F>],
    columns: &StageColumns,
    stage: Stage,
) -> Result<DesignRows<F>, CoreError> {
    let n = trajectories.len();
    let mut tf = Array2::zeros((n, columns.treatment_free.len()));
    let mut blip = Array2::zeros((n, columns.blip.len()));
    let mut a = Array1::zeros(n);
    for (i, t) in trajectories.iter().enumerate() {
        for (j, c) in columns.treatment_free.iter().enumerate() {
            tf[[i, j]] = c
                .value(t)
                .ok_or_else(|| CoreError::MissingCovariate { index: i, column: c.to_string() })?;
        }
        for (j, c) in columns.blip.iter().enumerate() {
            blip[[i, j]] = c
                .value(t)
                .ok_or_else(|| CoreError::MissingCovariate { index: i, column: c.to_string() })?;
        }
        a[i] = match stage {
            Stage::One => t.treatment1.sign(),
            Stage::Two => t
                .treatment2
                .ok_or_else(|| CoreError::MissingCovariate { index: i, column: "a2".into() })?
                .sign(),
        };
    }
    Ok(DesignRows { treatment_free: tf, blip, treatment: a })
}

/// Centering and scaling applied to one covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTransform<F = Real> {
    pub column: ColumnSpec,
    pub mean: F,
    pub scale: F,
}

/// Standardizes the named covariate columns to sample mean 0 and sample
/// standard deviation 1 over the pooled dataset (validation and main study
/// together), returning the transformed dataset and the per-column
/// transforms for reporting or inversion.
pub fn standardize_columns<F: Scalar>(
    dataset: &StudyDataset<F>,
    columns: &[ColumnSpec],
) -> Result<(StudyDataset<F>, Vec<ColumnTransform<F>>), CoreError> {
    let n = dataset.n();
    let mut out = dataset.clone();
    let mut transforms = Vec::with_capacity(columns.len());
    for col in columns {
        let idx = match col {
            ColumnSpec::Stage1(i) => (Stage::One, *i),
            ColumnSpec::Stage2(i) => (Stage::Two, *i),
            other => return Err(CoreError::NotACovariate(other.to_string())),
        };
        let mut values = Vec::with_capacity(n);
        for (i, t) in dataset.trajectories().iter().enumerate() {
            let v = col
                .value(t)
                .ok_or_else(|| CoreError::MissingCovariate { index: i, column: col.to_string() })?;
            values.push(v);
        }
        let nf = crate::num::real::<F>(n as f64);
        let mean = values.iter().copied().sum::<F>() / nf;
        let mut ss = F::zero();
        for v in &values {
            let d = *v - mean;
            ss += d * d;
        }
        if n < 2 || ss == F::zero() {
            return Err(CoreError::ZeroVariance(col.to_string()));
        }
        let scale = (ss / crate::num::real::<F>((n - 1) as f64)).sqrt();
        for (t, v) in out.trajectories_mut().iter_mut().zip(values.iter()) {
            let standardized = (*v - mean) / scale;
            match idx {
                (Stage::One, i) => t.set_stage1_covariate(i, standardized),
                (Stage::Two, i) => t.set_stage2_covariate(i, standardized),
            }
        }
        transforms.push(ColumnTransform { column: col.clone(), mean, scale });
    }
    Ok((out, transforms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_stage_traj(covs: Vec<f64>, a: i64, y: bool) -> Trajectory<f64> {
        Trajectory::one_stage(covs, Treatment::from_pm1(a).unwrap(), Some(y), Some(y)).unwrap()
    }

    #[test]
    fn corrupt_zero_rates_is_identity() {
        let rates = MisclassRates::<f64>::zero();
        for &y in &[false, true] {
            for &d in &[0.0, 0.3, 0.5, 0.999] {
                assert_eq!(corrupt_outcome(y, &rates, d), y);
            }
        }
    }

    #[test]
    fn corrupt_threshold_rule() {
        let rates = MisclassRates::new(0.3, 0.3).unwrap();
        assert!(corrupt_outcome(false, &rates, 0.1));
        assert!(!corrupt_outcome(false, &rates, 0.5));
        assert!(!corrupt_outcome(true, &rates, 0.1));
        assert!(corrupt_outcome(true, &rates, 0.5));
    }

    #[test]
    fn corrupt_empirical_flip_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rates = MisclassRates::new(0.3, 0.3).unwrap();
        let n = 100_000;
        let flips = (0..n).filter(|_| corrupt_outcome(false, &rates, rng.random::<f64>())).count();
        let freq = flips as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.01, "0->1 flip frequency {freq}");

        let rates = MisclassRates::new(0.1, 0.1).unwrap();
        let flips = (0..n).filter(|_| !corrupt_outcome(true, &rates, rng.random::<f64>())).count();
        let freq = flips as f64 / n as f64;
        assert!((freq - 0.1).abs() < 0.01, "1->0 flip frequency {freq}");
    }

    #[test]
    fn rates_reject_infeasible_grid() {
        // Every pair on a 0.05 grid with gamma10 + gamma01 >= 1 must be rejected.
        for i in 0..=20 {
            for j in 0..=20 {
                let g10 = i as f64 * 0.05;
                let g01 = j as f64 * 0.05;
                let r = MisclassRates::new(g10, g01);
                if g10 + g01 >= 1.0 || g10 >= 1.0 || g01 >= 1.0 {
                    assert!(r.is_err(), "({g10}, {g01}) accepted");
                } else {
                    assert!(r.is_ok(), "({g10}, {g01}) rejected");
                }
            }
        }
    }

    #[test]
    fn design_rows_one_stage_extraction() {
        // Columns (1, Z, X | 1, X) with covariates stored as [Z, X].
        let cols = StageColumns {
            treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0), ColumnSpec::Stage1(1)],
            blip: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(1)],
        };
        let ds = StudyDataset::new(vec![one_stage_traj(vec![1.0, 1.0], 1, true)], 1).unwrap();
        let d = build_design_rows(&ds, &cols, Stage::One).unwrap();
        assert_eq!(d.treatment_free.row(0).to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(d.blip.row(0).to_vec(), vec![1.0, 1.0]);
        assert_eq!(d.treatment[0], 1.0);
    }

    #[test]
    fn design_rows_empty_dataset() {
        let cols = StageColumns {
            treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0)],
            blip: vec![ColumnSpec::Intercept],
        };
        let ds = StudyDataset::<f64>::new(vec![], 0).unwrap();
        let d = build_design_rows(&ds, &cols, Stage::One).unwrap();
        assert_eq!(d.treatment_free.dim(), (0, 2));
        assert_eq!(d.blip.dim(), (0, 1));
        assert_eq!(d.treatment.len(), 0);
    }

    #[test]
    fn design_rows_two_stage_layout() {
        // Second-stage treatment-free row (1, X1, Z1, A1, Z1*A1, X2) and blip
        // row (1, Z2, A1); covariates stored as [X1, Z1] and [X2, Z2].
        let t = Trajectory::two_stage(
            vec![0.7, -1.0],
            Treatment::Pos,
            vec![0.2, 1.0],
            Treatment::Neg,
            Some(true),
            Some(true),
        )
        .unwrap();
        let cols = StageColumns {
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
        let ds = StudyDataset::new(vec![t], 1).unwrap();
        let d = build_design_rows(&ds, &cols, Stage::Two).unwrap();
        assert_eq!(d.treatment_free.row(0).to_vec(), vec![1.0, 0.7, -1.0, 1.0, -1.0, 0.2]);
        assert_eq!(d.blip.row(0).to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(d.treatment[0], -1.0);
    }

    #[test]
    fn design_rows_missing_covariate_names_location() {
        let cols = StageColumns {
            treatment_free: vec![ColumnSpec::Stage1(5)],
            blip: vec![ColumnSpec::Intercept],
        };
        let ds = StudyDataset::new(vec![one_stage_traj(vec![1.0], 1, true)], 1).unwrap();
        let err = build_design_rows(&ds, &cols, Stage::One).unwrap_err();
        assert_eq!(err, CoreError::MissingCovariate { index: 0, column: "x1[5]".into() });
    }

    #[test]
    fn design_rows_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajs: Vec<_> = (0..8)
            .map(|_| one_stage_traj(vec![rng.random(), rng.random()], 1, rng.random::<bool>()))
            .collect();
        let cols = StageColumns {
            treatment_free: vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0), ColumnSpec::Stage1(1)],
            blip: vec![ColumnSpec::Stage1(0)],
        };
        let ds = StudyDataset::new(trajs.clone(), trajs.len()).unwrap();
        let d = build_design_rows(&ds, &cols, Stage::One).unwrap();
        let mut rev = trajs.clone();
        rev.reverse();
        let ds_rev = StudyDataset::new(rev, trajs.len()).unwrap();
        let d_rev = build_design_rows(&ds_rev, &cols, Stage::One).unwrap();
        for i in 0..trajs.len() {
            assert_eq!(
                d.treatment_free.row(i).to_vec(),
                d_rev.treatment_free.row(trajs.len() - 1 - i).to_vec()
            );
        }
    }

    #[test]
    fn standardize_basic_and_round_trip() {
        let trajs = vec![
            one_stage_traj(vec![1.0], 1, true),
            one_stage_traj(vec![2.0], -1, false),
            one_stage_traj(vec![3.0], 1, true),
        ];
        let ds = StudyDataset::new(trajs, 3).unwrap();
        let (std_ds, tr) = standardize_columns(&ds, &[ColumnSpec::Stage1(0)]).unwrap();
        let vals: Vec<f64> =
            std_ds.trajectories().iter().map(|t| t.stage1_covariates()[0]).collect();
        assert_eq!(vals, vec![-1.0, 0.0, 1.0]);
        assert_eq!(tr[0].mean, 2.0);
        assert_eq!(tr[0].scale, 1.0);
        // Round trip restores the originals.
        for (t, orig) in std_ds.trajectories().iter().zip([1.0, 2.0, 3.0]) {
            let back = t.stage1_covariates()[0] * tr[0].scale + tr[0].mean;
            assert!((back - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let trajs = vec![one_stage_traj(vec![5.0], 1, true), one_stage_traj(vec![5.0], -1, false)];
        let ds = StudyDataset::new(trajs, 2).unwrap();
        let err = standardize_columns(&ds, &[ColumnSpec::Stage1(0)]).unwrap_err();
        assert_eq!(err, CoreError::ZeroVariance("x1[0]".into()));
    }

    #[test]
    fn standardize_rejects_non_covariate() {
        let ds = StudyDataset::new(vec![one_stage_traj(vec![1.0], 1, true)], 1).unwrap();
        assert!(matches!(
            standardize_columns(&ds, &[ColumnSpec::Treatment1]),
            Err(CoreError::NotACovariate(_))
        ));
    }

    #[test]
    fn dataset_invariants_enforced() {
        // Validation rows need both outcomes.
        let t = Trajectory::one_stage(vec![0.0], Treatment::Pos, None, Some(true)).unwrap();
        assert!(matches!(
            StudyDataset::new(vec![t.clone()], 1),
            Err(CoreError::ValidationOutcome { .. })
        ));
        // Main rows need the surrogate.
        let t2 = Trajectory::one_stage(vec![0.0], Treatment::Pos, Some(true), None).unwrap();
        assert!(matches!(StudyDataset::new(vec![t2], 0), Err(CoreError::MainOutcome { .. })));
        // No outcome at all is rejected at the trajectory level.
        assert!(matches!(
            Trajectory::<f64>::one_stage(vec![0.0], Treatment::Pos, None, None),
            Err(CoreError::MissingOutcome)
        ));
        assert!(matches!(Treatment::from_pm1(0), Err(CoreError::InvalidTreatment(0))));
    }

    #[test]
    fn regime_decides_by_blip_sign() {
        let regime = Regime::<f64> {
            stage1: None,
            stage2: (
                vec![ColumnSpec::Intercept, ColumnSpec::Stage1(0)],
                ndarray::array![0.25, 0.5],
            ),
        };
        let pos = one_stage_traj(vec![1.0], 1, true);
        let neg = one_stage_traj(vec![-1.0], 1, true);
        assert_eq!(regime.decide_stage2(&pos), Some(Treatment::Pos));
        assert_eq!(regime.decide_stage2(&neg), Some(Treatment::Neg));
    }
}
