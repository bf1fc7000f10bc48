//! CSV ingestion: maps named columns onto trajectories and design-column
//! specifications.
//!
//! Treatments arrive coded either 0/1 or -1/+1; 0/1 columns are recoded with
//! 0 mapped to -1 and the recode is noted on stderr. Outcomes must be 0/1.
//! Rows flagged by the optional validation column are moved to the front so
//! the dataset satisfies the validation-first layout.

use std::collections::BTreeMap;
use std::path::Path;

use dtrq::core::{ColumnSpec, StageColumns, StudyDataset, Trajectory, Treatment};
use dtrq::qlearn::ProblemSpec;
use dtrq::Real;

use crate::config::{AnalyzePlan, ModelSection};
use crate::CliError;

/// Resolves configured names to trajectory slots.
#[derive(Debug, Clone)]
pub struct ColumnIndex {
    /// Stage-1 covariate names in slot order.
    pub stage1_names: Vec<String>,
    /// Stage-2 covariate names in slot order.
    pub stage2_names: Vec<String>,
    pub treatment_names: Vec<String>,
}

impl ColumnIndex {
    /// Builds the slot layout from an analyze plan: every covariate name used
    /// by the models (or standardized) gets a slot, stage-2 names as declared.
    pub fn from_plan(plan: &AnalyzePlan) -> Result<Self, CliError> {
        let mut stage1 = Vec::new();
        let stage2: Vec<String> = plan.data.stage2_covariates.clone();
        let special: Vec<&String> = plan.data.treatments.iter().collect();
        let mut note = |name: &str| {
            if name == "intercept" {
                return;
            }
            for factor in name.split('*') {
                if special.iter().any(|t| t.as_str() == factor) {
                    continue;
                }
                if stage2.iter().any(|s| s == factor) {
                    continue;
                }
                if !stage1.iter().any(|s| s == factor) {
                    stage1.push(factor.to_string());
                }
            }
        };
        let mut note_section = |s: &ModelSection| {
            for n in s.treatment_free.iter().chain(s.blip.iter()) {
                note(n);
            }
        };
        note_section(&plan.model.stage1);
        if let Some(s2) = &plan.model.stage2 {
            note_section(s2);
        }
        for n in &plan.model.standardize {
            note(n);
        }
        Ok(ColumnIndex {
            stage1_names: stage1,
            stage2_names: stage2,
            treatment_names: plan.data.treatments.clone(),
        })
    }

    fn atom(&self, name: &str) -> Result<ColumnSpec, CliError> {
        if name == "intercept" {
            return Ok(ColumnSpec::Intercept);
        }
        if let Some(t) = self.treatment_names.first() {
            if t == name {
                return Ok(ColumnSpec::Treatment1);
            }
        }
        if let Some(i) = self.stage1_names.iter().position(|n| n == name) {
            return Ok(ColumnSpec::Stage1(i));
        }
        if let Some(i) = self.stage2_names.iter().position(|n| n == name) {
            return Ok(ColumnSpec::Stage2(i));
        }
        Err(CliError::Config(format!("column '{name}' is not a known covariate or treatment")))
    }

    /// Resolves a configured column name ("intercept", a covariate, the
    /// stage-1 treatment, or a `a*b` product) to a specifier.
    pub fn resolve(&self, name: &str) -> Result<ColumnSpec, CliError> {
        let mut parts = name.split('*');
        let first = parts.next().expect("split yields at least one part");
        let mut spec = self.atom(first)?;
        for factor in parts {
            spec = ColumnSpec::product(spec, self.atom(factor)?);
        }
        Ok(spec)
    }

    pub fn resolve_section(&self, section: &ModelSection) -> Result<StageColumns, CliError> {
        let tf = section
            .treatment_free
            .iter()
            .map(|n| self.resolve(n))
            .collect::<Result<Vec<_>, _>>()?;
        let blip = section.blip.iter().map(|n| self.resolve(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(StageColumns { treatment_free: tf, blip })
    }

    /// Problem layout from the plan's model sections.
    pub fn problem_spec(&self, plan: &AnalyzePlan) -> Result<ProblemSpec, CliError> {
        match &plan.model.stage2 {
            None => Ok(ProblemSpec::OneStage { stage: self.resolve_section(&plan.model.stage1)? }),
            Some(s2) => Ok(ProblemSpec::TwoStage {
                stage1: self.resolve_section(&plan.model.stage1)?,
                stage2: self.resolve_section(s2)?,
            }),
        }
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64, CliError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(CliError::Data(format!("row {row}, column '{column}': missing value")));
    }
    trimmed
        .parse::<f64>()
        .map_err(|_| CliError::Data(format!("row {row}, column '{column}': cannot parse '{raw}'")))
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<bool, CliError> {
    match parse_cell(raw, row, column)? {
        v if v == 0.0 => Ok(false),
        v if v == 1.0 => Ok(true),
        v => Err(CliError::Data(format!(
            "row {row}, column '{column}': value {v} is not a binary 0/1"
        ))),
    }
}

/// Reads the CSV named by the plan into a dataset plus the slot layout.
pub fn ingest_csv(plan: &AnalyzePlan) -> Result<(StudyDataset, ColumnIndex), CliError> {
    let index = ColumnIndex::from_plan(plan)?;
    ingest_csv_from_path(&plan.data.input, plan, index)
}

fn ingest_csv_from_path(
    path: &Path,
    plan: &AnalyzePlan,
    index: ColumnIndex,
) -> Result<(StudyDataset, ColumnIndex), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let position = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("unknown column '{name}' (not in header)")))
    };

    let outcome_col = position(&plan.data.outcome)?;
    let treatment_cols = plan
        .data
        .treatments
        .iter()
        .map(|t| position(t))
        .collect::<Result<Vec<_>, _>>()?;
    let stage1_cols =
        index.stage1_names.iter().map(|n| position(n)).collect::<Result<Vec<_>, _>>()?;
    let stage2_cols =
        index.stage2_names.iter().map(|n| position(n)).collect::<Result<Vec<_>, _>>()?;
    let flag_col = plan.data.validation_flag.as_deref().map(position).transpose()?;
    let truth_col = plan.data.true_outcome.as_deref().map(position).transpose()?;

    // First pass over treatment columns decides the recode per column.
    let mut records: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("row {}: {e}", i + 1)))?;
        records.push(rec);
    }
    let mut zero_one_coded = vec![false; treatment_cols.len()];
    for (ti, &col) in treatment_cols.iter().enumerate() {
        let mut saw_zero = false;
        let mut saw_minus = false;
        for (i, rec) in records.iter().enumerate() {
            let v = parse_cell(&rec[col], i + 1, &plan.data.treatments[ti])?;
            if v == 0.0 {
                saw_zero = true;
            } else if v == -1.0 {
                saw_minus = true;
            } else if v != 1.0 {
                return Err(CliError::Data(format!(
                    "row {}, column '{}': treatment value {v} is not in {{0,1}} or {{-1,1}}",
                    i + 1,
                    plan.data.treatments[ti]
                )));
            }
        }
        if saw_zero && saw_minus {
            return Err(CliError::Data(format!(
                "column '{}': mixes 0/1 and -1/1 treatment codings",
                plan.data.treatments[ti]
            )));
        }
        zero_one_coded[ti] = saw_zero;
        if saw_zero {
            eprintln!(
                "note: treatment column '{}' recoded from 0/1 to -1/+1 (0 -> -1)",
                plan.data.treatments[ti]
            );
        }
    }
    let treatment_of = |raw: &str, ti: usize, row: usize| -> Result<Treatment, CliError> {
        let v = parse_cell(raw, row, &plan.data.treatments[ti])?;
        let coded = if zero_one_coded[ti] {
            if v == 0.0 {
                -1
            } else {
                1
            }
        } else {
            v as i64
        };
        Treatment::from_pm1(coded).map_err(|e| {
            CliError::Data(format!("row {row}, column '{}': {e}", plan.data.treatments[ti]))
        })
    };

    let mut validation: Vec<Trajectory> = Vec::new();
    let mut main: Vec<Trajectory> = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let surrogate = parse_binary(&rec[outcome_col], row, &plan.data.outcome)?;
        let mut s1 = Vec::with_capacity(stage1_cols.len());
        for (ci, &col) in stage1_cols.iter().enumerate() {
            s1.push(parse_cell(&rec[col], row, &index.stage1_names[ci])? as Real);
        }
        let a1 = treatment_of(&rec[treatment_cols[0]], 0, row)?;

        let in_validation = match flag_col {
            Some(col) => parse_binary(&rec[col], row, plan.data.validation_flag.as_ref().unwrap())?,
            None => false,
        };
        let truth = match (in_validation, truth_col) {
            (true, Some(col)) => {
                Some(parse_binary(&rec[col], row, plan.data.true_outcome.as_ref().unwrap())?)
            }
            _ => None,
        };

        let trajectory = if treatment_cols.len() == 2 {
            let mut s2 = Vec::with_capacity(stage2_cols.len());
            for (ci, &col) in stage2_cols.iter().enumerate() {
                s2.push(parse_cell(&rec[col], row, &index.stage2_names[ci])? as Real);
            }
            let a2 = treatment_of(&rec[treatment_cols[1]], 1, row)?;
            Trajectory::two_stage(s1, a1, s2, a2, truth, Some(surrogate))
        } else {
            Trajectory::one_stage(s1, a1, truth, Some(surrogate))
        }
        .map_err(|e| CliError::Data(format!("row {row}: {e}")))?;

        if in_validation {
            validation.push(trajectory);
        } else {
            main.push(trajectory);
        }
    }

    let n_v = validation.len();
    validation.extend(main);
    let dataset =
        StudyDataset::new(validation, n_v).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((dataset, index))
}

/// Writes a dataset back to CSV with the given layout; the inverse of
/// [`ingest_csv`] up to treatment recoding. Used by round-trip tests.
pub fn write_csv(
    path: &Path,
    dataset: &StudyDataset,
    index: &ColumnIndex,
    outcome: &str,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    let mut header: Vec<String> = Vec::new();
    header.extend(index.stage1_names.iter().cloned());
    header.extend(index.stage2_names.iter().cloned());
    header.extend(index.treatment_names.iter().cloned());
    header.push(outcome.to_string());
    w.write_record(&header).map_err(|e| CliError::Data(e.to_string()))?;
    for t in dataset.trajectories() {
        let mut rec: Vec<String> = Vec::new();
        for v in t.stage1_covariates() {
            rec.push(format!("{v}"));
        }
        for v in t.stage2_covariates() {
            rec.push(format!("{v}"));
        }
        rec.push(format!("{}", t.treatment1().sign::<f64>() as i64));
        if let Some(a2) = t.treatment2() {
            rec.push(format!("{}", a2.sign::<f64>() as i64));
        }
        rec.push(if t.surrogate_outcome() == Some(true) { "1".into() } else { "0".into() });
        w.write_record(&rec).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

/// Keyed map of per-column transforms for reporting.
pub type TransformReport = BTreeMap<String, (f64, f64)>;
