//! TOML configuration files for the two run modes. Every command-line flag
//! mirrors a config key; flags override file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use dtrq::core::MisclassRates;
use dtrq::qlearn::Method;
use dtrq::sim::{Scenario, ScenarioConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(CliError::Config(format!("unknown output format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// `[simulation]` section of a simulate config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub scenario: String,
    pub n: Option<usize>,
    pub test_n: Option<usize>,
    pub rho: Option<f64>,
    pub gamma10: Option<f64>,
    pub gamma01: Option<f64>,
    pub replications: Option<usize>,
    pub bootstrap_samples: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Flag-level overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub gamma10: Option<f64>,
    pub gamma01: Option<f64>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// A fully resolved simulate run.
#[derive(Debug, Clone)]
pub struct SimulatePlan {
    pub config: ScenarioConfig,
    pub methods: Vec<Method>,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
}

pub fn parse_scenario(s: &str) -> Result<Scenario, CliError> {
    match s {
        "one_stage" => Ok(Scenario::OneStage),
        "two_stage" => Ok(Scenario::TwoStage),
        "predictive" => Ok(Scenario::Predictive),
        other => Err(CliError::Config(format!(
            "unknown scenario '{other}' (expected one_stage, two_stage, or predictive)"
        ))),
    }
}

fn parse_method(s: &str) -> Result<Method, CliError> {
    match s {
        "validation_only" => Ok(Method::ValidationOnly),
        "naive" => Ok(Method::Naive),
        "mle_corrected" => Ok(Method::MleCorrected),
        other => Err(CliError::Config(format!("unknown method '{other}'"))),
    }
}

pub fn load_simulate_plan(
    path: Option<&Path>,
    scenario_flag: Option<&str>,
    overrides: &Overrides,
) -> Result<SimulatePlan, CliError> {
    let file: Option<SimulateFile> = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            Some(toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?)
        }
        None => None,
    };

    let scenario = match (scenario_flag, &file) {
        (Some(s), _) => parse_scenario(s)?,
        (None, Some(f)) => parse_scenario(&f.simulation.scenario)?,
        (None, None) => {
            return Err(CliError::Config("a config file or --scenario is required".into()))
        }
    };

    let sim = file.as_ref().map(|f| &f.simulation);
    let pick_usize = |ov: Option<usize>, file_v: Option<usize>, default: usize| {
        ov.or(file_v).unwrap_or(default)
    };
    let gamma10 = overrides.gamma10.or(sim.and_then(|s| s.gamma10)).unwrap_or(0.0);
    let gamma01 = overrides.gamma01.or(sim.and_then(|s| s.gamma01)).unwrap_or(0.0);
    let rates = MisclassRates::new(gamma10, gamma01)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let config = ScenarioConfig {
        scenario,
        n: pick_usize(overrides.n, sim.and_then(|s| s.n), 2000),
        test_n: pick_usize(None, sim.and_then(|s| s.test_n), 5000),
        rho: overrides.rho.or(sim.and_then(|s| s.rho)).unwrap_or(0.5),
        rates,
        replications: pick_usize(overrides.replications, sim.and_then(|s| s.replications), 500),
        bootstrap_samples: pick_usize(None, sim.and_then(|s| s.bootstrap_samples), 200),
        seed: overrides.seed.or(sim.and_then(|s| s.seed)).unwrap_or(20_210_501),
    };
    config.validate().map_err(CliError::from)?;

    let methods = match sim.and_then(|s| s.methods.clone()) {
        Some(names) => {
            let mut out = Vec::new();
            for name in names {
                out.push(parse_method(&name)?);
            }
            if out.is_empty() {
                return Err(CliError::Config("methods list is empty".into()));
            }
            out
        }
        None => Method::ALL.to_vec(),
    };

    let output_path = overrides.out.clone().or(file.as_ref().and_then(|f| f.output.path.clone()));
    let format = overrides
        .format
        .or(file.as_ref().and_then(|f| f.output.format))
        .unwrap_or(OutputFormat::Csv);

    Ok(SimulatePlan { config, methods, output_path, format })
}

/// `[data]` section of an analyze config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: PathBuf,
    /// Observed (surrogate) outcome column.
    pub outcome: String,
    /// One treatment column (single decision) or two (stage 1 then stage 2).
    pub treatments: Vec<String>,
    /// Names of covariates that belong to the second stage.
    #[serde(default)]
    pub stage2_covariates: Vec<String>,
    /// Optional 0/1 column flagging validation rows.
    pub validation_flag: Option<String>,
    /// True-outcome column, required for rows flagged as validation.
    pub true_outcome: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub treatment_free: Vec<String>,
    pub blip: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelTables {
    pub stage1: ModelSection,
    pub stage2: Option<ModelSection>,
    #[serde(default)]
    pub standardize: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivitySection {
    /// `(gamma10, gamma01)` pairs, each satisfying the monotonicity bound.
    pub gamma_grid: Vec<[f64; 2]>,
    pub bootstrap_samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeFile {
    pub data: DataSection,
    pub model: ModelTables,
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A fully resolved analyze run.
#[derive(Debug, Clone)]
pub struct AnalyzePlan {
    pub data: DataSection,
    pub model: ModelTables,
    pub gamma_grid: Vec<MisclassRates<f64>>,
    pub bootstrap_samples: usize,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
}

pub fn load_analyze_plan(path: &Path, overrides: &Overrides) -> Result<AnalyzePlan, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: AnalyzeFile = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;

    if file.data.treatments.is_empty() || file.data.treatments.len() > 2 {
        return Err(CliError::Config("treatments must list one or two columns".into()));
    }
    if file.data.treatments.len() == 2 && file.model.stage2.is_none() {
        return Err(CliError::Config("two treatments require a [model.stage2] section".into()));
    }
    if file.data.validation_flag.is_some() && file.data.true_outcome.is_none() {
        return Err(CliError::Config("validation_flag requires a true_outcome column".into()));
    }
    if file.model.stage1.blip.is_empty() {
        return Err(CliError::Config("stage-1 blip columns must be nonempty".into()));
    }
    if let Some(s2) = &file.model.stage2 {
        if s2.blip.is_empty() {
            return Err(CliError::Config("stage-2 blip columns must be nonempty".into()));
        }
    }

    // A flagged gamma pair replaces the whole grid.
    let pairs: Vec<[f64; 2]> = match (overrides.gamma10, overrides.gamma01) {
        (None, None) => file.sensitivity.gamma_grid.clone(),
        (g10, g01) => vec![[g10.unwrap_or(0.0), g01.unwrap_or(0.0)]],
    };
    if pairs.is_empty() {
        return Err(CliError::Config("gamma_grid must contain at least one pair".into()));
    }
    let mut gamma_grid = Vec::with_capacity(pairs.len());
    for [g10, g01] in pairs {
        gamma_grid
            .push(MisclassRates::new(g10, g01).map_err(|e| CliError::Config(e.to_string()))?);
    }

    let bootstrap_samples =
        file.sensitivity.bootstrap_samples.unwrap_or(200);
    if bootstrap_samples < 50 {
        return Err(CliError::Config("bootstrap_samples must be >= 50".into()));
    }

    Ok(AnalyzePlan {
        data: file.data,
        model: file.model,
        gamma_grid,
        bootstrap_samples,
        seed: overrides.seed.or(file.sensitivity.seed).unwrap_or(20_210_501),
        output_path: overrides.out.clone().or(file.output.path),
        format: overrides.format.or(file.output.format).unwrap_or(OutputFormat::Csv),
    })
}

/// Validates either kind of config file, reporting what it found.
pub fn validate_config_file(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if value.get("simulation").is_some() {
        let plan = load_simulate_plan(Some(path), None, &Overrides::default())?;
        Ok(format!(
            "ok: simulate config ({:?}, n={}, rho={}, replications={})",
            plan.config.scenario, plan.config.n, plan.config.rho, plan.config.replications
        ))
    } else if value.get("data").is_some() {
        let plan = load_analyze_plan(path, &Overrides::default())?;
        Ok(format!(
            "ok: analyze config (input={}, {} gamma points, bootstrap={})",
            plan.data.input.display(),
            plan.gamma_grid.len(),
            plan.bootstrap_samples
        ))
    } else {
        Err(CliError::Config(
            "config must contain a [simulation] or a [data] section".into(),
        ))
    }
}
