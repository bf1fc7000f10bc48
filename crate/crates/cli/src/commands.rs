//! Subcommand implementations.

use dtrq::core::{standardize_columns, MisclassRates};
use dtrq::qlearn::{fit_qlearning, Method, ProblemSpec, QLearnOptions};
use dtrq::sim::{self, run_predictive, run_replications, Purpose, Scenario, SimError};

use crate::config::{AnalyzePlan, SimulatePlan};
use crate::ingest::ingest_csv;
use crate::report::{
    predictive_records, print_predictive_table, print_sensitivity_table, print_sim_table,
    render_rule, sim_records, write_predictive_report, write_sensitivity_report,
    write_sim_report, RuleRecord, SensitivityRecord,
};
use crate::CliError;

/// Runs a simulation study and emits the report.
pub fn run_simulate(plan: &SimulatePlan) -> Result<(), CliError> {
    let c = &plan.config;
    println!(
        "scenario={:?} n={} rho={} gamma=({}, {}) replications={} bootstrap={} seed={}",
        c.scenario,
        c.n,
        c.rho,
        c.rates.gamma10(),
        c.rates.gamma01(),
        c.replications,
        c.bootstrap_samples,
        c.seed
    );

    match c.scenario {
        Scenario::Predictive => {
            let report = run_predictive(c, &plan.methods)?;
            let records = predictive_records(&report);
            print_predictive_table(&records);
            for ms in &report.methods {
                if ms.failure_count > 0 {
                    eprintln!(
                        "warning: {} dropped {} of {} replications",
                        ms.method,
                        ms.failure_count,
                        c.replications
                    );
                }
            }
            if let Some(path) = &plan.output_path {
                write_predictive_report(path, plan.format, &records)?;
                println!("report written to {}", path.display());
            }
        }
        _ => {
            let report = match run_replications(c, &plan.methods) {
                Ok(r) => r,
                Err(SimError::ExcessiveFailures { method, failed, total, report }) => {
                    // Emit the partial summaries before failing.
                    let records = sim_records(&report);
                    print_sim_table(&records);
                    return Err(CliError::Numerical(format!(
                        "{failed} of {total} replications failed for {method}"
                    )));
                }
                Err(e) => return Err(e.into()),
            };
            let records = sim_records(&report);
            print_sim_table(&records);
            for ms in &report.methods {
                if ms.summary.failure_count > 0 {
                    eprintln!(
                        "warning: {} dropped {} of {} replications ({} bootstrap failures)",
                        ms.method,
                        ms.summary.failure_count,
                        c.replications,
                        ms.summary.bootstrap_failures
                    );
                }
            }
            let scenario = match c.scenario {
                Scenario::OneStage => "one_stage",
                Scenario::TwoStage => "two_stage",
                Scenario::Predictive => unreachable!(),
            };
            if let Some(path) = &plan.output_path {
                write_sim_report(path, plan.format, scenario, &records)?;
                println!("report written to {}", path.display());
            }
        }
    }
    Ok(())
}

/// Labels for blip coefficients in sensitivity reports: the intercept column
/// is the treatment's own effect, other columns are treatment interactions.
fn blip_labels(treatment: &str, blip_names: &[String]) -> Vec<String> {
    blip_names
        .iter()
        .map(|n| {
            if n == "intercept" {
                treatment.to_string()
            } else {
                format!("{treatment}*{n}")
            }
        })
        .collect()
}

/// Runs the fixed-rate sensitivity analysis: a naive fit, then the corrected
/// fit at every configured `(gamma10, gamma01)` point, each with percentile
/// bootstrap intervals over whole-row resamples.
pub fn run_analyze(plan: &AnalyzePlan) -> Result<(), CliError> {
    if plan.model.stage2.is_some() {
        return Err(CliError::Config(
            "sensitivity analysis supports single-decision configurations only".into(),
        ));
    }
    let (dataset, index) = ingest_csv(plan)?;
    println!(
        "loaded {} rows ({} validation) from {}",
        dataset.n(),
        dataset.n_validation(),
        plan.data.input.display()
    );

    // Standardize the configured continuous columns over the pooled dataset.
    let specs = plan
        .model
        .standardize
        .iter()
        .map(|n| index.resolve(n))
        .collect::<Result<Vec<_>, _>>()?;
    let (dataset, transforms) = if specs.is_empty() {
        (dataset, Vec::new())
    } else {
        standardize_columns(&dataset, &specs).map_err(|e| CliError::Data(e.to_string()))?
    };
    for (t, name) in transforms.iter().zip(&plan.model.standardize) {
        println!("standardized {name}: mean={:.6} sd={:.6}", t.mean, t.scale);
    }

    let spec = index.problem_spec(plan)?;
    debug_assert!(matches!(spec, ProblemSpec::OneStage { .. }));
    let labels = blip_labels(&plan.data.treatments[0], &plan.model.stage1.blip);

    let mut records: Vec<SensitivityRecord> = Vec::new();
    let mut rules: Vec<RuleRecord> = Vec::new();
    let mut successes = 0usize;

    // One index stream shared by every fit so the naive row and a (0,0) grid
    // point see identical resamples.
    let boot_stream = || sim::stream(plan.seed, 0, Purpose::Bootstrap, 0);

    let run_point = |method: Method,
                         rates: Option<MisclassRates<f64>>|
     -> Result<(Vec<f64>, Vec<f64>, Vec<(f64, f64)>), CliError> {
        let options = QLearnOptions { fixed_rates: rates, ..Default::default() };
        let fit = fit_qlearning(&dataset, &spec, method, &options)?;
        if !fit.diagnostics.converged {
            return Err(CliError::Numerical(format!("{method} fit did not converge")));
        }
        let mut rng = boot_stream();
        let ci = sim::bootstrap_ci(
            &dataset,
            &spec,
            method,
            &options,
            Some(&fit),
            0.95,
            plan.bootstrap_samples,
            &mut rng,
        )?;
        Ok((fit.blip_estimates(), ci.se, ci.intervals))
    };

    // The naive row.
    match run_point(Method::Naive, None) {
        Ok((est, se, ci)) => {
            successes += 1;
            rules.push(RuleRecord {
                method: "naive".into(),
                gamma10: None,
                gamma01: None,
                rule: render_rule(&est, &plan.model.stage1.blip),
            });
            for (c, label) in labels.iter().enumerate() {
                records.push(SensitivityRecord {
                    method: "naive".into(),
                    gamma10: 0.0,
                    gamma01: 0.0,
                    parameter: label.clone(),
                    estimate: est[c],
                    se: se[c],
                    ci_low: ci[c].0,
                    ci_high: ci[c].1,
                });
            }
        }
        Err(e) => eprintln!("warning: naive fit failed: {e}"),
    }

    // The corrected fit at each grid point.
    for rates in &plan.gamma_grid {
        match run_point(Method::MleCorrected, Some(*rates)) {
            Ok((est, se, ci)) => {
                successes += 1;
                rules.push(RuleRecord {
                    method: "mle_corrected".into(),
                    gamma10: Some(rates.gamma10()),
                    gamma01: Some(rates.gamma01()),
                    rule: render_rule(&est, &plan.model.stage1.blip),
                });
                for (c, label) in labels.iter().enumerate() {
                    records.push(SensitivityRecord {
                        method: "mle_corrected".into(),
                        gamma10: rates.gamma10(),
                        gamma01: rates.gamma01(),
                        parameter: label.clone(),
                        estimate: est[c],
                        se: se[c],
                        ci_low: ci[c].0,
                        ci_high: ci[c].1,
                    });
                }
            }
            Err(e) => eprintln!(
                "warning: corrected fit at gamma=({}, {}) failed: {e}",
                rates.gamma10(),
                rates.gamma01()
            ),
        }
    }

    if successes == 0 {
        return Err(CliError::Numerical("every sensitivity fit failed".into()));
    }

    print_sensitivity_table(&records);
    for r in &rules {
        match (r.gamma10, r.gamma01) {
            (Some(g10), Some(g01)) => {
                println!("{} (gamma10={g10}, gamma01={g01}): {}", r.method, r.rule)
            }
            _ => println!("{}: {}", r.method, r.rule),
        }
    }
    if let Some(path) = &plan.output_path {
        write_sensitivity_report(path, plan.format, &records, &rules)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
