//! Slow calibration probes, ignored by default. Run with
//! `cargo test -p dtrq --test calibration --release -- --ignored --nocapture`.

use dtrq::core::MisclassRates;
use dtrq::qlearn::Method;
use dtrq::sim::{run_predictive, run_replications, Scenario, ScenarioConfig};

#[test]
#[ignore]
fn time_one_stage_cell() {
    let config = ScenarioConfig {
        scenario: Scenario::OneStage,
        n: 2000,
        test_n: 0,
        rho: 0.5,
        rates: MisclassRates::new(0.2, 0.2).unwrap(),
        replications: 20,
        bootstrap_samples: 200,
        seed: 314159,
    };
    let t0 = std::time::Instant::now();
    let report = run_replications(&config, &Method::ALL).unwrap();
    println!("one-stage 20 reps with bootstrap: {:.1?}", t0.elapsed());
    for ms in &report.methods {
        print!("{:>16}:", ms.method.label());
        for p in &ms.summary.parameters {
            print!(
                "  {} bias={:+.3} se={:.3} cr={:?}",
                p.name,
                p.bias,
                p.se,
                p.coverage.map(|c| (c * 1000.0).round() / 10.0)
            );
        }
        println!("  failures={}", ms.summary.failure_count);
    }
}

#[test]
#[ignore]
fn time_two_stage_cell() {
    let config = ScenarioConfig {
        scenario: Scenario::TwoStage,
        n: 2000,
        test_n: 0,
        rho: 0.5,
        rates: MisclassRates::new(0.3, 0.3).unwrap(),
        replications: 20,
        bootstrap_samples: 200,
        seed: 314159,
    };
    let t0 = std::time::Instant::now();
    let report = run_replications(&config, &Method::ALL).unwrap();
    println!("two-stage 20 reps with bootstrap: {:.1?}", t0.elapsed());
    for ms in &report.methods {
        print!("{:>16}:", ms.method.label());
        for p in &ms.summary.parameters {
            print!("  {} bias={:+.3}", p.name, p.bias);
        }
        println!("  failures={}", ms.summary.failure_count);
    }
}

#[test]
#[ignore]
fn time_predictive_cell() {
    let config = ScenarioConfig {
        scenario: Scenario::Predictive,
        n: 2000,
        test_n: 5000,
        rho: 0.3,
        rates: MisclassRates::new(0.3, 0.3).unwrap(),
        replications: 50,
        bootstrap_samples: 0,
        seed: 314159,
    };
    let t0 = std::time::Instant::now();
    let report = run_predictive(&config, &Method::ALL).unwrap();
    println!("predictive 50 reps: {:.1?}", t0.elapsed());
    for ms in &report.methods {
        let m = ms.metrics;
        println!(
            "{:>16}: s2={:.1} s1={:.1} both={:.1} err={:.1} sens={:.1} spec={:.1} fail={}",
            ms.method.label(),
            m.regime_accuracy_stage2 * 100.0,
            m.regime_accuracy_stage1 * 100.0,
            m.regime_accuracy_both * 100.0,
            m.outcome_error_rate * 100.0,
            m.sensitivity * 100.0,
            m.specificity * 100.0,
            ms.failure_count
        );
    }
}
