//! Named batteries of property checks for the `verify` subcommand.

use crate::data::PrivacyBudget;
use crate::error::{invalid, Result};
use crate::losses::{Ball, NormLoss, PopulationSpec, QuadraticLoss};
use crate::noise::RngStream;
use crate::verify::{
    check_above_threshold_accuracy, check_gradient_concentration, check_prob_sensitivity,
    check_smoothing, coupling_tail_check, coupling_threshold_oracle, empirical_noise_audit,
    finite_diff_check, sensitivity_audit, CheckReport, ConcentrationCheck, NoiseAudit,
    SmoothingCheck,
};

pub const SUITES: [&str; 7] = [
    "sensitivity",
    "coupling",
    "mean",
    "sparse_vector",
    "smoothing",
    "concentration",
    "finite_diff",
];

/// Runs suite `name` (or every suite for `"all"`). `trials` overrides each
/// suite's main trial count.
pub fn run_suite(name: &str, trials: Option<usize>, seed: u64) -> Result<Vec<CheckReport>> {
    if name == "all" {
        let mut out = Vec::new();
        for s in SUITES {
            out.extend(run_suite(s, trials, seed)?);
        }
        return Ok(out);
    }
    let pick = |default: usize| trials.unwrap_or(default).max(1);
    // every suite gets its own stream so suites are independent of each other
    let stream = SUITES.iter().position(|s| *s == name).ok_or_else(|| {
        invalid(format!(
            "unknown suite `{name}`; expected one of {SUITES:?} or `all`"
        ))
    })?;
    let mut rng = RngStream::new(seed, 1000 + stream as u64);
    match name {
        "sensitivity" => {
            let tight: Vec<Vec<f64>> = (0..10).map(|i| vec![0.01 * i as f64, 0.0]).collect();
            Ok(vec![
                check_prob_sensitivity(&tight, &tight[3].clone(), 3, 1.0)?,
                check_prob_sensitivity(&tight, &[100.0, 0.0], 3, 1.0)?,
                sensitivity_audit(pick(1000), &mut rng)?,
            ])
        }
        "coupling" => {
            let n = 50;
            let p = vec![2.0 / n as f64; n];
            let q = vec![0.0; n];
            Ok(vec![
                coupling_threshold_oracle(200, 2000, &[0.1, 0.01, 0.001], &mut rng.fork(0))?,
                coupling_tail_check(&p, &q, 0.01, pick(100_000), &mut rng.fork(1))?,
            ])
        }
        "mean" => {
            let audit = NoiseAudit {
                n: 10,
                d: 4,
                tau: 1.0,
                queries: 1,
                budget: PrivacyBudget::new(1.0, 0.1)?,
                trials: pick(10_000),
                zero_noise: false,
            };
            Ok(vec![
                empirical_noise_audit(audit, &mut rng.fork(0))?,
                empirical_noise_audit(
                    NoiseAudit {
                        zero_noise: true,
                        trials: 100,
                        ..audit
                    },
                    &mut rng.fork(1),
                )?,
            ])
        }
        "sparse_vector" => Ok(vec![check_above_threshold_accuracy(
            50,
            0.01,
            1.0,
            1.0,
            pick(1000),
            &mut rng,
        )?]),
        "smoothing" => {
            let d = 5;
            let loss = NormLoss::new(Ball::centered(d, 1.0)?);
            let spec = PopulationSpec::Gaussian {
                mean: vec![0.0; d],
                sigma: 1.0,
            };
            let mut params = SmoothingCheck::new(0.1);
            params.smoothness_probes = pick(1000);
            Ok(vec![check_smoothing(&loss, &spec, params, &mut rng)?])
        }
        "concentration" => {
            let d = 5;
            let loss = NormLoss::new(Ball::centered(d, 1.0)?);
            let spec = PopulationSpec::Gaussian {
                mean: vec![0.0; d],
                sigma: 1.0,
            };
            let mut theta = vec![0.0; d];
            theta[0] = 0.5;
            let params = ConcentrationCheck {
                n: 20,
                m: 16,
                r: 0.05,
                gamma: 0.05,
                datasets: pick(1000),
                population_items: 1_000_000,
            };
            Ok(vec![check_gradient_concentration(
                &loss, &spec, &theta, params, &mut rng,
            )?])
        }
        "finite_diff" => {
            let quad = QuadraticLoss::new(1.0, 3.0, Ball::centered(3, 1.0)?, 1.0)?;
            let norm = NormLoss::new(Ball::centered(3, 1.0)?);
            let mut out = Vec::new();
            for _ in 0..pick(20) {
                let theta: Vec<f64> = (0..3).map(|_| rng.uniform() - 0.5).collect();
                let z: Vec<f64> = (0..3).map(|_| 2.0 * rng.uniform() - 1.0).collect();
                out.push(finite_diff_check(&quad, &theta, &z, 1e-6)?);
                let far: Vec<f64> = z.iter().map(|v| v + 3.0).collect();
                out.push(finite_diff_check(&norm, &theta, &far, 1e-6)?);
            }
            // at the kink the check must skip rather than fail
            out.push(finite_diff_check(
                &norm,
                &[0.1, 0.2, 0.3],
                &[0.1, 0.2, 0.3],
                1e-6,
            )?);
            Ok(out)
        }
        _ => unreachable!(),
    }
}
