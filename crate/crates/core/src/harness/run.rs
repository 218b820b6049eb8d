use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concentrated_mean::noise_variance;
use crate::data::{PrivacyBudget, UserDataset};
use crate::error::{Error, Result};
use crate::losses::{analytic_minimizer, risk_gap, sample_population, Loss, PopulationSpec};
use crate::noise::{NoiseHook, RngStream};
use crate::optimizer::{
    default_config, dpsgd, localized_dpsgd, nonprivate_sgd, BatchMode, LocalizationSchedule,
    SgdConfig, StepSchedule,
};
use crate::stats::McEstimate;

use super::config::{Algorithm, ExperimentConfig, NoiseMode};

/// Data-independent parameters the algorithm runs with, echoed into every report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Derived {
    Dpsgd {
        sgd: SgdConfig,
        lipschitz: f64,
        session_delta: f64,
        noise_variance: f64,
    },
    Localized {
        lipschitz: f64,
        schedule: LocalizationSchedule,
    },
    Nonprivate {
        lipschitz: f64,
        iterations: usize,
        step: StepSchedule,
        batch: BatchMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizerSource {
    Analytic,
    /// Long non-private SGD run on a large fresh sample.
    NonprivateProxy,
}

/// One line of the JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub config_hash: String,
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub private: bool,
    pub excess_risk: f64,
    pub excess_risk_stderr: f64,
    pub halted: bool,
    pub iterations_run: usize,
    /// Mean fraction of users kept by outlier removal over the answered queries.
    pub mean_selected_fraction: Option<f64>,
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub theta_star_source: MinimizerSource,
    /// Only field that is not a function of (config, seed).
    pub wall_time_ms: f64,
    pub config: ExperimentConfig,
    pub derived: Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub repetitions: usize,
    pub mean_excess_risk: f64,
    /// Standard error of the mean across trials.
    pub stderr: f64,
    pub halted_fraction: f64,
}

impl Aggregate {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let risks: Vec<f64> = rows.iter().map(|r| r.excess_risk).collect();
        let est = McEstimate::from_samples(&risks);
        Self {
            repetitions: rows.len(),
            mean_excess_risk: est.mean,
            stderr: est.stderr,
            halted_fraction: rows.iter().filter(|r| r.halted).count() as f64
                / rows.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub private: bool,
    pub derived: Derived,
    pub theta_star: Vec<f64>,
    pub theta_star_source: MinimizerSource,
    pub trials: Vec<TrialRow>,
    pub aggregate: Aggregate,
}

/// Parameters derived from a resolved config and its loss.
pub fn derive(config: &ExperimentConfig, loss: &dyn Loss) -> Result<Derived> {
    let budget = config.budget()?;
    let shape = config.shape();
    let domain = loss.domain();
    let g = loss.lipschitz();
    Ok(match config.algorithm {
        Algorithm::Dpsgd => {
            let sgd = default_config(
                shape,
                budget,
                g,
                domain.diameter(),
                domain.center.clone(),
                config.t_cap,
            )?;
            let session_delta = sgd.session_delta(shape);
            let session_budget = PrivacyBudget::new(budget.epsilon(), session_delta)?;
            Derived::Dpsgd {
                noise_variance: noise_variance(session_budget, sgd.tau, sgd.iterations, shape.n),
                sgd,
                lipschitz: g,
                session_delta,
            }
        }
        Algorithm::Localized => Derived::Localized {
            lipschitz: g,
            schedule: LocalizationSchedule::new(
                shape,
                budget,
                g,
                loss.strong_convexity(),
                config.localization_c,
                domain,
                config.t_cap,
            )?,
        },
        Algorithm::Nonprivate => {
            let iterations = config.nonprivate_iterations.unwrap_or(shape.n * shape.m);
            let mu = loss.strong_convexity();
            let step = if mu > 0.0 {
                StepSchedule::InverseTime { mu }
            } else {
                StepSchedule::Constant {
                    eta: domain.diameter() / (g * (iterations as f64).sqrt()),
                }
            };
            Derived::Nonprivate {
                lipschitz: g,
                iterations,
                step,
                batch: BatchMode::SingleItem,
            }
        }
    })
}

/// Minimizer of the population risk over the domain: closed form when known,
/// otherwise a long non-private SGD run on `200 000` fresh items.
pub fn population_minimizer(
    loss: &dyn Loss,
    spec: &PopulationSpec,
    seed: u64,
) -> Result<(Vec<f64>, MinimizerSource)> {
    if let Some(theta) = analytic_minimizer(loss, spec) {
        return Ok((theta, MinimizerSource::Analytic));
    }
    let rng = RngStream::new(seed, u64::MAX);
    let items = 200_000;
    let data = sample_population(spec, items, 1, &mut rng.fork(0))?;
    let domain = loss.domain();
    let step = match loss.strong_convexity() {
        mu if mu > 0.0 => StepSchedule::InverseTime { mu },
        _ => StepSchedule::Constant {
            eta: domain.diameter() / (loss.lipschitz() * (items as f64).sqrt()),
        },
    };
    let out = nonprivate_sgd(
        &data,
        loss,
        items,
        step,
        BatchMode::SingleItem,
        &domain.center,
        &mut rng.fork(1),
    )?;
    Ok((out.theta, MinimizerSource::NonprivateProxy))
}

/// Perturbed iterates must stay where the loss is Lipschitz; short schedules
/// have large smoothing radii and can violate that.
fn check_smoothing_fits(loss: &dyn Loss, derived: &Derived) -> Result<()> {
    let Some(extended) = loss.extended_domain() else {
        return Ok(());
    };
    let radii: Vec<f64> = match derived {
        Derived::Dpsgd { sgd, .. } => vec![sgd.smoothing_radius],
        Derived::Localized { schedule, .. } => schedule
            .configs
            .iter()
            .map(|c| c.smoothing_radius)
            .collect(),
        Derived::Nonprivate { .. } => vec![],
    };
    let margin = extended.radius - loss.domain().radius;
    match radii.into_iter().reduce(f64::max) {
        Some(r) if r > margin => Err(Error::Config(format!(
            "smoothing radius {r:.4} exceeds the loss margin {margin:.4}; raise t_cap or domain_radius"
        ))),
        _ => Ok(()),
    }
}

struct TrialOutput {
    theta: Vec<f64>,
    halted: bool,
    iterations_run: usize,
    mean_selected_fraction: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (k, total) = values.fold((0usize, 0.0), |(k, s), v| (k + 1, s + v));
    (k > 0).then(|| total / k as f64)
}

fn run_algorithm(
    config: &ExperimentConfig,
    loss: &dyn Loss,
    derived: &Derived,
    data: &UserDataset,
    rng: &mut RngStream,
) -> Result<TrialOutput> {
    match derived {
        Derived::Dpsgd { sgd, .. } => {
            let out = dpsgd(data, loss, sgd, rng)?;
            let n = config.n as f64;
            Ok(TrialOutput {
                halted: out.halted,
                iterations_run: out.trace.len(),
                mean_selected_fraction: mean_of(
                    out.trace.iter().map(|r| r.selected_count as f64 / n),
                ),
                theta: out.theta,
            })
        }
        Derived::Localized { .. } => {
            let out = localized_dpsgd(
                data,
                loss,
                config.budget()?,
                config.localization_c,
                config.t_cap,
                rng,
            )?;
            let fractions = out
                .phases
                .iter()
                .zip(&out.schedule.phase_sizes)
                .flat_map(|(p, &s)| {
                    p.trace
                        .iter()
                        .map(move |r| r.selected_count as f64 / s as f64)
                });
            Ok(TrialOutput {
                halted: out.phases.iter().any(|p| p.halted),
                iterations_run: out.phases.iter().map(|p| p.trace.len()).sum(),
                mean_selected_fraction: mean_of(fractions),
                theta: out.theta,
            })
        }
        Derived::Nonprivate {
            iterations,
            step,
            batch,
            ..
        } => {
            let out = nonprivate_sgd(
                data,
                loss,
                *iterations,
                *step,
                *batch,
                &loss.domain().center,
                rng,
            )?;
            Ok(TrialOutput {
                halted: false,
                iterations_run: out.trace.len(),
                mean_selected_fraction: None,
                theta: out.theta,
            })
        }
    }
}

/// A resolved experiment, ready to run individual trials.
pub struct Experiment {
    config: ExperimentConfig,
    loss: Box<dyn Loss>,
    derived: Derived,
    theta_star: Vec<f64>,
    theta_star_source: MinimizerSource,
    hash: String,
    private: bool,
}

impl Experiment {
    /// Resolves the config and computes every data-independent quantity.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let config = config.resolve()?;
        let loss = config.build_loss()?;
        let derived = derive(&config, loss.as_ref())?;
        check_smoothing_fits(loss.as_ref(), &derived)?;
        let (theta_star, theta_star_source) =
            population_minimizer(loss.as_ref(), &config.population, config.seed)?;
        let hash = config.hash();
        let private = config.noise == NoiseMode::Real && config.algorithm != Algorithm::Nonprivate;
        Ok(Self {
            config,
            loss,
            derived,
            theta_star,
            theta_star_source,
            hash,
            private,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn derived(&self) -> &Derived {
        &self.derived
    }

    /// Trial `t` draws its data, algorithm noise and risk-estimation samples
    /// from streams derived from `(seed, t)`; the same seed therefore gives
    /// identical data across algorithms.
    pub fn trial(&self, trial: usize) -> Result<TrialRow> {
        let config = &self.config;
        let loss = self.loss.as_ref();
        let start = Instant::now();
        let base = RngStream::new(config.seed, trial as u64);
        let data = sample_population(&config.population, config.n, config.m, &mut base.fork(1))?;
        let mut alg_rng = base.fork(2);
        if config.noise == NoiseMode::Zeroed {
            alg_rng = alg_rng.with_hook(NoiseHook::Zeroed);
        }
        let out = run_algorithm(config, loss, &self.derived, &data, &mut alg_rng)?;
        let gap = risk_gap(
            loss,
            &out.theta,
            &self.theta_star,
            &config.population,
            config.fresh_samples,
            &mut base.fork(3),
        )?;
        Ok(TrialRow {
            config_hash: self.hash.clone(),
            trial,
            seed: config.seed,
            algorithm: config.algorithm,
            private: self.private,
            excess_risk: gap.mean,
            excess_risk_stderr: gap.stderr,
            halted: out.halted,
            iterations_run: out.iterations_run,
            mean_selected_fraction: out.mean_selected_fraction,
            theta: out.theta,
            theta_star: self.theta_star.clone(),
            theta_star_source: self.theta_star_source,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            config: config.clone(),
            derived: self.derived.clone(),
        })
    }

    /// All repetitions, in parallel across trials.
    pub fn run(self) -> Result<ExperimentReport> {
        if self.config.noise == NoiseMode::Zeroed {
            log::warn!("noise is zeroed: results are NOT private");
        }
        let trials = (0..self.config.repetitions)
            .into_par_iter()
            .map(|t| self.trial(t))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = Aggregate::from_rows(&trials);
        Ok(ExperimentReport {
            config_hash: self.hash,
            seed: self.config.seed,
            private: self.private,
            derived: self.derived,
            theta_star: self.theta_star,
            theta_star_source: self.theta_star_source,
            trials,
            aggregate,
            config: self.config,
        })
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    Experiment::prepare(config)?.run()
}

/// Re-runs the trial behind `row` from its embedded config and seed.
pub fn replay_row(row: &TrialRow) -> Result<TrialRow> {
    Experiment::prepare(&row.config)?.trial(row.trial)
}
