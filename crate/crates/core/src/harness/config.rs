use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{PrivacyBudget, Shape};
use crate::error::{Error, Result};
use crate::losses::{Ball, LinearLoss, Loss, NormLoss, PopulationSpec, QuadraticLoss};
use crate::optimizer::{phase_count, DEFAULT_LOCALIZATION_C, DEFAULT_T_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dpsgd,
    Localized,
    Nonprivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Real,
    /// Every privacy and smoothing draw is zero. Results are not private.
    Zeroed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    Norm,
    Quadratic,
    Linear,
}

/// Axes of a sweep; an absent axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
}

fn default_t_cap() -> usize {
    DEFAULT_T_CAP
}
fn default_repetitions() -> usize {
    1
}
fn default_fresh() -> usize {
    10_000
}
fn default_c() -> f64 {
    DEFAULT_LOCALIZATION_C
}
fn default_mu() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    1.0
}

/// One experiment, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossId,
    /// Strong-convexity parameter of the quadratic loss.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Item distribution; its center is truncated or zero-padded to `d`.
    pub population: PopulationSpec,
    /// The domain is the origin-centred ball of this radius.
    #[serde(default = "default_radius")]
    pub domain_radius: f64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub algorithm: Algorithm,
    #[serde(default = "default_t_cap")]
    pub t_cap: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fresh population draws per excess-risk estimate.
    #[serde(default = "default_fresh")]
    pub fresh_samples: usize,
    #[serde(default = "default_c")]
    pub localization_c: f64,
    /// Iterations of the non-private baseline; defaults to one pass (`n m`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonprivate_iterations: Option<usize>,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn shape(&self) -> Shape {
        Shape {
            n: self.n,
            m: self.m,
            d: self.d,
        }
    }

    /// Checks everything that can be checked without running, and fills in
    /// dimension-dependent fields. Errors are configuration errors.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = self.clone();
        if c.n == 0 || c.m == 0 || c.d == 0 {
            return Err(config_err("n, m and d must be positive"));
        }
        if c.repetitions == 0 {
            return Err(config_err("repetitions must be >= 1"));
        }
        if c.t_cap == 0 {
            return Err(config_err("t_cap must be positive"));
        }
        if c.fresh_samples < 1000 {
            return Err(config_err("fresh_samples must be >= 1000"));
        }
        if !(c.domain_radius > 0.0 && c.domain_radius.is_finite()) {
            return Err(config_err("domain_radius must be positive"));
        }
        if c.nonprivate_iterations == Some(0) {
            return Err(config_err("nonprivate_iterations must be positive"));
        }
        self.budget()?;
        c.population = c.population.with_dim(c.d);
        c.population
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if c.loss == LossId::Quadratic && !(c.mu > 0.0 && c.mu.is_finite()) {
            return Err(config_err("mu must be positive"));
        }
        if c.algorithm == Algorithm::Localized {
            if c.loss != LossId::Quadratic {
                return Err(config_err(
                    "the localized algorithm needs a strongly convex loss (quadratic)",
                ));
            }
            if !(c.localization_c > 2.0 && c.localization_c.is_finite()) {
                return Err(config_err("localization_c must exceed 2"));
            }
            let k = phase_count(c.n, c.m);
            if c.n < (1 << k) * k {
                return Err(config_err(format!(
                    "localization with k = {k} phases needs n >= {}, got {}",
                    (1 << k) * k,
                    c.n
                )));
            }
        }
        c.build_loss()?;
        c.sweep = None;
        Ok(c)
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon, self.delta).map_err(|e| config_err(e.to_string()))
    }

    pub fn domain(&self) -> Result<Ball> {
        Ball::centered(self.d, self.domain_radius).map_err(|e| config_err(e.to_string()))
    }

    /// Instantiates the loss. The quadratic loss is declared on the domain
    /// widened by its radius, which contains every smoothing perturbation the
    /// default schedules produce.
    pub fn build_loss(&self) -> Result<Box<dyn Loss>> {
        let domain = self.domain()?;
        let bound = || {
            self.population.item_norm_bound().ok_or_else(|| {
                config_err(format!(
                    "{:?} loss needs a bounded population (clipped_gaussian or point_mass)",
                    self.loss
                ))
            })
        };
        Ok(match self.loss {
            LossId::Norm => Box::new(NormLoss::new(domain)),
            LossId::Quadratic => Box::new(
                QuadraticLoss::new(
                    self.mu,
                    bound()?.max(f64::MIN_POSITIVE),
                    domain,
                    self.domain_radius,
                )
                .map_err(|e| config_err(e.to_string()))?,
            ),
            LossId::Linear => Box::new(
                LinearLoss::new(bound()?.max(f64::MIN_POSITIVE), domain)
                    .map_err(|e| config_err(e.to_string()))?,
            ),
        })
    }

    /// Lower-case hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Grid points of the sweep, in row-major order over (n, m, d, epsilon).
    pub fn sweep_points(&self) -> Result<Vec<ExperimentConfig>> {
        let grid = self
            .sweep
            .clone()
            .ok_or_else(|| config_err("config has no `sweep` section"))?;
        let ns = grid.n.unwrap_or_else(|| vec![self.n]);
        let ms = grid.m.unwrap_or_else(|| vec![self.m]);
        let ds = grid.d.unwrap_or_else(|| vec![self.d]);
        let es = grid.epsilon.unwrap_or_else(|| vec![self.epsilon]);
        if ns.is_empty() || ms.is_empty() || ds.is_empty() || es.is_empty() {
            return Err(config_err("sweep axes must be non-empty"));
        }
        let mut out = Vec::new();
        for &n in &ns {
            for &m in &ms {
                for &d in &ds {
                    for &epsilon in &es {
                        let mut c = self.clone();
                        c.sweep = None;
                        c.n = n;
                        c.m = m;
                        c.d = d;
                        c.epsilon = epsilon;
                        out.push(c.resolve()?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> &'static str {
        r#"{
            "loss": "norm",
            "population": {"kind": "gaussian", "mean": [0.5], "sigma": 1.0},
            "n": 16, "m": 4, "d": 3,
            "epsilon": 2.0, "delta": 1e-5,
            "algorithm": "dpsgd",
            "t_cap": 1000, "repetitions": 2, "seed": 7
        }"#
    }

    #[test]
    fn parses_and_resolves() {
        let c = ExperimentConfig::from_json(base()).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.population.dim(), 3);
        assert_eq!(r.population.center(), &[0.5, 0.0, 0.0]);
        assert_eq!(r.fresh_samples, 10_000);
        assert_eq!(r.hash(), r.clone().hash());
        assert_eq!(r.hash().len(), 64);
        let mut other = r.clone();
        other.seed = 8;
        assert_ne!(other.hash(), r.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            ExperimentConfig::from_json("{"),
            Err(Error::Config(_))
        ));
        let with_typo = base().replace("\"seed\"", "\"sead\"");
        assert!(ExperimentConfig::from_json(&with_typo).is_err());
        let mut c = ExperimentConfig::from_json(base()).unwrap();
        c.epsilon = 0.0;
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::from_json(base()).unwrap();
        c.algorithm = Algorithm::Localized;
        assert!(c.resolve().is_err());
        let mut c = ExperimentConfig::from_json(base()).unwrap();
        c.loss = LossId::Quadratic;
        // unbounded Gaussian items
        assert!(c.resolve().is_err());
        c.population = PopulationSpec::ClippedGaussian {
            mean: vec![0.0],
            sigma: 1.0,
            clip: 2.0,
        };
        c.algorithm = Algorithm::Localized;
        c.n = 20;
        c.m = 4;
        // mn = 80 gives k = 3 phases, which need 24 users
        assert!(c.resolve().is_err());
        c.n = 24;
        c.resolve().unwrap();
    }

    #[test]
    fn sweep_grid_expands_in_order() {
        let mut c = ExperimentConfig::from_json(base()).unwrap();
        c.sweep = Some(SweepGrid {
            m: Some(vec![4, 16]),
            epsilon: Some(vec![0.5, 1.0, 2.0]),
            ..Default::default()
        });
        let pts = c.sweep_points().unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[0].m, pts[0].epsilon), (4, 0.5));
        assert_eq!((pts[5].m, pts[5].epsilon), (16, 2.0));
        assert!(pts.iter().all(|p| p.sweep.is_none()));
        c.sweep = None;
        assert!(c.sweep_points().is_err());
    }
}
