//! Convex loss oracles, the Euclidean-ball domain, and synthetic populations.

use serde::{Deserialize, Serialize};

use crate::data::{Shape, UserDataset};
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::noise::RngStream;
use crate::stats::{norm, McEstimate};

/// Closed Euclidean ball. Its diameter is what the step-size schedules call `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        ensure_positive("domain radius", radius)?;
        if center.is_empty() {
            return Err(invalid("domain center must have dimension >= 1"));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(d: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; d], radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        crate::stats::distance(x, &self.center) <= self.radius + slack
    }

    /// Euclidean projection; identity on interior points.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        let dist = crate::stats::distance(x, &self.center);
        if dist > self.radius {
            let s = self.radius / dist;
            for (v, c) in x.iter_mut().zip(&self.center) {
                *v = c + (*v - c) * s;
            }
        }
    }
}

/// A family of losses `l(theta; z)`, convex and `G`-Lipschitz in `theta`.
pub trait Loss: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, theta: &[f64], z: &[f64]) -> f64;

    /// Writes a subgradient at `theta` into `out`.
    fn subgradient(&self, theta: &[f64], z: &[f64], out: &mut [f64]);

    fn lipschitz(&self) -> f64;

    fn strong_convexity(&self) -> f64 {
        0.0
    }

    /// The constraint set the optimizers project onto.
    fn domain(&self) -> &Ball;

    /// Region on which the Lipschitz bound is guaranteed. `None` means all of `R^d`.
    fn extended_domain(&self) -> Option<&Ball> {
        None
    }

    fn validate_item(&self, _z: &[f64]) -> Result<()> {
        Ok(())
    }

    fn subgradient_vec(&self, theta: &[f64], z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.subgradient(theta, z, &mut g);
        g
    }
}

/// `|theta - z|`: 1-Lipschitz, convex, non-smooth at `theta = z`.
#[derive(Debug, Clone)]
pub struct NormLoss {
    domain: Ball,
}

impl NormLoss {
    pub fn new(domain: Ball) -> Self {
        Self { domain }
    }
}

impl Loss for NormLoss {
    fn name(&self) -> &str {
        "norm"
    }

    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        crate::stats::distance(theta, z)
    }

    fn subgradient(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        let dist = crate::stats::distance(theta, z);
        if dist == 0.0 {
            out.fill(0.0);
            return;
        }
        for ((o, t), zi) in out.iter_mut().zip(theta).zip(z) {
            *o = (t - zi) / dist;
        }
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn domain(&self) -> &Ball {
        &self.domain
    }
}

/// `(mu/2) |theta - z|^2` with `|z| <= z_bound`. Lipschitz on the extended ball
/// of radius `domain.radius + margin` with `G = mu (|center| + radius + margin + z_bound)`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    mu: f64,
    z_bound: f64,
    domain: Ball,
    extended: Ball,
    lipschitz: f64,
}

impl QuadraticLoss {
    pub fn new(mu: f64, z_bound: f64, domain: Ball, margin: f64) -> Result<Self> {
        ensure_positive("mu", mu)?;
        ensure_positive("z bound", z_bound)?;
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(invalid("margin must be nonnegative"));
        }
        let extended = Ball::new(domain.center.clone(), domain.radius + margin)?;
        let lipschitz = mu * (norm(&domain.center) + extended.radius + z_bound);
        Ok(Self {
            mu,
            z_bound,
            domain,
            extended,
            lipschitz,
        })
    }

    pub fn z_bound(&self) -> f64 {
        self.z_bound
    }
}

impl Loss for QuadraticLoss {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        0.5 * self.mu * crate::stats::distance(theta, z).powi(2)
    }

    fn subgradient(&self, theta: &[f64], z: &[f64], out: &mut [f64]) {
        for ((o, t), zi) in out.iter_mut().zip(theta).zip(z) {
            *o = self.mu * (t - zi);
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn domain(&self) -> &Ball {
        &self.domain
    }

    fn extended_domain(&self) -> Option<&Ball> {
        Some(&self.extended)
    }

    fn validate_item(&self, z: &[f64]) -> Result<()> {
        let nz = norm(z);
        if nz > self.z_bound * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "item norm {nz} exceeds the declared bound {}",
                self.z_bound
            )));
        }
        Ok(())
    }
}

/// `<z, theta>` with `|z| <= z_bound`; used to check smoothing against a linear function.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    z_bound: f64,
    domain: Ball,
}

impl LinearLoss {
    pub fn new(z_bound: f64, domain: Ball) -> Result<Self> {
        ensure_positive("z bound", z_bound)?;
        Ok(Self { z_bound, domain })
    }
}

impl Loss for LinearLoss {
    fn name(&self) -> &str {
        "linear"
    }

    fn value(&self, theta: &[f64], z: &[f64]) -> f64 {
        theta.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    fn subgradient(&self, _theta: &[f64], z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(z);
    }

    fn lipschitz(&self) -> f64 {
        self.z_bound
    }

    fn domain(&self) -> &Ball {
        &self.domain
    }

    fn validate_item(&self, z: &[f64]) -> Result<()> {
        if norm(z) > self.z_bound * (1.0 + 1e-12) {
            return Err(Error::Domain("item exceeds the declared bound".into()));
        }
        Ok(())
    }
}

/// Explicit Euclidean projection onto a ball.
pub fn project(domain: &Ball, theta: &[f64]) -> Vec<f64> {
    domain.project(theta)
}

/// Item distribution `P`. Every built-in generator is symmetric about `mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// `N(mean, sigma^2 I)`.
    Gaussian { mean: Vec<f64>, sigma: f64 },
    /// `mean + clip(N(0, sigma^2 I), clip)`, radially clipped so that `|z - mean| <= clip`.
    ClippedGaussian {
        mean: Vec<f64>,
        sigma: f64,
        clip: f64,
    },
    /// Deterministic `z = at`.
    PointMass { at: Vec<f64> },
}

impl PopulationSpec {
    pub fn dim(&self) -> usize {
        self.center().len()
    }

    /// Center of symmetry of the distribution.
    pub fn center(&self) -> &[f64] {
        match self {
            PopulationSpec::Gaussian { mean, .. }
            | PopulationSpec::ClippedGaussian { mean, .. } => mean,
            PopulationSpec::PointMass { at } => at,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(invalid("population dimension must be >= 1"));
        }
        match self {
            PopulationSpec::Gaussian { sigma, .. } => ensure_positive("sigma", *sigma),
            PopulationSpec::ClippedGaussian { sigma, clip, .. } => {
                ensure_positive("sigma", *sigma)?;
                ensure_positive("clip", *clip)
            }
            PopulationSpec::PointMass { .. } => Ok(()),
        }
    }

    /// Largest possible item norm, if bounded.
    pub fn item_norm_bound(&self) -> Option<f64> {
        match self {
            PopulationSpec::Gaussian { .. } => None,
            PopulationSpec::ClippedGaussian { mean, clip, .. } => Some(norm(mean) + clip),
            PopulationSpec::PointMass { at } => Some(norm(at)),
        }
    }

    /// Same generator in dimension `d`: the center is truncated or zero-padded.
    pub fn with_dim(&self, d: usize) -> Self {
        let resize = |v: &[f64]| {
            let mut v = v.to_vec();
            v.resize(d, 0.0);
            v
        };
        match self {
            PopulationSpec::Gaussian { mean, sigma } => PopulationSpec::Gaussian {
                mean: resize(mean),
                sigma: *sigma,
            },
            PopulationSpec::ClippedGaussian { mean, sigma, clip } => {
                PopulationSpec::ClippedGaussian {
                    mean: resize(mean),
                    sigma: *sigma,
                    clip: *clip,
                }
            }
            PopulationSpec::PointMass { at } => PopulationSpec::PointMass { at: resize(at) },
        }
    }

    pub fn sample_into(&self, out: &mut [f64], rng: &mut RngStream) {
        match self {
            PopulationSpec::Gaussian { mean, sigma } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + sigma * rng.standard_normal();
                }
            }
            PopulationSpec::ClippedGaussian { mean, sigma, clip } => {
                for o in out.iter_mut() {
                    *o = sigma * rng.standard_normal();
                }
                let r = norm(out);
                let s = if r > *clip { clip / r } else { 1.0 };
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + *o * s;
                }
            }
            PopulationSpec::PointMass { at } => out.copy_from_slice(at),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(&mut out, rng);
        out
    }
}

/// `n * m` i.i.d. items from `spec`, grouped into `n` users in draw order.
pub fn sample_population(
    spec: &PopulationSpec,
    n: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<UserDataset> {
    spec.validate()?;
    let d = spec.dim();
    let mut values = vec![0.0; n * m * d];
    for item in values.chunks_exact_mut(d) {
        spec.sample_into(item, rng);
    }
    UserDataset::new(Shape { n, m, d }, values)
}

fn check_fresh(k_fresh: usize) -> Result<()> {
    if k_fresh < 1000 {
        return Err(invalid(format!(
            "risk estimation needs at least 1000 fresh draws, got {k_fresh}"
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of the population risk `E_z l(theta; z)` from `k_fresh` draws.
pub fn population_risk(
    loss: &dyn Loss,
    theta: &[f64],
    spec: &PopulationSpec,
    k_fresh: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    check_fresh(k_fresh)?;
    spec.validate()?;
    let mut z = vec![0.0; spec.dim()];
    let samples: Vec<f64> = (0..k_fresh)
        .map(|_| {
            spec.sample_into(&mut z, rng);
            loss.value(theta, &z)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// `L_P(theta) - L_P(reference)` estimated on shared fresh draws.
pub fn risk_gap(
    loss: &dyn Loss,
    theta: &[f64],
    reference: &[f64],
    spec: &PopulationSpec,
    k_fresh: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    check_fresh(k_fresh)?;
    spec.validate()?;
    let mut z = vec![0.0; spec.dim()];
    let samples: Vec<f64> = (0..k_fresh)
        .map(|_| {
            spec.sample_into(&mut z, rng);
            loss.value(theta, &z) - loss.value(reference, &z)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

/// Known minimizer of `L_P` over the domain for the built-in losses.
///
/// Every built-in population is spherically symmetric about its center `c`, so
/// the norm and the quadratic population risks are increasing functions of
/// `|theta - c|` and the constrained minimizer is the projection of `c`.
pub fn analytic_minimizer(loss: &dyn Loss, spec: &PopulationSpec) -> Option<Vec<f64>> {
    match loss.name() {
        "norm" | "quadratic" => Some(loss.domain().project(spec.center())),
        // L_P(theta) = <theta, c>: the boundary point opposite to c (any point if c = 0)
        "linear" => {
            let c = spec.center();
            let nc = norm(c);
            let domain = loss.domain();
            if nc == 0.0 {
                return Some(domain.center.clone());
            }
            Some(
                domain
                    .center
                    .iter()
                    .zip(c)
                    .map(|(o, ci)| o - domain.radius * ci / nc)
                    .collect(),
            )
        }
        _ => None,
    }
}
