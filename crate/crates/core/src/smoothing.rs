//! Randomized smoothing: gradients and values of the loss convolved with the
//! uniform density on the ball of radius `r`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::losses::Loss;
use crate::noise::{fill_uniform_ball, RngStream};
use crate::stats::McEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub r: f64,
    pub mc_samples: usize,
}

impl SmoothingParams {
    pub fn new(r: f64, mc_samples: usize) -> Result<Self> {
        ensure_positive("smoothing radius", r)?;
        if mc_samples == 0 {
            return Err(crate::error::invalid("mc_samples must be positive"));
        }
        Ok(Self { r, mc_samples })
    }
}

fn check_domain(loss: &dyn Loss, point: &[f64]) -> Result<()> {
    if let Some(ext) = loss.extended_domain() {
        if !ext.contains(point, 1e-9 * ext.radius.max(1.0)) {
            return Err(Error::Domain(format!(
                "perturbed point lies outside the extended domain of radius {}",
                ext.radius
            )));
        }
    }
    Ok(())
}

/// Reusable buffers for repeated smoothed-gradient evaluations.
pub struct SmoothingWorkspace {
    y: Vec<f64>,
    point: Vec<f64>,
    grad: Vec<f64>,
}

impl SmoothingWorkspace {
    pub fn new(d: usize) -> Self {
        Self {
            y: vec![0.0; d],
            point: vec![0.0; d],
            grad: vec![0.0; d],
        }
    }

    /// Adds `weight * grad l(theta + y; z)` into `acc` for a fresh `y`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &mut self,
        loss: &dyn Loss,
        theta: &[f64],
        z: &[f64],
        r: f64,
        weight: f64,
        acc: &mut [f64],
        rng: &mut RngStream,
    ) -> Result<()> {
        fill_uniform_ball(r, &mut self.y, rng)?;
        for ((p, t), y) in self.point.iter_mut().zip(theta).zip(&self.y) {
            *p = t + y;
        }
        check_domain(loss, &self.point)?;
        loss.subgradient(&self.point, z, &mut self.grad);
        acc.iter_mut()
            .zip(&self.grad)
            .for_each(|(a, g)| *a += weight * g);
        Ok(())
    }
}

/// `grad l(theta + y; z)` for one fresh `y ~ Uniform(B(0, r))`.
pub fn smoothed_grad_item(
    loss: &dyn Loss,
    theta: &[f64],
    z: &[f64],
    r: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; theta.len()];
    SmoothingWorkspace::new(theta.len()).accumulate(loss, theta, z, r, 1.0, &mut out, rng)?;
    Ok(out)
}

/// Average of `grad l(theta + y_j; z_j)` over one user's `m` items with independent `y_j`.
/// `user` holds the items flattened row-major.
pub fn user_avg_smoothed_grad(
    loss: &dyn Loss,
    theta: &[f64],
    user: &[f64],
    r: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; theta.len()];
    user_avg_smoothed_grad_into(
        loss,
        theta,
        user,
        r,
        &mut SmoothingWorkspace::new(theta.len()),
        &mut out,
        rng,
    )?;
    Ok(out)
}

pub fn user_avg_smoothed_grad_into(
    loss: &dyn Loss,
    theta: &[f64],
    user: &[f64],
    r: f64,
    ws: &mut SmoothingWorkspace,
    out: &mut [f64],
    rng: &mut RngStream,
) -> Result<()> {
    let d = theta.len();
    if d == 0 || user.is_empty() || !user.len().is_multiple_of(d) {
        return Err(crate::error::invalid(
            "user items do not match the parameter dimension",
        ));
    }
    let w = 1.0 / (user.len() / d) as f64;
    out.fill(0.0);
    for z in user.chunks_exact(d) {
        loss.validate_item(z)?;
        ws.accumulate(loss, theta, z, r, w, out, rng)?;
    }
    Ok(())
}

/// Monte-Carlo estimate of the smoothed value `E_y l(theta + y; z)` from `k` draws.
/// `r = 0` evaluates the raw loss.
pub fn smoothed_value_mc(
    loss: &dyn Loss,
    theta: &[f64],
    z: &[f64],
    r: f64,
    k: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    if r == 0.0 {
        return Ok(McEstimate {
            mean: loss.value(theta, z),
            stderr: 0.0,
        });
    }
    ensure_positive("smoothing radius", r)?;
    if k == 0 {
        return Err(crate::error::invalid("k must be positive"));
    }
    let mut y = vec![0.0; theta.len()];
    let mut p = vec![0.0; theta.len()];
    let mut samples = Vec::with_capacity(k);
    for _ in 0..k {
        fill_uniform_ball(r, &mut y, rng)?;
        p.iter_mut()
            .zip(theta.iter().zip(&y))
            .for_each(|(p, (t, y))| *p = t + y);
        check_domain(loss, &p)?;
        samples.push(loss.value(&p, z));
    }
    Ok(McEstimate::from_samples(&samples))
}
