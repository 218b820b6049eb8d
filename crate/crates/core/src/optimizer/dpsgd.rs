use serde::{Deserialize, Serialize};

use crate::concentrated_mean::{MeanSession, QueryResult};
use crate::data::{PrivacyBudget, UserSource};
use crate::error::{invalid, Result};
use crate::losses::Loss;
use crate::noise::RngStream;
use crate::smoothing::{user_avg_smoothed_grad_into, SmoothingWorkspace};
use crate::stats::norm;

use super::SgdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub selected_count: usize,
    pub score: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdOutcome {
    pub theta: Vec<f64>,
    /// Set when the mean-estimation gate rejected a query; `theta` is then `theta0`.
    pub halted: bool,
    pub halted_at: Option<usize>,
    pub trace: Vec<IterationRecord>,
}

pub(crate) fn check_dims<D: UserSource + ?Sized>(
    data: &D,
    loss: &dyn Loss,
    theta0: &[f64],
) -> Result<()> {
    let d = data.shape().d;
    if theta0.len() != d || loss.domain().dim() != d {
        return Err(invalid(format!(
            "dimension mismatch: data d = {d}, theta0 {}, domain {}",
            theta0.len(),
            loss.domain().dim()
        )));
    }
    Ok(())
}

/// User-level DP-SGD on the smoothed loss. Streams for the session and for the
/// smoothing perturbations are forked from `rng`.
pub fn dpsgd<D: UserSource + ?Sized>(
    data: &D,
    loss: &dyn Loss,
    config: &SgdConfig,
    rng: &mut RngStream,
) -> Result<SgdOutcome> {
    let session_rng = rng.fork(1);
    let smoothing_rng = rng.fork(2);
    dpsgd_with_streams(data, loss, config, session_rng, smoothing_rng)
}

/// [`dpsgd`] with explicit streams, so callers can share or zero them independently.
///
/// Every access to user data happens inside the single [`MeanSession`]; the
/// only data-dependent values used to update the iterate are session outputs.
pub fn dpsgd_with_streams<D: UserSource + ?Sized>(
    data: &D,
    loss: &dyn Loss,
    config: &SgdConfig,
    session_rng: RngStream,
    mut smoothing_rng: RngStream,
) -> Result<SgdOutcome> {
    config.validate()?;
    check_dims(data, loss, &config.theta0)?;
    let shape = data.shape();
    let d = shape.d;
    let session_budget = PrivacyBudget::new(config.budget.epsilon(), config.session_delta(shape))?;
    let mut session = MeanSession::open_with_sensitivity(
        data,
        session_budget,
        config.tau,
        config.iterations,
        config.score_sensitivity,
        session_rng,
    )?;

    let domain = loss.domain();
    let r = config.smoothing_radius;
    let mut ws = SmoothingWorkspace::new(d);
    let mut buf = vec![0.0; d];
    let mut theta = config.theta0.clone();
    let mut sum = vec![0.0; d];
    let mut trace = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        sum.iter_mut().zip(&theta).for_each(|(s, v)| *s += v);
        let answer = session.query(|user| {
            user_avg_smoothed_grad_into(
                loss,
                &theta,
                user,
                r,
                &mut ws,
                &mut buf,
                &mut smoothing_rng,
            )?;
            Ok(buf.clone())
        })?;
        match answer {
            QueryResult::Halted => {
                return Ok(SgdOutcome {
                    theta: config.theta0.clone(),
                    halted: true,
                    halted_at: Some(t),
                    trace,
                });
            }
            QueryResult::Estimate {
                value,
                selected_count,
                score,
            } => {
                let prev = theta.clone();
                theta
                    .iter_mut()
                    .zip(&value)
                    .for_each(|(p, g)| *p -= config.step_size * g);
                domain.project_in_place(&mut theta);
                let step: Vec<f64> = theta.iter().zip(&prev).map(|(a, b)| a - b).collect();
                trace.push(IterationRecord {
                    selected_count,
                    score,
                    step_norm: norm(&step),
                });
            }
        }
    }

    let k = config.iterations as f64;
    Ok(SgdOutcome {
        theta: sum.into_iter().map(|s| s / k).collect(),
        halted: false,
        halted_at: None,
        trace,
    })
}
