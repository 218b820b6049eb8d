use serde::{Deserialize, Serialize};

use crate::data::UserSource;
use crate::error::{ensure_positive, invalid, Result};
use crate::losses::Loss;
use crate::noise::RngStream;

use super::dpsgd::{check_dims, IterationRecord, SgdOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `eta_t = 1 / (mu t)` for `t = 1, 2, ...`
    InverseTime {
        mu: f64,
    },
}

impl StepSchedule {
    fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::InverseTime { mu } => 1.0 / (mu * t as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One uniformly random item per step.
    SingleItem,
    /// Mean over users of each user's average item subgradient.
    FullBatch,
}

/// Non-private projected subgradient descent with iterate averaging.
pub fn nonprivate_sgd<D: UserSource + ?Sized>(
    data: &D,
    loss: &dyn Loss,
    iterations: usize,
    step: StepSchedule,
    batch: BatchMode,
    theta0: &[f64],
    rng: &mut RngStream,
) -> Result<SgdOutcome> {
    if iterations == 0 {
        return Err(invalid("iterations must be positive"));
    }
    match step {
        StepSchedule::Constant { eta } => ensure_positive("step size", eta)?,
        StepSchedule::InverseTime { mu } => ensure_positive("mu", mu)?,
    }
    check_dims(data, loss, theta0)?;
    let shape = data.shape();
    let d = shape.d;
    let domain = loss.domain();

    let mut theta = theta0.to_vec();
    let mut sum = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut item_grad = vec![0.0; d];
    let mut user_grad = vec![0.0; d];
    let mut trace = Vec::with_capacity(iterations);

    for t in 1..=iterations {
        sum.iter_mut().zip(&theta).for_each(|(s, v)| *s += v);
        match batch {
            BatchMode::SingleItem => {
                let i = rng.index(shape.n);
                let j = rng.index(shape.m);
                let z = &data.user(i)[j * d..(j + 1) * d];
                loss.validate_item(z)?;
                loss.subgradient(&theta, z, &mut grad);
            }
            BatchMode::FullBatch => {
                grad.fill(0.0);
                let w = 1.0 / shape.m as f64;
                for i in 0..shape.n {
                    user_grad.fill(0.0);
                    for z in data.user(i).chunks_exact(d) {
                        loss.validate_item(z)?;
                        loss.subgradient(&theta, z, &mut item_grad);
                        user_grad
                            .iter_mut()
                            .zip(&item_grad)
                            .for_each(|(u, g)| *u += w * g);
                    }
                    grad.iter_mut().zip(&user_grad).for_each(|(a, u)| *a += u);
                }
                grad.iter_mut().for_each(|g| *g /= shape.n as f64);
            }
        }
        let eta = step.at(t);
        let prev = theta.clone();
        theta.iter_mut().zip(&grad).for_each(|(p, g)| *p -= eta * g);
        domain.project_in_place(&mut theta);
        trace.push(IterationRecord {
            selected_count: shape.n,
            score: f64::NAN,
            step_norm: crate::stats::distance(&theta, &prev),
        });
    }
    let k = iterations as f64;
    Ok(SgdOutcome {
        theta: sum.into_iter().map(|s| s / k).collect(),
        halted: false,
        halted_at: None,
        trace,
    })
}
