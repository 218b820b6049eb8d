use serde::{Deserialize, Serialize};

use crate::concentrated_mean::SCORE_SENSITIVITY;
use crate::data::{PrivacyBudget, Shape};
use crate::error::{ensure_positive, invalid, Result};

/// Default hard cap on SGD iterations.
pub const DEFAULT_T_CAP: usize = 200_000;

/// Parameters of one user-level DP-SGD run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub smoothing_radius: f64,
    pub tau: f64,
    /// Bound on the initial distance to the optimum (`R_hat`).
    pub initial_distance: f64,
    pub budget: PrivacyBudget,
    pub theta0: Vec<f64>,
    pub t_cap: usize,
    #[serde(default = "default_score_sensitivity")]
    pub score_sensitivity: f64,
}

fn default_score_sensitivity() -> f64 {
    SCORE_SENSITIVITY
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be positive"));
        }
        if self.iterations > self.t_cap {
            return Err(invalid(format!(
                "iterations {} exceed the cap {}",
                self.iterations, self.t_cap
            )));
        }
        ensure_positive("step size", self.step_size)?;
        ensure_positive("smoothing radius", self.smoothing_radius)?;
        ensure_positive("tau", self.tau)?;
        ensure_positive("initial distance", self.initial_distance)?;
        ensure_positive("score sensitivity", self.score_sensitivity)?;
        if self.theta0.is_empty() {
            return Err(invalid("theta0 must be non-empty"));
        }
        Ok(())
    }

    /// `delta / (2 T m n d)`, the delta handed to the mean-estimation session.
    pub fn session_delta(&self, shape: Shape) -> f64 {
        self.budget.delta() / (2.0 * self.iterations as f64 * (shape.m * shape.n * shape.d) as f64)
    }
}

/// `T = min(t_cap, ceil(m^2 n^2 + m n sqrt(d)))`.
pub fn iteration_count(shape: Shape, t_cap: usize) -> usize {
    let (n, m, d) = (shape.n as f64, shape.m as f64, shape.d as f64);
    let t = (m * m * n * n + m * n * d.sqrt()).ceil();
    if t >= t_cap as f64 {
        t_cap
    } else {
        t as usize
    }
}

/// The three candidates whose minimum, times `R_hat / G`, is the step size:
/// `sqrt(m) n eps / (T sqrt(d ln^2(mnd/delta)))`, `T^(-3/4)` and `sqrt(nm) / T`.
pub fn step_size_terms(shape: Shape, budget: PrivacyBudget, iterations: usize) -> [f64; 3] {
    let (n, m, d) = (shape.n as f64, shape.m as f64, shape.d as f64);
    let t = iterations as f64;
    let log_term = (m * n * d / budget.delta()).ln();
    [
        m.sqrt() * n * budget.epsilon() / (t * (d * log_term * log_term).sqrt()),
        t.powf(-0.75),
        (n * m).sqrt() / t,
    ]
}

/// `tau = G ln(n d m e^eps T / delta) / sqrt(m)`.
pub fn concentration_radius(
    shape: Shape,
    budget: PrivacyBudget,
    lipschitz: f64,
    iterations: usize,
) -> f64 {
    let (n, m, d) = (shape.n as f64, shape.m as f64, shape.d as f64);
    let log_term =
        (n * d * m).ln() + budget.epsilon() + (iterations as f64).ln() - budget.delta().ln();
    lipschitz * log_term / m.sqrt()
}

/// The parameter schedule for a convex `G`-Lipschitz problem with initial distance
/// bound `initial_distance` (the domain diameter unless a better bound is trusted).
pub fn default_config(
    shape: Shape,
    budget: PrivacyBudget,
    lipschitz: f64,
    initial_distance: f64,
    theta0: Vec<f64>,
    t_cap: usize,
) -> Result<SgdConfig> {
    if shape.n == 0 || shape.m == 0 || shape.d == 0 {
        return Err(invalid("n, m, d must be positive"));
    }
    ensure_positive("lipschitz constant", lipschitz)?;
    ensure_positive("initial distance", initial_distance)?;
    if t_cap == 0 {
        return Err(invalid("t_cap must be positive"));
    }
    if theta0.len() != shape.d {
        return Err(invalid(format!(
            "theta0 has dimension {}, expected {}",
            theta0.len(),
            shape.d
        )));
    }
    let (n, m, d) = (shape.n as f64, shape.m as f64, shape.d as f64);
    let min_users = (m * d * n / budget.delta()).ln() / budget.epsilon();
    if n < min_users {
        log::warn!(
            "n = {} users is below ln(mdn/delta)/eps = {min_users:.1}",
            shape.n
        );
    }

    let iterations = iteration_count(shape, t_cap);
    let t = iterations as f64;
    let smoothing_radius = d.powf(0.25) * initial_distance / t.sqrt();
    let terms = step_size_terms(shape, budget, iterations);
    let step_size =
        initial_distance / lipschitz * terms.iter().copied().fold(f64::INFINITY, f64::min);
    let tau = concentration_radius(shape, budget, lipschitz, iterations);

    Ok(SgdConfig {
        iterations,
        step_size,
        smoothing_radius,
        tau,
        initial_distance,
        budget,
        theta0,
        t_cap,
        score_sensitivity: SCORE_SENSITIVITY,
    })
}
