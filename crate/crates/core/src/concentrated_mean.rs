//! Adaptive private mean estimation for concentrated queries.
//!
//! A [`MeanSession`] answers up to `T` adaptive vector queries over the users
//! of a dataset. Each query is gated by AboveThreshold on the concentration
//! score; if the gate passes, users are kept with a probability that depends
//! on how many other users lie within `2 tau`, and the mean of the kept
//! points is released with Gaussian noise calibrated to `tau`.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{PrivacyBudget, UserSource};
use crate::error::{ensure_positive, invalid, Error, Result};
use crate::noise::{sample_gaussian_vector, RngStream};
use crate::sparse_vector::{AboveThreshold, Answer};

/// Default sensitivity passed to AboveThreshold for the concentration score.
/// Replacing one user moves the score by at most `(2n - 1)/n < 2`.
pub const SCORE_SENSITIVITY: f64 = 2.0;

// warn about small n once per process; sessions are opened in tight loops
static SMALL_N_WARNED: AtomicBool = AtomicBool::new(false);

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>], tau: f64) -> Result<usize> {
    ensure_positive("tau", tau)?;
    let first = points.first().ok_or_else(|| invalid("no points"))?;
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(invalid("points have inconsistent dimensions"));
    }
    Ok(d)
}

/// Counts, for every point, how many points (itself included) lie within `radius`.
fn neighbour_counts(points: &[Vec<f64>], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    let n = points.len();
    let mut counts = vec![1usize; n];
    for j in 0..n {
        for k in (j + 1)..n {
            if dist2(&points[j], &points[k]) <= r2 {
                counts[j] += 1;
                counts[k] += 1;
            }
        }
    }
    counts
}

/// `(1/n) * #{(j, k) : |x_j - x_k| <= tau}`, self-pairs included.
pub fn concentration_score(points: &[Vec<f64>], tau: f64) -> Result<f64> {
    check_points(points, tau)?;
    let total: usize = neighbour_counts(points, tau).iter().sum();
    Ok(total as f64 / points.len() as f64)
}

/// `f_j = #{k : |x_j - x_k| <= 2 tau}`, self included.
pub fn outlier_scores(points: &[Vec<f64>], tau: f64) -> Result<Vec<usize>> {
    check_points(points, tau)?;
    Ok(neighbour_counts(points, 2.0 * tau))
}

/// Keep-probability for a point with outlier score `f` among `n` users:
/// 0 below `n/2`, 1 from `2n/3` on, linear in between.
pub fn selection_probability(f: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    if f > n {
        return Err(invalid(format!("outlier score {f} exceeds n = {n}")));
    }
    let (f, nf) = (f as f64, n as f64);
    Ok(if f < nf / 2.0 {
        0.0
    } else if f >= 2.0 * nf / 3.0 {
        1.0
    } else {
        (f - nf / 2.0) / (nf / 6.0)
    })
}

pub fn selection_probabilities(points: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    let n = points.len();
    outlier_scores(points, tau)?
        .into_iter()
        .map(|f| selection_probability(f, n))
        .collect()
}

/// Worst-case `l1` change of the selection probabilities when one of `n` users is
/// replaced: the replaced user's own probability moves by at most 1 and every
/// other user's outlier score by at most 1, i.e. its probability by at most `6/n`.
pub fn l1_sensitivity_bound(n: usize) -> f64 {
    1.0 + 6.0 * (n as f64 - 1.0) / n as f64
}

/// Independent Bernoulli inclusion of each index.
pub fn subsample(probabilities: &[f64], rng: &mut RngStream) -> Result<Vec<usize>> {
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| rng.bernoulli(p))
        .map(|(i, _)| i)
        .collect())
}

/// Per-coordinate variance `8 tau^2 T ln(e^eps T / delta) ln(e^(eps/2) / delta) / (n^2 eps^2)`.
pub fn noise_variance(budget: PrivacyBudget, tau: f64, queries: usize, n: usize) -> f64 {
    let (eps, delta) = (budget.epsilon(), budget.delta());
    let t = queries as f64;
    let n = n as f64;
    let a = eps + (t / delta).ln();
    let b = eps / 2.0 - delta.ln();
    8.0 * tau * tau * t * a * b / (n * n * eps * eps)
}

/// Smallest `n` for which the utility guarantee's user-count condition can hold
/// when only `delta` is known: `16 ln(T/delta) / eps`.
pub fn min_users_hint(budget: PrivacyBudget, queries: usize) -> f64 {
    16.0 * (queries as f64 / budget.delta()).ln() / budget.epsilon()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryResult {
    Estimate {
        value: Vec<f64>,
        selected_count: usize,
        score: f64,
    },
    Halted,
}

impl QueryResult {
    pub fn estimate(&self) -> Option<&[f64]> {
        match self {
            QueryResult::Estimate { value, .. } => Some(value),
            QueryResult::Halted => None,
        }
    }

    pub fn is_halted(&self) -> bool {
        matches!(self, QueryResult::Halted)
    }
}

/// Stateful mean-estimation pipeline over one dataset.
pub struct MeanSession<'a, D: UserSource + ?Sized> {
    data: &'a D,
    budget: PrivacyBudget,
    tau: f64,
    max_queries: usize,
    queries_used: usize,
    at: AboveThreshold,
    noise_variance: f64,
    halted: bool,
    rng: RngStream,
}

impl<'a, D: UserSource + ?Sized> MeanSession<'a, D> {
    /// Opens a session with the default score sensitivity.
    pub fn open(
        data: &'a D,
        budget: PrivacyBudget,
        tau: f64,
        max_queries: usize,
        rng: RngStream,
    ) -> Result<Self> {
        Self::open_with_sensitivity(data, budget, tau, max_queries, SCORE_SENSITIVITY, rng)
    }

    pub fn open_with_sensitivity(
        data: &'a D,
        budget: PrivacyBudget,
        tau: f64,
        max_queries: usize,
        score_sensitivity: f64,
        mut rng: RngStream,
    ) -> Result<Self> {
        ensure_positive("tau", tau)?;
        if max_queries == 0 {
            return Err(invalid("a session needs at least one query"));
        }
        let n = data.shape().n;
        if (n as f64) < min_users_hint(budget, max_queries)
            && !SMALL_N_WARNED.swap(true, Ordering::Relaxed)
        {
            log::warn!(
                "n = {n} users is below {:.1}; concentrated inputs may still be rejected",
                min_users_hint(budget, max_queries)
            );
        }
        let threshold = 4.0 * n as f64 / 5.0;
        let at = AboveThreshold::new(
            threshold,
            budget.epsilon() / 2.0,
            score_sensitivity,
            &mut rng,
        )?;
        Ok(Self {
            data,
            budget,
            tau,
            max_queries,
            queries_used: 0,
            at,
            noise_variance: noise_variance(budget, tau, max_queries, n),
            halted: false,
            rng,
        })
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn queries_used(&self) -> usize {
        self.queries_used
    }

    pub fn max_queries(&self) -> usize {
        self.max_queries
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn above_threshold(&self) -> &AboveThreshold {
        &self.at
    }

    /// Answers one mean query. `query` maps one user's flattened items to a vector.
    ///
    /// Once the gate has rejected a query every later call returns
    /// [`QueryResult::Halted`]; calling past `T` queries is a usage error.
    pub fn query<F>(&mut self, mut query: F) -> Result<QueryResult>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        if self.halted {
            return Ok(QueryResult::Halted);
        }
        if self.queries_used >= self.max_queries {
            return Err(Error::Usage(format!(
                "session exhausted after {} queries",
                self.max_queries
            )));
        }
        self.queries_used += 1;

        let n = self.data.shape().n;
        let points = (0..n)
            .map(|i| query(self.data.user(i)))
            .collect::<Result<Vec<_>>>()?;
        let d = check_points(&points, self.tau)?;

        let score = concentration_score(&points, self.tau)?;
        if self.at.step(score, &mut self.rng)? == Answer::Bottom {
            self.halted = true;
            return Ok(QueryResult::Halted);
        }

        let probs = selection_probabilities(&points, self.tau)?;
        let selected = subsample(&probs, &mut self.rng)?;
        let mut value = vec![0.0; d];
        if !selected.is_empty() {
            for &j in &selected {
                value.iter_mut().zip(&points[j]).for_each(|(v, p)| *v += p);
            }
            let k = selected.len() as f64;
            value.iter_mut().for_each(|v| *v /= k);
        }
        let noise = sample_gaussian_vector(self.noise_variance, d, &mut self.rng)?;
        value.iter_mut().zip(noise).for_each(|(v, e)| *v += e);
        Ok(QueryResult::Estimate {
            value,
            selected_count: selected.len(),
            score,
        })
    }
}
