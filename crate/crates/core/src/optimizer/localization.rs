//! Phase-wise localization for strongly convex losses.
//!
//! Users are split into `k = ceil(log2 log2(mn))` disjoint phases of doubling
//! size. Phase `j` warm-starts DP-SGD at the previous output with an initial
//! distance bound `sqrt(2 D_{j-1} / mu)`, capped at the domain diameter.

use serde::{Deserialize, Serialize};

use crate::data::{PrivacyBudget, Shape, UserSource};
use crate::error::{ensure_positive, invalid, Result};
use crate::losses::{Ball, Loss};
use crate::noise::RngStream;

use super::dpsgd::{check_dims, dpsgd, SgdOutcome};
use super::{default_config, SgdConfig};

/// Default analysis constant; any value above 2 is admissible.
pub const DEFAULT_LOCALIZATION_C: f64 = 4.0;

/// `ceil(log2 log2(mn))`, at least 1.
pub fn phase_count(n: usize, m: usize) -> usize {
    let mn = (n * m) as f64;
    if mn <= 2.0 {
        return 1;
    }
    (mn.log2().log2().ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSchedule {
    pub k: usize,
    /// `floor(n / 2^(k+1-i))` for `i = 1..k`.
    pub nominal_sizes: Vec<usize>,
    /// Nominal sizes with the leftover users added to the last phase.
    pub phase_sizes: Vec<usize>,
    pub c: f64,
    /// `E_0..E_k`.
    pub e: Vec<f64>,
    /// `D_0..D_k`, with `D_0 = 2 G^2 / mu`.
    pub d: Vec<f64>,
    /// Initial distance bound per phase, `sqrt(2 D_{j-1} / mu)` capped at the domain diameter.
    pub initial_distances: Vec<f64>,
    /// Per-phase SGD parameters; `theta0` is replaced by the warm start at run time.
    pub configs: Vec<SgdConfig>,
}

fn excess_bound(c: f64, g: f64, mu: f64, users: f64, m: f64, d: f64, budget: PrivacyBudget) -> f64 {
    let log_term = (users * d * m / budget.delta()).ln();
    4.0 * c * c * g * g / mu
        * (1.0 / (users * m)
            + d * log_term * log_term / (users * users * budget.epsilon().powi(2) * m))
}

impl LocalizationSchedule {
    pub fn new(
        shape: Shape,
        budget: PrivacyBudget,
        lipschitz: f64,
        mu: f64,
        c: f64,
        domain: &Ball,
        t_cap: usize,
    ) -> Result<Self> {
        ensure_positive("mu", mu)?;
        ensure_positive("lipschitz constant", lipschitz)?;
        if !(c > 2.0 && c.is_finite()) {
            return Err(invalid(format!(
                "localization constant C must exceed 2, got {c}"
            )));
        }
        let Shape { n, m, d } = shape;
        let k = phase_count(n, m);
        let min_n = (1usize << k) * k;
        if n < min_n {
            return Err(invalid(format!(
                "localization with k = {k} phases needs at least n = {min_n} users, got {n}"
            )));
        }

        let nominal_sizes: Vec<usize> = (1..=k).map(|i| n >> (k + 1 - i)).collect();
        let mut phase_sizes = nominal_sizes.clone();
        let used: usize = nominal_sizes.iter().sum();
        phase_sizes[k - 1] += n - used;

        let (mf, df) = (m as f64, d as f64);
        let g = lipschitz;
        // phase 0 continues the doubling below phase 1
        let n0 = n as f64 / (1u64 << (k + 1)) as f64;
        let mut e = vec![excess_bound(c, g, mu, n0, mf, df, budget)];
        e.extend(
            nominal_sizes
                .iter()
                .map(|&ni| excess_bound(c, g, mu, ni as f64, mf, df, budget)),
        );

        let d0 = 2.0 * g * g / mu;
        let ratio0 = d0 / (16.0 * e[0]);
        let dd: Vec<f64> = (0..=k)
            .map(|i| 16.0 * e[i] * ratio0.powf(1.0 / (1u64 << i) as f64))
            .collect();

        // no iterate is farther from the minimizer than the domain diameter
        let initial_distances: Vec<f64> = (1..=k)
            .map(|j| (2.0 * dd[j - 1] / mu).sqrt().min(domain.diameter()))
            .collect();
        let configs = (0..k)
            .map(|j| {
                default_config(
                    Shape {
                        n: phase_sizes[j],
                        m,
                        d,
                    },
                    budget,
                    lipschitz,
                    initial_distances[j],
                    domain.center.clone(),
                    t_cap,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            k,
            nominal_sizes,
            phase_sizes,
            c,
            e,
            d: dd,
            initial_distances,
            configs,
        })
    }

    /// Half-open user ranges of each phase.
    pub fn phase_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.phase_sizes
            .iter()
            .map(|&s| {
                let r = (start, start + s);
                start += s;
                r
            })
            .collect()
    }
}

/// Contiguous block of users of another source.
pub struct UserRange<'a, D: UserSource + ?Sized> {
    inner: &'a D,
    start: usize,
    len: usize,
}

impl<'a, D: UserSource + ?Sized> UserRange<'a, D> {
    pub fn new(inner: &'a D, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > inner.shape().n {
            return Err(invalid(format!("bad user range {start}..{end}")));
        }
        Ok(Self {
            inner,
            start,
            len: end - start,
        })
    }
}

impl<D: UserSource + ?Sized> UserSource for UserRange<'_, D> {
    fn shape(&self) -> Shape {
        Shape {
            n: self.len,
            ..self.inner.shape()
        }
    }

    fn user(&self, i: usize) -> &[f64] {
        assert!(i < self.len, "user index {i} out of range");
        self.inner.user(self.start + i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizedOutcome {
    pub theta: Vec<f64>,
    pub schedule: LocalizationSchedule,
    pub phases: Vec<SgdOutcome>,
}

/// Runs the phases in order on disjoint user blocks, starting from the domain center.
pub fn localized_dpsgd<D: UserSource + ?Sized>(
    data: &D,
    loss: &dyn Loss,
    budget: PrivacyBudget,
    c: f64,
    t_cap: usize,
    rng: &mut RngStream,
) -> Result<LocalizedOutcome> {
    let mu = loss.strong_convexity();
    if mu <= 0.0 {
        return Err(invalid("localization requires a strongly convex loss"));
    }
    let center = loss.domain().center.clone();
    check_dims(data, loss, &center)?;
    let schedule = LocalizationSchedule::new(
        data.shape(),
        budget,
        loss.lipschitz(),
        mu,
        c,
        loss.domain(),
        t_cap,
    )?;

    let mut theta = center;
    let mut phases = Vec::with_capacity(schedule.k);
    for (j, (start, end)) in schedule.phase_ranges().into_iter().enumerate() {
        let block = UserRange::new(data, start, end)?;
        let mut config = schedule.configs[j].clone();
        config.theta0 = theta.clone();
        let outcome = dpsgd(&block, loss, &config, &mut rng.fork(100 + j as u64))?;
        theta = outcome.theta.clone();
        phases.push(outcome);
    }
    Ok(LocalizedOutcome {
        theta,
        schedule,
        phases,
    })
}
