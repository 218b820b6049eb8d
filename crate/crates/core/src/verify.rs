//! Executable property checks for the mechanisms in this crate.
//!
//! Each check returns a [`CheckReport`] carrying the measured statistic, the
//! bound it is compared against (same units) and the seed needed to replay it.

use serde::{Deserialize, Serialize};

use crate::concentrated_mean::{selection_probabilities, MeanSession, QueryResult};
use crate::data::{PrivacyBudget, Shape, UserDataset};
use crate::error::{ensure_positive, invalid, Result};
use crate::losses::{sample_population, Loss, PopulationSpec};
use crate::noise::{sample_uniform_ball, NoiseHook, RngStream};
use crate::smoothing::{
    smoothed_grad_item, smoothed_value_mc, user_avg_smoothed_grad_into, SmoothingWorkspace,
};
use crate::sparse_vector::{accuracy_radius, AboveThreshold, Answer};
use crate::stats::{distance, norm, VectorMoments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    pub statistic: f64,
    pub bound: f64,
    pub trials: usize,
    pub seed: u64,
    pub stream: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub components: Vec<CheckReport>,
}

impl CheckReport {
    fn new(
        name: &str,
        pass: bool,
        statistic: f64,
        bound: f64,
        trials: usize,
        rng: &RngStream,
    ) -> Self {
        Self {
            name: name.to_string(),
            status: if pass {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            statistic,
            bound,
            trials,
            seed: rng.seed(),
            stream: rng.stream_id(),
            note: None,
            components: Vec::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Skipped checks count as passing.
    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        let mut s = format!(
            "{status} {}: statistic={:.6} bound={:.6} trials={} seed={}",
            self.name, self.statistic, self.bound, self.trials, self.seed
        );
        if let Some(note) = &self.note {
            s.push_str(" (");
            s.push_str(note);
            s.push(')');
        }
        s
    }
}

/// `3 sigma` slack of an empirical frequency around `p` after `k` trials.
fn binomial_slack(p: f64, k: usize) -> f64 {
    3.0 * (p * (1.0 - p) / k as f64).sqrt()
}

// ---------------------------------------------------------------------------
// selection-probability sensitivity

/// Exact `l1` distance between the selection probabilities of `points` and of the
/// neighbour obtained by replacing `points[index]`. Passes iff the distance is at most 2.
pub fn check_prob_sensitivity(
    points: &[Vec<f64>],
    replacement: &[f64],
    index: usize,
    tau: f64,
) -> Result<CheckReport> {
    if index >= points.len() {
        return Err(invalid(format!(
            "index {index} out of range for {} points",
            points.len()
        )));
    }
    let l1 = prob_l1_distance(points, replacement, index, tau)?;
    let rng = RngStream::new(0, 0);
    Ok(CheckReport::new(
        "prob_sensitivity",
        l1 <= 2.0,
        l1,
        2.0,
        1,
        &rng,
    ))
}

fn prob_l1_distance(
    points: &[Vec<f64>],
    replacement: &[f64],
    index: usize,
    tau: f64,
) -> Result<f64> {
    let p = selection_probabilities(points, tau)?;
    let mut neighbour = points.to_vec();
    neighbour[index] = replacement.to_vec();
    let q = selection_probabilities(&neighbour, tau)?;
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum())
}

/// One random neighbouring instance: `(points, replacement, index, tau)`.
///
/// Points come from one to three Gaussian clusters whose spread is comparable
/// to `tau`, so many outlier counts fall in the interpolating band; the
/// replacement is far away, a copy of another point, or a fresh nearby draw.
pub fn random_neighbour_instance(rng: &mut RngStream) -> (Vec<Vec<f64>>, Vec<f64>, usize, f64) {
    let n = 3 + rng.index(48);
    let d = 1 + rng.index(20);
    let tau = 0.5 + 1.5 * rng.uniform();
    let spread = tau * (0.2 + 1.8 * rng.uniform()) / (d as f64).sqrt();
    let clusters: Vec<Vec<f64>> = (0..1 + rng.index(3))
        .map(|_| {
            let offset = 3.0 * tau * rng.uniform();
            let dir = sample_uniform_ball(1.0, d, rng).expect("valid ball");
            let len = norm(&dir).max(1e-12);
            dir.iter().map(|v| v / len * offset).collect()
        })
        .collect();
    let near = |rng: &mut RngStream| -> Vec<f64> {
        let c = &clusters[rng.index(clusters.len())];
        c.iter()
            .map(|v| v + spread * rng.standard_normal())
            .collect()
    };
    let points: Vec<Vec<f64>> = (0..n).map(|_| near(rng)).collect();
    let index = rng.index(n);
    let u = rng.uniform();
    let replacement = if u < 0.5 {
        let dir = sample_uniform_ball(1.0, d, rng).expect("valid ball");
        let len = norm(&dir).max(1e-12);
        dir.iter().map(|v| v / len * 100.0 * tau).collect()
    } else if u < 0.75 {
        points[rng.index(n)].clone()
    } else {
        near(rng)
    };
    (points, replacement, index, tau)
}

/// Randomized audit of the sensitivity bound over `trials` random neighbouring
/// instances. The statistic is the largest distance observed.
pub fn sensitivity_audit(trials: usize, rng: &mut RngStream) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for t in 0..trials {
        let mut child = rng.fork(t as u64);
        let (points, replacement, index, tau) = random_neighbour_instance(&mut child);
        let l1 = prob_l1_distance(&points, &replacement, index, tau)?;
        if l1 > 2.0 {
            violations += 1;
        }
        worst = worst.max(l1);
    }
    Ok(CheckReport::new(
        "prob_sensitivity_audit",
        violations == 0,
        worst,
        2.0,
        trials,
        rng,
    )
    .with_note(format!("{violations} of {trials} instances exceed 2")))
}

// ---------------------------------------------------------------------------
// Bernoulli coupling

#[derive(Debug, Clone, PartialEq)]
pub struct Coupled {
    pub x: Vec<bool>,
    pub y: Vec<bool>,
    pub hamming: usize,
}

fn check_probs(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(invalid("probability vectors differ in length"));
    }
    if let Some(v) = p.iter().chain(q).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// Coordinate-wise coupling of `Ber(p)` and `Ber(q)`: with `p_i >= q_i`, the pair is
/// `(1,1)` w.p. `q_i`, `(1,0)` w.p. `p_i - q_i` and `(0,0)` otherwise (symmetrically
/// when `q_i > p_i`). One shared uniform per coordinate realises it exactly.
pub fn couple_bernoulli(p: &[f64], q: &[f64], rng: &mut RngStream) -> Result<Coupled> {
    check_probs(p, q)?;
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    if l1 > 2.0 + 1e-12 {
        log::warn!("coupling inputs are {l1:.3} apart in l1 (expected <= 2)");
    }
    let mut x = Vec::with_capacity(p.len());
    let mut y = Vec::with_capacity(p.len());
    let mut hamming = 0;
    for (&pi, &qi) in p.iter().zip(q) {
        let u = rng.uniform();
        let (a, b) = (u < pi, u < qi);
        hamming += usize::from(a != b);
        x.push(a);
        y.push(b);
    }
    Ok(Coupled { x, y, hamming })
}

/// `2 + 8 ln(1/zeta)`.
pub fn coupling_tail_threshold(zeta: f64) -> f64 {
    2.0 + 8.0 * (1.0 / zeta).ln()
}

/// Exact `Pr[hamming > k]` under the coupling: the Hamming distance is a sum of
/// independent `Ber(|p_i - q_i|)`.
pub fn hamming_tail_exact(p: &[f64], q: &[f64], k: usize) -> Result<f64> {
    check_probs(p, q)?;
    // dist[j] = Pr[exactly j mismatches], truncated at k + 1
    let mut dist = vec![0.0; k + 2];
    dist[0] = 1.0;
    for (a, b) in p.iter().zip(q) {
        let w = (a - b).abs();
        for j in (0..dist.len()).rev() {
            let stay = dist[j] * (1.0 - w);
            let from_below = if j > 0 { dist[j - 1] * w } else { 0.0 };
            dist[j] = if j == k + 1 {
                dist[j] + from_below
            } else {
                stay + from_below
            };
        }
    }
    Ok(dist[k + 1])
}

/// Empirical `Pr[hamming > 2 + 8 ln(1/zeta)]` over `draws` coupled samples; passes iff `<= zeta`.
pub fn coupling_tail_check(
    p: &[f64],
    q: &[f64],
    zeta: f64,
    draws: usize,
    rng: &mut RngStream,
) -> Result<CheckReport> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(invalid(format!("zeta must lie in (0, 1), got {zeta}")));
    }
    let threshold = coupling_tail_threshold(zeta);
    let mut exceed = 0usize;
    for _ in 0..draws {
        if couple_bernoulli(p, q, rng)?.hamming as f64 > threshold {
            exceed += 1;
        }
    }
    let freq = exceed as f64 / draws as f64;
    let exact = hamming_tail_exact(p, q, threshold.floor() as usize)?;
    Ok(
        CheckReport::new("coupling_tail", freq <= zeta, freq, zeta, draws, rng)
            .with_note(format!("threshold {threshold:.3}, exact tail {exact:.3e}")),
    )
}

/// Random pair with `||p - q||_1` close to 2 (exactly 2 unless clipping to [0,1] binds).
fn random_coupling_pair(rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let n = 2 + rng.index(499);
    let p: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    // spread the l1 budget over a random subset of coordinates
    let k = 1 + rng.index(n);
    let w: Vec<f64> = (0..k).map(|_| -rng.uniform().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    let mut q = p.clone();
    for wi in &w {
        let j = rng.index(n);
        let shift = 2.0 * wi / total;
        q[j] = if rng.bernoulli(0.5) {
            q[j] + shift
        } else {
            q[j] - shift
        }
        .clamp(0.0, 1.0);
    }
    (p, q)
}

/// Brute-force validation of the tail threshold: for random and spread-out pairs
/// with `||p - q||_1 <= 2`, the exact and Monte-Carlo tail probabilities above
/// `2 + 8 ln(1/zeta)` must not exceed `zeta`, for every `zeta` in `zetas`.
/// The statistic is the largest `tail / zeta` ratio seen (exact tails).
pub fn coupling_threshold_oracle(
    pairs: usize,
    draws: usize,
    zetas: &[f64],
    rng: &mut RngStream,
) -> Result<CheckReport> {
    let mut instances: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    // evenly spread differences approach the Poisson(2) limit, the worst case for a fixed mean
    for n in [2usize, 4, 16, 64, 256, 1024, 4096] {
        let p = vec![2.0 / n as f64; n];
        instances.push((p, vec![0.0; n]));
    }
    for t in 0..pairs {
        instances.push(random_coupling_pair(&mut rng.fork(t as u64)));
    }
    let mut worst_ratio: f64 = 0.0;
    let mut mc_failures = 0;
    for (i, (p, q)) in instances.iter().enumerate() {
        let mut child = rng.fork(1_000_000 + i as u64);
        let mut counts = vec![0usize; zetas.len()];
        for _ in 0..draws {
            let h = couple_bernoulli(p, q, &mut child)?.hamming as f64;
            for (c, z) in counts.iter_mut().zip(zetas) {
                if h > coupling_tail_threshold(*z) {
                    *c += 1;
                }
            }
        }
        for (c, &z) in counts.iter().zip(zetas) {
            let exact = hamming_tail_exact(p, q, coupling_tail_threshold(z).floor() as usize)?;
            worst_ratio = worst_ratio.max(exact / z);
            let freq = *c as f64 / draws as f64;
            if freq > z + binomial_slack(z, draws) {
                mc_failures += 1;
            }
        }
    }
    // smallest integer threshold that already works in the Poisson(2) limit at each zeta
    let tight: Vec<String> = zetas
        .iter()
        .map(|&z| {
            let k = (0..200).find(|&k| poisson_tail(2.0, k) <= z).unwrap_or(200);
            format!(
                "zeta={z}: >{k} suffices, constant gives >{:.1}",
                coupling_tail_threshold(z)
            )
        })
        .collect();
    Ok(CheckReport::new(
        "coupling_threshold_oracle",
        worst_ratio <= 1.0 && mc_failures == 0,
        worst_ratio,
        1.0,
        instances.len() * draws,
        rng,
    )
    .with_note(format!(
        "{mc_failures} Monte-Carlo exceedances; {}",
        tight.join("; ")
    )))
}

/// `Pr[Poisson(lambda) > k]`.
fn poisson_tail(lambda: f64, k: usize) -> f64 {
    let mut term = (-lambda).exp();
    let mut cdf = term;
    for j in 1..=k {
        term *= lambda / j as f64;
        cdf += term;
    }
    (1.0 - cdf).max(0.0)
}

// ---------------------------------------------------------------------------
// user-gradient concentration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCheck {
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub gamma: f64,
    pub datasets: usize,
    pub population_items: usize,
}

/// Fraction of users whose averaged smoothed gradient at the fixed `theta` is more
/// than `G ln(nd/gamma)/sqrt(m)` from the population smoothed gradient. Passes iff
/// the fraction is at most `gamma/n` plus `3 sigma`.
pub fn check_gradient_concentration(
    loss: &dyn Loss,
    spec: &PopulationSpec,
    theta: &[f64],
    params: ConcentrationCheck,
    rng: &mut RngStream,
) -> Result<CheckReport> {
    let ConcentrationCheck {
        n,
        m,
        r,
        gamma,
        datasets,
        population_items,
    } = params;
    if n == 0 || m == 0 || datasets == 0 || population_items == 0 {
        return Err(invalid(
            "n, m, datasets and population_items must be positive",
        ));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let d = theta.len();
    if spec.dim() != d {
        return Err(invalid("population and theta dimensions differ"));
    }
    let g = loss.lipschitz();
    let radius = g * (n as f64 * d as f64 / gamma).ln() / (m as f64).sqrt();

    let mut pop_rng = rng.fork(0);
    let mut pop = VectorMoments::new(d);
    let mut z = vec![0.0; d];
    for _ in 0..population_items {
        spec.sample_into(&mut z, &mut pop_rng);
        pop.push(&smoothed_grad_item(loss, theta, &z, r, &mut pop_rng)?);
    }
    let pop_grad = pop.mean().to_vec();

    let mut ws = SmoothingWorkspace::new(d);
    let mut avg = vec![0.0; d];
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for t in 0..datasets {
        let mut child = rng.fork(1 + t as u64);
        let data = sample_population(spec, n, m, &mut child)?;
        for i in 0..n {
            user_avg_smoothed_grad_into(
                loss,
                theta,
                crate::data::UserSource::user(&data, i),
                r,
                &mut ws,
                &mut avg,
                &mut child,
            )?;
            let dev = distance(&avg, &pop_grad);
            worst = worst.max(dev);
            if dev > radius {
                violations += 1;
            }
        }
    }
    let total = datasets * n;
    let frac = violations as f64 / total as f64;
    let target = gamma / n as f64;
    let bound = target + binomial_slack(target, total);
    Ok(CheckReport::new(
        "gradient_concentration",
        frac <= bound,
        frac,
        bound,
        total,
        rng,
    )
    .with_note(format!(
        "radius {radius:.4}, largest deviation {worst:.4}, population gradient stderr {:.2e}",
        pop.stderr_norm()
    )))
}

// ---------------------------------------------------------------------------
// smoothing properties

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingCheck {
    pub r: f64,
    pub sandwich_probes: usize,
    pub smoothness_probes: usize,
    pub mc_samples: usize,
    /// Required fraction of smoothness probes within the bound.
    pub smoothness_quantile: f64,
}

impl SmoothingCheck {
    pub fn new(r: f64) -> Self {
        Self {
            r,
            sandwich_probes: 100,
            smoothness_probes: 1000,
            mc_samples: 2000,
            smoothness_quantile: 0.99,
        }
    }
}

fn random_point_in(loss: &dyn Loss, rng: &mut RngStream) -> Vec<f64> {
    let domain = loss.domain();
    let y = sample_uniform_ball(domain.radius, domain.dim(), rng).expect("valid ball");
    domain.center.iter().zip(y).map(|(c, v)| c + v).collect()
}

/// Sandwich, Lipschitz and smoothness probes of the ball-smoothed loss.
///
/// The sandwich is checked in the direction that holds for convex losses,
/// `l <= l_hat <= l + G r` (Jensen), up to three MC standard errors.
pub fn check_smoothing(
    loss: &dyn Loss,
    spec: &PopulationSpec,
    params: SmoothingCheck,
    rng: &mut RngStream,
) -> Result<CheckReport> {
    ensure_positive("smoothing radius", params.r)?;
    if params.sandwich_probes == 0 || params.smoothness_probes == 0 || params.mc_samples < 2 {
        return Err(invalid("probe and sample counts must be positive"));
    }
    let d = loss.domain().dim();
    if spec.dim() != d {
        return Err(invalid("population and domain dimensions differ"));
    }
    let g = loss.lipschitz();
    let r = params.r;

    // sandwich
    let mut srng = rng.fork(1);
    let mut sandwich_fail = 0;
    let mut reversed_fail = 0;
    let mut worst_excess: f64 = f64::NEG_INFINITY;
    for _ in 0..params.sandwich_probes {
        let theta = random_point_in(loss, &mut srng);
        let z = spec.sample(&mut srng);
        let raw = loss.value(&theta, &z);
        let est = smoothed_value_mc(loss, &theta, &z, r, params.mc_samples, &mut srng)?;
        let slack = 3.0 * est.stderr;
        let low = raw - slack;
        let high = raw + g * r + slack;
        if est.mean < low || est.mean > high {
            sandwich_fail += 1;
        }
        worst_excess = worst_excess.max((low - est.mean).max(est.mean - high));
        // l_hat <= l <= l_hat + G r
        if est.mean > raw + slack || est.mean < raw - g * r - slack {
            reversed_fail += 1;
        }
    }
    let sandwich = CheckReport::new("smoothing_sandwich", sandwich_fail == 0, sandwich_fail as f64, 0.0, params.sandwich_probes, &srng)
        .with_note(format!(
            "largest excursion beyond the band {worst_excess:.3e}; the reversed band l_hat <= l <= l_hat + G r fails on {reversed_fail}"
        ));

    // smoothness and Lipschitz, sharing the gradient draws
    let mut grng = rng.fork(2);
    let lipschitz_tol = 1e-12 * g.max(1.0);
    let mut max_grad_norm: f64 = 0.0;
    let mut grads = 0usize;
    let mut within = 0usize;
    let smooth = g * (d as f64).sqrt() / r;
    for _ in 0..params.smoothness_probes {
        let theta1 = random_point_in(loss, &mut grng);
        let step = sample_uniform_ball(2.0 * r, d, &mut grng)?;
        let theta2 = loss.domain().project(
            &theta1
                .iter()
                .zip(&step)
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        );
        let z = spec.sample(&mut grng);
        let mut m1 = VectorMoments::new(d);
        let mut m2 = VectorMoments::new(d);
        for _ in 0..params.mc_samples {
            let g1 = smoothed_grad_item(loss, &theta1, &z, r, &mut grng)?;
            let g2 = smoothed_grad_item(loss, &theta2, &z, r, &mut grng)?;
            max_grad_norm = max_grad_norm.max(norm(&g1)).max(norm(&g2));
            m1.push(&g1);
            m2.push(&g2);
        }
        grads += 2 * params.mc_samples;
        let mc_err = m1.stderr_norm().hypot(m2.stderr_norm());
        if distance(m1.mean(), m2.mean()) <= smooth * distance(&theta1, &theta2) + 3.0 * mc_err {
            within += 1;
        }
    }
    let lipschitz = CheckReport::new(
        "smoothing_lipschitz",
        max_grad_norm <= g + lipschitz_tol,
        max_grad_norm,
        g,
        grads,
        &grng,
    );
    let frac = within as f64 / params.smoothness_probes as f64;
    let smoothness = CheckReport::new(
        "smoothing_smoothness",
        frac >= params.smoothness_quantile,
        frac,
        params.smoothness_quantile,
        params.smoothness_probes,
        &grng,
    )
    .with_note(format!("smoothness constant G sqrt(d)/r = {smooth:.3}"));

    let components = vec![sandwich, lipschitz, smoothness];
    let pass = components.iter().all(CheckReport::passed);
    let failed = components.iter().filter(|c| !c.passed()).count();
    let mut report = CheckReport::new("smoothing", pass, failed as f64, 0.0, components.len(), rng);
    report.components = components;
    Ok(report)
}

// ---------------------------------------------------------------------------
// finite differences

/// Central differences of `loss(., z)` at `theta` against the subgradient. Passes iff
/// the relative error is at most `1e-4`. If the subgradient jumps across `theta`
/// (a kink), the check is skipped.
pub fn finite_diff_check(loss: &dyn Loss, theta: &[f64], z: &[f64], h: f64) -> Result<CheckReport> {
    ensure_positive("h", h)?;
    let d = theta.len();
    if z.len() != d {
        return Err(invalid("theta and z dimensions differ"));
    }
    let rng = RngStream::new(0, 0);
    let grad = loss.subgradient_vec(theta, z);
    let scale = norm(&grad).max(1.0);
    let mut fd = vec![0.0; d];
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for i in 0..d {
        plus[i] += h;
        minus[i] -= h;
        loss.subgradient(&plus, z, &mut gp);
        loss.subgradient(&minus, z, &mut gm);
        if distance(&gp, &gm) > 1e-3 * scale {
            return Ok(CheckReport {
                status: CheckStatus::Skipped,
                ..CheckReport::new("finite_diff", true, f64::NAN, 1e-4, d, &rng)
            }
            .with_note(format!("kink: subgradient jumps along coordinate {i}")));
        }
        fd[i] = (loss.value(&plus, z) - loss.value(&minus, z)) / (2.0 * h);
        plus[i] = theta[i];
        minus[i] = theta[i];
    }
    let rel = distance(&fd, &grad) / norm(&grad).max(1e-12);
    Ok(CheckReport::new(
        "finite_diff",
        rel <= 1e-4,
        rel,
        1e-4,
        d,
        &rng,
    ))
}

// ---------------------------------------------------------------------------
// mean-estimation noise

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    pub queries: usize,
    pub budget: PrivacyBudget,
    pub trials: usize,
    /// Zero every noise draw; the measured variance must then be exactly 0.
    pub zero_noise: bool,
}

/// Per-coordinate variance of session estimates on identical inputs (so every
/// user is selected) against the session's `noise_variance`; passes within 20%.
/// Trials in which the gate halts are discarded and counted in the note.
pub fn empirical_noise_audit(audit: NoiseAudit, rng: &mut RngStream) -> Result<CheckReport> {
    if audit.trials == 0 || audit.n == 0 || audit.d == 0 || audit.queries == 0 {
        return Err(invalid("n, d, queries and trials must be positive"));
    }
    let point: Vec<f64> = (0..audit.d).map(|j| 0.5 + j as f64).collect();
    let data = UserDataset::new(
        Shape {
            n: audit.n,
            m: 1,
            d: audit.d,
        },
        point.repeat(audit.n),
    )?;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut halted = 0usize;
    let mut formula = 0.0;
    for t in 0..audit.trials {
        let mut child = rng.fork(t as u64);
        if audit.zero_noise {
            child = child.with_hook(NoiseHook::Zeroed);
        }
        let mut session = MeanSession::open(&data, audit.budget, audit.tau, audit.queries, child)?;
        formula = session.noise_variance();
        let mut values = Vec::with_capacity(audit.queries);
        let mut ok = true;
        for _ in 0..audit.queries {
            match session.query(|u| Ok(u.to_vec()))? {
                QueryResult::Estimate { value, .. } => values.push(value),
                QueryResult::Halted => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            halted += 1;
            continue;
        }
        for v in values {
            for (a, b) in v.iter().zip(&point) {
                sum_sq += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(CheckReport::new(
            "noise_variance",
            false,
            f64::NAN,
            formula,
            audit.trials,
            rng,
        )
        .with_note("every trial halted"));
    }
    let var = sum_sq / count as f64;
    let target = if audit.zero_noise { 0.0 } else { formula };
    let pass = if audit.zero_noise {
        var == 0.0
    } else {
        (var / target - 1.0).abs() <= 0.2
    };
    Ok(CheckReport::new(
        "noise_variance",
        pass,
        var,
        target,
        audit.trials - halted,
        rng,
    )
    .with_note(format!(
        "{halted} of {} trials halted and were discarded; tolerance 20%",
        audit.trials
    )))
}

// ---------------------------------------------------------------------------
// AboveThreshold accuracy

/// Frequency of the accuracy event of AboveThreshold with `alpha = 8 s ln(2T/gamma)/eps`:
/// every TOP answer has `q >= threshold - alpha` and every BOTTOM answer has
/// `q <= threshold + alpha`. Query values are drawn uniformly from
/// `[threshold - 1.5 alpha, threshold + 2.5 alpha]`. Passes iff the frequency is at
/// least `1 - gamma - 3 sigma`.
pub fn check_above_threshold_accuracy(
    queries: usize,
    gamma: f64,
    epsilon: f64,
    sensitivity: f64,
    trials: usize,
    rng: &mut RngStream,
) -> Result<CheckReport> {
    if queries == 0 || trials == 0 {
        return Err(invalid("queries and trials must be positive"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let alpha = accuracy_radius(queries, gamma, epsilon, sensitivity);
    let threshold = 0.0;
    let mut good = 0usize;
    let mut answered = 0usize;
    for t in 0..trials {
        let mut child = rng.fork(t as u64);
        let mut at = AboveThreshold::new(threshold, epsilon, sensitivity, &mut child)?;
        let mut ok = true;
        for _ in 0..queries {
            let q = threshold + alpha * (4.0 * child.uniform() - 1.5);
            let a = at.step(q, &mut child)?;
            answered += 1;
            ok &= match a {
                Answer::Top => q >= threshold - alpha,
                Answer::Bottom => q <= threshold + alpha,
            };
            if a == Answer::Bottom {
                break;
            }
        }
        good += usize::from(ok);
    }
    let freq = good as f64 / trials as f64;
    let bound = 1.0 - gamma - binomial_slack(gamma, trials);
    Ok(CheckReport::new(
        "above_threshold_accuracy",
        freq >= bound,
        freq,
        bound,
        trials,
        rng,
    )
    .with_note(format!(
        "alpha {alpha:.3}, {:.1} answers per trial",
        answered as f64 / trials as f64
    )))
}
