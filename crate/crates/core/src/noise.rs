//! Seeded random streams and the noise samplers used by every mechanism.
//!
//! All privacy noise (Laplace, Gaussian) and smoothing perturbations (uniform
//! ball) are drawn through an [`RngStream`]. Each stream carries a
//! [`NoiseHook`] that tests use to zero, record, or replay those draws.
//! Bernoulli selection and other bookkeeping randomness is never hooked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_positive, invalid, Result};

/// How noise draws are produced.
///
/// `Record` and `Replay` operate on the *base* draws of each sampler: one
/// centered uniform in (-1/2, 1/2) per Laplace draw, one standard normal per
/// Gaussian coordinate, and `d` normals plus one uniform per ball draw.
/// Replaying a tape through a sampler with different parameters therefore
/// reproduces the same underlying randomness at a different scale.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NoiseHook {
    #[default]
    Real,
    /// Every hooked draw returns exactly zero. Never private.
    Zeroed,
    Record(Vec<f64>),
    Replay {
        tape: Vec<f64>,
        cursor: usize,
    },
}

impl NoiseHook {
    pub fn replay(tape: Vec<f64>) -> Self {
        NoiseHook::Replay { tape, cursor: 0 }
    }

    pub fn is_zeroed(&self) -> bool {
        matches!(self, NoiseHook::Zeroed)
    }
}

/// A deterministic random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
    hook: NoiseHook,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            hook: NoiseHook::Real,
        }
    }

    pub fn with_hook(mut self, hook: NoiseHook) -> Self {
        self.hook = hook;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn hook(&self) -> &NoiseHook {
        &self.hook
    }

    /// Takes the recorded tape, leaving an empty recorder in place.
    pub fn take_tape(&mut self) -> Vec<f64> {
        match &mut self.hook {
            NoiseHook::Record(tape) => std::mem::take(tape),
            _ => Vec::new(),
        }
    }

    /// Derives an independent child stream. The child shares the seed, gets a
    /// stream id mixed from ours and `tag`, and inherits a `Zeroed` hook.
    /// Recording and replay stay with the parent.
    pub fn fork(&self, tag: u64) -> RngStream {
        let id = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(1)));
        let hook = if self.hook.is_zeroed() {
            NoiseHook::Zeroed
        } else {
            NoiseHook::Real
        };
        RngStream::new(self.seed, id).with_hook(hook)
    }

    /// Raw uniform in [0, 1). Not affected by the hook.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Raw standard normal. Not affected by the hook.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn index(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    fn open_centered_uniform(&mut self) -> f64 {
        loop {
            let u = self.uniform() - 0.5;
            if u > -0.5 {
                return u;
            }
        }
    }

    /// Routes one base draw through the hook. `None` means zeroed.
    fn base_draw(&mut self, fresh: fn(&mut RngStream) -> f64) -> Option<f64> {
        match &self.hook {
            NoiseHook::Zeroed => None,
            NoiseHook::Real => Some(fresh(self)),
            NoiseHook::Record(_) => {
                let v = fresh(self);
                if let NoiseHook::Record(tape) = &mut self.hook {
                    tape.push(v);
                }
                Some(v)
            }
            NoiseHook::Replay { .. } => {
                let NoiseHook::Replay { tape, cursor } = &mut self.hook else {
                    unreachable!()
                };
                let v = *tape
                    .get(*cursor)
                    .unwrap_or_else(|| panic!("noise replay tape exhausted at draw {cursor}"));
                *cursor += 1;
                Some(v)
            }
        }
    }
}

/// Laplace draw with density `exp(-|x|/scale) / (2 scale)`, by inverse CDF.
pub fn sample_laplace(scale: f64, rng: &mut RngStream) -> Result<f64> {
    ensure_positive("laplace scale", scale)?;
    Ok(match rng.base_draw(RngStream::open_centered_uniform) {
        None => 0.0,
        Some(u) => -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln(),
    })
}

/// `d` i.i.d. zero-mean Gaussian coordinates with the given per-coordinate variance.
pub fn sample_gaussian_vector(variance: f64, d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    ensure_positive("gaussian variance", variance)?;
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let sd = variance.sqrt();
    Ok((0..d)
        .map(|_| {
            rng.base_draw(RngStream::standard_normal)
                .map_or(0.0, |g| sd * g)
        })
        .collect())
}

/// Uniform draw from the Euclidean ball of `radius` around the origin:
/// an isotropic direction scaled by `radius * U^(1/d)`.
pub fn sample_uniform_ball(radius: f64, d: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    let mut out = vec![0.0; d];
    fill_uniform_ball(radius, &mut out, rng)?;
    Ok(out)
}

/// In-place variant of [`sample_uniform_ball`]; the dimension is `out.len()`.
pub fn fill_uniform_ball(radius: f64, out: &mut [f64], rng: &mut RngStream) -> Result<()> {
    ensure_positive("ball radius", radius)?;
    let d = out.len();
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if rng.hook.is_zeroed() {
        out.fill(0.0);
        return Ok(());
    }
    let mut norm2 = 0.0;
    for v in out.iter_mut() {
        let g = rng.base_draw(RngStream::standard_normal).unwrap_or(0.0);
        *v = g;
        norm2 += g * g;
    }
    let u = rng
        .base_draw(|s| loop {
            let u = s.uniform();
            if u > 0.0 {
                return u;
            }
        })
        .unwrap_or(0.0);
    let norm = norm2.sqrt();
    if norm == 0.0 {
        out.fill(0.0);
        return Ok(());
    }
    let scale = radius * u.powf(1.0 / d as f64) / norm;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Laplace, Normal, Uniform};
    use statrs::stats_tests::ks_test::{ks_onesample, KSOneSampleAlternativeMethod};
    use statrs::stats_tests::NaNPolicy;

    fn ks_pvalue<D: statrs::distribution::ContinuousCDF<f64, f64>>(
        data: Vec<f64>,
        dist: &D,
    ) -> f64 {
        ks_onesample(
            data,
            dist,
            KSOneSampleAlternativeMethod::TwoSidedAsymptotic,
            NaNPolicy::Error,
        )
        .unwrap()
        .1
    }

    #[test]
    fn zeroed_hook_returns_zero() {
        let mut rng = RngStream::new(1, 0).with_hook(NoiseHook::Zeroed);
        assert_eq!(sample_laplace(1.0, &mut rng).unwrap(), 0.0);
        assert_eq!(
            sample_gaussian_vector(1.0, 3, &mut rng).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(sample_uniform_ball(2.0, 4, &mut rng).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
        assert!(sample_gaussian_vector(0.0, 2, &mut rng).is_err());
        assert!(sample_gaussian_vector(1.0, 0, &mut rng).is_err());
        assert!(sample_uniform_ball(-1.0, 2, &mut rng).is_err());
    }

    #[test]
    fn same_stream_same_draws() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut c = RngStream::new(42, 8);
        let xa: Vec<f64> = (0..16)
            .map(|_| sample_laplace(1.0, &mut a).unwrap())
            .collect();
        let xb: Vec<f64> = (0..16)
            .map(|_| sample_laplace(1.0, &mut b).unwrap())
            .collect();
        let xc: Vec<f64> = (0..16)
            .map(|_| sample_laplace(1.0, &mut c).unwrap())
            .collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(a.fork(3).uniform(), b.fork(3).uniform());
        assert_ne!(a.fork(3).uniform(), a.fork(4).uniform());
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let mut a = RngStream::new(9, 1);
        let mut b = RngStream::new(9, 2);
        let n = 100_000;
        let s: f64 = (0..n)
            .map(|_| a.standard_normal() * b.standard_normal())
            .sum();
        // correlation estimate has sd 1/sqrt(n)
        assert!((s / n as f64).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn laplace_mean_and_tail() {
        let mut rng = RngStream::new(3, 0);
        let n = 1_000_000;
        let b = 2.0;
        let mean = (0..n)
            .map(|_| sample_laplace(b, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let tol = 3.0 * (2.0 * b * b / n as f64).sqrt();
        assert!(mean.abs() < tol.max(0.01), "mean {mean}");

        let t = 100f64.ln();
        let tail = (0..n)
            .filter(|_| sample_laplace(1.0, &mut rng).unwrap().abs() > t)
            .count() as f64
            / n as f64;
        assert!((tail - 0.01).abs() < 0.003, "tail {tail}");
    }

    #[test]
    fn gaussian_variance_and_norm() {
        let mut rng = RngStream::new(4, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_gaussian_vector(4.0, 1, &mut rng).unwrap()[0])
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 4.0).abs() < 0.05, "var {var}");

        let k = 10_000;
        let msq = (0..k)
            .map(|_| {
                sample_gaussian_vector(1.0, 100, &mut rng)
                    .unwrap()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / k as f64;
        assert!((msq - 100.0).abs() < 3.0, "mean sq norm {msq}");
    }

    #[test]
    fn ball_support_mean_and_second_moment() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..10_000 {
            let y = sample_uniform_ball(1.5, 7, &mut rng).unwrap();
            assert!(y.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.5 + 1e-12);
        }
        let n = 1_000_000;
        let m = (0..n)
            .map(|_| sample_uniform_ball(1.0, 1, &mut rng).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!(m.abs() < 0.002, "mean {m}");
        let e2 = (0..n)
            .map(|_| {
                sample_uniform_ball(2.0, 5, &mut rng)
                    .unwrap()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        let expect = 4.0 * 5.0 / 7.0;
        assert!((e2 - expect).abs() < 0.02 * expect, "E|y|^2 {e2}");
    }

    #[test]
    fn ks_against_closed_form_cdfs() {
        let mut rng = RngStream::new(6, 0);
        let n = 100_000;
        let lap: Vec<f64> = (0..n)
            .map(|_| sample_laplace(1.5, &mut rng).unwrap())
            .collect();
        assert!(ks_pvalue(lap, &Laplace::new(0.0, 1.5).unwrap()) > 1e-3);

        let gau: Vec<f64> = (0..n)
            .map(|_| sample_gaussian_vector(2.0, 1, &mut rng).unwrap()[0])
            .collect();
        assert!(ks_pvalue(gau, &Normal::new(0.0, 2f64.sqrt()).unwrap()) > 1e-3);

        // (|y|/r)^d is uniform on (0,1) iff the radial CDF is t^d
        let d = 6;
        let radial: Vec<f64> = (0..n)
            .map(|_| {
                let y = sample_uniform_ball(3.0, d, &mut rng).unwrap();
                (y.iter().map(|v| v * v).sum::<f64>().sqrt() / 3.0).powi(d as i32)
            })
            .collect();
        assert!(ks_pvalue(radial, &Uniform::new(0.0, 1.0).unwrap()) > 1e-3);
    }

    #[test]
    fn replay_scales_the_same_base_draw() {
        let mut rec = RngStream::new(11, 0).with_hook(NoiseHook::Record(Vec::new()));
        let a = sample_laplace(1.0, &mut rec).unwrap();
        let tape = rec.take_tape();
        assert_eq!(tape.len(), 1);
        let mut rep = RngStream::new(0, 0).with_hook(NoiseHook::replay(tape));
        let b = sample_laplace(2.0, &mut rep).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }
}
