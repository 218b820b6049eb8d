use serde::{Deserialize, Serialize};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let k = samples.len();
        if k == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / k as f64;
        if k == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        Self {
            mean,
            stderr: (var / k as f64).sqrt(),
        }
    }
}

/// Streaming mean and squared-deviation accumulator (Welford) over vectors.
#[derive(Debug, Clone)]
pub struct VectorMoments {
    count: usize,
    mean: Vec<f64>,
    m2: f64,
}

impl VectorMoments {
    pub fn new(d: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; d],
            m2: 0.0,
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        let mut delta_sq = 0.0;
        for (m, v) in self.mean.iter_mut().zip(x) {
            let delta = v - *m;
            *m += delta / k;
            delta_sq += delta * (v - *m);
        }
        self.m2 += delta_sq;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Norm of the standard error of the mean vector: `sqrt(trace(Cov) / k)`.
    pub fn stderr_norm(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let k = self.count as f64;
        (self.m2 / (k - 1.0) / k).sqrt()
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimates() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);

        let mut vm = VectorMoments::new(2);
        for x in [[1.0, 0.0], [3.0, 2.0], [2.0, 4.0]] {
            vm.push(&x);
        }
        assert_eq!(vm.mean(), &[2.0, 2.0]);
        // trace of sample covariance = 1 + 4 = 5
        assert!((vm.stderr_norm() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
