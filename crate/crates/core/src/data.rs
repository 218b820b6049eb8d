use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dimensions of a user-level dataset: `n` users, `m` items each, items in `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

/// Read access to per-user data. The unit of privacy is one call to [`UserSource::user`].
pub trait UserSource {
    fn shape(&self) -> Shape;

    /// All `m` items of user `i`, flattened row-major (`m * d` values).
    fn user(&self, i: usize) -> &[f64];
}

/// `n` users holding exactly `m` items of dimension `d`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    shape: Shape,
    values: Vec<f64>,
}

impl UserDataset {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if shape.n == 0 || shape.m == 0 || shape.d == 0 {
            return Err(invalid(format!(
                "dataset needs n, m, d >= 1, got {}x{}x{}",
                shape.n, shape.m, shape.d
            )));
        }
        if values.len() != shape.n * shape.m * shape.d {
            return Err(invalid(format!(
                "expected {} values for shape {:?}, got {}",
                shape.n * shape.m * shape.d,
                shape,
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    /// Builds a dataset from nested `users[i][j][k]` vectors, checking they are rectangular.
    pub fn from_nested(users: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = users.len();
        let m = users.first().map_or(0, Vec::len);
        let d = users.first().and_then(|u| u.first()).map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * m * d);
        for (i, user) in users.iter().enumerate() {
            if user.len() != m {
                return Err(invalid(format!(
                    "user {i} holds {} items, expected {m}",
                    user.len()
                )));
            }
            for item in user {
                if item.len() != d {
                    return Err(invalid(format!(
                        "user {i} has an item of dimension {}, expected {d}",
                        item.len()
                    )));
                }
                values.extend_from_slice(item);
            }
        }
        Self::new(Shape { n, m, d }, values)
    }

    pub fn item(&self, user: usize, j: usize) -> &[f64] {
        let Shape { m, d, .. } = self.shape;
        let start = (user * m + j) * d;
        &self.values[start..start + d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copies the contiguous block of users `start..end` into a new dataset.
    pub fn users_range(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape.n {
            return Err(invalid(format!(
                "bad user range {start}..{end} for n={}",
                self.shape.n
            )));
        }
        let per_user = self.shape.m * self.shape.d;
        let shape = Shape {
            n: end - start,
            ..self.shape
        };
        Self::new(
            shape,
            self.values[start * per_user..end * per_user].to_vec(),
        )
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.shape.n)
            .map(|i| {
                self.user(i)
                    .chunks_exact(self.shape.d)
                    .map(<[f64]>::to_vec)
                    .collect()
            })
            .collect()
    }
}

impl UserSource for UserDataset {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn user(&self, i: usize) -> &[f64] {
        let per_user = self.shape.m * self.shape.d;
        &self.values[i * per_user..(i + 1) * per_user]
    }
}

/// An `(epsilon, delta)` budget with `0 < epsilon < 10` and `0 < delta < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget")]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

#[derive(Deserialize)]
struct RawBudget {
    epsilon: f64,
    delta: f64,
}

impl TryFrom<RawBudget> for PrivacyBudget {
    type Error = crate::error::Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        PrivacyBudget::new(raw.epsilon, raw.delta)
    }
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 10.0) {
            return Err(invalid(format!(
                "epsilon must lie in (0, 10), got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}
