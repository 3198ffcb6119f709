use serde::{Deserialize, Serialize};

use super::DomainError;
use crate::numgrad::Tensor;

/// Per-coordinate mean and (sample) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of a training split. Needs two or more rows and a
    /// strictly positive spread in every column.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DomainError> {
        if rows.len() < 2 {
            return Err(DomainError::Stats(format!(
                "need at least 2 rows to estimate a spread, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
        let s = Self { mean, std };
        s.check()?;
        Ok(s)
    }

    /// Like [`Standardizer::fit`], but a zero or undefined spread becomes 1
    /// so constant columns pass through shifted only.
    pub fn fit_lenient<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DomainError> {
        let Some(first) = rows.first() else {
            return Err(DomainError::Stats("cannot fit on zero rows".into()));
        };
        if rows.len() == 1 {
            return Ok(Self {
                mean: first.as_ref().to_vec(),
                std: vec![1.0; first.as_ref().len()],
            });
        }
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r.as_ref()).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / (n - 1.0)).sqrt();
                if sd > 1e-12 * (1.0 + m.abs()) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, DomainError> {
        if mean.len() != std.len() {
            return Err(DomainError::Stats("mean and std lengths differ".into()));
        }
        let s = Self { mean, std };
        s.check()?;
        Ok(s)
    }

    /// Identity transform of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn check(&self) -> Result<(), DomainError> {
        for (i, &s) in self.std.iter().enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(DomainError::Stats(format!(
                    "column {i} has non-positive standard deviation {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    pub fn normalize_tensor(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        out
    }

    pub fn denormalize_tensor(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = *x * s + m;
            }
        }
        out
    }
}

/// Standardization for both sides of the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub x: Standardizer,
    pub y: Standardizer,
}

impl NormalizationStats {
    pub fn fit<X: AsRef<[f64]>, Y: AsRef<[f64]>>(x: &[X], y: &[Y]) -> Result<Self, DomainError> {
        Ok(Self {
            x: Standardizer::fit(x)?,
            y: Standardizer::fit(y)?,
        })
    }

    pub fn identity(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x: Standardizer::identity(x_dim),
            y: Standardizer::identity(y_dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rows(n: usize, seed: u64) -> Vec<[f64; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(0.63..0.83),
                    rng.random_range(20.0..45.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(200.0..900.0),
                ]
            })
            .collect()
    }

    #[test]
    fn mean_maps_to_zero() {
        let data = rows(50, 1);
        let s = Standardizer::fit(&data).unwrap();
        assert!(s.normalize(&s.mean).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roundtrip_is_exact_to_1e12() {
        let data = rows(100, 2);
        let s = Standardizer::fit(&data).unwrap();
        let worst = data
            .iter()
            .flat_map(|r| {
                let back = s.denormalize(&s.normalize(r));
                r.iter().zip(back).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn standardized_columns_have_unit_moments() {
        let data = rows(300, 3);
        let s = Standardizer::fit(&data).unwrap();
        let z: Vec<Vec<f64>> = data.iter().map(|r| s.normalize(r)).collect();
        let n = z.len() as f64;
        for c in 0..4 {
            let m: f64 = z.iter().map(|r| r[c]).sum::<f64>() / n;
            let v: f64 = z.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(m.abs() < 1e-10);
            assert!((v.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_column_is_a_stats_error() {
        let data = vec![[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]];
        assert!(matches!(Standardizer::fit(&data), Err(DomainError::Stats(_))));
    }
}
