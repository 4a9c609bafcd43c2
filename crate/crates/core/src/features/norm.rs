use serde::{Deserialize, Serialize};

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose standard deviation was raised to [`NormStats::STD_FLOOR`].
    pub floored: Vec<bool>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-6;

    /// Mean 0, std 1: normalization is the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            floored: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population statistics over all rows. A dimension that is constant
    /// gets that constant as its exact mean.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            if sum.is_empty() {
                sum = vec![0.0; r.len()];
                lo = r.to_vec();
                hi = r.to_vec();
            }
            for (j, &x) in r.iter().enumerate() {
                sum[j] += x;
                lo[j] = lo[j].min(x);
                hi[j] = hi[j].max(x);
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(0);
        }
        let mean: Vec<f64> = (0..sum.len())
            .map(|j| if lo[j] == hi[j] { lo[j] } else { sum[j] / n as f64 })
            .collect();
        let mut var = vec![0.0; mean.len()];
        for r in &rows {
            for (j, &x) in r.iter().enumerate() {
                var[j] += (x - mean[j]).powi(2);
            }
        }
        let mut std = Vec::with_capacity(mean.len());
        let mut floored = Vec::with_capacity(mean.len());
        for v in var {
            let s = (v / n as f64).sqrt();
            floored.push(s < Self::STD_FLOOR);
            std.push(s.max(Self::STD_FLOOR));
        }
        Self { mean, std, floored }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}
