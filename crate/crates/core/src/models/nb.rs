use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, ParamStore};
use crate::features::FeatureSample;
use crate::labeler::ManeuverLabel;

use super::ModelError;

/// Per-class diagonal Gaussians over `(m, v_lat, rel_v_pv)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    /// `mean[class][feature]`, classes in L, F, R order.
    pub mean: [[f64; 3]; 3],
    pub var: [[f64; 3]; 3],
    pub prior: [f64; 3],
}

const VAR_FLOOR: f64 = 1e-9;

/// The three raw inputs of the frame-wise baseline.
pub fn nb_features(s: &FeatureSample) -> [f64; 3] {
    [s.target.m, s.target.v_lat, s.rel_v_pv]
}

pub fn nb_fit(samples: &[[f64; 3]], labels: &[ManeuverLabel]) -> Result<NbParams, ModelError> {
    if samples.len() != labels.len() {
        return Err(ModelError::Shape(format!("{} samples, {} labels", samples.len(), labels.len())));
    }
    let mut count = [0usize; 3];
    let mut sum = [[0.0; 3]; 3];
    for (x, l) in samples.iter().zip(labels) {
        let c = l.index();
        count[c] += 1;
        for j in 0..3 {
            sum[c][j] += x[j];
        }
    }
    if let Some(c) = (0..3).find(|&c| count[c] < 2) {
        return Err(ModelError::Fit(format!(
            "class {} has {} samples, need at least 2",
            ManeuverLabel::ALL[c],
            count[c]
        )));
    }
    let mut mean = [[0.0; 3]; 3];
    for c in 0..3 {
        for j in 0..3 {
            mean[c][j] = sum[c][j] / count[c] as f64;
        }
    }
    let mut var = [[0.0; 3]; 3];
    for (x, l) in samples.iter().zip(labels) {
        let c = l.index();
        for j in 0..3 {
            var[c][j] += (x[j] - mean[c][j]).powi(2);
        }
    }
    for c in 0..3 {
        for j in 0..3 {
            var[c][j] = (var[c][j] / count[c] as f64).max(VAR_FLOOR);
        }
    }
    let n = samples.len() as f64;
    let prior = count.map(|k| k as f64 / n);
    Ok(NbParams { mean, var, prior })
}

/// Posterior class probabilities, computed in log space.
pub fn nb_predict(p: &NbParams, x: &[f64; 3]) -> [f64; 3] {
    let mut log_post = [0.0; 3];
    for c in 0..3 {
        let mut ll = p.prior[c].ln();
        for j in 0..3 {
            let v = p.var[c][j];
            ll -= 0.5 * ((std::f64::consts::TAU * v).ln() + (x[j] - p.mean[c][j]).powi(2) / v);
        }
        log_post[c] = ll;
    }
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = log_post.map(|l| (l - max).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

impl NbParams {
    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("nb.mean", Matrix::from_vec(3, 3, self.mean.concat()));
        s.insert("nb.var", Matrix::from_vec(3, 3, self.var.concat()));
        s.insert("nb.prior", Matrix::column(&self.prior));
        s
    }

    pub fn from_store(s: &ParamStore) -> Result<Self, ModelError> {
        let get = |name: &str, shape: (usize, usize)| -> Result<&Matrix, ModelError> {
            let m = s
                .by_name(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if m.shape() != shape {
                return Err(ModelError::Checkpoint(format!("{name} has shape {:?}", m.shape())));
            }
            Ok(m)
        };
        let grid = |m: &Matrix| -> [[f64; 3]; 3] { std::array::from_fn(|r| std::array::from_fn(|c| m.get(r, c))) };
        let mean = grid(get("nb.mean", (3, 3))?);
        let var = grid(get("nb.var", (3, 3))?);
        let pr = get("nb.prior", (3, 1))?;
        Ok(Self {
            mean,
            var,
            prior: [pr.get(0, 0), pr.get(1, 0), pr.get(2, 0)],
        })
    }
}
