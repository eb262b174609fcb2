//! Classification losses over logits, with analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Vector;

/// Loss over (logits, one-hot target).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy, computed through a stable log-sum-exp.
    CrossEntropy,
    /// ½‖z − y‖²; used mainly as a smooth oracle in gradient tests.
    Mse,
}

impl Loss {
    pub fn value(&self, z: &Vector, y: &Vector) -> f64 {
        assert_eq!(z.len(), y.len(), "loss shape");
        match self {
            Loss::CrossEntropy => {
                let lse = log_sum_exp(z.as_slice());
                let target: f64 = z.iter().zip(y.iter()).map(|(z, y)| z * y).sum();
                lse - target
            }
            Loss::Mse => {
                0.5 * z
                    .iter()
                    .zip(y.iter())
                    .map(|(z, y)| (z - y) * (z - y))
                    .sum::<f64>()
            }
        }
    }

    /// ∂loss/∂z.
    pub fn grad(&self, z: &Vector, y: &Vector) -> Vector {
        assert_eq!(z.len(), y.len(), "loss shape");
        match self {
            Loss::CrossEntropy => {
                let p = softmax(z);
                Vector::new(p.iter().zip(y.iter()).map(|(p, y)| p - y).collect())
            }
            Loss::Mse => Vector::new(z.iter().zip(y.iter()).map(|(z, y)| z - y).collect()),
        }
    }
}

pub fn softmax(z: &Vector) -> Vector {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Vector::new(exps.into_iter().map(|e| e / sum).collect())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// One-hot vector for `class` over `num_classes` entries.
pub fn one_hot(class: usize, num_classes: usize) -> Vector {
    let mut v = Vector::zeros(num_classes);
    v[class] = 1.0;
    v
}

/// Validate that `y` is exactly one-hot and return the hot index.
pub fn one_hot_index(y: &Vector) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::NotOneHot("multiple entries equal 1".into()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::NotOneHot(format!("entry {i} is {v}")));
        }
    }
    hot.ok_or_else(|| Error::NotOneHot("no entry equals 1".into()))
}
