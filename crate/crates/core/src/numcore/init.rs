use serde::{Deserialize, Serialize};

use super::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, with `fan_in = shape[0]`
    /// and `fan_out` the product of the remaining dims (or `shape[0]` for
    /// vectors).
    GlorotUniform,
    Uniform(f64, f64),
    Zeros,
    Ones,
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let fan_in = shape.first().copied().unwrap_or(1);
    let fan_out = if shape.len() > 1 { shape[1..].iter().product() } else { fan_in };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministic initialization: the same `(shape, scheme, seed)` always
/// yields a bit-identical tensor. Entries are drawn in row-major order.
pub fn init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::Ones => Tensor::full(shape, 1.0),
        InitScheme::GlorotUniform => {
            let b = glorot_bound(shape);
            uniform(shape, -b, b, seed)
        }
        InitScheme::Uniform(lo, hi) => uniform(shape, lo, hi, seed),
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform(lo, hi);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros() {
        let t = init(&[2, 2], InitScheme::Zeros, 9);
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn deterministic() {
        let a = init(&[3, 7], InitScheme::GlorotUniform, 11);
        let b = init(&[3, 7], InitScheme::GlorotUniform, 11);
        assert_eq!(a, b);
        assert_ne!(a, init(&[3, 7], InitScheme::GlorotUniform, 12));
    }

    #[test]
    fn glorot_bound_scan() {
        let t = init(&[100, 100], InitScheme::GlorotUniform, 5);
        let bound = (6.0f64 / 200.0).sqrt();
        let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= bound);
        assert!(max > 0.9 * bound);
    }
}
