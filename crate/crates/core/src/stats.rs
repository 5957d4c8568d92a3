//! Order-fixed reductions and sample statistics.

/// Pairwise (binary tree) summation in index order.
///
/// The tree shape depends only on the slice length, so the result is identical
/// however the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Estimate::default();
        }
        let mean = pairwise_sum(values) / n as f64;
        if n == 1 {
            return Estimate { mean, std_err: 0.0 };
        }
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Estimate {
            mean,
            std_err: (var / n as f64).sqrt(),
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Estimate {
            mean: self.mean * c,
            std_err: self.std_err * c.abs(),
        }
    }
}
