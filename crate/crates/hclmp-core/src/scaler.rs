use crate::error::CoreError;
use serde::{Deserialize, Serialize};

/// Per-channel standardization to zero mean and unit variance, with the
/// population convention (divide by n). Fitted on training rows only.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self, CoreError> {
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for row in rows {
            if n == 0 {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            }
            assert_eq!(row.len(), mean.len(), "inconsistent row widths");
            n += 1;
            for (c, &v) in row.iter().enumerate() {
                // Welford update keeps the fit stable for large values
                let delta = v - mean[c];
                mean[c] += delta / n as f64;
                m2[c] += delta * (v - mean[c]);
            }
        }
        if n < 2 {
            return Err(CoreError::TooFewRecords { context: "standardizer fit", needed: 2, got: n });
        }
        let mut std = Vec::with_capacity(mean.len());
        for (c, &s) in m2.iter().enumerate() {
            let var = s / n as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12) {
                return Err(CoreError::DegenerateChannel { channel: c });
            }
            std.push(sd);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.dims());
        row.iter().zip(self.mean.iter().zip(self.std.iter())).map(|(&v, (&m, &s))| (v - m) / s).collect()
    }

    pub fn destandardize(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.dims());
        row.iter().zip(self.mean.iter().zip(self.std.iter())).map(|(&v, (&m, &s))| v * s + m).collect()
    }
}
