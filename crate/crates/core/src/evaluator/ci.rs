use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSummary {
    pub mean: f64,
    /// Half-width of the two-sided interval; 0 and `undefined` for one run.
    pub half_width: f64,
    pub n_runs: usize,
    pub level: f64,
    pub undefined: bool,
}

impl CiSummary {
    /// `98.53±0.18`, or the bare mean for a point estimate.
    pub fn display(&self) -> String {
        if self.undefined {
            format!("{:.2} (n=1)", self.mean)
        } else {
            format!("{:.2}±{:.2}", self.mean, self.half_width)
        }
    }
}

/// Mean and Student-t confidence interval over seeds:
/// `half_width = t((1 + level) / 2, n - 1) * s / sqrt(n)`.
pub fn aggregate_ci(values: &[f64], level: f64) -> Result<CiSummary> {
    if values.is_empty() {
        return Err(Error::Validation("aggregate_ci needs at least one value".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("aggregate_ci values must be finite".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(CiSummary {
            mean,
            half_width: 0.0,
            n_runs: 1,
            level,
            undefined: true,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    Ok(CiSummary {
        mean,
        half_width: t * var.sqrt() / (n as f64).sqrt(),
        n_runs: n,
        level,
        undefined: false,
    })
}
