//! Verification metrics: deterministic, probabilistic, downscaling and
//! projection scores. Every metric accepts an optional mask and accumulates
//! in `f64` in fixed index order.
//!
//! Masked pixels are excluded from sums and counts. Where a metric is
//! latitude weighted, the weights are renormalized over the unmasked pixels
//! of each timestep, so an all-true mask reproduces the unmasked result
//! exactly.

mod deterministic;
mod mask;
mod probabilistic;
mod projection;
mod report;

pub use deterministic::{
    acc, lat_rmse, lat_rmse_per_step, mean_bias, pearson, per_pixel_mean_bias, ClimatologyMap,
    ClimatologySource, DeterministicMetric,
};
pub use mask::{apply_nan_mask, Mask};
pub use probabilistic::{
    crps_ensemble, crps_gaussian, crps_gaussian_point, ensemble_mean, rank_histogram, spread,
    spread_skill_ratio, CrpsAggregation, EnsembleForecast, GaussianForecast, VarianceDivisor,
};
pub use projection::{nrmse_g, nrmse_s, total, TOTAL_ALPHA};
pub use report::{MetricReport, RankHistogram, ReportEntry, ReportMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why a metric has no value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    /// Every pixel was masked.
    AllMasked,
    /// A variance in a denominator was zero.
    ZeroVariance,
    /// A normalizing denominator was zero.
    ZeroDenominator,
}

/// A metric value or an explicit undefined flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Defined(f64),
    Undefined(Undefined),
}

impl Score {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Score::Defined(v) => Some(v),
            Score::Undefined(_) => None,
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, Score::Defined(_))
    }

    /// The value, panicking on an undefined score. Intended for tests.
    pub fn unwrap(self) -> f64 {
        match self {
            Score::Defined(v) => v,
            Score::Undefined(u) => panic!("metric undefined: {u:?}"),
        }
    }
}

pub(crate) fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}
