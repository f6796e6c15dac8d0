use std::path::PathBuf;

use clap::{Args, ValueEnum};
use clbench_core::extreme::{compute_thresholds, extreme_masks, localized_rolling_mean, Bound, RollingConfig, ThresholdField};
use serde::Serialize;

use crate::config::usage;
use crate::io::read_series;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RollingArgs {
    /// Trailing window length in days, including the current timestamp.
    #[arg(long, default_value_t = 7)]
    pub window_days: u32,
    /// Divide by the stencil weights actually used instead of the published ones.
    #[arg(long)]
    pub renormalize: bool,
}

impl RollingArgs {
    fn config(&self) -> RollingConfig {
        RollingConfig {
            window_days: self.window_days,
            renormalize: self.renormalize,
            ..RollingConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ThresholdArgs {
    /// Series the thresholds are estimated from, normally the training split.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub variable: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Lower percentile, 0 to 100.
    #[arg(long, default_value_t = 5.0)]
    pub p_lo: f64,
    /// Upper percentile, 0 to 100.
    #[arg(long, default_value_t = 95.0)]
    pub p_hi: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub rolling: RollingArgs,
}

pub fn thresholds(a: &ThresholdArgs) -> anyhow::Result<()> {
    if !(0.0..=100.0).contains(&a.p_lo) || !(0.0..=100.0).contains(&a.p_hi) || a.p_lo > a.p_hi {
        return Err(usage(format!("p-lo {} and p-hi {} must satisfy 0 <= p-lo <= p-hi <= 100", a.p_lo, a.p_hi)));
    }
    let series = read_series(&a.input)?;
    let means = localized_rolling_mean(&series, &a.variable, &a.rolling.config())?;
    let thr = compute_thresholds(&means, a.p_lo, a.p_hi)?;
    thr.write(&a.out)?;
    println!(
        "wrote {} from {} localized means of {}",
        a.out.display(),
        means.values.dim().0,
        a.variable
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundArg {
    /// Extreme only strictly beyond a threshold.
    Strict,
    /// Values equal to a threshold count as extreme.
    Inclusive,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MaskArgs {
    /// Series to mask, normally the test split.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Series directly preceding `input`, supplying the first window's context.
    #[arg(long)]
    pub preceding: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "strict")]
    pub bound: BoundArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub rolling: RollingArgs,
}

pub fn masks(a: &MaskArgs) -> anyhow::Result<()> {
    let test = read_series(&a.input)?;
    let thr = ThresholdField::read(&a.thresholds)?;
    let prev = a.preceding.as_deref().map(read_series).transpose()?;
    let bound = match a.bound {
        BoundArg::Strict => Bound::Strict,
        BoundArg::Inclusive => Bound::Inclusive,
    };
    let m = extreme_masks(prev.as_ref(), &test, &thr, &a.rolling.config(), bound)?;
    m.write(&a.out)?;
    println!(
        "wrote {}: {} timestamps, {:.2}% of pixels extreme",
        a.out.display(),
        m.times.len(),
        100.0 * m.fraction()
    );
    Ok(())
}
