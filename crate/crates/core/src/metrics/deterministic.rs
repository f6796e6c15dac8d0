use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::mask::{included, Mask};
use super::{same_shape, Score, Undefined};
use crate::error::{Error, Result};
use crate::grid::LatWeights;

fn check(
    pred: &ArrayView3<'_, f64>,
    truth: &ArrayView3<'_, f64>,
    weights: Option<&LatWeights>,
    mask: Option<&Mask<'_>>,
) -> Result<()> {
    same_shape(pred.shape(), truth.shape(), "prediction vs truth")?;
    if let Some(w) = weights {
        if w.len() != truth.dim().1 {
            return Err(Error::ShapeMismatch(format!(
                "{} latitude weights for {} rows",
                w.len(),
                truth.dim().1
            )));
        }
    }
    if let Some(m) = mask {
        m.check(truth.dim())?;
    }
    Ok(())
}

/// Latitude-weighted RMSE of each timestep; `None` where every pixel is masked.
pub fn lat_rmse_per_step(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
) -> Result<Vec<Option<f64>>> {
    check(&pred, &truth, Some(weights), mask)?;
    let (n, h, w) = truth.dim();
    Ok((0..n)
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..h {
                let li = weights.row(i);
                for j in 0..w {
                    if included(mask, k, i, j) {
                        let e = pred[[k, i, j]] - truth[[k, i, j]];
                        num += li * e * e;
                        den += li;
                    }
                }
            }
            (den > 0.0).then(|| (num / den).sqrt())
        })
        .collect())
}

/// Mean over timesteps of the per-step latitude-weighted RMSE. Fully masked
/// timesteps are skipped; the score is undefined only if all are.
pub fn lat_rmse(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
) -> Result<Score> {
    let steps = lat_rmse_per_step(pred, truth, weights, mask)?;
    let defined: Vec<f64> = steps.into_iter().flatten().collect();
    if defined.is_empty() {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    Ok(Score::Defined(defined.iter().sum::<f64>() / defined.len() as f64))
}

/// Anomaly correlation coefficient against `clim` (`H x W`), latitude
/// weighted, over all timesteps jointly.
pub fn acc(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    clim: ArrayView2<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
) -> Result<Score> {
    check(&pred, &truth, Some(weights), mask)?;
    let (n, h, w) = truth.dim();
    if clim.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "climatology {:?} vs field {:?}",
            clim.dim(),
            (h, w)
        )));
    }
    let (mut cross, mut pp, mut tt, mut count) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..n {
        for i in 0..h {
            let li = weights.row(i);
            for j in 0..w {
                if !included(mask, k, i, j) {
                    continue;
                }
                let pa = pred[[k, i, j]] - clim[[i, j]];
                let ta = truth[[k, i, j]] - clim[[i, j]];
                cross += li * pa * ta;
                pp += li * pa * pa;
                tt += li * ta * ta;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    if pp == 0.0 || tt == 0.0 {
        return Ok(Score::Undefined(Undefined::ZeroVariance));
    }
    Ok(Score::Defined(cross / (pp * tt).sqrt()))
}

/// Mean of the prediction minus mean of the truth over unmasked pixels.
pub fn mean_bias(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    mask: Option<&Mask<'_>>,
) -> Result<Score> {
    check(&pred, &truth, None, mask)?;
    let (mut sp, mut st, mut count) = (0.0, 0.0, 0usize);
    for ((k, i, j), &t) in truth.indexed_iter() {
        if included(mask, k, i, j) {
            sp += pred[[k, i, j]];
            st += t;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    Ok(Score::Defined(sp / count as f64 - st / count as f64))
}

/// Per-pixel time mean of `pred - truth`. Pixels never unmasked are NaN.
pub fn per_pixel_mean_bias(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    mask: Option<&Mask<'_>>,
) -> Result<Array2<f64>> {
    check(&pred, &truth, None, mask)?;
    let (n, h, w) = truth.dim();
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        let (mut s, mut c) = (0.0, 0usize);
        for k in 0..n {
            if included(mask, k, i, j) {
                s += pred[[k, i, j]] - truth[[k, i, j]];
                c += 1;
            }
        }
        if c == 0 { f64::NAN } else { s / c as f64 }
    }))
}

/// Pearson correlation of the flattened unmasked values.
pub fn pearson(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    mask: Option<&Mask<'_>>,
) -> Result<Score> {
    check(&pred, &truth, None, mask)?;
    let pairs: Vec<(f64, f64)> = truth
        .indexed_iter()
        .filter(|((k, i, j), _)| included(mask, *k, *i, *j))
        .map(|((k, i, j), &t)| (pred[[k, i, j]], t))
        .collect();
    if pairs.len() < 2 {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    let n = pairs.len() as f64;
    let mp = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mt = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for &(p, t) in &pairs {
        cov += (p - mp) * (t - mt);
        vp += (p - mp) * (p - mp);
        vt += (t - mt) * (t - mt);
    }
    if vp == 0.0 || vt == 0.0 {
        return Ok(Score::Undefined(Undefined::ZeroVariance));
    }
    Ok(Score::Defined((cov / (vp * vt).sqrt()).clamp(-1.0, 1.0)))
}

/// Which period a climatology was averaged over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClimatologySource {
    /// Temporal mean of the training split.
    TrainSplit,
    /// Temporal mean of the evaluated (test) truth.
    #[default]
    TestSplit,
}

/// Per-variable temporal mean fields, `C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClimatologyMap {
    pub variables: Vec<String>,
    pub data: Array3<f64>,
    pub source: ClimatologySource,
}

impl ClimatologyMap {
    /// Temporal mean of a `N x H x W` field, ignoring NaNs.
    pub fn temporal_mean(field: ArrayView3<'_, f64>) -> Array2<f64> {
        let (n, h, w) = field.dim();
        Array2::from_shape_fn((h, w), |(i, j)| {
            let (mut s, mut c) = (0.0, 0usize);
            for k in 0..n {
                let v = field[[k, i, j]];
                if !v.is_nan() {
                    s += v;
                    c += 1;
                }
            }
            if c == 0 { f64::NAN } else { s / c as f64 }
        })
    }

    pub fn channel(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.variables
            .iter()
            .position(|v| v == name)
            .map(|c| self.data.index_axis(Axis(0), c))
    }
}

/// Deterministic scores usable with any pixel mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeterministicMetric {
    Rmse,
    Acc,
    MeanBias,
    Pearson,
}

impl DeterministicMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DeterministicMetric::Rmse => "rmse",
            DeterministicMetric::Acc => "acc",
            DeterministicMetric::MeanBias => "mean_bias",
            DeterministicMetric::Pearson => "pearson",
        }
    }

    /// Evaluates the metric; `clim` is required for ACC only.
    pub fn evaluate(
        &self,
        pred: ArrayView3<'_, f64>,
        truth: ArrayView3<'_, f64>,
        weights: &LatWeights,
        clim: Option<ArrayView2<'_, f64>>,
        mask: Option<&Mask<'_>>,
    ) -> Result<Score> {
        match self {
            DeterministicMetric::Rmse => lat_rmse(pred, truth, weights, mask),
            DeterministicMetric::Acc => {
                let clim = clim.ok_or_else(|| Error::InvalidArgument("ACC needs a climatology".into()))?;
                acc(pred, truth, clim, weights, mask)
            }
            DeterministicMetric::MeanBias => mean_bias(pred, truth, mask),
            DeterministicMetric::Pearson => pearson(pred, truth, mask),
        }
    }
}
