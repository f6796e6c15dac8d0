//! Normalized RMSE scores for annual-mean climate projections.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};

use super::{same_shape, Score, Undefined};
use crate::error::{Error, Result};
use crate::grid::LatWeights;

/// Weight of the global term in [`total`].
pub const TOTAL_ALPHA: f64 = 5.0;

struct GlobalMean<'a> {
    weights: &'a LatWeights,
    mask: Option<ArrayView2<'a, bool>>,
}

impl GlobalMean<'_> {
    /// Latitude-weighted mean over unmasked pixels; `None` if all are masked.
    fn of(&self, field: ArrayView2<'_, f64>) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for ((i, j), &v) in field.indexed_iter() {
            if self.mask.is_none_or(|m| m[[i, j]]) {
                let li = self.weights.row(i);
                num += li * v;
                den += li;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

fn check(
    pred: &ArrayView3<'_, f64>,
    truth: &ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<ArrayView2<'_, bool>>,
) -> Result<()> {
    same_shape(pred.shape(), truth.shape(), "prediction vs truth")?;
    let (n, h, w) = truth.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("projection metrics need at least one timestep".into()));
    }
    if weights.len() != h {
        return Err(Error::ShapeMismatch(format!("{} weights for {h} rows", weights.len())));
    }
    if mask.is_some_and(|m| m.dim() != (h, w)) {
        return Err(Error::ShapeMismatch("mask does not match the grid".into()));
    }
    Ok(())
}

/// `(1/N) sum_k <X_k>`, the shared normalizer.
fn normalizer(truth: ArrayView3<'_, f64>, gm: &GlobalMean<'_>) -> Option<f64> {
    let n = truth.dim().0;
    let mut s = 0.0;
    for k in 0..n {
        s += gm.of(truth.index_axis(Axis(0), k))?;
    }
    Some(s / n as f64)
}

fn time_mean(x: ArrayView3<'_, f64>) -> Array2<f64> {
    x.mean_axis(Axis(0)).expect("non-empty time axis")
}

fn normalized(value: Option<f64>, denom: Option<f64>) -> Score {
    match (value, denom) {
        (None, _) | (_, None) => Score::Undefined(Undefined::AllMasked),
        (Some(_), Some(d)) if d == 0.0 => Score::Undefined(Undefined::ZeroDenominator),
        (Some(v), Some(d)) => Score::Defined(v / d),
    }
}

/// Spatial error of the temporal means, normalized by the mean global truth.
pub fn nrmse_s(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<ArrayView2<'_, bool>>,
) -> Result<Score> {
    check(&pred, &truth, weights, mask)?;
    let gm = GlobalMean { weights, mask };
    let diff = time_mean(pred) - time_mean(truth);
    let sq = diff.mapv(|d| d * d);
    Ok(normalized(gm.of(sq.view()).map(f64::sqrt), normalizer(truth, &gm)))
}

/// Error of the global-mean time series, normalized by the mean global truth.
pub fn nrmse_g(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<ArrayView2<'_, bool>>,
) -> Result<Score> {
    check(&pred, &truth, weights, mask)?;
    let gm = GlobalMean { weights, mask };
    let n = truth.dim().0;
    let mut acc = Some(0.0);
    for k in 0..n {
        let p = gm.of(pred.index_axis(Axis(0), k));
        let t = gm.of(truth.index_axis(Axis(0), k));
        acc = match (acc, p, t) {
            (Some(a), Some(p), Some(t)) => Some(a + (p - t) * (p - t)),
            _ => None,
        };
    }
    let rmse = acc.map(|a| (a / n as f64).sqrt());
    Ok(normalized(rmse, normalizer(truth, &gm)))
}

/// `nrmse_s + alpha * nrmse_g`.
pub fn total(
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<ArrayView2<'_, bool>>,
    alpha: f64,
) -> Result<Score> {
    let s = nrmse_s(pred, truth, weights, mask)?;
    let g = nrmse_g(pred, truth, weights, mask)?;
    Ok(match (s, g) {
        (Score::Defined(s), Score::Defined(g)) => Score::Defined(s + alpha * g),
        (Score::Undefined(u), _) | (_, Score::Undefined(u)) => Score::Undefined(u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_lat_weights, Grid};
    use ndarray::Array3;

    #[test]
    fn perfect_prediction_scores_zero() {
        let g = Grid::from_resolution(30.0).unwrap();
        let w = make_lat_weights(&g).unwrap();
        let t = Array3::from_shape_fn((4, 6, 12), |(k, i, j)| 280.0 + (k + i + j) as f64);
        assert_eq!(nrmse_s(t.view(), t.view(), &w, None).unwrap(), Score::Defined(0.0));
        assert_eq!(nrmse_g(t.view(), t.view(), &w, None).unwrap(), Score::Defined(0.0));
        assert_eq!(total(t.view(), t.view(), &w, None, TOTAL_ALPHA).unwrap(), Score::Defined(0.0));
    }

    #[test]
    fn constant_offset() {
        // pred = truth + c  =>  s = g = |c| / mean<X>, total = 6 |c| / mean<X>
        let g = Grid::from_resolution(30.0).unwrap();
        let w = make_lat_weights(&g).unwrap();
        let t = Array3::from_elem((3, 6, 12), 4.0);
        let p = t.mapv(|v| v - 0.5);
        let s = nrmse_s(p.view(), t.view(), &w, None).unwrap().unwrap();
        let gg = nrmse_g(p.view(), t.view(), &w, None).unwrap().unwrap();
        let tot = total(p.view(), t.view(), &w, None, TOTAL_ALPHA).unwrap().unwrap();
        assert!((s - 0.125).abs() < 1e-12);
        assert!((gg - 0.125).abs() < 1e-12);
        assert!((tot - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_flagged() {
        let w = LatWeights::uniform(1);
        let t = Array3::from_shape_vec((2, 1, 2), vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let p = t.mapv(|v| v + 1.0);
        assert_eq!(
            nrmse_s(p.view(), t.view(), &w, None).unwrap(),
            Score::Undefined(Undefined::ZeroDenominator)
        );
    }
}
