use std::f64::consts::PI;

use ndarray::{Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;

use super::deterministic::lat_rmse;
use super::mask::{included, Mask};
use super::{same_shape, Score, Undefined};
use crate::error::{Error, Result};
use crate::grid::LatWeights;

/// Divisor for the ensemble variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDivisor {
    /// Divide by `M`.
    #[default]
    Population,
    /// Divide by `M - 1`.
    Sample,
}

impl VarianceDivisor {
    fn divisor(&self, m: usize) -> f64 {
        match self {
            VarianceDivisor::Population => m as f64,
            VarianceDivisor::Sample => (m - 1) as f64,
        }
    }
}

/// How per-pixel CRPS values are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrpsAggregation {
    #[default]
    Unweighted,
    LatWeighted,
}

/// `M` member forecasts, stored `M x N x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleForecast {
    members: Array4<f64>,
}

impl EnsembleForecast {
    pub fn new(members: Array4<f64>) -> Result<Self> {
        if members.dim().0 == 0 {
            return Err(Error::InvalidArgument("ensemble has no members".into()));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &Array4<f64> {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.dim().0
    }

    /// `N x H x W` shape shared by every member.
    pub fn field_dim(&self) -> (usize, usize, usize) {
        let (_, n, h, w) = self.members.dim();
        (n, h, w)
    }

    fn moments(&self, k: usize, i: usize, j: usize, divisor: VarianceDivisor) -> (f64, f64) {
        // Welford: identical members give exactly zero variance
        let m = self.size();
        let (mut mean, mut ss) = (0.0, 0.0);
        for e in 0..m {
            let x = self.members[[e, k, i, j]];
            let d = x - mean;
            mean += d / (e + 1) as f64;
            ss += d * (x - mean);
        }
        (mean, ss / divisor.divisor(m))
    }
}

/// Per-pixel Gaussian forecasts `N(mu, sigma^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianForecast {
    pub mu: Array3<f64>,
    pub sigma: Array3<f64>,
}

impl GaussianForecast {
    pub fn new(mu: Array3<f64>, sigma: Array3<f64>) -> Result<Self> {
        same_shape(mu.shape(), sigma.shape(), "mu vs sigma")?;
        Ok(Self { mu, sigma })
    }

    /// Spread of the parametric forecast (variance `sigma^2` per pixel).
    pub fn spread(&self, weights: &LatWeights, mask: Option<&Mask<'_>>) -> Result<Score> {
        let var = self.sigma.mapv(|s| s * s);
        weighted_sqrt_mean(var.view(), weights, mask)
    }

    pub fn spread_skill_ratio(
        &self,
        truth: ArrayView3<'_, f64>,
        weights: &LatWeights,
        mask: Option<&Mask<'_>>,
    ) -> Result<Score> {
        ratio(self.spread(weights, mask)?, lat_rmse(self.mu.view(), truth, weights, mask)?)
    }
}

/// Per-step `sqrt(sum L v / sum L)` averaged over steps.
fn weighted_sqrt_mean(var: ArrayView3<'_, f64>, weights: &LatWeights, mask: Option<&Mask<'_>>) -> Result<Score> {
    let (n, h, w) = var.dim();
    if weights.len() != h {
        return Err(Error::ShapeMismatch(format!("{} weights for {h} rows", weights.len())));
    }
    if let Some(m) = mask {
        m.check((n, h, w))?;
    }
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..h {
            let li = weights.row(i);
            for j in 0..w {
                if included(mask, k, i, j) {
                    num += li * var[[k, i, j]];
                    den += li;
                }
            }
        }
        if den > 0.0 {
            steps.push((num / den).sqrt());
        }
    }
    if steps.is_empty() {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    Ok(Score::Defined(steps.iter().sum::<f64>() / steps.len() as f64))
}

fn ratio(num: Score, den: Score) -> Result<Score> {
    Ok(match (num, den) {
        (Score::Defined(_), Score::Defined(d)) if d == 0.0 => Score::Undefined(Undefined::ZeroDenominator),
        (Score::Defined(a), Score::Defined(b)) => Score::Defined(a / b),
        (Score::Undefined(u), _) | (_, Score::Undefined(u)) => Score::Undefined(u),
    })
}

fn ensemble_variance(ens: &EnsembleForecast, divisor: VarianceDivisor) -> Array3<f64> {
    Array3::from_shape_fn(ens.field_dim(), |(k, i, j)| ens.moments(k, i, j, divisor).1)
}

pub fn ensemble_mean(ens: &EnsembleForecast) -> Array3<f64> {
    ens.members().mean_axis(Axis(0)).expect("ensemble has members")
}

/// Ensemble spread: latitude-weighted spatial mean of the per-pixel member
/// variance, square-rooted per timestep, averaged over timesteps.
pub fn spread(
    ens: &EnsembleForecast,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
    divisor: VarianceDivisor,
) -> Result<Score> {
    if ens.size() < 2 {
        return Err(Error::InvalidArgument(format!(
            "spread needs at least 2 members, got {}",
            ens.size()
        )));
    }
    weighted_sqrt_mean(ensemble_variance(ens, divisor).view(), weights, mask)
}

/// Spread divided by the RMSE of the ensemble mean.
pub fn spread_skill_ratio(
    ens: &EnsembleForecast,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
    divisor: VarianceDivisor,
) -> Result<Score> {
    let (n, h, w) = ens.field_dim();
    same_shape(truth.shape(), &[n, h, w], "ensemble vs truth")?;
    let s = spread(ens, weights, mask, divisor)?;
    let skill = lat_rmse(ensemble_mean(ens).view(), truth, weights, mask)?;
    ratio(s, skill)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Closed-form CRPS of `N(mu, sigma^2)` against the observation `x`.
pub fn crps_gaussian_point(mu: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - mu) / sigma;
    sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / PI.sqrt())
}

fn aggregate(
    dims: (usize, usize, usize),
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
    agg: CrpsAggregation,
    mut value: impl FnMut(usize, usize, usize) -> Result<f64>,
) -> Result<Score> {
    let (n, h, w) = dims;
    if weights.len() != h {
        return Err(Error::ShapeMismatch(format!("{} weights for {h} rows", weights.len())));
    }
    if let Some(m) = mask {
        m.check(dims)?;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        for i in 0..h {
            let li = match agg {
                CrpsAggregation::Unweighted => 1.0,
                CrpsAggregation::LatWeighted => weights.row(i),
            };
            for j in 0..w {
                if included(mask, k, i, j) {
                    num += li * value(k, i, j)?;
                    den += li;
                }
            }
        }
    }
    if den == 0.0 {
        return Ok(Score::Undefined(Undefined::AllMasked));
    }
    Ok(Score::Defined(num / den))
}

/// Mean Gaussian CRPS over unmasked pixels.
pub fn crps_gaussian(
    forecast: &GaussianForecast,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
    agg: CrpsAggregation,
) -> Result<Score> {
    same_shape(forecast.mu.shape(), truth.shape(), "forecast vs truth")?;
    aggregate(truth.dim(), weights, mask, agg, |k, i, j| {
        let s = forecast.sigma[[k, i, j]];
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {s} at ({k}, {i}, {j})"
            )));
        }
        Ok(crps_gaussian_point(forecast.mu[[k, i, j]], s, truth[[k, i, j]]))
    })
}

/// CRPS of an ensemble through a per-pixel Gaussian fit of the member
/// moments. Pixels with zero spread score `|x - mean|`, the degenerate limit.
pub fn crps_ensemble(
    ens: &EnsembleForecast,
    truth: ArrayView3<'_, f64>,
    weights: &LatWeights,
    mask: Option<&Mask<'_>>,
    divisor: VarianceDivisor,
    agg: CrpsAggregation,
) -> Result<Score> {
    if ens.size() < 2 {
        return Err(Error::InvalidArgument(
            "Gaussian CRPS needs an ensemble of at least 2 members".into(),
        ));
    }
    let (n, h, w) = ens.field_dim();
    same_shape(truth.shape(), &[n, h, w], "ensemble vs truth")?;
    aggregate(truth.dim(), weights, mask, agg, |k, i, j| {
        let (mu, var) = ens.moments(k, i, j, divisor);
        let x = truth[[k, i, j]];
        Ok(if var > 0.0 {
            crps_gaussian_point(mu, var.sqrt(), x)
        } else {
            (x - mu).abs()
        })
    })
}

/// Rank of the truth among the members at every unmasked pixel, binned into
/// `M + 1` counts. Ties are broken uniformly at random from `seed`.
pub fn rank_histogram(
    ens: &EnsembleForecast,
    truth: ArrayView3<'_, f64>,
    mask: Option<&Mask<'_>>,
    seed: u64,
) -> Result<Vec<u64>> {
    let (n, h, w) = ens.field_dim();
    same_shape(truth.shape(), &[n, h, w], "ensemble vs truth")?;
    if let Some(m) = mask {
        m.check((n, h, w))?;
    }
    let m = ens.size();
    let mut counts = vec![0u64; m + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..n {
        for i in 0..h {
            for j in 0..w {
                let x = truth[[k, i, j]];
                if !included(mask, k, i, j) || x.is_nan() {
                    continue;
                }
                let (mut below, mut ties) = (0usize, 0usize);
                for e in 0..m {
                    let v = ens.members[[e, k, i, j]];
                    if v < x {
                        below += 1;
                    } else if v == x {
                        ties += 1;
                    }
                }
                let rank = if ties > 0 { below + rng.random_range(0..=ties) } else { below };
                counts[rank] += 1;
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn identical_members_have_zero_spread() {
        let ens = EnsembleForecast::new(Array4::from_elem((3, 2, 2, 2), 1.5)).unwrap();
        let w = LatWeights::uniform(2);
        assert_eq!(spread(&ens, &w, None, VarianceDivisor::Population).unwrap(), Score::Defined(0.0));
    }

    #[test]
    fn two_members_plus_minus_one() {
        let ens = EnsembleForecast::new(
            Array4::from_shape_vec((2, 1, 1, 1), vec![1.0, -1.0]).unwrap(),
        )
        .unwrap();
        let w = LatWeights::uniform(1);
        assert_eq!(spread(&ens, &w, None, VarianceDivisor::Population).unwrap(), Score::Defined(1.0));
        let s = spread(&ens, &w, None, VarianceDivisor::Sample).unwrap().unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_member_rejected() {
        let ens = EnsembleForecast::new(Array4::zeros((1, 1, 1, 1))).unwrap();
        let w = LatWeights::uniform(1);
        assert!(spread(&ens, &w, None, VarianceDivisor::Population).is_err());
        let t = Array3::zeros((1, 1, 1));
        assert!(crps_ensemble(&ens, t.view(), &w, None, VarianceDivisor::Population, CrpsAggregation::Unweighted).is_err());
    }

    #[test]
    fn crps_standard_point() {
        assert!((crps_gaussian_point(0.0, 1.0, 0.0) - 0.233695).abs() < 1e-6);
        assert!((crps_gaussian_point(0.0, 1e-12, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn crps_rejects_nonpositive_sigma() {
        let mu = Array3::zeros((1, 1, 2));
        let sigma = Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap();
        let fc = GaussianForecast::new(mu.clone(), sigma).unwrap();
        let w = LatWeights::uniform(1);
        assert!(crps_gaussian(&fc, mu.view(), &w, None, CrpsAggregation::Unweighted).is_err());
    }

    #[test]
    fn ensemble_at_truth_scores_zero() {
        let ens = EnsembleForecast::new(Array4::from_elem((4, 2, 1, 3), 2.0)).unwrap();
        let t = Array3::from_elem((2, 1, 3), 2.0);
        let w = LatWeights::uniform(1);
        let c = crps_ensemble(&ens, t.view(), &w, None, VarianceDivisor::Population, CrpsAggregation::Unweighted)
            .unwrap();
        assert_eq!(c, Score::Defined(0.0));
    }

    #[test]
    fn rank_histogram_extremes() {
        let ens = EnsembleForecast::new(Array4::from_shape_fn((4, 3, 2, 2), |(e, _, _, _)| e as f64)).unwrap();
        let low = Array3::from_elem((3, 2, 2), -1.0);
        let high = Array3::from_elem((3, 2, 2), 10.0);
        assert_eq!(rank_histogram(&ens, low.view(), None, 0).unwrap(), vec![12, 0, 0, 0, 0]);
        assert_eq!(rank_histogram(&ens, high.view(), None, 0).unwrap(), vec![0, 0, 0, 0, 12]);
    }

    #[test]
    fn ties_are_spread_and_seeded() {
        let ens = EnsembleForecast::new(Array4::zeros((3, 400, 1, 1))).unwrap();
        let t = Array3::zeros((400, 1, 1));
        let a = rank_histogram(&ens, t.view(), None, 7).unwrap();
        let b = rank_histogram(&ens, t.view(), None, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&c| c > 60), "{a:?}");
    }
}
