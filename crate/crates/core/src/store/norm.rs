use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::series::FieldSeries;
use super::split::SplitSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-channel standardization statistics, computed on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<ChannelStats>,
}

impl NormStats {
    pub fn get(&self, name: &str) -> Option<&ChannelStats> {
        self.channels.iter().find(|c| c.name == name)
    }
}

/// Mean and population standard deviation of every channel over the
/// training years, all pixels weighted equally. NaNs are skipped.
pub fn compute_norm_stats(series: &FieldSeries, split: &SplitSpec) -> Result<NormStats> {
    let range = SplitSpec::indices(series, &split.train);
    if range.is_empty() {
        return Err(Error::InvalidSplit(format!("training split {} is empty", split.train)));
    }
    let train = series.data().slice_axis(Axis(0), range.into());
    let channels = series
        .variables()
        .par_iter()
        .enumerate()
        .map(|(c, var)| {
            // Welford
            let (mut n, mut mean, mut m2) = (0u64, 0.0f64, 0.0f64);
            for &v in train.index_axis(Axis(1), c).iter() {
                if v.is_nan() {
                    continue;
                }
                n += 1;
                let x = f64::from(v);
                let d = x - mean;
                mean += d / n as f64;
                m2 += d * (x - mean);
            }
            let std = if n > 0 { (m2 / n as f64).sqrt() } else { 0.0 };
            if !(std > 0.0) {
                return Err(Error::DegenerateChannel(var.name.clone()));
            }
            Ok(ChannelStats {
                name: var.name.clone(),
                mean,
                std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormStats { channels })
}

fn lookup<'a>(series: &FieldSeries, stats: &'a NormStats) -> Result<Vec<&'a ChannelStats>> {
    series
        .variables()
        .iter()
        .map(|v| {
            stats
                .get(&v.name)
                .ok_or_else(|| Error::ChannelMismatch(format!("no statistics for channel {:?}", v.name)))
        })
        .collect()
}

/// `(x - mean) / std` per channel.
pub fn normalize(series: &FieldSeries, stats: &NormStats) -> Result<FieldSeries> {
    let cs = lookup(series, stats)?;
    let mut data = series.data().clone();
    for (c, st) in cs.iter().enumerate() {
        data.index_axis_mut(Axis(1), c)
            .mapv_inplace(|x| ((f64::from(x) - st.mean) / st.std) as f32);
    }
    Ok(series.with_data(data))
}

/// `x * std + mean` per channel.
pub fn denormalize(series: &FieldSeries, stats: &NormStats) -> Result<FieldSeries> {
    let cs = lookup(series, stats)?;
    let mut data = series.data().clone();
    for (c, st) in cs.iter().enumerate() {
        data.index_axis_mut(Axis(1), c)
            .mapv_inplace(|x| (f64::from(x) * st.std + st.mean) as f32);
    }
    Ok(series.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::store::{Level, Variable, YearRange};
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    const Y2000: i64 = 946_684_800;

    fn series_from(data: Array4<f32>) -> FieldSeries {
        let (_, c, h, w) = data.dim();
        let grid = Grid::new(
            (0..h).map(|i| i as f64).collect(),
            (0..w).map(|j| j as f64).collect(),
            false,
        )
        .unwrap();
        let vars = (0..c)
            .map(|k| Variable::dynamic(format!("c{k}"), "", Level::surface()))
            .collect();
        FieldSeries::new(grid, vars, Y2000, 86_400, data).unwrap()
    }

    fn split_2000() -> SplitSpec {
        SplitSpec {
            train: YearRange::new(2000, 2000).unwrap(),
            val: YearRange::new(2001, 2001).unwrap(),
            test: YearRange::new(2002, 2002).unwrap(),
        }
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let s = series_from(Array4::from_elem((10, 1, 2, 2), 5.0));
        match compute_norm_stats(&s, &split_2000()) {
            Err(Error::DegenerateChannel(name)) => assert_eq!(name, "c0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alternating_channel_is_standard() {
        let s = series_from(Array4::from_shape_fn((10, 1, 2, 2), |(t, _, _, _)| {
            if t % 2 == 0 { -1.0 } else { 1.0 }
        }));
        let st = compute_norm_stats(&s, &split_2000()).unwrap();
        assert!(st.channels[0].mean.abs() < 1e-15);
        assert!((st.channels[0].std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_two_pass_oracle_on_training_years_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // 500 days: 366 in 2000, the rest in 2001
        let data = Array4::from_shape_fn((500, 2, 3, 4), |(_, c, _, _)| {
            rng.random::<f32>() * 10.0 + c as f32 * 100.0
        });
        let s = series_from(data.clone());
        let st = compute_norm_stats(&s, &split_2000()).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..366)
                .flat_map(|t| {
                    let d = &data;
                    (0..3).flat_map(move |i| (0..4).map(move |j| f64::from(d[[t, c, i, j]])))
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((st.channels[c].mean - mean).abs() < 1e-9 * mean.abs().max(1.0));
            assert!((st.channels[c].std - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_spot_values_and_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = Array4::from_shape_fn((20, 1, 2, 3), |_| rng.random::<f32>() * 40.0 + 250.0);
        let s = series_from(data.clone());
        let st = compute_norm_stats(&s, &split_2000()).unwrap();
        let n = normalize(&s, &st).unwrap();
        let (mu, sd) = (st.channels[0].mean, st.channels[0].std);
        for &(t, i, j) in &[(0, 0, 0), (7, 1, 2), (19, 0, 1)] {
            let expect = ((f64::from(data[[t, 0, i, j]]) - mu) / sd) as f32;
            assert_eq!(n.data()[[t, 0, i, j]], expect);
        }
        let back = denormalize(&n, &st).unwrap();
        for (a, b) in back.data().iter().zip(data.iter()) {
            assert!(((a - b) / b).abs() < 1e-5);
        }
    }

    #[test]
    fn mean_valued_field_normalizes_to_zero() {
        let s = series_from(Array4::from_elem((3, 1, 1, 2), 7.0));
        let st = NormStats {
            channels: vec![ChannelStats { name: "c0".into(), mean: 7.0, std: 2.0 }],
        };
        assert!(normalize(&s, &st).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_channel_is_rejected() {
        let s = series_from(Array4::from_elem((3, 1, 1, 2), 7.0));
        let st = NormStats { channels: vec![] };
        assert!(matches!(normalize(&s, &st), Err(Error::ChannelMismatch(_))));
    }
}
