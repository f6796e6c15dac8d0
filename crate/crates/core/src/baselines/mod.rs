//! Reference forecasters: climatology, persistence, linear regression and
//! interpolation downscaling.
//!
//! Predictions are `N x C_out x H x W` arrays aligned with the targets of the
//! sample set they were produced for.

mod linreg;
mod model_file;

pub use linreg::{linreg_fit, linreg_predict, LinRegConfig, LinRegMode, LinearModel};
pub use model_file::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};

use ndarray::{s, Array2, Array3, Array4, ArrayView4, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{ClimatologyMap, ClimatologySource};
use crate::regrid::{regrid, Scheme};
use crate::sampler::{history_channel, SampleSet};
use crate::store::FieldSeries;

/// Per-pixel temporal mean of `out_vars` over the whole training series.
pub fn climatology_fit(train: &FieldSeries, out_vars: &[String]) -> Result<ClimatologyMap> {
    if train.is_empty() {
        return Err(Error::EmptySampleSet("training split is empty".into()));
    }
    let (h, w) = train.grid().shape();
    let mut data = Array3::<f64>::zeros((out_vars.len(), h, w));
    for (k, v) in out_vars.iter().enumerate() {
        let c = train.require_var(v)?;
        let field = train.channel(c).mapv(f64::from);
        data.index_axis_mut(Axis(0), k).assign(&ClimatologyMap::temporal_mean(field.view()));
    }
    Ok(ClimatologyMap {
        variables: out_vars.to_vec(),
        data,
        source: ClimatologySource::TrainSplit,
    })
}

/// The climatology map repeated for `n` samples.
pub fn climatology_predict(map: &ClimatologyMap, n: usize) -> Array4<f32> {
    let (c, h, w) = map.data.dim();
    let one = map.data.mapv(|v| v as f32);
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for mut s in out.outer_iter_mut() {
        s.assign(&one);
    }
    out
}

/// The offset-0 input channel of each output variable.
pub fn persistence_forecast(samples: &SampleSet, out_vars: &[String]) -> Result<Array4<f32>> {
    if samples.input_grid.shape() != samples.target_grid.shape() {
        return Err(Error::ShapeMismatch("persistence needs inputs and targets on one grid".into()));
    }
    let idx = out_vars
        .iter()
        .map(|v| {
            let name = history_channel(v, 0);
            samples
                .input_index(&name)
                .ok_or_else(|| Error::ChannelMismatch(format!("persistence needs input channel {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (n, _, h, w) = samples.inputs.dim();
    let mut out = Array4::<f32>::zeros((n, idx.len(), h, w));
    for (k, &c) in idx.iter().enumerate() {
        out.slice_mut(s![.., k, .., ..]).assign(&samples.inputs.slice(s![.., c, .., ..]));
    }
    Ok(out)
}

/// Interpolates every `N x C` field of `low` onto `target`.
pub fn interp_downscale(low: ArrayView4<'_, f32>, src: &Grid, target: &Grid, scheme: Scheme) -> Result<Array4<f32>> {
    let (n, c, _, _) = low.dim();
    let (h, w) = target.shape();
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    let fields: Vec<Array2<f32>> = (0..n * c)
        .into_par_iter()
        .map(|k| regrid(low.slice(s![k / c, k % c, .., ..]), src, target, scheme))
        .collect::<Result<_>>()?;
    for (k, f) in fields.iter().enumerate() {
        out.slice_mut(s![k / c, k % c, .., ..]).assign(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{forecasting_samples, ForecastConfig, InputLayout, LeadTime};
    use crate::store::{Level, Variable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(data: Array4<f32>) -> FieldSeries {
        let vars = (0..data.dim().1)
            .map(|c| Variable::dynamic(format!("v{c}"), "", Level::surface()))
            .collect();
        FieldSeries::new(Grid::from_resolution(45.0).unwrap(), vars, 0, 3600, data).unwrap()
    }

    #[test]
    fn climatology_constant_and_alternating() {
        let s = series(Array4::from_elem((5, 1, 4, 8), 3.5));
        let map = climatology_fit(&s, &["v0".into()]).unwrap();
        assert!(map.data.iter().all(|&v| v == 3.5));
        let s = series(Array4::from_shape_fn((6, 1, 4, 8), |(t, ..)| if t % 2 == 0 { 0.0 } else { 2.0 }));
        let map = climatology_fit(&s, &["v0".into()]).unwrap();
        assert!(map.data.iter().all(|&v| v == 1.0));
        let pred = climatology_predict(&map, 3);
        assert_eq!(pred.dim(), (3, 1, 4, 8));
        assert_eq!(pred.index_axis(Axis(0), 0), pred.index_axis(Axis(0), 2));
        assert!(climatology_fit(&s, &["nope".into()]).is_err());
    }

    #[test]
    fn persistence_copies_latest_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = series(Array4::from_shape_fn((8, 2, 4, 8), |_| rng.random()));
        let names = vec!["v0".to_string(), "v1".to_string()];
        let cfg = ForecastConfig::new(InputLayout::new(names.clone(), vec![0, -1], vec![]).unwrap(), vec!["v1".into()]);
        let set = forecasting_samples(&s, &cfg, LeadTime::hours(2).unwrap()).unwrap();
        let p = persistence_forecast(&set, &["v1".into()]).unwrap();
        assert_eq!(p.slice(s![.., 0, .., ..]), set.inputs.slice(s![.., 1, .., ..]));
        assert!(matches!(persistence_forecast(&set, &["v2".into()]), Err(Error::ChannelMismatch(_))));
    }

    #[test]
    fn interp_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = Grid::from_resolution(45.0).unwrap();
        let low = Array4::from_shape_fn((2, 2, 4, 8), |_| rng.random::<f32>());
        for scheme in [Scheme::Nearest, Scheme::Bilinear] {
            assert_eq!(interp_downscale(low.view(), &src, &src, scheme).unwrap(), low);
        }
        let fine = Grid::from_resolution(11.25).unwrap();
        let c = Array4::from_elem((1, 1, 4, 8), 2.5f32);
        let up = interp_downscale(c.view(), &src, &fine, Scheme::Bilinear).unwrap();
        assert!(up.iter().all(|&v| (v - 2.5).abs() < 1e-6));
        let r = regrid(low.slice(s![1, 0, .., ..]), &src, &fine, Scheme::Bilinear).unwrap();
        assert_eq!(interp_downscale(low.view(), &src, &fine, Scheme::Bilinear).unwrap().slice(s![1, 0, .., ..]), r);
    }
}
