use clbench_core::extreme::percentile_linear;
use clbench_core::metrics::{
    acc, crps_gaussian_point, lat_rmse, mean_bias, nrmse_g, nrmse_s, pearson, rank_histogram, spread,
    EnsembleForecast, Mask, VarianceDivisor,
};
use clbench_core::regrid::{regrid, Scheme};
use clbench_core::store::{read_container, write_container};
use clbench_core::{make_lat_weights, FieldSeries, Grid, Level, Variable};
use ndarray::{Array2, Array3, Array4, Axis};
use proptest::prelude::*;

fn grid(h: usize, w: usize) -> Grid {
    let lats = (0..h).map(|i| -80.0 + 160.0 * (i as f64 + 0.5) / h as f64).collect();
    let lons = (0..w).map(|j| 360.0 * j as f64 / w as f64).collect();
    Grid::new(lats, lons, true).unwrap()
}

/// `(pred, truth)` of shape `n x h x w` with values in a moderate range.
fn fields() -> impl Strategy<Value = (Array3<f64>, Array3<f64>)> {
    (1usize..6, 1usize..6, 1usize..9).prop_flat_map(|(n, h, w)| {
        let len = n * h * w;
        (
            prop::collection::vec(-50.0f64..50.0, len),
            prop::collection::vec(-50.0f64..50.0, len),
        )
            .prop_map(move |(p, t)| {
                (
                    Array3::from_shape_vec((n, h, w), p).unwrap(),
                    Array3::from_shape_vec((n, h, w), t).unwrap(),
                )
            })
    })
}

fn weights_for(a: &Array3<f64>) -> clbench_core::LatWeights {
    let (_, h, w) = a.dim();
    make_lat_weights(&grid(h, w)).unwrap()
}

proptest! {
    #[test]
    fn rmse_is_symmetric_and_nonnegative((p, t) in fields()) {
        let w = weights_for(&t);
        let a = lat_rmse(p.view(), t.view(), &w, None).unwrap().unwrap();
        let b = lat_rmse(t.view(), p.view(), &w, None).unwrap().unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
        prop_assert_eq!(lat_rmse(t.view(), t.view(), &w, None).unwrap().unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_rmse_and_bias((_, t) in fields(), c in -10.0f64..10.0) {
        let w = weights_for(&t);
        let p = &t + c;
        let r = lat_rmse(p.view(), t.view(), &w, None).unwrap().unwrap();
        prop_assert!((r - c.abs()).abs() <= 1e-12 * (1.0 + c.abs()) * 64.0);
        let b = mean_bias(p.view(), t.view(), None).unwrap().unwrap();
        prop_assert!((b - c).abs() <= 1e-12 * 64.0);
    }

    #[test]
    fn correlations_are_bounded_and_scale_free((p, t) in fields(), a in 0.1f64..10.0) {
        let w = weights_for(&t);
        let clim = t.mean_axis(Axis(0)).unwrap();
        if let Some(x) = acc(p.view(), t.view(), clim.view(), &w, None).unwrap().value() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
            let scaled = (&p - &clim) * a + &clim;
            let y = acc(scaled.view(), t.view(), clim.view(), &w, None).unwrap().unwrap();
            prop_assert!((x - y).abs() <= 1e-9);
        }
        if let Some(x) = pearson(p.view(), t.view(), None).unwrap().value() {
            prop_assert!((-1.0..=1.0).contains(&x));
            let y = pearson((&p * a + 3.0).view(), t.view(), None).unwrap().unwrap();
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn masked_pixels_do_not_matter((p, t) in fields(), seed in any::<u64>()) {
        let w = weights_for(&t);
        let mask = Array3::from_shape_fn(t.dim(), |(k, i, j)| (seed >> ((k * 7 + i * 3 + j) % 64)) & 1 == 1);
        let m = Mask::PerStep(mask.view());
        let mut p2 = p.clone();
        for (idx, v) in p2.indexed_iter_mut() {
            if !mask[idx] {
                *v = 1e6;
            }
        }
        let a = lat_rmse(p.view(), t.view(), &w, Some(&m)).unwrap();
        let b = lat_rmse(p2.view(), t.view(), &w, Some(&m)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(mean_bias(p.view(), t.view(), Some(&m)).unwrap(), mean_bias(p2.view(), t.view(), Some(&m)).unwrap());
    }

    #[test]
    fn projection_scores_are_scale_invariant((p, t) in fields(), a in 0.5f64..4.0) {
        let w = weights_for(&t);
        let (p, t) = (&p + 300.0, &t + 300.0);
        let s1 = nrmse_s(p.view(), t.view(), &w, None).unwrap().unwrap();
        let g1 = nrmse_g(p.view(), t.view(), &w, None).unwrap().unwrap();
        let s2 = nrmse_s((&p * a).view(), (&t * a).view(), &w, None).unwrap().unwrap();
        let g2 = nrmse_g((&p * a).view(), (&t * a).view(), &w, None).unwrap().unwrap();
        prop_assert!(s1 >= 0.0 && g1 >= 0.0);
        prop_assert!((s1 - s2).abs() <= 1e-9 * (1.0 + s1));
        prop_assert!((g1 - g2).abs() <= 1e-9 * (1.0 + g1));
    }

    #[test]
    fn crps_symmetry_and_scaling(mu in -20.0f64..20.0, sigma in 0.01f64..10.0, d in -30.0f64..30.0, a in 0.1f64..10.0) {
        let c = crps_gaussian_point(mu, sigma, mu + d);
        prop_assert!(c >= 0.0);
        prop_assert!((c - crps_gaussian_point(mu, sigma, mu - d)).abs() <= 1e-9 * (1.0 + c));
        let scaled = crps_gaussian_point(a * mu, a * sigma, a * (mu + d));
        prop_assert!((scaled - a * c).abs() <= 1e-9 * (1.0 + a * c));
        prop_assert!(c >= crps_gaussian_point(mu, sigma, mu) - 1e-12);
    }

    #[test]
    fn spread_scales_with_members(m in 2usize..6, n in 1usize..4, vals in prop::collection::vec(-5.0f64..5.0, 6 * 3 * 4 * 5), a in 0.1f64..5.0) {
        let (h, w) = (4, 5);
        let ens = Array4::from_shape_vec((6, 3, h, w), vals).unwrap();
        let ens = ens.slice(ndarray::s![..m, ..n, .., ..]).to_owned();
        let weights = make_lat_weights(&grid(h, w)).unwrap();
        let s1 = spread(&EnsembleForecast::new(ens.clone()).unwrap(), &weights, None, VarianceDivisor::Population).unwrap().unwrap();
        let s2 = spread(&EnsembleForecast::new(&ens * a + 7.0).unwrap(), &weights, None, VarianceDivisor::Population).unwrap().unwrap();
        prop_assert!(s1 >= 0.0);
        prop_assert!((s2 - a * s1).abs() <= 1e-9 * (1.0 + s2));
    }

    #[test]
    fn rank_histogram_counts_every_pixel(m in 2usize..8, vals in prop::collection::vec(-2i32..3, 8 * 2 * 3 * 4), truth in prop::collection::vec(-2i32..3, 2 * 3 * 4), seed in any::<u64>()) {
        let ens = Array4::from_shape_vec((8, 2, 3, 4), vals.into_iter().map(f64::from).collect()).unwrap();
        let ens = EnsembleForecast::new(ens.slice(ndarray::s![..m, .., .., ..]).to_owned()).unwrap();
        let t = Array3::from_shape_vec((2, 3, 4), truth.into_iter().map(f64::from).collect()).unwrap();
        let counts = rank_histogram(&ens, t.view(), None, seed).unwrap();
        prop_assert_eq!(counts.len(), m + 1);
        prop_assert_eq!(counts.iter().sum::<u64>(), 24);
        prop_assert_eq!(counts, rank_histogram(&ens, t.view(), None, seed).unwrap());
    }

    #[test]
    fn regridded_values_stay_in_range(h in 2usize..10, w in 2usize..16, th in 1usize..12, tw in 1usize..20, vals in prop::collection::vec(-100.0f32..100.0, 160)) {
        let src = grid(h, w);
        let dst = Grid::new(
            (0..th).map(|i| -89.0 + 178.0 * (i as f64 + 0.3) / th as f64).collect(),
            (0..tw).map(|j| 360.0 * (j as f64 + 0.4) / tw as f64).collect(),
            true,
        ).unwrap();
        let field = Array2::from_shape_fn((h, w), |(i, j)| vals[(i * w + j) % vals.len()]);
        let (lo, hi) = field.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let near = regrid(field.view(), &src, &dst, Scheme::Nearest).unwrap();
        prop_assert!(near.iter().all(|v| field.iter().any(|f| f == v)));
        let bil = regrid(field.view(), &src, &dst, Scheme::Bilinear).unwrap();
        prop_assert!(bil.iter().all(|&v| v >= lo - 1e-4 && v <= hi + 1e-4));
    }

    #[test]
    fn percentiles_are_monotone(mut vals in prop::collection::vec(-1e3f64..1e3, 1..200), p in 0.0f64..100.0, q in 0.0f64..100.0) {
        let (p, q) = if p <= q { (p, q) } else { (q, p) };
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let a = percentile_linear(&mut vals, p);
        let b = percentile_linear(&mut vals, q);
        prop_assert!(a <= b);
        prop_assert!(lo <= a && b <= hi);
        prop_assert_eq!(percentile_linear(&mut vals, 0.0), lo);
        prop_assert_eq!(percentile_linear(&mut vals, 100.0), hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn container_round_trip_is_bit_exact(t in 1usize..5, h in 1usize..5, w in 1usize..6, bits in prop::collection::vec(any::<u32>(), 2 * 4 * 4 * 5)) {
        let g = grid(h, w);
        let data = Array4::from_shape_fn((t, 2, h, w), |(k, c, i, j)| f32::from_bits(bits[((k * 2 + c) * 4 + i) * 5 + j]));
        let vars = vec![
            Variable::dynamic("a", "K", Level::surface()),
            Variable::dynamic("b", "m", Level::Pressure(850.0)),
        ];
        let series = FieldSeries::new(g, vars, -3600, 3600, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.clbt");
        write_container(&series, &path).unwrap();
        let back = read_container(&path).unwrap();
        let raw = |s: &FieldSeries| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(raw(&back), raw(&series));
        prop_assert_eq!(back.grid(), series.grid());
        prop_assert_eq!(back.variables(), series.variables());
        prop_assert_eq!((back.time_start(), back.time_step()), (-3600, 3600));
    }
}
