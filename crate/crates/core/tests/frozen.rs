//! Values computed once by an independent double-precision script and frozen.

use clbench_core::metrics::{crps_gaussian_point, lat_rmse};
use clbench_core::{make_lat_weights, Grid};
use ndarray::Array3;

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * b.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn gaussian_crps_points() {
    close(crps_gaussian_point(0.0, 1.0, 0.0), 0.233_694_977_255_109_13, 1e-12);
    close(crps_gaussian_point(0.0, 1.0, 1.0), 0.602_441_357_627_616_3, 1e-12);
    close(crps_gaussian_point(2.0, 0.5, 1.0), 0.726_395_910_842_951_6, 1e-12);
}

#[test]
fn latitude_weights_on_the_5625_grid() {
    let w = make_lat_weights(&Grid::from_resolution(5.625).unwrap()).unwrap();
    close(w.row(0), 0.077_044_373_244_850_03, 1e-12);
    close(w.row(15), 1.568_274_245_272_970_3, 1e-12);
    close(w.row(31), w.row(0), 0.0);
}

#[test]
fn two_row_weighted_rmse() {
    let grid = Grid::new(vec![-45.0, 30.0], vec![0.0], false).unwrap();
    let w = make_lat_weights(&grid).unwrap();
    let truth = Array3::zeros((1, 2, 1));
    let pred = Array3::from_shape_vec((1, 2, 1), vec![1.0, 2.0]).unwrap();
    let got = lat_rmse(pred.view(), truth.view(), &w, None).unwrap().unwrap();
    close(got, 1.628_352_164_505_720_6, 1e-12);
}
