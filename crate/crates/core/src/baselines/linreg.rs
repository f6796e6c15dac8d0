//! Ridge regression on k×k input stencils.
//!
//! Features for output pixel `(i, j)` are every input channel over the k×k
//! neighborhood, ordered channel, row offset, column offset, followed by a
//! constant 1 for the intercept. The intercept is not penalized.
//!
//! Longitude wraps on periodic grids. A row offset past the pole continues
//! over it: on a periodic grid of even width the neighbour `d` rows beyond
//! the edge row is row `d - 1` from the edge, half a revolution away in
//! longitude. Neighbours that fall off a regional grid read as 0 and their
//! coefficients are pinned to 0.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array4, ArrayView4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_lat_weights, Grid};
use crate::sampler::SampleSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinRegMode {
    /// One regression per output pixel.
    #[default]
    Local,
    /// One set of stencil coefficients shared by every pixel.
    Global,
}

impl std::str::FromStr for LinRegMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(LinRegMode::Local),
            "global" => Ok(LinRegMode::Global),
            _ => Err(Error::InvalidArgument(format!("unknown regression mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinRegConfig {
    pub mode: LinRegMode,
    /// Odd stencil width.
    pub stencil: usize,
    pub lambda: f64,
    /// Relative residual target of the iterative solver.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LinRegConfig {
    fn default() -> Self {
        Self {
            mode: LinRegMode::Local,
            stencil: 3,
            lambda: 0.0,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mode: LinRegMode,
    pub stencil: usize,
    pub lambda: f64,
    pub input_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub grid: Grid,
    /// Local: `[i][j][o][f]`; global: `[o][f]`.
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.input_channels.len() * self.stencil * self.stencil + 1
    }

    pub fn expected_coefficients(&self) -> usize {
        let f = self.n_features() * self.target_channels.len();
        match self.mode {
            LinRegMode::Local => f * self.grid.height() * self.grid.width(),
            LinRegMode::Global => f,
        }
    }

    /// Coefficients used at pixel `(i, j)` for output `o`.
    pub fn coefficients(&self, i: usize, j: usize, o: usize) -> &[f64] {
        let f = self.n_features();
        let start = match self.mode {
            LinRegMode::Local => ((i * self.grid.width() + j) * self.target_channels.len() + o) * f,
            LinRegMode::Global => o * f,
        };
        &self.coef[start..start + f]
    }
}

/// Writes the stencil features of sample `n` at `(i, j)` into `out`.
fn features(inputs: &ArrayView4<'_, f32>, grid: &Grid, k: usize, n: usize, i: usize, j: usize, out: &mut [f64]) {
    let r = (k / 2) as isize;
    let (_, c_in, h, w) = inputs.dim();
    let over_pole = grid.periodic_lon() && w % 2 == 0;
    let mut f = 0;
    for c in 0..c_in {
        for di in -r..=r {
            let mut ii = i as isize + di;
            let mut shift = 0;
            if ii < 0 || ii >= h as isize {
                ii = if ii < 0 { -ii - 1 } else { 2 * h as isize - ii - 1 };
                shift = (w / 2) as isize;
            }
            let row = (over_pole || shift == 0) && (0..h as isize).contains(&ii);
            for dj in -r..=r {
                out[f] = match (row, grid.wrap_col(j, dj + shift)) {
                    (true, Some(jj)) => f64::from(inputs[[n, c, ii as usize, jj]]),
                    _ => 0.0,
                };
                f += 1;
            }
        }
    }
    out[f] = 1.0;
}

/// Adds the ridge penalty and pins features that are identically zero.
fn regularize(g: &mut DMatrix<f64>, lambda: f64) {
    let nf = g.nrows();
    for f in 0..nf {
        if g[(f, f)] == 0.0 {
            g[(f, f)] = 1.0;
        } else if f + 1 < nf {
            g[(f, f)] += lambda;
        }
    }
}

fn check_config(cfg: &LinRegConfig) -> Result<()> {
    if cfg.stencil == 0 || cfg.stencil % 2 == 0 {
        return Err(Error::InvalidArgument(format!("stencil width {} must be odd", cfg.stencil)));
    }
    if !(cfg.lambda >= 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge penalty {} must be >= 0", cfg.lambda)));
    }
    Ok(())
}

/// Fits a ridge regression with latitude-weighted squared error.
pub fn linreg_fit(samples: &SampleSet, cfg: &LinRegConfig) -> Result<LinearModel> {
    check_config(cfg)?;
    samples.validate()?;
    if samples.input_grid != samples.target_grid {
        return Err(Error::ShapeMismatch("regression needs inputs and targets on one grid".into()));
    }
    let grid = samples.input_grid.clone();
    let weights = make_lat_weights(&grid)?;
    let (n, c_in, h, w) = samples.inputs.dim();
    let c_out = samples.targets.dim().1;
    let nf = c_in * cfg.stencil * cfg.stencil + 1;
    let rows = match cfg.mode {
        LinRegMode::Local => n,
        LinRegMode::Global => n * h * w,
    };
    if cfg.lambda == 0.0 && rows <= nf {
        return Err(Error::Singular(format!(
            "{rows} equations for {nf} features without a ridge penalty"
        )));
    }
    let inputs = samples.inputs.view();
    let coef = match cfg.mode {
        LinRegMode::Local => {
            let pixels: Vec<Result<Vec<f64>>> = (0..h * w)
                .into_par_iter()
                .map(|p| {
                    let (i, j) = (p / w, p % w);
                    let mut x = DMatrix::<f64>::zeros(n, nf);
                    let mut y = DMatrix::<f64>::zeros(n, c_out);
                    let mut buf = vec![0.0; nf];
                    for s in 0..n {
                        features(&inputs, &grid, cfg.stencil, s, i, j, &mut buf);
                        x.row_mut(s).copy_from_slice(&buf);
                        for o in 0..c_out {
                            y[(s, o)] = f64::from(samples.targets[[s, o, i, j]]);
                        }
                    }
                    let li = weights.row(i);
                    let mut g = x.tr_mul(&x) * li;
                    let b = x.tr_mul(&y) * li;
                    regularize(&mut g, cfg.lambda);
                    let beta = solve_spd(g, b).ok_or_else(|| {
                        Error::Singular(format!("normal matrix at pixel ({i}, {j}) is not positive definite"))
                    })?;
                    Ok((0..c_out).flat_map(|o| beta.column(o).iter().copied().collect::<Vec<_>>()).collect())
                })
                .collect();
            let mut coef = Vec::with_capacity(h * w * c_out * nf);
            for p in pixels {
                coef.extend(p?);
            }
            coef
        }
        LinRegMode::Global => {
            // Per-row partial sums, added in row order for reproducibility.
            let partials: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..h)
                .into_par_iter()
                .map(|i| {
                    let mut g = DMatrix::<f64>::zeros(nf, nf);
                    let mut b = DMatrix::<f64>::zeros(nf, c_out);
                    let mut buf = vec![0.0; nf];
                    let li = weights.row(i);
                    for s in 0..n {
                        for j in 0..w {
                            features(&inputs, &grid, cfg.stencil, s, i, j, &mut buf);
                            let x = DVector::from_column_slice(&buf);
                            g.syger(li, &x, &x, 1.0);
                            for o in 0..c_out {
                                let yv = f64::from(samples.targets[[s, o, i, j]]);
                                b.column_mut(o).axpy(li * yv, &x, 1.0);
                            }
                        }
                    }
                    (g, b)
                })
                .collect();
            let mut g = DMatrix::<f64>::zeros(nf, nf);
            let mut b = DMatrix::<f64>::zeros(nf, c_out);
            for (pg, pb) in partials {
                g += pg;
                b += pb;
            }
            g.fill_upper_triangle_with_lower_triangle();
            regularize(&mut g, cfg.lambda);
            let mut coef = Vec::with_capacity(c_out * nf);
            for o in 0..c_out {
                let beta = conjugate_gradient(&g, &b.column(o).into_owned(), cfg.tolerance, cfg.max_iterations)?;
                coef.extend(beta.iter());
            }
            coef
        }
    };
    Ok(LinearModel {
        mode: cfg.mode,
        stencil: cfg.stencil,
        lambda: cfg.lambda,
        input_channels: samples.input_channels.clone(),
        target_channels: samples.target_channels.clone(),
        grid,
        coef,
    })
}

fn solve_spd(g: DMatrix<f64>, b: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = g.diagonal().max();
    let chol = g.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-12 * scale) {
        return None;
    }
    Some(chol.solve(&b))
}

/// Jacobi-preconditioned conjugate gradient on a symmetric positive
/// (semi-)definite system, stopping when `|Ax - b| <= tol * |b|`.
pub(crate) fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    let n = b.len();
    let diag: DVector<f64> = a.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let mut x = DVector::<f64>::zeros(n);
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let mut z = r.component_mul(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 0..max_iter {
        let ap = a * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!("curvature {pap:e} at iteration {it}")));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        if it % 50 == 49 {
            // recompute to avoid drift in the recursive residual
            r = b - a * &x;
        } else {
            r.axpy(-alpha, &ap, 1.0);
        }
        if r.norm() <= tol * bnorm {
            let true_res = (b - a * &x).norm();
            if true_res <= tol * bnorm {
                return Ok(x);
            }
            r = b - a * &x;
        }
        z = r.component_mul(&diag);
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: (b - a * &x).norm() / bnorm,
    })
}

/// Applies a fitted model to `N x C_in x H x W` inputs.
pub fn linreg_predict(model: &LinearModel, inputs: ArrayView4<'_, f32>) -> Result<Array4<f32>> {
    let (n, c_in, h, w) = inputs.dim();
    if c_in != model.input_channels.len() || (h, w) != model.grid.shape() {
        return Err(Error::ShapeMismatch(format!(
            "inputs {:?} do not match a model for {} channels on {:?}",
            inputs.dim(),
            model.input_channels.len(),
            model.grid.shape()
        )));
    }
    if model.coef.len() != model.expected_coefficients() {
        return Err(Error::DimensionMismatch("coefficient count does not match the model shape".into()));
    }
    let c_out = model.target_channels.len();
    let nf = model.n_features();
    let mut out = Array4::<f32>::zeros((n, c_out, h, w));
    out.outer_iter_mut().into_par_iter().enumerate().for_each(|(s, mut sample)| {
        let mut buf = vec![0.0; nf];
        for i in 0..h {
            for j in 0..w {
                features(&inputs, &model.grid, model.stencil, s, i, j, &mut buf);
                for o in 0..c_out {
                    let beta = model.coefficients(i, j, o);
                    sample[[o, i, j]] = buf.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() as f32;
                }
            }
        }
    });
    Ok(out)
}
