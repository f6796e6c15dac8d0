use ndarray::{Array3, ArrayView2, ArrayView3, Zip};

use crate::error::{Error, Result};

/// Pixels to evaluate: `true` means included.
#[derive(Clone, Copy, Debug)]
pub enum Mask<'a> {
    /// One `H x W` mask shared by every timestep.
    Static(ArrayView2<'a, bool>),
    /// An `N x H x W` mask, one per timestep.
    PerStep(ArrayView3<'a, bool>),
}

impl Mask<'_> {
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> bool {
        match self {
            Mask::Static(m) => m[[i, j]],
            Mask::PerStep(m) => m[[k, i, j]],
        }
    }

    pub(crate) fn check(&self, dims: (usize, usize, usize)) -> Result<()> {
        let ok = match self {
            Mask::Static(m) => m.dim() == (dims.1, dims.2),
            Mask::PerStep(m) => m.dim() == dims,
        };
        if !ok {
            return Err(Error::ShapeMismatch(format!("mask does not match data shape {dims:?}")));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn included(mask: Option<&Mask<'_>>, k: usize, i: usize, j: usize) -> bool {
    mask.is_none_or(|m| m.get(k, i, j))
}

/// Zeroes NaNs in the truth, zeroes predictions at those pixels, and returns
/// the validity mask (`false` where the truth was NaN).
pub fn apply_nan_mask(
    truth: ArrayView3<'_, f64>,
    pred: ArrayView3<'_, f64>,
) -> Result<(Array3<f64>, Array3<f64>, Array3<bool>)> {
    super::same_shape(truth.shape(), pred.shape(), "apply_nan_mask")?;
    let mask = truth.mapv(|v| !v.is_nan());
    let truth = truth.mapv(|v| if v.is_nan() { 0.0 } else { v });
    let mut pred = pred.to_owned();
    Zip::from(&mut pred).and(&mask).for_each(|p, &m| {
        if !m {
            *p = 0.0;
        }
    });
    Ok((truth, pred, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn no_nans_is_identity() {
        let t = Array3::from_shape_fn((2, 2, 3), |(a, b, c)| (a + b + c) as f64);
        let p = t.mapv(|v| v + 1.0);
        let (t2, p2, m) = apply_nan_mask(t.view(), p.view()).unwrap();
        assert_eq!(t2, t);
        assert_eq!(p2, p);
        assert!(m.iter().all(|&v| v));
    }

    #[test]
    fn all_nan_truth_gives_zero_fields() {
        let t = Array3::from_elem((2, 2, 2), f64::NAN);
        let p = Array3::from_elem((2, 2, 2), f64::NAN);
        let (t2, p2, m) = apply_nan_mask(t.view(), p.view()).unwrap();
        assert!(t2.iter().all(|&v| v == 0.0));
        assert!(p2.iter().all(|&v| v == 0.0));
        assert!(m.iter().all(|&v| !v));
    }

    #[test]
    fn random_pattern_matches_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let t = Array3::from_shape_fn((4, 5, 6), |_| {
            if rng.random::<f64>() < 0.3 { f64::NAN } else { rng.random() }
        });
        let p = Array3::from_shape_fn((4, 5, 6), |_| rng.random::<f64>());
        let (t2, p2, m) = apply_nan_mask(t.view(), p.view()).unwrap();
        for (idx, &v) in t.indexed_iter() {
            assert_eq!(m[idx], !v.is_nan());
            if v.is_nan() {
                assert_eq!((t2[idx], p2[idx]), (0.0, 0.0));
            } else {
                assert_eq!((t2[idx], p2[idx]), (v, p[idx]));
            }
        }
    }
}
