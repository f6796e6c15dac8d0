use std::ops::Range;

use ndarray::{s, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Vertical level of a variable: a pressure level in hPa, or a tag such as
/// `"surface"` or `"static"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Pressure(f64),
    Named(String),
}

impl Level {
    pub fn surface() -> Self {
        Level::Named("surface".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(default)]
    pub units: String,
    pub level: Level,
    #[serde(rename = "static", default)]
    pub is_static: bool,
}

impl Variable {
    pub fn dynamic(name: impl Into<String>, units: impl Into<String>, level: Level) -> Self {
        Self {
            name: name.into(),
            units: units.into(),
            level,
            is_static: false,
        }
    }

    pub fn constant(name: impl Into<String>, units: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            units: units.into(),
            level: Level::Named("static".into()),
            is_static: true,
        }
    }
}

/// A uniformly-stepped stack of gridded variables, `T x C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeries {
    grid: Grid,
    variables: Vec<Variable>,
    time_start: i64,
    time_step: i64,
    data: Array4<f32>,
}

impl FieldSeries {
    pub fn new(
        grid: Grid,
        variables: Vec<Variable>,
        time_start: i64,
        time_step: i64,
        data: Array4<f32>,
    ) -> Result<Self> {
        let s = Self {
            grid,
            variables,
            time_start,
            time_step,
            data,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks every structural invariant, including bitwise constancy of
    /// static variables over time.
    pub fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::InvalidSeries("variable list is empty".into()));
        }
        if self.time_step <= 0 {
            return Err(Error::InvalidSeries(format!(
                "time step must be positive, got {}",
                self.time_step
            )));
        }
        let (t, c, h, w) = self.data.dim();
        if t == 0 {
            return Err(Error::InvalidSeries("series has no timestamps".into()));
        }
        if c != self.variables.len() || (h, w) != self.grid.shape() {
            return Err(Error::DimensionMismatch(format!(
                "data is {t}x{c}x{h}x{w} but {} variables on a {}x{} grid",
                self.variables.len(),
                self.grid.height(),
                self.grid.width()
            )));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if self.variables[..i].iter().any(|u| u.name == v.name) {
                return Err(Error::InvalidSeries(format!("duplicate variable name {:?}", v.name)));
            }
        }
        for (ci, v) in self.variables.iter().enumerate() {
            if !v.is_static {
                continue;
            }
            let first = self.data.slice(s![0, ci, .., ..]);
            for ti in 1..t {
                let same = self
                    .data
                    .slice(s![ti, ci, .., ..])
                    .iter()
                    .zip(first.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(Error::InvalidSeries(format!(
                        "static variable {:?} differs at time index {ti}",
                        v.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn time_start(&self) -> i64 {
        self.time_start
    }

    pub fn time_step(&self) -> i64 {
        self.time_step
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.variables.len()
    }

    pub fn time_at(&self, t: usize) -> i64 {
        self.time_start + t as i64 * self.time_step
    }

    pub fn times(&self) -> Vec<i64> {
        (0..self.len()).map(|t| self.time_at(t)).collect()
    }

    pub fn time_end(&self) -> i64 {
        self.time_at(self.len() - 1)
    }

    /// Index of the sample valid at `time`, if present.
    pub fn index_of_time(&self, time: i64) -> Option<usize> {
        let off = time - self.time_start;
        if off < 0 || off % self.time_step != 0 {
            return None;
        }
        let idx = (off / self.time_step) as usize;
        (idx < self.len()).then_some(idx)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require_var(&self, name: &str) -> Result<usize> {
        self.var_index(name)
            .ok_or_else(|| Error::ChannelMismatch(format!("variable {name:?} not in series")))
    }

    /// `T x H x W` view of one variable.
    pub fn channel(&self, c: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(Axis(1), c)
    }

    pub fn slice_time(&self, range: Range<usize>) -> Result<FieldSeries> {
        if range.is_empty() || range.end > self.len() {
            return Err(Error::InvalidSeries(format!(
                "time range {range:?} invalid for series of length {}",
                self.len()
            )));
        }
        Ok(FieldSeries {
            grid: self.grid.clone(),
            variables: self.variables.clone(),
            time_start: self.time_at(range.start),
            time_step: self.time_step,
            data: self.data.slice(s![range, .., .., ..]).to_owned(),
        })
    }

    /// Every `stride`-th timestamp, starting with the first.
    pub fn subsample(&self, stride: usize) -> Result<FieldSeries> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(FieldSeries {
            grid: self.grid.clone(),
            variables: self.variables.clone(),
            time_start: self.time_start,
            time_step: self.time_step * stride as i64,
            data: self.data.slice(s![..;stride, .., .., ..]).to_owned(),
        })
    }

    /// New series holding only `names`, in the given order.
    pub fn select_vars(&self, names: &[String]) -> Result<FieldSeries> {
        let idx = names
            .iter()
            .map(|n| self.require_var(n))
            .collect::<Result<Vec<_>>>()?;
        let data = self.data.select(Axis(1), &idx);
        FieldSeries::new(
            self.grid.clone(),
            idx.iter().map(|&i| self.variables[i].clone()).collect(),
            self.time_start,
            self.time_step,
            data,
        )
    }

    /// Appends `next`, which must start one step after `self` ends.
    pub fn concat(&self, next: &FieldSeries) -> Result<FieldSeries> {
        if self.grid != next.grid || self.variables != next.variables || self.time_step != next.time_step {
            return Err(Error::InvalidSeries("cannot concatenate series with different layouts".into()));
        }
        if next.time_start != self.time_end() + self.time_step {
            return Err(Error::InvalidSeries(format!(
                "series are not contiguous: {} then {}",
                self.time_end(),
                next.time_start
            )));
        }
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), next.data.view()])
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(FieldSeries {
            grid: self.grid.clone(),
            variables: self.variables.clone(),
            time_start: self.time_start,
            time_step: self.time_step,
            data,
        })
    }

    pub(crate) fn with_data(&self, data: Array4<f32>) -> FieldSeries {
        FieldSeries {
            grid: self.grid.clone(),
            variables: self.variables.clone(),
            time_start: self.time_start,
            time_step: self.time_step,
            data,
        }
    }
}
