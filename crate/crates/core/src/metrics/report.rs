use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ClimatologySource, Score, Undefined};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// One scalar score with its evaluation coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub metric: String,
    pub variable: String,
    pub lead_hours: i64,
    pub split: String,
    pub mask_id: String,
    pub value: Option<f64>,
    pub defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined_reason: Option<Undefined>,
    /// Lead lies outside the range the model was trained on.
    #[serde(default)]
    pub extrapolated: bool,
}

impl ReportEntry {
    pub fn new(
        metric: impl Into<String>,
        variable: impl Into<String>,
        lead_hours: i64,
        split: impl Into<String>,
        mask_id: impl Into<String>,
        score: Score,
    ) -> Self {
        let (value, reason) = match score {
            Score::Defined(v) => (Some(v), None),
            Score::Undefined(u) => (None, Some(u)),
        };
        Self {
            metric: metric.into(),
            variable: variable.into(),
            lead_hours,
            split: split.into(),
            mask_id: mask_id.into(),
            value,
            defined: reason.is_none(),
            undefined_reason: reason,
            extrapolated: false,
        }
    }
}

/// A per-pixel map, row-major, NaN stored as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMap {
    pub name: String,
    pub variable: String,
    pub lead_hours: i64,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub periodic_lon: bool,
    pub values: Vec<Option<f64>>,
}

impl ReportMap {
    pub fn new(name: impl Into<String>, variable: impl Into<String>, lead_hours: i64, grid: &Grid, map: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            variable: variable.into(),
            lead_hours,
            lats: grid.lats().to_vec(),
            lons: grid.lons().to_vec(),
            periodic_lon: grid.periodic_lon(),
            values: map.iter().map(|&v| (!v.is_nan()).then_some(v)).collect(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.lats.clone(), self.lons.clone(), self.periodic_lon)
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec(
            (self.lats.len(), self.lons.len()),
            self.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        )
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub variable: String,
    pub lead_hours: i64,
    pub split: String,
    pub mask_id: String,
    pub counts: Vec<u64>,
}

/// Scores, maps and histograms from one evaluation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub climatology_source: Option<ClimatologySource>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub entries: Vec<ReportEntry>,
    #[serde(default)]
    pub maps: Vec<ReportMap>,
    #[serde(default)]
    pub rank_histograms: Vec<RankHistogram>,
}

/// Flat CSV row; column names are part of the external interface.
#[derive(Serialize)]
struct CsvRow<'a> {
    metric: &'a str,
    variable: &'a str,
    lead_hours: i64,
    split: &'a str,
    mask_id: &'a str,
    value: Option<f64>,
    defined: bool,
}

impl MetricReport {
    pub fn new(protocol: impl Into<String>) -> Self {
        Self {
            protocol: protocol.into(),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.maps.is_empty() && self.rank_histograms.is_empty()
    }

    pub fn find(&self, metric: &str, variable: &str, lead_hours: i64) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.metric == metric && e.variable == variable && e.lead_hours == lead_hours)
    }

    pub fn merge(&mut self, other: MetricReport) {
        self.entries.extend(other.entries);
        self.maps.extend(other.maps);
        self.rank_histograms.extend(other.rank_histograms);
        for n in other.notes {
            if !self.notes.contains(&n) {
                self.notes.push(n);
            }
        }
        if self.climatology_source.is_none() {
            self.climatology_source = other.climatology_source;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per scalar: `metric,variable,lead_hours,split,mask_id,value,defined`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(CsvRow {
                metric: &e.metric,
                variable: &e.variable,
                lead_hours: e.lead_hours,
                split: &e.split,
                mask_id: &e.mask_id,
                value: e.value,
                defined: e.defined,
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricReport {
        let mut r = MetricReport::new("direct");
        r.entries.push(ReportEntry::new("rmse", "t2m", 6, "test", "none", Score::Defined(1.25)));
        r.entries.push(ReportEntry::new(
            "acc",
            "t2m",
            6,
            "test",
            "none",
            Score::Undefined(Undefined::ZeroVariance),
        ));
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(MetricReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn csv_has_stable_columns() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "metric,variable,lead_hours,split,mask_id,value,defined");
        assert_eq!(lines[1], "rmse,t2m,6,test,none,1.25,true");
        assert_eq!(lines[2], "acc,t2m,6,test,none,,false");
    }

    #[test]
    fn maps_keep_nan_as_null() {
        let g = Grid::new(vec![0.0], vec![0.0, 1.0], false).unwrap();
        let m = ndarray::arr2(&[[1.0, f64::NAN]]);
        let rm = ReportMap::new("mean_bias", "t2m", 6, &g, &m);
        let json = serde_json::to_string(&rm).unwrap();
        let back: ReportMap = serde_json::from_str(&json).unwrap();
        let arr = back.to_array().unwrap();
        assert_eq!(arr[[0, 0]], 1.0);
        assert!(arr[[0, 1]].is_nan());
    }
}
