//! File helpers shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use clap::Args;
use clbench_core::harness::PredictionSet;
use clbench_core::metrics::{ClimatologyMap, ClimatologySource};
use clbench_core::store::{read_container, read_container_with_extra, write_container, write_container_with_extra};
use clbench_core::{FieldSeries, InputLayout, Level, Variable};
use ndarray::{concatenate, s, Array4, Axis};
use serde::Serialize;
use serde_json::Value;

pub fn read_series(path: &Path) -> anyhow::Result<FieldSeries> {
    read_container(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_series(series: &FieldSeries, path: &Path) -> anyhow::Result<()> {
    write_container(series, path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_predictions(path: &Path) -> anyhow::Result<PredictionSet> {
    PredictionSet::read(path).with_context(|| format!("reading predictions {}", path.display()))
}

/// Dynamic variable names of `series`, in stored order.
pub fn dynamic_vars(series: &FieldSeries) -> Vec<String> {
    series
        .variables()
        .iter()
        .filter(|v| !v.is_static)
        .map(|v| v.name.clone())
        .collect()
}

/// Model inputs: variables, history offsets and constant fields.
#[derive(Clone, Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LayoutArgs {
    /// Dynamic input variables; defaults to the output variables.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub in_vars: Vec<String>,
    /// History offsets in hours, 0 first, e.g. `0,-6,-12`.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, allow_negative_numbers = true, default_value = "0")]
    pub offsets: Vec<i64>,
    /// Constant input fields.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub statics: Vec<String>,
}

impl LayoutArgs {
    pub fn layout(&self, out_vars: &[String]) -> anyhow::Result<InputLayout> {
        let dynamic = if self.in_vars.is_empty() { out_vars.to_vec() } else { self.in_vars.clone() };
        Ok(InputLayout::new(dynamic, self.offsets.clone(), self.statics.clone())?)
    }
}

/// Output variables, or every dynamic variable when none are named.
pub fn resolve_vars(named: &[String], series: &FieldSeries) -> anyhow::Result<Vec<String>> {
    if named.is_empty() {
        return Ok(dynamic_vars(series));
    }
    for v in named {
        series.require_var(v)?;
    }
    Ok(named.to_vec())
}

pub fn write_climatology(map: &ClimatologyMap, grid: &clbench_core::Grid, path: &Path) -> anyhow::Result<()> {
    let (c, h, w) = map.data.dim();
    let data = map.data.mapv(|v| v as f32).into_shape_with_order((1, c, h, w))?;
    let vars = map
        .variables
        .iter()
        .map(|v| Variable::dynamic(v.clone(), "", Level::surface()))
        .collect();
    let series = FieldSeries::new(grid.clone(), vars, 0, 1, data)?;
    let mut extra = BTreeMap::new();
    extra.insert("kind".to_string(), Value::from("climatology"));
    extra.insert("source".to_string(), serde_json::to_value(map.source)?);
    write_container_with_extra(&series, &extra, path).with_context(|| format!("writing {}", path.display()))
}

pub fn read_climatology(path: &Path) -> anyhow::Result<ClimatologyMap> {
    let (series, extra) = read_container_with_extra(path).with_context(|| format!("reading {}", path.display()))?;
    if extra.get("kind").and_then(Value::as_str) != Some("climatology") {
        bail!("{} is not a climatology container", path.display());
    }
    let source: ClimatologySource = match extra.get("source") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => ClimatologySource::TrainSplit,
    };
    Ok(ClimatologyMap {
        variables: series.variables().iter().map(|v| v.name.clone()).collect(),
        data: series.data().index_axis(Axis(0), 0).mapv(f64::from),
        source,
    })
}

/// Truth for `preds` read from `series` at each sample's valid time.
pub fn truth_from_series(preds: &PredictionSet, series: &FieldSeries) -> anyhow::Result<PredictionSet> {
    if series.grid().shape() != preds.grid.shape() {
        bail!(
            "truth grid {:?} differs from prediction grid {:?}",
            series.grid().shape(),
            preds.grid.shape()
        );
    }
    let chans: Vec<usize> = preds
        .channels
        .iter()
        .map(|v| series.require_var(v))
        .collect::<Result<_, _>>()?;
    let (h, w) = preds.grid.shape();
    let mut data = Array4::<f32>::zeros((preds.len(), chans.len(), h, w));
    for n in 0..preds.len() {
        let valid = preds.times[n] + preds.lead_hours[n] * 3600;
        let t = series
            .index_of_time(valid)
            .ok_or_else(|| anyhow!("truth series has no timestamp {valid} (sample {n})"))?;
        for (k, &c) in chans.iter().enumerate() {
            data.slice_mut(s![n, k, .., ..]).assign(&series.data().slice(s![t, c, .., ..]));
        }
    }
    Ok(PredictionSet {
        data,
        channels: preds.channels.clone(),
        lead_hours: preds.lead_hours.clone(),
        times: preds.times.clone(),
        grid: preds.grid.clone(),
        valid: preds.valid.clone(),
        source: "truth".into(),
    })
}

/// Stacks prediction sets sharing channels and grid along the sample axis.
pub fn concat_predictions(sets: Vec<PredictionSet>) -> anyhow::Result<PredictionSet> {
    let mut it = sets.into_iter();
    let mut acc = it.next().ok_or_else(|| anyhow!("no prediction sets"))?;
    for p in it {
        if p.channels != acc.channels || p.grid != acc.grid {
            bail!("prediction sets disagree on channels or grid");
        }
        acc.data = concatenate(Axis(0), &[acc.data.view(), p.data.view()])?;
        acc.lead_hours.extend(p.lead_hours);
        acc.times.extend(p.times);
    }
    Ok(acc)
}
