use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use clbench_core::baselines::{
    climatology_fit, climatology_predict, interp_downscale, linreg_fit, linreg_predict, persistence_forecast,
    read_model, write_model, LinRegConfig, LinRegMode,
};
use clbench_core::harness::PredictionSet;
use clbench_core::metrics::ClimatologyMap;
use clbench_core::sampler::{forecasting_samples, ForecastConfig};
use clbench_core::{Grid, LeadTime, SampleSet};
use ndarray::Axis;
use serde::Serialize;

use super::data::SchemeArg;
use crate::config::usage;
use crate::io::{concat_predictions, read_climatology, read_series, resolve_vars, write_climatology, LayoutArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Estimate model parameters from a training series.
    Fit,
    /// Write predictions for a series.
    Predict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Climatology,
    Persistence,
    Linreg,
    Interp,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    /// One regression per output pixel.
    Local,
    /// One set of stencil coefficients shared by every pixel.
    Global,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub action: Action,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Training series for `fit`, input series for `predict`.
    #[arg(long)]
    pub data: PathBuf,
    /// Fitted parameters: written by `fit`, read by `predict`.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Prediction container written by `predict`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Predicted variables; defaults to every dynamic variable.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub out_vars: Vec<String>,
    /// Lead times in hours.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, default_value = "6")]
    pub lead: Vec<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, value_enum, default_value = "local")]
    pub mode: ModeArg,
    /// Odd stencil width of the regression features.
    #[arg(long, default_value_t = 3)]
    pub stencil: usize,
    /// Ridge penalty.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Relative residual target of the global-mode solver.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Interp: target grid spacing in degrees.
    #[arg(long)]
    pub to: Option<f64>,
    /// Interp: series whose grid is the target.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub scheme: SchemeArg,
    /// Split tag recorded in the prediction header.
    #[arg(long, default_value = "test")]
    pub split: String,
}

pub fn run(a: &BaselineArgs) -> anyhow::Result<()> {
    match a.action {
        Action::Fit => fit(a),
        Action::Predict => predict(a),
    }
}

fn linreg_config(a: &BaselineArgs) -> LinRegConfig {
    LinRegConfig {
        mode: match a.mode {
            ModeArg::Local => LinRegMode::Local,
            ModeArg::Global => LinRegMode::Global,
        },
        stencil: a.stencil,
        lambda: a.lambda,
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
    }
}

fn samples_at(series: &clbench_core::FieldSeries, a: &BaselineArgs, out_vars: &[String], lead: u32) -> anyhow::Result<SampleSet> {
    let cfg = ForecastConfig::new(a.layout.layout(out_vars)?, out_vars.to_vec());
    let lead = LeadTime::hours(lead).map_err(|e| usage(format!("lead: {e}")))?;
    Ok(forecasting_samples(series, &cfg, lead)?)
}

fn fit(a: &BaselineArgs) -> anyhow::Result<()> {
    if matches!(a.model, ModelArg::Persistence | ModelArg::Interp) {
        return Err(usage(format!("model {:?} has nothing to fit", a.model)));
    }
    let path = a
        .model_file
        .as_ref()
        .ok_or_else(|| usage("baseline fit needs --model-file for the fitted parameters"))?;
    let train = read_series(&a.data)?;
    let out_vars = resolve_vars(&a.out_vars, &train)?;
    match a.model {
        ModelArg::Climatology => {
            let map = climatology_fit(&train, &out_vars)?;
            write_climatology(&map, train.grid(), path)?;
        }
        ModelArg::Linreg => {
            let [lead] = a.lead[..] else {
                return Err(usage("linreg fits one lead at a time; give a single --lead"));
            };
            let samples = samples_at(&train, a, &out_vars, lead)?;
            let model = linreg_fit(&samples, &linreg_config(a))?;
            write_model(&model, path).with_context(|| format!("writing {}", path.display()))?;
        }
        ModelArg::Persistence | ModelArg::Interp => unreachable!("rejected above"),
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn restrict(map: &ClimatologyMap, vars: &[String]) -> anyhow::Result<ClimatologyMap> {
    let idx: Vec<usize> = vars
        .iter()
        .map(|v| {
            map.variables
                .iter()
                .position(|m| m == v)
                .ok_or_else(|| anyhow::anyhow!("climatology has no variable {v:?}"))
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(ClimatologyMap {
        variables: vars.to_vec(),
        data: map.data.select(Axis(0), &idx),
        source: map.source,
    })
}

fn predict(a: &BaselineArgs) -> anyhow::Result<()> {
    let out = a.out.as_ref().ok_or_else(|| usage("baseline predict needs --out"))?;
    let series = read_series(&a.data)?;
    let out_vars = resolve_vars(&a.out_vars, &series)?;
    let model_file = || {
        a.model_file
            .as_ref()
            .ok_or_else(|| usage(format!("model {:?} needs --model-file", a.model)))
    };
    let (set, task) = match a.model {
        ModelArg::Interp => {
            let target = match (&a.target, a.to) {
                (Some(p), None) => read_series(p)?.grid().clone(),
                (None, Some(d)) => Grid::from_resolution(d).map_err(|e| usage(format!("to: {e}")))?,
                _ => return Err(usage("interp needs exactly one of --target and --to")),
            };
            let low = series.select_vars(&out_vars)?;
            let data = interp_downscale(low.data().view(), low.grid(), &target, a.scheme.into())?;
            let set = PredictionSet {
                data,
                channels: out_vars.clone(),
                lead_hours: vec![0; low.len()],
                times: low.times(),
                grid: target,
                valid: None,
                source: "interp".into(),
            };
            (set, "downscaling")
        }
        model => {
            let clim = match model {
                ModelArg::Climatology => Some(restrict(&read_climatology(model_file()?)?, &out_vars)?),
                _ => None,
            };
            let linear = match model {
                ModelArg::Linreg => Some(read_model(model_file()?)?),
                _ => None,
            };
            let mut sets = Vec::new();
            for &lead in &a.lead {
                let samples = samples_at(&series, a, &out_vars, lead)?;
                let data = match model {
                    ModelArg::Climatology => {
                        let clim = clim.as_ref().expect("read above");
                        if clim.data.dim().1 != samples.target_grid.height() || clim.data.dim().2 != samples.target_grid.width() {
                            bail!("climatology grid differs from the data grid");
                        }
                        climatology_predict(clim, samples.len())
                    }
                    ModelArg::Persistence => persistence_forecast(&samples, &out_vars)?,
                    ModelArg::Linreg => {
                        let m = linear.as_ref().expect("read above");
                        if m.input_channels != samples.input_channels || m.target_channels != samples.target_channels {
                            bail!(
                                "model expects inputs {:?} and targets {:?}; the layout flags give {:?} and {:?}",
                                m.input_channels,
                                m.target_channels,
                                samples.input_channels,
                                samples.target_channels
                            );
                        }
                        linreg_predict(m, samples.inputs.view())?
                    }
                    ModelArg::Interp => unreachable!(),
                };
                let tag = format!("{model:?}").to_lowercase();
                sets.push(PredictionSet::for_samples(&samples, data, tag)?);
            }
            (concat_predictions(sets)?, "forecasting")
        }
    };
    set.write(out, task, "direct", &a.split)?;
    println!("wrote {} ({} samples, leads {:?})", out.display(), set.len(), set.leads());
    Ok(())
}
