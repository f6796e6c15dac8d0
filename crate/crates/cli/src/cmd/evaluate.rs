use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use clbench_core::baselines::read_model;
use clbench_core::extreme::ExtremeMaskSeries;
use clbench_core::harness::{
    emit_report, evaluate_continuous, evaluate_direct, rollout_predictions, EvalConfig, ForcingPolicy,
    LinearStepModel, MaskSource, MetricKind, PersistenceStep, ReportFormat, StepModel,
};
use clbench_core::sampler::{forecasting_samples, ForecastConfig};
use clbench_core::{LeadTime, MetricReport};
use serde::Serialize;

use crate::config::usage;
use crate::io::{read_climatology, read_predictions, read_series, resolve_vars, truth_from_series, LayoutArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One prediction file per model, any number of leads each.
    Direct,
    /// One lead-conditioned model; one prediction file per lead.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Rmse,
    Acc,
    #[value(name = "mean_bias")]
    MeanBias,
    Pearson,
    #[value(name = "nrmse_s")]
    NrmseS,
    #[value(name = "nrmse_g")]
    NrmseG,
    Total,
    /// Per-pixel mean bias map.
    #[value(name = "bias_map")]
    BiasMap,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Rmse => MetricKind::Rmse,
            MetricArg::Acc => MetricKind::Acc,
            MetricArg::MeanBias => MetricKind::MeanBias,
            MetricArg::Pearson => MetricKind::Pearson,
            MetricArg::NrmseS => MetricKind::NrmseS,
            MetricArg::NrmseG => MetricKind::NrmseG,
            MetricArg::Total => MetricKind::Total,
            MetricArg::BiasMap => MetricKind::BiasMap,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "direct")]
    pub protocol: Protocol,
    /// Prediction containers.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set, required = true)]
    pub preds: Vec<PathBuf>,
    /// Series holding the truth at every valid time.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Truth containers, one per prediction file, instead of `data`.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub truth: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', action = clap::ArgAction::Set, default_value = "rmse,acc,mean_bias,pearson")]
    pub metrics: Vec<MetricArg>,
    /// Score only pixels flagged in this mask container.
    #[arg(long)]
    pub extreme_masks: Option<PathBuf>,
    /// Exclude pixels where the truth is NaN.
    #[arg(long)]
    pub nan_mask: bool,
    /// ACC reference; the truth's own temporal mean when absent.
    #[arg(long)]
    pub climatology: Option<PathBuf>,
    /// Leads to score; all present when empty.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub leads: Vec<i64>,
    /// Continuous: lead range `lo-hi` hours seen in training; others are flagged extrapolated.
    #[arg(long)]
    pub training_leads: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_lead_range(s: &str) -> anyhow::Result<(i64, i64)> {
    let bad = || usage(format!("training-leads: expected lo-hi hours, found {s:?}"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let mut cfg = EvalConfig::new(a.metrics.iter().map(|&m| m.into()).collect());
    cfg.leads = a.leads.clone();
    cfg.split = a.split.clone();
    cfg.training_leads = a.training_leads.as_deref().map(parse_lead_range).transpose()?;
    if let Some(p) = &a.climatology {
        cfg.climatology = Some(read_climatology(p)?);
    }
    cfg.mask = match (&a.extreme_masks, a.nan_mask) {
        (Some(_), true) => return Err(usage("extreme-masks and nan-mask are exclusive")),
        (Some(p), false) => MaskSource::Extreme(
            ExtremeMaskSeries::read(p).with_context(|| format!("reading masks {}", p.display()))?,
        ),
        (None, true) => MaskSource::NanDerived,
        (None, false) => MaskSource::None,
    };
    let preds = a.preds.iter().map(|p| read_predictions(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let truths = match (&a.data, a.truth.is_empty()) {
        (Some(d), true) => {
            let series = read_series(d)?;
            preds.iter().map(|p| truth_from_series(p, &series)).collect::<anyhow::Result<Vec<_>>>()?
        }
        (None, false) if a.truth.len() == preds.len() => {
            a.truth.iter().map(|p| read_predictions(p)).collect::<anyhow::Result<Vec<_>>>()?
        }
        (None, false) => return Err(usage("give one --truth file per --preds file")),
        _ => return Err(usage("give exactly one of --data and --truth")),
    };
    let report = match a.protocol {
        Protocol::Direct => {
            let mut report = MetricReport::new("direct");
            for (p, t) in preds.iter().zip(&truths) {
                let mut r = evaluate_direct(p, t, &cfg)?;
                r.notes.push(format!("model {}", p.source));
                report.merge(r);
            }
            report
        }
        Protocol::Continuous => evaluate_continuous(&preds, &truths, &cfg)?,
    };
    for e in &report.entries {
        let v = e.value.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        eprintln!("{:>10} {:>8} {:>5}h {:>8} {v}", e.metric, e.variable, e.lead_hours, e.mask_id);
    }
    let json = report.to_json()?;
    match &a.out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepModelArg {
    Persistence,
    Linreg,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RolloutArgs {
    #[arg(long, value_enum)]
    pub model: StepModelArg,
    /// Linreg: model fitted at the base step.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Series providing initial conditions, forcing and sample times.
    #[arg(long)]
    pub data: PathBuf,
    /// Rolled-out variables that are scored; defaults to the non-forced dynamic inputs.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub out_vars: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub layout: LayoutArgs,
    /// Hours advanced by one model step.
    #[arg(long, default_value_t = 6)]
    pub base_hours: i64,
    #[arg(long)]
    pub steps: u32,
    /// Dynamic inputs read from the data instead of predicted.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub forcing: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
}

pub fn rollout(a: &RolloutArgs) -> anyhow::Result<()> {
    if a.steps == 0 || a.base_hours <= 0 {
        return Err(usage("steps and base-hours must be positive"));
    }
    let series = read_series(&a.data)?;
    let dynamic = resolve_vars(&a.layout.in_vars, &series)?;
    let layout = a.layout.layout(&dynamic)?;
    let out_vars: Vec<String> = if a.out_vars.is_empty() {
        layout.dynamic.iter().filter(|v| !a.forcing.contains(v)).cloned().collect()
    } else {
        a.out_vars.clone()
    };
    let model: Box<dyn StepModel> = match a.model {
        StepModelArg::Persistence => Box::new(PersistenceStep::new(layout.clone())),
        StepModelArg::Linreg => {
            let p = a.model_file.as_ref().ok_or_else(|| usage("linreg rollout needs --model-file"))?;
            Box::new(LinearStepModel(read_model(p)?))
        }
    };
    let lead = i64::from(a.steps) * a.base_hours;
    let lead_time = LeadTime::hours(u32::try_from(lead)?).map_err(|e| usage(format!("steps: {e}")))?;
    let samples = forecasting_samples(&series, &ForecastConfig::new(layout.clone(), out_vars), lead_time)?;
    let forcing = (!a.forcing.is_empty()).then_some(ForcingPolicy {
        channels: &a.forcing,
        truth: &series,
    });
    let preds = rollout_predictions(model.as_ref(), &layout, a.base_hours, &samples, forcing, lead)?;
    preds.write(&a.out, "forecasting", "iterative", &a.split)?;
    println!("wrote {} ({} samples at {lead}h)", a.out.display(), preds.len());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Json,
    Csv,
    /// CLBT maps with PGM previews, written into a directory.
    Maps,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReportArgs {
    /// JSON report written by `evaluate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Output file, or directory for maps.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn report(a: &ReportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report = MetricReport::from_json(&text).with_context(|| format!("parsing {}", a.input.display()))?;
    let format = match a.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Maps => ReportFormat::Maps,
    };
    for f in emit_report(&report, format, &a.out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
