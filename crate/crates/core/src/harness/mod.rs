//! Evaluation runs: scoring aligned prediction sets under the direct and
//! continuous protocols, iterative rollouts, probabilistic scoring and
//! report emission.

mod emit;
mod rollout;

pub use emit::{emit_report, write_pgm, ReportFormat};
pub use rollout::{
    rollout, rollout_predictions, ForcingPolicy, LinearStepModel, PersistenceStep, StepModel, Trajectory,
};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::extreme::ExtremeMaskSeries;
use crate::grid::{make_lat_weights, Grid, LatWeights};
use crate::metrics::{
    acc, apply_nan_mask, crps_ensemble, crps_gaussian, lat_rmse, mean_bias, nrmse_g, nrmse_s, pearson,
    per_pixel_mean_bias, rank_histogram, spread, spread_skill_ratio, total, ClimatologyMap, ClimatologySource,
    CrpsAggregation, EnsembleForecast, GaussianForecast, Mask, MetricReport, RankHistogram, ReportEntry, ReportMap,
    Score, VarianceDivisor, TOTAL_ALPHA,
};
use crate::sampler::SampleSet;
use crate::store::{read_container_with_extra, write_container_with_extra, FieldSeries, Level, Variable};

/// Fields aligned sample-by-sample with a sample set's targets. Used for
/// both predictions and the truth they are scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// `N x C x H x W`.
    pub data: Array4<f32>,
    pub channels: Vec<String>,
    pub lead_hours: Vec<i64>,
    /// Issue time of each sample.
    pub times: Vec<i64>,
    pub grid: Grid,
    /// Pixels that carry data; `None` means all.
    pub valid: Option<Array2<bool>>,
    /// Baseline name or source file.
    pub source: String,
}

impl PredictionSet {
    /// Predictions for `samples`, taking alignment metadata from them.
    pub fn for_samples(samples: &SampleSet, data: Array4<f32>, source: impl Into<String>) -> Result<Self> {
        let set = Self {
            data,
            channels: samples.target_channels.clone(),
            lead_hours: samples.lead_hours.clone(),
            times: samples.times.clone(),
            grid: samples.target_grid.clone(),
            valid: samples.target_mask.clone(),
            source: source.into(),
        };
        set.validate()?;
        Ok(set)
    }

    /// The targets of `samples`.
    pub fn truth_of(samples: &SampleSet) -> Self {
        Self {
            data: samples.targets.clone(),
            channels: samples.target_channels.clone(),
            lead_hours: samples.lead_hours.clone(),
            times: samples.times.clone(),
            grid: samples.target_grid.clone(),
            valid: samples.target_mask.clone(),
            source: "truth".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, h, w) = self.data.dim();
        if self.lead_hours.len() != n || self.times.len() != n {
            return Err(Error::DimensionMismatch("sample metadata length differs from data".into()));
        }
        if self.channels.len() != c || self.grid.shape() != (h, w) {
            return Err(Error::DimensionMismatch("channels or grid differ from data".into()));
        }
        if self.valid.as_ref().is_some_and(|m| m.dim() != (h, w)) {
            return Err(Error::DimensionMismatch("validity mask differs from grid".into()));
        }
        Ok(())
    }

    /// Samples at `lead`, in order.
    pub fn select_lead(&self, lead: i64) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&n| self.lead_hours[n] == lead).collect();
        if idx.is_empty() {
            return Err(Error::Misaligned(format!("no samples at lead {lead}h")));
        }
        Ok(Self {
            data: self.data.select(Axis(0), &idx),
            channels: self.channels.clone(),
            lead_hours: vec![lead; idx.len()],
            times: idx.iter().map(|&n| self.times[n]).collect(),
            grid: self.grid.clone(),
            valid: self.valid.clone(),
            source: self.source.clone(),
        })
    }

    /// Distinct leads, ascending.
    pub fn leads(&self) -> Vec<i64> {
        let mut l = self.lead_hours.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Verifies that `self` can be scored against `truth`.
    pub fn check_alignment(&self, truth: &PredictionSet) -> Result<()> {
        self.validate()?;
        truth.validate()?;
        if self.len() != truth.len() {
            return Err(Error::Misaligned(format!("{} predictions for {} truth samples", self.len(), truth.len())));
        }
        if self.grid.shape() != truth.grid.shape() {
            return Err(Error::Misaligned(format!(
                "prediction grid {:?} vs truth grid {:?}",
                self.grid.shape(),
                truth.grid.shape()
            )));
        }
        if self.lead_hours != truth.lead_hours {
            return Err(Error::Misaligned("lead metadata differs".into()));
        }
        if self.times != truth.times {
            return Err(Error::Misaligned("sample times differ".into()));
        }
        if let Some(v) = truth.channels.iter().find(|v| !self.channels.contains(v)) {
            return Err(Error::Misaligned(format!("predictions lack variable {v:?}")));
        }
        Ok(())
    }

    /// One variable as `N x H x W` binary64.
    pub fn field(&self, var: &str) -> Result<Array3<f64>> {
        let c = self
            .channels
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::ChannelMismatch(format!("no channel {var:?}")))?;
        Ok(self.data.index_axis(Axis(1), c).mapv(f64::from))
    }

    /// Writes a CLBT container whose time axis is the sample index; alignment
    /// metadata goes in the `task`, `protocol`, `lead_hours`, `sample_times`,
    /// `split` and `model_tag` header keys.
    pub fn write(&self, path: impl AsRef<Path>, task: &str, protocol: &str, split: &str) -> Result<()> {
        self.validate()?;
        let vars = self
            .channels
            .iter()
            .map(|n| Variable::dynamic(n.clone(), "", Level::surface()))
            .collect();
        let series = FieldSeries::new(self.grid.clone(), vars, 0, 1, self.data.clone())?;
        let mut extra = BTreeMap::new();
        extra.insert("task".into(), Value::from(task));
        extra.insert("protocol".into(), Value::from(protocol));
        extra.insert("lead_hours".into(), Value::from(self.lead_hours.clone()));
        extra.insert("sample_times".into(), Value::from(self.times.clone()));
        extra.insert("split".into(), Value::from(split));
        extra.insert("model_tag".into(), Value::from(self.source.clone()));
        if let Some(v) = &self.valid {
            extra.insert("valid_mask".into(), Value::from(v.iter().map(|&b| u8::from(b)).collect::<Vec<_>>()));
        }
        write_container_with_extra(&series, &extra, path)
    }

    /// Reads a container written by [`PredictionSet::write`] or
    /// [`SampleSet::export`](crate::sampler::SampleSet::export).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (series, extra) = read_container_with_extra(path)?;
        let ints = |key: &str| -> Result<Vec<i64>> {
            extra
                .get(key)
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_i64).collect::<Option<Vec<_>>>())
                .ok_or_else(|| Error::HeaderParse(format!("{}: missing or malformed {key:?}", path.display())))
        };
        let (h, w) = series.grid().shape();
        let valid = match extra.get("valid_mask").and_then(Value::as_array) {
            Some(a) => Some(
                Array2::from_shape_vec((h, w), a.iter().map(|v| v.as_u64() == Some(1)).collect())
                    .map_err(|e| Error::HeaderParse(format!("valid_mask: {e}")))?,
            ),
            None => None,
        };
        let set = Self {
            channels: series.variables().iter().map(|v| v.name.clone()).collect(),
            lead_hours: ints("lead_hours")?,
            times: ints("sample_times")?,
            grid: series.grid().clone(),
            valid,
            source: extra
                .get("model_tag")
                .and_then(Value::as_str)
                .map_or_else(|| path.display().to_string(), str::to_string),
            data: series.into_data(),
        };
        set.validate()?;
        Ok(set)
    }
}

/// Scores a harness run can produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    Acc,
    MeanBias,
    Pearson,
    NrmseS,
    NrmseG,
    Total,
    /// Per-pixel mean bias, emitted as a map.
    BiasMap,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Acc => "acc",
            MetricKind::MeanBias => "mean_bias",
            MetricKind::Pearson => "pearson",
            MetricKind::NrmseS => "nrmse_s",
            MetricKind::NrmseG => "nrmse_g",
            MetricKind::Total => "total",
            MetricKind::BiasMap => "bias_map",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rmse" => MetricKind::Rmse,
            "acc" => MetricKind::Acc,
            "mean_bias" | "bias" => MetricKind::MeanBias,
            "pearson" => MetricKind::Pearson,
            "nrmse_s" => MetricKind::NrmseS,
            "nrmse_g" => MetricKind::NrmseG,
            "total" => MetricKind::Total,
            "bias_map" => MetricKind::BiasMap,
            _ => return Err(Error::InvalidArgument(format!("unknown metric {s:?}"))),
        })
    }
}

/// Which pixels are scored.
#[derive(Clone, Debug, Default)]
pub enum MaskSource {
    #[default]
    None,
    /// NaNs in the truth: those pixels score as zero error on both sides.
    NanDerived,
    /// Only pixels flagged extreme at each prediction's valid time.
    Extreme(ExtremeMaskSeries),
}

impl MaskSource {
    pub fn id(&self) -> &'static str {
        match self {
            MaskSource::None => "none",
            MaskSource::NanDerived => "nan",
            MaskSource::Extreme(_) => "extreme",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub metrics: Vec<MetricKind>,
    /// Reference for ACC; the evaluated truth's temporal mean when absent.
    pub climatology: Option<ClimatologyMap>,
    pub mask: MaskSource,
    /// Leads to evaluate; every lead present when empty.
    pub leads: Vec<i64>,
    pub split: String,
    /// Lead range `[lo, hi]` hours a continuous model was trained on.
    pub training_leads: Option<(i64, i64)>,
}

impl EvalConfig {
    pub fn new(metrics: Vec<MetricKind>) -> Self {
        Self {
            metrics,
            climatology: None,
            mask: MaskSource::None,
            leads: Vec::new(),
            split: "test".into(),
            training_leads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::InvalidArgument("no metric requested".into()));
        }
        Ok(())
    }
}

/// Evaluation inputs for one `(variable, lead)` cell.
struct Cell {
    variable: String,
    lead: i64,
    pred: Array3<f64>,
    truth: Array3<f64>,
    mask: Option<Array3<bool>>,
    static_mask: Option<Array2<bool>>,
}

fn build_cells(preds: &PredictionSet, truth: &PredictionSet, cfg: &EvalConfig) -> Result<Vec<Cell>> {
    let leads = if cfg.leads.is_empty() { truth.leads() } else { cfg.leads.clone() };
    let mut cells = Vec::new();
    for &lead in &leads {
        let p = preds.select_lead(lead)?;
        let t = truth.select_lead(lead)?;
        let valid_times: Vec<i64> = t.times.iter().map(|&s| s + lead * 3600).collect();
        let extreme = match &cfg.mask {
            MaskSource::Extreme(m) => Some(m.aligned(&valid_times)?),
            _ => None,
        };
        for var in &truth.channels {
            let mut pf = p.field(var)?;
            let mut tf = t.field(var)?;
            let mut mask = extreme.clone();
            if let MaskSource::NanDerived = cfg.mask {
                let (tt, pp, _) = apply_nan_mask(tf.view(), pf.view())?;
                tf = tt;
                pf = pp;
            }
            let static_mask = truth.valid.clone();
            if let (Some(m), Some(v)) = (mask.as_mut(), &static_mask) {
                for mut step in m.outer_iter_mut() {
                    Zip::from(&mut step).and(v).for_each(|a, &b| *a = *a && b);
                }
            }
            cells.push(Cell {
                variable: var.clone(),
                lead,
                pred: pf,
                truth: tf,
                mask,
                static_mask,
            });
        }
    }
    Ok(cells)
}

fn score_cell(
    cell: &Cell,
    metric: MetricKind,
    weights: &LatWeights,
    clim: Option<&ClimatologyMap>,
) -> Result<Option<Score>> {
    let mask = match (&cell.mask, &cell.static_mask) {
        (Some(m), _) => Some(Mask::PerStep(m.view())),
        (None, Some(s)) => Some(Mask::Static(s.view())),
        (None, None) => None,
    };
    let mask = mask.as_ref();
    let (p, t) = (cell.pred.view(), cell.truth.view());
    let projection_mask = || -> Result<Option<ndarray::ArrayView2<'_, bool>>> {
        if cell.mask.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{} does not support per-timestep masks",
                metric.name()
            )));
        }
        Ok(cell.static_mask.as_ref().map(|m| m.view()))
    };
    Ok(Some(match metric {
        MetricKind::Rmse => lat_rmse(p, t, weights, mask)?,
        MetricKind::Acc => {
            let fallback;
            let c = match clim.and_then(|c| c.channel(&cell.variable)) {
                Some(c) => c,
                None => {
                    fallback = ClimatologyMap::temporal_mean(t);
                    fallback.view()
                }
            };
            acc(p, t, c, weights, mask)?
        }
        MetricKind::MeanBias => mean_bias(p, t, mask)?,
        MetricKind::Pearson => pearson(p, t, mask)?,
        MetricKind::NrmseS => nrmse_s(p, t, weights, projection_mask()?)?,
        MetricKind::NrmseG => nrmse_g(p, t, weights, projection_mask()?)?,
        MetricKind::Total => total(p, t, weights, projection_mask()?, TOTAL_ALPHA)?,
        MetricKind::BiasMap => return Ok(None),
    }))
}

/// Scores every `(lead, variable, metric)` cell. Undefined scores are kept
/// and flagged.
pub fn evaluate_direct(preds: &PredictionSet, truth: &PredictionSet, cfg: &EvalConfig) -> Result<MetricReport> {
    cfg.validate()?;
    preds.check_alignment(truth)?;
    let weights = make_lat_weights(&truth.grid)?;
    let cells = build_cells(preds, truth, cfg)?;
    let clim = cfg.climatology.as_ref();
    let jobs: Vec<(usize, MetricKind)> = (0..cells.len())
        .flat_map(|c| cfg.metrics.iter().map(move |&m| (c, m)))
        .collect();
    let scores: Vec<Result<Option<Score>>> = jobs
        .par_iter()
        .map(|&(c, m)| score_cell(&cells[c], m, &weights, clim))
        .collect();
    let mut report = MetricReport::new("direct");
    let uses_acc = cfg.metrics.contains(&MetricKind::Acc);
    if uses_acc {
        report.climatology_source = Some(clim.map_or(ClimatologySource::TestSplit, |c| c.source));
    }
    for (&(c, m), score) in jobs.iter().zip(scores) {
        let cell = &cells[c];
        if let Some(score) = score? {
            report.entries.push(ReportEntry::new(
                m.name(),
                &cell.variable,
                cell.lead,
                &cfg.split,
                cfg.mask.id(),
                score,
            ));
        }
    }
    if cfg.metrics.contains(&MetricKind::BiasMap) {
        for cell in &cells {
            let mask = match (&cell.mask, &cell.static_mask) {
                (Some(m), _) => Some(Mask::PerStep(m.view())),
                (None, Some(s)) => Some(Mask::Static(s.view())),
                (None, None) => None,
            };
            let map = per_pixel_mean_bias(cell.pred.view(), cell.truth.view(), mask.as_ref())?;
            report
                .maps
                .push(ReportMap::new("mean_bias", &cell.variable, cell.lead, &truth.grid, &map));
        }
    }
    Ok(report)
}

/// Scores one lead-conditioned model queried at several leads. Each
/// prediction set holds a single lead; every requested lead must be present.
pub fn evaluate_continuous(
    preds: &[PredictionSet],
    truth: &[PredictionSet],
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    if preds.len() != truth.len() {
        return Err(Error::Misaligned(format!("{} prediction sets for {} truth sets", preds.len(), truth.len())));
    }
    let mut by_lead = BTreeMap::new();
    for (p, t) in preds.iter().zip(truth) {
        let leads = p.leads();
        if leads.len() != 1 {
            return Err(Error::Misaligned(format!("expected one lead per prediction set, found {leads:?}")));
        }
        by_lead.insert(leads[0], (p, t));
    }
    let wanted: Vec<i64> = if cfg.leads.is_empty() { by_lead.keys().copied().collect() } else { cfg.leads.clone() };
    let mut report = MetricReport::new("continuous");
    for lead in wanted {
        let (p, t) = by_lead
            .get(&lead)
            .ok_or_else(|| Error::Misaligned(format!("missing predictions for lead {lead}h")))?;
        let mut sub_cfg = cfg.clone();
        sub_cfg.leads = vec![lead];
        let mut sub = evaluate_direct(p, t, &sub_cfg)?;
        let extrapolated = cfg.training_leads.is_some_and(|(lo, hi)| lead < lo || lead > hi);
        for e in &mut sub.entries {
            e.extrapolated = extrapolated;
        }
        report.merge(sub);
    }
    report.protocol = "continuous".into();
    Ok(report)
}

/// A probabilistic forecast for one variable at one lead.
#[derive(Clone, Debug)]
pub enum ProbabilisticForecast {
    Ensemble(EnsembleForecast),
    Gaussian(GaussianForecast),
}

#[derive(Clone, Debug)]
pub struct ProbabilisticConfig {
    pub variable: String,
    pub lead_hours: i64,
    pub split: String,
    pub divisor: VarianceDivisor,
    pub crps: CrpsAggregation,
    /// Tie-breaking seed for rank histograms.
    pub seed: u64,
    pub mask: Option<Array3<bool>>,
}

impl ProbabilisticConfig {
    pub fn new(variable: impl Into<String>, lead_hours: i64) -> Self {
        Self {
            variable: variable.into(),
            lead_hours,
            split: "test".into(),
            divisor: VarianceDivisor::default(),
            crps: CrpsAggregation::default(),
            seed: 0,
            mask: None,
        }
    }
}

/// Spread, spread-skill ratio and CRPS, plus rank-histogram counts for
/// ensembles. Ensemble CRPS comes from a per-pixel Gaussian moment fit.
pub fn evaluate_probabilistic(
    forecast: &ProbabilisticForecast,
    truth: ArrayView3<'_, f64>,
    grid: &Grid,
    cfg: &ProbabilisticConfig,
) -> Result<MetricReport> {
    let weights = make_lat_weights(grid)?;
    let mask = cfg.mask.as_ref().map(|m| Mask::PerStep(m.view()));
    let mask = mask.as_ref();
    let mask_id = if mask.is_some() { "custom" } else { "none" };
    let mut report = MetricReport::new("probabilistic");
    let entry = |metric: &str, score: Score| {
        ReportEntry::new(metric, &cfg.variable, cfg.lead_hours, &cfg.split, mask_id, score)
    };
    match forecast {
        ProbabilisticForecast::Ensemble(ens) => {
            report.entries.push(entry("spread", spread(ens, &weights, mask, cfg.divisor)?));
            report
                .entries
                .push(entry("spread_skill", spread_skill_ratio(ens, truth, &weights, mask, cfg.divisor)?));
            report
                .entries
                .push(entry("crps", crps_ensemble(ens, truth, &weights, mask, cfg.divisor, cfg.crps)?));
            report
                .notes
                .push("ensemble CRPS uses a per-pixel Gaussian fit of member moments (approximation)".into());
            report.rank_histograms.push(RankHistogram {
                variable: cfg.variable.clone(),
                lead_hours: cfg.lead_hours,
                split: cfg.split.clone(),
                mask_id: mask_id.into(),
                counts: rank_histogram(ens, truth, mask, cfg.seed)?,
            });
        }
        ProbabilisticForecast::Gaussian(g) => {
            report.entries.push(entry("spread", g.spread(&weights, mask)?));
            report
                .entries
                .push(entry("spread_skill", g.spread_skill_ratio(truth, &weights, mask)?));
            report.entries.push(entry("crps", crps_gaussian(g, truth, &weights, mask, cfg.crps)?));
        }
    }
    Ok(report)
}
