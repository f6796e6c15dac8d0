//! Task samples: forecasting windows with history, lead-conditioned
//! (continuous) samples, downscaling pairs and projection stacks.
//!
//! Input channels are laid out offset-major: every dynamic variable at the
//! most recent offset, then every dynamic variable at the next offset, and so
//! on, followed by the static variables. Channel names are derived from the
//! layout alone, never from the storage order of the series.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::regrid::pad_to;
use crate::store::{write_container_with_extra, year_of, FieldSeries, Level, Variable};

/// Name of the constant lead-time channel appended by [`continuous_samples`].
pub const LEAD_CHANNEL: &str = "lead_time";

/// Forecast lead time in hours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeadTime(u32);

impl LeadTime {
    pub fn hours(h: u32) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidSampling("lead time must be positive".into()));
        }
        Ok(LeadTime(h))
    }

    pub fn as_hours(&self) -> u32 {
        self.0
    }

    pub fn seconds(&self) -> i64 {
        i64::from(self.0) * 3600
    }

    /// Value of the lead-conditioning channel.
    pub fn channel_value(&self) -> f32 {
        self.0 as f32 / 100.0
    }
}

/// Channel name of `var` at a history offset in hours (`0`, `-6`, ...).
pub fn history_channel(var: &str, offset_hours: i64) -> String {
    if offset_hours == 0 {
        format!("{var}@t")
    } else {
        format!("{var}@t{offset_hours}h")
    }
}

/// Which variables, at which history offsets, make up the model input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputLayout {
    pub dynamic: Vec<String>,
    /// Offsets in hours, starting at 0 and strictly decreasing.
    pub offsets_hours: Vec<i64>,
    pub statics: Vec<String>,
}

impl InputLayout {
    pub fn new(dynamic: Vec<String>, offsets_hours: Vec<i64>, statics: Vec<String>) -> Result<Self> {
        let layout = Self {
            dynamic,
            offsets_hours,
            statics,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offsets_hours.first() != Some(&0) {
            return Err(Error::InvalidSampling("history offsets must start at 0".into()));
        }
        if self.offsets_hours.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSampling(
                "history offsets must be strictly decreasing (0, -6, -12, ...)".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for v in self.dynamic.iter().chain(&self.statics) {
            if !seen.insert(v.as_str()) {
                return Err(Error::InvalidSampling(format!("variable {v:?} listed twice")));
            }
        }
        if self.dynamic.is_empty() && self.statics.is_empty() {
            return Err(Error::InvalidSampling("input layout has no variables".into()));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.dynamic.len() * self.offsets_hours.len() + self.statics.len()
    }

    pub fn channel_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_channels());
        for &off in &self.offsets_hours {
            for v in &self.dynamic {
                names.push(history_channel(v, off));
            }
        }
        names.extend(self.statics.iter().cloned());
        names
    }

    /// Deepest history offset in hours (non-negative).
    pub fn max_history_hours(&self) -> i64 {
        -self.offsets_hours.last().copied().unwrap_or(0)
    }
}

/// Paired inputs and targets for one task configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// `N x C_in x H x W`.
    pub inputs: Array4<f32>,
    /// `N x C_out x H' x W'`.
    pub targets: Array4<f32>,
    /// Per-sample lead in hours; 0 for same-time tasks.
    pub lead_hours: Vec<i64>,
    /// Issue (anchor) time of each sample, unix seconds.
    pub times: Vec<i64>,
    pub input_channels: Vec<String>,
    pub target_channels: Vec<String>,
    pub input_grid: Grid,
    pub target_grid: Grid,
    /// Validity of target pixels, when targets were padded.
    pub target_mask: Option<Array2<bool>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time at which sample `n`'s target is valid.
    pub fn valid_time(&self, n: usize) -> i64 {
        self.times[n] + self.lead_hours[n] * 3600
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_channels.iter().position(|c| c == name)
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.target_channels.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let (tn, tc, th, tw) = self.targets.dim();
        let (_, ic, ih, iw) = self.inputs.dim();
        if tn != n || self.lead_hours.len() != n || self.times.len() != n {
            return Err(Error::DimensionMismatch("sample counts disagree".into()));
        }
        if ic != self.input_channels.len() || tc != self.target_channels.len() {
            return Err(Error::DimensionMismatch("channel names disagree with data".into()));
        }
        if (ih, iw) != self.input_grid.shape() || (th, tw) != self.target_grid.shape() {
            return Err(Error::DimensionMismatch("grids disagree with data".into()));
        }
        for names in [&self.input_channels, &self.target_channels] {
            for (i, a) in names.iter().enumerate() {
                if names[..i].contains(a) {
                    return Err(Error::InvalidSampling(format!("duplicate channel {a:?}")));
                }
            }
        }
        Ok(())
    }

    /// Writes `<prefix>.inputs.clbt` and `<prefix>.targets.clbt`. The time
    /// axis of each container is the sample index; issue times and leads are
    /// stored as the `sample_times` and `lead_hours` header keys.
    pub fn export(&self, prefix: impl AsRef<Path>, task: &str) -> Result<()> {
        self.validate()?;
        let prefix = prefix.as_ref();
        let mut extra = BTreeMap::new();
        extra.insert("task".to_string(), Value::from(task));
        extra.insert("sample_times".to_string(), Value::from(self.times.clone()));
        extra.insert("lead_hours".to_string(), Value::from(self.lead_hours.clone()));
        let as_vars = |names: &[String]| {
            names
                .iter()
                .map(|n| Variable::dynamic(n.clone(), "", Level::surface()))
                .collect::<Vec<_>>()
        };
        let inputs = FieldSeries::new(
            self.input_grid.clone(),
            as_vars(&self.input_channels),
            0,
            1,
            self.inputs.clone(),
        )?;
        let targets = FieldSeries::new(
            self.target_grid.clone(),
            as_vars(&self.target_channels),
            0,
            1,
            self.targets.clone(),
        )?;
        let with_suffix = |s: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(s);
            std::path::PathBuf::from(p)
        };
        write_container_with_extra(&inputs, &extra, with_suffix(".inputs.clbt"))?;
        write_container_with_extra(&targets, &extra, with_suffix(".targets.clbt"))
    }
}

/// Configuration shared by the forecasting samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastConfig {
    pub layout: InputLayout,
    pub out_vars: Vec<String>,
    /// Timestamps samples may use; defaults to the whole series.
    pub window: Option<Range<usize>>,
    /// Allow history to reach before `window.start`.
    pub cross_boundary_context: bool,
}

impl ForecastConfig {
    pub fn new(layout: InputLayout, out_vars: Vec<String>) -> Self {
        Self {
            layout,
            out_vars,
            window: None,
            cross_boundary_context: false,
        }
    }
}

fn steps_for(hours: i64, step_seconds: i64, what: &str) -> Result<usize> {
    let secs = hours * 3600;
    if secs % step_seconds != 0 {
        return Err(Error::InvalidSampling(format!(
            "{what} of {hours}h is not a multiple of the {step_seconds}s series step"
        )));
    }
    Ok((secs / step_seconds).unsigned_abs() as usize)
}

struct Resolved {
    dynamic: Vec<usize>,
    statics: Vec<usize>,
    out: Vec<usize>,
    offset_steps: Vec<usize>,
    window: Range<usize>,
}

fn resolve(series: &FieldSeries, cfg: &ForecastConfig) -> Result<Resolved> {
    cfg.layout.validate()?;
    if cfg.out_vars.is_empty() {
        return Err(Error::InvalidSampling("no output variables".into()));
    }
    let idx = |names: &[String]| names.iter().map(|n| series.require_var(n)).collect::<Result<Vec<_>>>();
    let offset_steps = cfg
        .layout
        .offsets_hours
        .iter()
        .map(|&o| steps_for(o, series.time_step(), "history offset"))
        .collect::<Result<Vec<_>>>()?;
    let window = cfg.window.clone().unwrap_or(0..series.len());
    if window.end > series.len() || window.is_empty() {
        return Err(Error::InvalidSampling(format!(
            "window {window:?} invalid for series of length {}",
            series.len()
        )));
    }
    Ok(Resolved {
        dynamic: idx(&cfg.layout.dynamic)?,
        statics: idx(&cfg.layout.statics)?,
        out: idx(&cfg.out_vars)?,
        offset_steps,
        window,
    })
}

impl Resolved {
    /// Anchors whose history and target (at `max_lead_steps`) stay in bounds.
    fn anchors(&self, cross_boundary: bool, max_lead_steps: usize) -> Range<usize> {
        let back = self.offset_steps.last().copied().unwrap_or(0);
        let floor = if cross_boundary { 0 } else { self.window.start };
        let first = self.window.start.max(floor + back);
        let end = self.window.end.saturating_sub(max_lead_steps);
        first..end.max(first)
    }

    fn fill(&self, series: &FieldSeries, anchor: usize, lead_steps: usize, input: &mut ndarray::ArrayViewMut3<f32>, target: &mut ndarray::ArrayViewMut3<f32>) {
        let data = series.data();
        let mut c = 0;
        for &off in &self.offset_steps {
            for &v in &self.dynamic {
                input.slice_mut(s![c, .., ..]).assign(&data.slice(s![anchor - off, v, .., ..]));
                c += 1;
            }
        }
        for &v in &self.statics {
            input.slice_mut(s![c, .., ..]).assign(&data.slice(s![anchor, v, .., ..]));
            c += 1;
        }
        for (k, &v) in self.out.iter().enumerate() {
            target
                .slice_mut(s![k, .., ..])
                .assign(&data.slice(s![anchor + lead_steps, v, .., ..]));
        }
    }
}

fn build(
    series: &FieldSeries,
    cfg: &ForecastConfig,
    res: &Resolved,
    anchors: Range<usize>,
    lead_steps: impl Fn(usize) -> (usize, i64),
    lead_channel: bool,
) -> Result<SampleSet> {
    let n = anchors.len();
    if n == 0 {
        return Err(Error::EmptySampleSet(format!(
            "series of length {} with window {:?} leaves no complete sample",
            series.len(),
            res.window
        )));
    }
    let (h, w) = series.grid().shape();
    let c_in = cfg.layout.n_channels() + usize::from(lead_channel);
    let mut inputs = Array4::<f32>::zeros((n, c_in, h, w));
    let mut targets = Array4::<f32>::zeros((n, cfg.out_vars.len(), h, w));
    let mut lead_hours = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for (k, anchor) in anchors.enumerate() {
        let (steps, hours) = lead_steps(k);
        let mut inp = inputs.index_axis_mut(Axis(0), k);
        let mut tgt = targets.index_axis_mut(Axis(0), k);
        res.fill(series, anchor, steps, &mut inp, &mut tgt);
        if lead_channel {
            inp.index_axis_mut(Axis(0), c_in - 1).fill(hours as f32 / 100.0);
        }
        lead_hours.push(hours);
        times.push(series.time_at(anchor));
    }
    let mut input_channels = cfg.layout.channel_names();
    if lead_channel {
        input_channels.push(LEAD_CHANNEL.to_string());
    }
    let set = SampleSet {
        inputs,
        targets,
        lead_hours,
        times,
        input_channels,
        target_channels: cfg.out_vars.clone(),
        input_grid: series.grid().clone(),
        target_grid: series.grid().clone(),
        target_mask: None,
    };
    set.validate()?;
    Ok(set)
}

/// Forecasting samples at a fixed lead. Samples whose history or target
/// would leave the window are dropped.
pub fn forecasting_samples(series: &FieldSeries, cfg: &ForecastConfig, lead: LeadTime) -> Result<SampleSet> {
    let res = resolve(series, cfg)?;
    let lead_steps = steps_for(i64::from(lead.as_hours()), series.time_step(), "lead")?;
    let anchors = res.anchors(cfg.cross_boundary_context, lead_steps);
    build(series, cfg, &res, anchors, |_| (lead_steps, i64::from(lead.as_hours())), false)
}

/// How a continuous sampler picks each sample's lead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeadMode {
    /// Evaluation: one lead for every sample.
    Fixed(LeadTime),
    /// Training: a lead drawn uniformly from the step multiples in `[lo, hi]` hours.
    Uniform { lo_hours: u32, hi_hours: u32, seed: u64 },
}

/// Lead-conditioned samples with a trailing constant channel of `lead / 100`.
pub fn continuous_samples(series: &FieldSeries, cfg: &ForecastConfig, mode: LeadMode) -> Result<SampleSet> {
    let res = resolve(series, cfg)?;
    match mode {
        LeadMode::Fixed(lead) => {
            let steps = steps_for(i64::from(lead.as_hours()), series.time_step(), "lead")?;
            let anchors = res.anchors(cfg.cross_boundary_context, steps);
            build(series, cfg, &res, anchors, |_| (steps, i64::from(lead.as_hours())), true)
        }
        LeadMode::Uniform { lo_hours, hi_hours, seed } => {
            let step_h = series.time_step() as f64 / 3600.0;
            if f64::from(lo_hours) < step_h || hi_hours < lo_hours {
                return Err(Error::InvalidSampling(format!(
                    "lead range [{lo_hours}, {hi_hours}]h must satisfy base step {step_h}h <= lo <= hi"
                )));
            }
            let choices: Vec<usize> = (1..)
                .map(|k| k as i64 * series.time_step())
                .take_while(|&s| s <= i64::from(hi_hours) * 3600)
                .filter(|&s| s >= i64::from(lo_hours) * 3600)
                .map(|s| (s / series.time_step()) as usize)
                .collect();
            if choices.is_empty() {
                return Err(Error::InvalidSampling(format!(
                    "no multiple of the base step lies in [{lo_hours}, {hi_hours}]h"
                )));
            }
            let max_steps = *choices.last().unwrap();
            let anchors = res.anchors(cfg.cross_boundary_context, max_steps);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<usize> = anchors
                .clone()
                .map(|_| choices[rng.random_range(0..choices.len())])
                .collect();
            let step = series.time_step();
            build(series, cfg, &res, anchors, |k| (draws[k], draws[k] as i64 * step / 3600), true)
        }
    }
}

/// Zero-padding of downscaling targets onto a fixed canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadSpec {
    pub height: usize,
    pub width: usize,
    pub anchor: (usize, usize),
}

/// Pairs low- and high-resolution fields valid at the same timestamp.
pub fn downscaling_pairs(
    low: &FieldSeries,
    high: &FieldSeries,
    in_vars: &[String],
    out_vars: &[String],
    pad: Option<PadSpec>,
) -> Result<SampleSet> {
    let (h, w) = low.grid().shape();
    let (hh, hw) = high.grid().shape();
    if pad.is_none() && (hh < h || hw < w) {
        return Err(Error::InvalidSampling(format!(
            "target grid {hh}x{hw} is coarser than input {h}x{w} and no padding declared"
        )));
    }
    let ins = in_vars.iter().map(|v| low.require_var(v)).collect::<Result<Vec<_>>>()?;
    let outs = out_vars.iter().map(|v| high.require_var(v)).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..low.len())
        .filter_map(|t| high.index_of_time(low.time_at(t)).map(|u| (t, u)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptySampleSet("low and high series share no timestamps".into()));
    }
    let (th, tw, target_grid) = match pad {
        Some(p) => (p.height, p.width, padded_grid(high.grid(), p)?),
        None => (hh, hw, high.grid().clone()),
    };
    let n = pairs.len();
    let mut inputs = Array4::<f32>::zeros((n, ins.len(), h, w));
    let mut targets = Array4::<f32>::zeros((n, outs.len(), th, tw));
    let mut target_mask = None;
    for (k, &(t, u)) in pairs.iter().enumerate() {
        for (c, &v) in ins.iter().enumerate() {
            inputs.slice_mut(s![k, c, .., ..]).assign(&low.data().slice(s![t, v, .., ..]));
        }
        for (c, &v) in outs.iter().enumerate() {
            let field = high.data().slice(s![u, v, .., ..]);
            match pad {
                Some(p) => {
                    let (canvas, mask) = pad_to(field, p.height, p.width, 0.0, p.anchor)?;
                    targets.slice_mut(s![k, c, .., ..]).assign(&canvas);
                    target_mask.get_or_insert(mask);
                }
                None => targets.slice_mut(s![k, c, .., ..]).assign(&field),
            }
        }
    }
    let set = SampleSet {
        inputs,
        targets,
        lead_hours: vec![0; n],
        times: pairs.iter().map(|&(t, _)| low.time_at(t)).collect(),
        input_channels: in_vars.to_vec(),
        target_channels: out_vars.to_vec(),
        input_grid: low.grid().clone(),
        target_grid,
        target_mask,
    };
    set.validate()?;
    Ok(set)
}

/// Grid of a padded canvas. Valid rows and columns keep their coordinates;
/// padding columns continue the longitude spacing, padding rows are spread
/// evenly towards the pole so latitudes stay monotonic and in range.
fn padded_grid(grid: &Grid, p: PadSpec) -> Result<Grid> {
    let (h, w) = grid.shape();
    let (r0, c0) = p.anchor;
    if r0 + h > p.height || c0 + w > p.width {
        return Err(Error::InvalidSampling(format!(
            "{h}x{w} field at {:?} does not fit a {}x{} canvas",
            p.anchor, p.height, p.width
        )));
    }
    let src = grid.lats();
    let ascending = h < 2 || src[1] > src[0];
    let (low_pole, high_pole) = if ascending { (-90.0, 90.0) } else { (90.0, -90.0) };
    let before = r0;
    let after = p.height - r0 - h;
    let mut lats = Vec::with_capacity(p.height);
    for k in 0..before {
        lats.push(low_pole + (src[0] - low_pole) * (k + 1) as f64 / (before + 1) as f64);
    }
    lats.extend_from_slice(src);
    let last = src[h - 1];
    for k in 0..after {
        lats.push(last + (high_pole - last) * (k + 1) as f64 / (after + 1) as f64);
    }
    let lon = grid.lons();
    let step = if w > 1 { lon[1] - lon[0] } else { 1.0 };
    let lons = (0..p.width)
        .map(|k| {
            if (c0..c0 + w).contains(&k) {
                lon[k - c0]
            } else {
                lon[0] + (k as f64 - c0 as f64) * step
            }
        })
        .collect();
    Grid::new(lats, lons, false)
}

/// Projection samples: `window_years` consecutive years of every forcing,
/// stacked year-offset major (oldest first), predicting the final year's
/// targets.
pub fn projection_samples(forcings: &FieldSeries, targets: &FieldSeries, window_years: usize) -> Result<SampleSet> {
    if window_years == 0 {
        return Err(Error::InvalidSampling("window must cover at least one year".into()));
    }
    let by_year: HashMap<i32, usize> = (0..forcings.len())
        .map(|t| (year_of(forcings.time_at(t)), t))
        .collect();
    let span = window_years as i32 - 1;
    let picks: Vec<(usize, Vec<usize>)> = (0..targets.len())
        .filter_map(|u| {
            let y = year_of(targets.time_at(u));
            (y - span..=y)
                .map(|yy| by_year.get(&yy).copied())
                .collect::<Option<Vec<_>>>()
                .map(|idx| (u, idx))
        })
        .collect();
    if picks.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "no target year has {window_years} years of forcing history"
        )));
    }
    let (h, w) = forcings.grid().shape();
    let (th, tw) = targets.grid().shape();
    let nf = forcings.n_channels();
    let nt = targets.n_channels();
    let n = picks.len();
    let mut inputs = Array4::<f32>::zeros((n, nf * window_years, h, w));
    let mut out = Array4::<f32>::zeros((n, nt, th, tw));
    for (k, (u, years)) in picks.iter().enumerate() {
        for (yo, &t) in years.iter().enumerate() {
            inputs
                .slice_mut(s![k, yo * nf..(yo + 1) * nf, .., ..])
                .assign(&forcings.data().slice(s![t, .., .., ..]));
        }
        out.slice_mut(s![k, .., .., ..]).assign(&targets.data().slice(s![*u, .., .., ..]));
    }
    let mut input_channels = Vec::with_capacity(nf * window_years);
    for yo in 0..window_years {
        let off = yo as i64 - span as i64;
        for v in forcings.variables() {
            input_channels.push(if off == 0 { format!("{}@y", v.name) } else { format!("{}@y{off}", v.name) });
        }
    }
    let set = SampleSet {
        inputs,
        targets: out,
        lead_hours: vec![0; n],
        times: picks.iter().map(|(u, _)| targets.time_at(*u)).collect(),
        input_channels,
        target_channels: targets.variables().iter().map(|v| v.name.clone()).collect(),
        input_grid: forcings.grid().clone(),
        target_grid: targets.grid().clone(),
        target_mask: None,
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Level;
    use chrono::{TimeZone, Utc};
    use rand::seq::SliceRandom;

    fn series(t: usize, dynamic: &[&str], statics: &[&str], step: i64, seed: u64) -> FieldSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::from_resolution(45.0).unwrap();
        let mut vars: Vec<Variable> = dynamic
            .iter()
            .map(|n| Variable::dynamic(*n, "", Level::surface()))
            .collect();
        vars.extend(statics.iter().map(|n| Variable::constant(*n, "")));
        let nd = dynamic.len();
        let c = vars.len();
        let fixed: Vec<f32> = (0..c * 32).map(|_| rng.random()).collect();
        let data = Array4::from_shape_fn((t, c, 4, 8), |(ti, ci, i, j)| {
            if ci >= nd {
                fixed[ci * 32 + i * 8 + j]
            } else {
                (ti * 1000 + ci * 100) as f32 + (i * 8 + j) as f32 * 0.5
            }
        });
        FieldSeries::new(grid, vars, 0, step, data).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn forty_six_variables_three_offsets_three_statics() {
        let dynamic: Vec<String> = (0..46).map(|k| format!("v{k}")).collect();
        let layout = InputLayout::new(dynamic, vec![0, -6, -12], names(&["lsm", "orography", "lat"])).unwrap();
        assert_eq!(layout.n_channels(), 141);
        assert_eq!(layout.channel_names().len(), 141);
    }

    #[test]
    fn three_step_series_gives_two_samples() {
        let s = series(3, &["x"], &[], 6 * 3600, 0);
        let cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0], vec![]).unwrap(), names(&["x"]));
        let set = forecasting_samples(&s, &cfg, LeadTime::hours(6).unwrap()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.targets.slice(s![0, 0, .., ..]), s.data().slice(s![1, 0, .., ..]));
        assert_eq!(set.inputs.slice(s![1, 0, .., ..]), s.data().slice(s![1, 0, .., ..]));
        assert_eq!(set.valid_time(1), 2 * 6 * 3600);
    }

    #[test]
    fn brute_force_enumeration_matches() {
        let step = 6 * 3600;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.random_range(5..20);
            let s = series(t, &["a", "b", "c"], &["m"], step, seed);
            let depth = rng.random_range(0..3);
            let offsets: Vec<i64> = (0..=depth).map(|k| -6 * k).collect();
            let lead = 6 * rng.random_range(1..4) as u32;
            let mut dyn_vars = names(&["a", "b", "c"]);
            dyn_vars.shuffle(&mut rng);
            dyn_vars.truncate(rng.random_range(1..4));
            let cfg = ForecastConfig::new(
                InputLayout::new(dyn_vars.clone(), offsets.clone(), names(&["m"])).unwrap(),
                names(&["b"]),
            );
            let got = forecasting_samples(&s, &cfg, LeadTime::hours(lead).unwrap());

            // naive enumeration
            let mut expected = Vec::new();
            for anchor in 0..t as i64 {
                let target = anchor + i64::from(lead) / 6;
                let oldest = anchor + offsets.last().unwrap() / 6;
                if oldest < 0 || target >= t as i64 {
                    continue;
                }
                let mut chans = Vec::new();
                for &o in &offsets {
                    for v in &dyn_vars {
                        let c = s.var_index(v).unwrap();
                        chans.push(s.data().slice(s![(anchor + o / 6) as usize, c, .., ..]).to_owned());
                    }
                }
                chans.push(s.data().slice(s![anchor as usize, 3, .., ..]).to_owned());
                expected.push((anchor, chans));
            }
            match got {
                Ok(set) => {
                    assert_eq!(set.len(), expected.len());
                    for (k, (anchor, chans)) in expected.iter().enumerate() {
                        assert_eq!(set.times[k], s.time_at(*anchor as usize));
                        for (c, ch) in chans.iter().enumerate() {
                            assert_eq!(set.inputs.slice(s![k, c, .., ..]), ch.view());
                        }
                    }
                }
                Err(Error::EmptySampleSet(_)) => assert!(expected.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn missing_output_variable() {
        let s = series(4, &["x"], &[], 3600, 0);
        let cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0], vec![]).unwrap(), names(&["y"]));
        assert!(matches!(
            forecasting_samples(&s, &cfg, LeadTime::hours(1).unwrap()),
            Err(Error::ChannelMismatch(_))
        ));
    }

    #[test]
    fn channel_order_independent_of_storage_order() {
        let s = series(6, &["a", "b"], &["m"], 3600, 1);
        let swapped = s.select_vars(&names(&["m", "b", "a"])).unwrap();
        let cfg = ForecastConfig::new(
            InputLayout::new(names(&["a", "b"]), vec![0, -1], names(&["m"])).unwrap(),
            names(&["a"]),
        );
        let lead = LeadTime::hours(2).unwrap();
        assert_eq!(forecasting_samples(&s, &cfg, lead).unwrap(), forecasting_samples(&swapped, &cfg, lead).unwrap());
    }

    #[test]
    fn window_isolates_split_unless_cross_boundary() {
        let s = series(20, &["x"], &[], 3600, 2);
        let mut cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0, -2], vec![]).unwrap(), names(&["x"]));
        cfg.window = Some(10..20);
        let set = forecasting_samples(&s, &cfg, LeadTime::hours(3).unwrap()).unwrap();
        assert_eq!(set.times.first(), Some(&s.time_at(12)));
        for n in 0..set.len() {
            let anchor = set.times[n] / 3600;
            assert!(anchor - 2 >= 10 && anchor + 3 < 20);
        }
        cfg.cross_boundary_context = true;
        let set = forecasting_samples(&s, &cfg, LeadTime::hours(3).unwrap()).unwrap();
        assert_eq!(set.times.first(), Some(&s.time_at(10)));
        assert_eq!(set.len(), 7);
    }

    #[test]
    fn lead_channel_values() {
        let s = series(40, &["x"], &[], 6 * 3600, 3);
        let cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0], vec![]).unwrap(), names(&["x"]));
        for (h, v) in [(72, 0.72f32), (6, 0.06)] {
            let set = continuous_samples(&s, &cfg, LeadMode::Fixed(LeadTime::hours(h).unwrap())).unwrap();
            assert_eq!(set.input_channels.last().unwrap(), LEAD_CHANNEL);
            let last = set.inputs.index_axis(Axis(1), set.input_channels.len() - 1);
            assert!(last.iter().all(|&x| x == v));
        }
    }

    #[test]
    fn degenerate_range_equals_fixed_lead_plus_channel() {
        let s = series(30, &["x", "y"], &["m"], 6 * 3600, 4);
        let cfg = ForecastConfig::new(
            InputLayout::new(names(&["x", "y"]), vec![0, -6], names(&["m"])).unwrap(),
            names(&["y"]),
        );
        let lead = LeadTime::hours(12).unwrap();
        let fixed = forecasting_samples(&s, &cfg, lead).unwrap();
        let cont = continuous_samples(&s, &cfg, LeadMode::Uniform { lo_hours: 12, hi_hours: 12, seed: 9 }).unwrap();
        let c = fixed.input_channels.len();
        assert_eq!(cont.inputs.slice(s![.., ..c, .., ..]), fixed.inputs);
        assert!(cont.inputs.slice(s![.., c, .., ..]).iter().all(|&v| v == 0.12));
        assert_eq!(cont.targets, fixed.targets);
        assert_eq!(cont.lead_hours, fixed.lead_hours);
    }

    #[test]
    fn empty_lead_range_rejected() {
        let s = series(30, &["x"], &[], 6 * 3600, 5);
        let cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0], vec![]).unwrap(), names(&["x"]));
        for (lo, hi) in [(3, 120), (24, 12), (7, 11)] {
            assert!(continuous_samples(&s, &cfg, LeadMode::Uniform { lo_hours: lo, hi_hours: hi, seed: 0 }).is_err());
        }
    }

    #[test]
    fn downscaling_identity_and_intersection() {
        let s = series(10, &["x"], &[], 3600, 6);
        let set = downscaling_pairs(&s, &s, &names(&["x"]), &names(&["x"]), None).unwrap();
        assert_eq!(set.inputs, set.targets);

        let shifted = s.slice_time(4..10).unwrap();
        let set = downscaling_pairs(&s, &shifted, &names(&["x"]), &names(&["x"]), None).unwrap();
        let expected: Vec<i64> = s.times().into_iter().filter(|t| shifted.times().contains(t)).collect();
        assert_eq!(set.times, expected);

        let late = FieldSeries::new(s.grid().clone(), s.variables().to_vec(), 10 * 3600, 3600, s.data().clone()).unwrap();
        assert!(matches!(
            downscaling_pairs(&s, &late, &names(&["x"]), &names(&["x"]), None),
            Err(Error::EmptySampleSet(_))
        ));
    }

    #[test]
    fn downscaling_with_padding() {
        let grid = Grid::from_resolution(2.8125).unwrap();
        let conus = crate::grid::subgrid_indices(&grid, &crate::grid::RegionBox::CONUS).unwrap();
        let low_grid = grid.select(&conus).unwrap();
        let data = Array4::from_elem((3, 1, 9, 21), 1.0f32);
        let low = FieldSeries::new(low_grid.clone(), vec![Variable::dynamic("tmax", "K", Level::surface())], 0, 86400, data.clone()).unwrap();
        let pad = PadSpec { height: 32, width: 64, anchor: (0, 0) };
        let set = downscaling_pairs(&low, &low, &names(&["tmax"]), &names(&["tmax"]), Some(pad)).unwrap();
        assert_eq!(set.inputs.dim(), (3, 1, 9, 21));
        assert_eq!(set.targets.dim(), (3, 1, 32, 64));
        assert_eq!(set.target_mask.as_ref().unwrap().iter().filter(|&&m| m).count(), 189);
        assert_eq!(set.targets.iter().filter(|&&v| v == 0.0).count(), 3 * (2048 - 189));
    }

    #[test]
    fn projection_stacks_ten_years() {
        let grid = Grid::from_resolution(45.0).unwrap();
        let years = 15;
        let times: Vec<i64> = (0..years).map(|y| Utc.with_ymd_and_hms(2000 + y, 7, 1, 0, 0, 0).unwrap().timestamp()).collect();
        // annual step is nominal; year lookup only uses calendar years
        let step = 365 * 86400;
        let forcing_vars: Vec<Variable> = ["co2", "ch4", "so2", "bc"].iter().map(|n| Variable::dynamic(*n, "", Level::surface())).collect();
        let forcings = FieldSeries::new(
            grid.clone(),
            forcing_vars,
            times[0],
            step,
            Array4::from_shape_fn((years as usize, 4, 4, 8), |(t, c, _, _)| (t * 10 + c) as f32),
        )
        .unwrap();
        let target_vars: Vec<Variable> = ["tas", "dtr", "pr", "pr90"].iter().map(|n| Variable::dynamic(*n, "", Level::surface())).collect();
        let targets = FieldSeries::new(grid, target_vars, times[0], step, Array4::from_shape_fn((years as usize, 4, 4, 8), |(t, c, _, _)| (t * 100 + c) as f32)).unwrap();
        let set = projection_samples(&forcings, &targets, 10).unwrap();
        assert_eq!(set.input_channels.len(), 40);
        assert_eq!(set.len(), years as usize - 9);
        assert_eq!(year_of(set.times[0]), 2009);
        assert_eq!(set.input_channels[0], "co2@y-9");
        assert_eq!(set.input_channels[39], "bc@y");
        // year-offset major: channel 5 = ch4 at y-8
        assert_eq!(set.inputs[[0, 5, 0, 0]], 11.0);
        assert_eq!(set.targets[[0, 2, 0, 0]], 902.0);
        let short = forcings.slice_time(0..5).unwrap();
        assert!(matches!(projection_samples(&short, &targets, 10), Err(Error::InsufficientHistory(_))));
    }

    #[test]
    fn uniform_lead_draws_are_uniform() {
        let s = series(200, &["x"], &[], 6 * 3600, 7);
        let cfg = ForecastConfig::new(InputLayout::new(names(&["x"]), vec![0], vec![]).unwrap(), names(&["x"]));
        let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
        let mut total = 0u64;
        let mut seed = 0;
        while total < 100_000 {
            let set = continuous_samples(&s, &cfg, LeadMode::Uniform { lo_hours: 6, hi_hours: 120, seed }).unwrap();
            for &h in &set.lead_hours {
                *counts.entry(h).or_default() += 1;
            }
            total += set.len() as u64;
            seed += 1;
        }
        assert_eq!(counts.len(), 20);
        assert_eq!(counts.keys().copied().collect::<Vec<_>>(), (1..=20).map(|k| 6 * k).collect::<Vec<i64>>());
        let expected = total as f64 / 20.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 19 dof, 0.999 quantile
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }
}
