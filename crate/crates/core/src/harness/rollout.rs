//! Iterative forecasting with a short-lead step model.

use std::collections::VecDeque;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

use super::PredictionSet;
use crate::baselines::{linreg_predict, LinearModel};
use crate::error::{Error, Result};
use crate::sampler::{InputLayout, SampleSet};
use crate::store::FieldSeries;

/// A model advancing the state by one base step.
pub trait StepModel: Sync {
    /// Input channel names, in the order `step` expects them.
    fn input_channels(&self) -> Vec<String>;
    /// Output variable names, in the order `step` returns them.
    fn output_variables(&self) -> Vec<String>;
    /// `C_in x H x W` to `C_out x H x W`.
    fn step(&self, inputs: ArrayView3<'_, f32>) -> Result<Array3<f32>>;
}

/// Persistence: every dynamic variable keeps its offset-0 value.
#[derive(Clone, Debug)]
pub struct PersistenceStep {
    layout: InputLayout,
}

impl PersistenceStep {
    pub fn new(layout: InputLayout) -> Self {
        Self { layout }
    }
}

impl StepModel for PersistenceStep {
    fn input_channels(&self) -> Vec<String> {
        self.layout.channel_names()
    }

    fn output_variables(&self) -> Vec<String> {
        self.layout.dynamic.clone()
    }

    fn step(&self, inputs: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        Ok(inputs.slice(s![..self.layout.dynamic.len(), .., ..]).to_owned())
    }
}

/// A fitted linear regression used as a step model.
#[derive(Clone, Debug)]
pub struct LinearStepModel(pub LinearModel);

impl StepModel for LinearStepModel {
    fn input_channels(&self) -> Vec<String> {
        self.0.input_channels.clone()
    }

    fn output_variables(&self) -> Vec<String> {
        self.0.target_channels.clone()
    }

    fn step(&self, inputs: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        let batch = inputs.insert_axis(Axis(0));
        Ok(linreg_predict(&self.0, batch)?.index_axis_move(Axis(0), 0))
    }
}

/// Dynamic channels read from stored truth instead of being predicted.
#[derive(Clone, Copy, Debug)]
pub struct ForcingPolicy<'a> {
    pub channels: &'a [String],
    pub truth: &'a FieldSeries,
}

impl ForcingPolicy<'_> {
    fn value(&self, var: &str, time: i64) -> Result<ndarray::ArrayView2<'_, f32>> {
        let t = self
            .truth
            .index_of_time(time)
            .ok_or_else(|| Error::Misaligned(format!("no stored forcing {var:?} at time {time}")))?;
        let c = self.truth.require_var(var)?;
        Ok(self.truth.data().slice(s![t, c, .., ..]))
    }
}

/// States at every multiple of the base step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub variables: Vec<String>,
    pub lead_hours: Vec<i64>,
    /// `n_steps x C x H x W`, channels in `variables` order.
    pub states: Array4<f32>,
}

impl Trajectory {
    pub fn at_lead(&self, lead: i64) -> Option<ArrayView3<'_, f32>> {
        self.lead_hours
            .iter()
            .position(|&l| l == lead)
            .map(|k| self.states.index_axis(Axis(0), k))
    }
}

/// Checks the model against the layout and returns, for each dynamic
/// variable, its position among the model outputs (`None` for forcings).
fn plan(model: &dyn StepModel, layout: &InputLayout, base_hours: i64, forcing: &[String]) -> Result<Vec<Option<usize>>> {
    layout.validate()?;
    if base_hours <= 0 {
        return Err(Error::InvalidArgument("base step must be positive".into()));
    }
    for (k, &o) in layout.offsets_hours.iter().enumerate() {
        if o != -(k as i64) * base_hours {
            return Err(Error::RolloutIncompatible(format!(
                "history offsets {:?} are not consecutive multiples of the {base_hours}h base step",
                layout.offsets_hours
            )));
        }
    }
    if model.input_channels() != layout.channel_names() {
        return Err(Error::RolloutIncompatible("model inputs differ from the rollout input layout".into()));
    }
    if let Some(f) = forcing.iter().find(|f| !layout.dynamic.contains(f)) {
        return Err(Error::RolloutIncompatible(format!("forcing channel {f:?} is not a dynamic input")));
    }
    let outputs = model.output_variables();
    let mut required: Vec<&String> = layout.dynamic.iter().filter(|v| !forcing.contains(v)).collect();
    let mut produced: Vec<&String> = outputs.iter().collect();
    required.sort();
    produced.sort();
    if required != produced {
        return Err(Error::RolloutIncompatible(format!(
            "model outputs {produced:?} but the rollout needs {required:?}"
        )));
    }
    Ok(layout
        .dynamic
        .iter()
        .map(|v| outputs.iter().position(|o| o == v))
        .collect())
}

/// Rolls `model` forward `n_steps` times from `init` (one sample, channels in
/// layout order). Static channels are re-attached from `init` every step and
/// history offsets consume earlier rollout states. `init_time` locates
/// forcing channels in stored truth.
pub fn rollout(
    model: &dyn StepModel,
    layout: &InputLayout,
    base_hours: i64,
    init: ArrayView3<'_, f32>,
    init_time: i64,
    forcing: Option<ForcingPolicy<'_>>,
    n_steps: usize,
) -> Result<Trajectory> {
    let forced: &[String] = forcing.as_ref().map_or(&[], |f| f.channels);
    let sources = plan(model, layout, base_hours, forced)?;
    let (c_in, h, w) = init.dim();
    if c_in != layout.n_channels() {
        return Err(Error::ShapeMismatch(format!("{c_in} input channels, layout has {}", layout.n_channels())));
    }
    let d = layout.dynamic.len();
    let mut history: VecDeque<Array3<f32>> = (0..layout.offsets_hours.len())
        .map(|k| init.slice(s![k * d..(k + 1) * d, .., ..]).to_owned())
        .collect();
    let statics = init.slice(s![layout.offsets_hours.len() * d.., .., ..]);
    let mut states = Array4::<f32>::zeros((n_steps, d, h, w));
    let mut input = init.to_owned();
    for k in 0..n_steps {
        let out = model.step(input.view())?;
        if out.dim() != (sources.iter().flatten().count(), h, w) {
            return Err(Error::ShapeMismatch(format!("step output {:?}", out.dim())));
        }
        let time = init_time + (k as i64 + 1) * base_hours * 3600;
        let mut next = Array3::<f32>::zeros((d, h, w));
        for (v, src) in sources.iter().enumerate() {
            match (src, &forcing) {
                (Some(o), _) => next.index_axis_mut(Axis(0), v).assign(&out.index_axis(Axis(0), *o)),
                (None, Some(f)) => next.index_axis_mut(Axis(0), v).assign(&f.value(&layout.dynamic[v], time)?),
                (None, None) => unreachable!("every dynamic variable is produced or forced"),
            }
        }
        states.index_axis_mut(Axis(0), k).assign(&next);
        history.pop_back();
        history.push_front(next);
        for (j, state) in history.iter().enumerate() {
            input.slice_mut(s![j * d..(j + 1) * d, .., ..]).assign(state);
        }
        input.slice_mut(s![history.len() * d.., .., ..]).assign(&statics);
    }
    Ok(Trajectory {
        variables: layout.dynamic.clone(),
        lead_hours: (1..=n_steps as i64).map(|k| k * base_hours).collect(),
        states,
    })
}

/// Rolls every sample of `samples` (built at `lead_hours`) out to its lead
/// and returns the target variables as an aligned prediction set.
pub fn rollout_predictions(
    model: &dyn StepModel,
    layout: &InputLayout,
    base_hours: i64,
    samples: &SampleSet,
    forcing: Option<ForcingPolicy<'_>>,
    lead_hours: i64,
) -> Result<PredictionSet> {
    if lead_hours % base_hours != 0 || lead_hours <= 0 {
        return Err(Error::RolloutIncompatible(format!(
            "lead {lead_hours}h is not a positive multiple of the {base_hours}h base step"
        )));
    }
    if samples.lead_hours.iter().any(|&l| l != lead_hours) {
        return Err(Error::Misaligned(format!("sample set is not built at lead {lead_hours}h")));
    }
    if samples.input_channels != layout.channel_names() {
        return Err(Error::RolloutIncompatible("sample inputs do not follow the rollout layout".into()));
    }
    let steps = (lead_hours / base_hours) as usize;
    let targets: Vec<usize> = samples
        .target_channels
        .iter()
        .map(|v| {
            layout
                .dynamic
                .iter()
                .position(|d| d == v)
                .ok_or_else(|| Error::RolloutIncompatible(format!("target {v:?} is not a rolled-out variable")))
        })
        .collect::<Result<_>>()?;
    let finals: Vec<Array3<f32>> = (0..samples.len())
        .into_par_iter()
        .map(|n| {
            let traj = rollout(
                model,
                layout,
                base_hours,
                samples.inputs.index_axis(Axis(0), n),
                samples.times[n],
                forcing,
                steps,
            )?;
            Ok(traj.states.index_axis(Axis(0), steps - 1).select(Axis(0), &targets))
        })
        .collect::<Result<_>>()?;
    let (h, w) = samples.target_grid.shape();
    let mut data = Array4::<f32>::zeros((samples.len(), targets.len(), h, w));
    for (n, f) in finals.iter().enumerate() {
        data.index_axis_mut(Axis(0), n).assign(f);
    }
    PredictionSet::for_samples(samples, data, "rollout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::persistence_forecast;
    use crate::grid::Grid;
    use crate::sampler::{forecasting_samples, ForecastConfig, LeadTime};
    use crate::store::{Level, Variable};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `x_{t+1} = A x_t` per pixel over the offset-0 channels.
    struct MatrixStep {
        layout: InputLayout,
        a: DMatrix<f64>,
    }

    impl StepModel for MatrixStep {
        fn input_channels(&self) -> Vec<String> {
            self.layout.channel_names()
        }
        fn output_variables(&self) -> Vec<String> {
            self.layout.dynamic.clone()
        }
        fn step(&self, inputs: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
            let d = self.layout.dynamic.len();
            let (_, h, w) = inputs.dim();
            Ok(Array3::from_shape_fn((d, h, w), |(o, i, j)| {
                (0..d).map(|c| self.a[(o, c)] * f64::from(inputs[[c, i, j]])).sum::<f64>() as f32
            }))
        }
    }

    fn layout(offsets: Vec<i64>) -> InputLayout {
        InputLayout::new(vec!["u".into(), "v".into(), "w".into()], offsets, vec!["lsm".into()]).unwrap()
    }

    fn series(t: usize, seed: u64) -> FieldSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars = vec![
            Variable::dynamic("u", "", Level::surface()),
            Variable::dynamic("v", "", Level::surface()),
            Variable::dynamic("w", "", Level::surface()),
            Variable::constant("lsm", ""),
        ];
        let lsm: Vec<f32> = (0..32).map(|_| rng.random()).collect();
        let data = Array4::from_shape_fn((t, 4, 4, 8), |(_, c, i, j)| if c == 3 { lsm[i * 8 + j] } else { rng.random() });
        FieldSeries::new(Grid::from_resolution(45.0).unwrap(), vars, 0, 6 * 3600, data).unwrap()
    }

    #[test]
    fn persistence_is_a_fixed_point() {
        let s = series(30, 0);
        let lay = layout(vec![0, -6]);
        let model = PersistenceStep::new(lay.clone());
        let cfg = ForecastConfig::new(lay.clone(), lay.dynamic.clone());
        for k in [1u32, 2, 5] {
            let set = forecasting_samples(&s, &cfg, LeadTime::hours(6 * k).unwrap()).unwrap();
            let rolled = rollout_predictions(&model, &lay, 6, &set, None, 6 * i64::from(k)).unwrap();
            assert_eq!(rolled.data, persistence_forecast(&set, &lay.dynamic).unwrap());
        }
        let traj = rollout(&model, &lay, 6, ndarray::Array3::zeros((7, 4, 8)).view(), 0, None, 3).unwrap();
        assert_eq!(traj.lead_hours, vec![6, 12, 18]);
    }

    #[test]
    fn linear_model_matches_matrix_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lay = layout(vec![0]);
        let a = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.random_range(-0.6..0.6));
        let model = MatrixStep { layout: lay.clone(), a: a.clone() };
        let init = Array3::from_shape_fn((4, 4, 8), |_| rng.random_range(-1.0f32..1.0));
        let traj = rollout(&model, &lay, 6, init.view(), 0, None, 8).unwrap();
        let mut power = DMatrix::<f64>::identity(3, 3);
        for k in 0..8 {
            power = &a * power;
            for i in 0..4 {
                for j in 0..8 {
                    for o in 0..3 {
                        let want: f64 = (0..3).map(|c| power[(o, c)] * f64::from(init[[c, i, j]])).sum();
                        assert!((f64::from(traj.states[[k, o, i, j]]) - want).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn history_and_statics_shift() {
        // records the inputs it sees
        struct Probe {
            layout: InputLayout,
            seen: std::sync::Mutex<Vec<Array3<f32>>>,
        }
        impl StepModel for Probe {
            fn input_channels(&self) -> Vec<String> {
                self.layout.channel_names()
            }
            fn output_variables(&self) -> Vec<String> {
                self.layout.dynamic.clone()
            }
            fn step(&self, inputs: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
                let n = self.seen.lock().unwrap().len();
                self.seen.lock().unwrap().push(inputs.to_owned());
                Ok(Array3::from_elem((3, 4, 8), 100.0 + n as f32))
            }
        }
        let lay = layout(vec![0, -6, -12]);
        let probe = Probe { layout: lay.clone(), seen: Default::default() };
        let init = Array3::from_shape_fn((10, 4, 8), |(c, _, _)| c as f32);
        rollout(&probe, &lay, 6, init.view(), 0, None, 3).unwrap();
        let seen = probe.seen.into_inner().unwrap();
        // step 2 sees [out0, init@0, init@-6, lsm]
        assert!(seen[1].slice(s![0..3, .., ..]).iter().all(|&v| v == 100.0));
        assert_eq!(seen[1].slice(s![3..6, .., ..]), init.slice(s![0..3, .., ..]));
        assert_eq!(seen[1].slice(s![6..9, .., ..]), init.slice(s![3..6, .., ..]));
        assert!(seen[2].slice(s![3..6, .., ..]).iter().all(|&v| v == 100.0));
        for x in &seen {
            assert!(x.slice(s![9, .., ..]).iter().all(|&v| v == 9.0));
        }
    }

    #[test]
    fn incompatible_models_rejected() {
        struct Partial(InputLayout);
        impl StepModel for Partial {
            fn input_channels(&self) -> Vec<String> {
                self.0.channel_names()
            }
            fn output_variables(&self) -> Vec<String> {
                vec!["u".into(), "v".into()]
            }
            fn step(&self, _: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
                panic!("must not run")
            }
        }
        let lay = layout(vec![0]);
        let init = Array3::zeros((4, 4, 8));
        assert!(matches!(
            rollout(&Partial(lay.clone()), &lay, 6, init.view(), 0, None, 1),
            Err(Error::RolloutIncompatible(_))
        ));
        let gap = layout(vec![0, -12]);
        assert!(matches!(
            rollout(&PersistenceStep::new(gap.clone()), &gap, 6, Array3::zeros((7, 4, 8)).view(), 0, None, 1),
            Err(Error::RolloutIncompatible(_))
        ));
    }

    #[test]
    fn forcing_read_from_truth() {
        let s = series(10, 2);
        let lay = layout(vec![0]);
        let forced = vec!["w".to_string()];
        struct TwoVars(InputLayout);
        impl StepModel for TwoVars {
            fn input_channels(&self) -> Vec<String> {
                self.0.channel_names()
            }
            fn output_variables(&self) -> Vec<String> {
                vec!["v".into(), "u".into()]
            }
            fn step(&self, x: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
                Ok(ndarray::stack(Axis(0), &[x.index_axis(Axis(0), 1), x.index_axis(Axis(0), 0)]).unwrap())
            }
        }
        let cfg = ForecastConfig::new(lay.clone(), lay.dynamic.clone());
        let set = forecasting_samples(&s, &cfg, LeadTime::hours(6).unwrap()).unwrap();
        let policy = ForcingPolicy { channels: &forced, truth: &s };
        let traj = rollout(&TwoVars(lay.clone()), &lay, 6, set.inputs.index_axis(Axis(0), 0), 0, Some(policy), 3).unwrap();
        for k in 0..3 {
            assert_eq!(traj.states.slice(s![k, 2, .., ..]), s.data().slice(s![k + 1, 2, .., ..]));
        }
        assert_eq!(traj.states.slice(s![1, 0, .., ..]), s.data().slice(s![0, 0, .., ..]));
        assert!(rollout(&TwoVars(lay.clone()), &lay, 6, set.inputs.index_axis(Axis(0), 0), 0, None, 1).is_err());
    }
}
