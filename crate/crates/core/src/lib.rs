//! Benchmarking engine for data-driven weather forecasting, downscaling and
//! climate projection on gridded fields.

pub mod baselines;
pub mod error;
pub mod extreme;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod regrid;
pub mod sampler;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{make_lat_weights, subgrid_indices, Grid, LatWeights, RegionBox, SubgridIndices};
pub use metrics::{MetricReport, Score};
pub use sampler::{InputLayout, LeadTime, SampleSet};
pub use store::{FieldSeries, Level, NormStats, SplitSpec, Variable, YearRange};
