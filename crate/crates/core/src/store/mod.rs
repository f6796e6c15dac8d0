//! Field series, the CLBT container, normalization statistics and
//! chronological splits.

mod container;
mod norm;
mod series;
mod split;

pub use container::{read_container, read_container_with_extra, write_container, write_container_with_extra, ContainerHeader, MAGIC, VERSION};
pub use norm::{compute_norm_stats, denormalize, normalize, ChannelStats, NormStats};
pub use series::{FieldSeries, Level, Variable};
pub use split::{split_by_years, year_of, SplitSpec, YearRange};
