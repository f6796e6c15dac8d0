pub mod baseline;
pub mod data;
pub mod evaluate;
pub mod extreme;
