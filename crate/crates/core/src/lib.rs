pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod ids;
pub mod kb;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod regex;
pub mod rng;
pub mod train;
