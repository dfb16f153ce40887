pub mod attack;
pub mod cli;
pub mod dataset;
pub mod extractor;
pub mod metrics;
pub mod numerics;
