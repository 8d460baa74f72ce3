pub mod align;
pub mod channel;
pub mod codec;
pub mod image;
pub mod metrics;
pub mod planner;
pub mod scenario;
pub mod scenario_file;
pub mod simulate;
pub mod synth;
