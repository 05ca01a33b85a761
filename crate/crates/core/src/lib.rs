pub mod codec;
pub mod diffusion;
pub mod exec;
pub mod grad;
pub mod guidance;
pub mod metrics;
pub mod persist;
pub mod pipeline;
pub mod synth;
pub mod tasks;
