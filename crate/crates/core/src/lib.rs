pub mod geometry;
pub mod cmp;
pub mod environment;
pub mod sensor_module;
pub mod learning_module;
pub mod voting;
pub mod policies;
pub mod harness;
