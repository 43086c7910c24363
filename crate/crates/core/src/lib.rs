pub mod alignment;
pub mod atomistic;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod holistic;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
