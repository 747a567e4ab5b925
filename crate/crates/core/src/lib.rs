pub mod numerics;
pub mod distributions;
pub mod nets;
pub mod models;
pub mod estimators;
pub mod data;
pub mod harness;
