//! Factored conditional RBMs with two factor banks for 3D estimation of
//! moving objects from 2D observations.

pub mod checkpoint;
pub mod data;
pub mod exec;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod training;
