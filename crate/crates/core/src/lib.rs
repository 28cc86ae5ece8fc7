//! Card-based mission programming for drones.

pub mod behavior;
pub mod catalog;
pub mod corpus;
pub mod model;
pub mod notation;
pub mod runtime;
pub mod sim;
pub mod token;
pub mod validate;
