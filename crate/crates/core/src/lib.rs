pub mod agents;
pub mod consistency;
pub mod datasets;
pub mod evaluation;
pub mod gateway;
pub mod model;
pub mod runner;
pub mod search;
