pub mod app;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod cpc;
pub mod diff;
pub mod eval;
pub mod features;
pub mod gradient_suites;
pub mod probe;
pub mod rng;
