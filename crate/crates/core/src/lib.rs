pub mod cli;
pub mod clients;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod orchestrator;
pub mod prompt;
pub mod runner;
