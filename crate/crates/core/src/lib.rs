pub mod client;
pub mod data;
pub mod nn;
pub mod orchestrator;
pub mod report;
pub mod server;
