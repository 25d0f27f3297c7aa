pub mod agent;
pub mod env;
pub mod orchestrator;
pub mod nn;
pub mod query;
pub mod reed;
pub mod replay;
pub mod reward;
pub mod teachers;
