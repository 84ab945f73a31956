pub mod config;
pub mod dataset;
pub mod decomposer;
pub mod eval;
pub mod fields;
pub mod fixtures;
pub mod gateway;
pub mod http;
pub mod keywords;
pub mod orchestrator;
pub mod retrieval;
pub mod rewriter;
pub mod text;
