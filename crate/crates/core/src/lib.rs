pub mod action;
pub mod agent;
pub mod cli;
pub mod data;
pub mod geom;
pub mod metrics;
pub mod policy;
pub mod refine;
pub mod seed;
