pub mod bench;
pub mod config;
pub mod convexify;
pub mod model;
pub mod curvature;
pub mod solver;
pub mod llm;
pub mod extraction;
pub mod hash;
pub mod pipeline;
pub mod refine;
pub mod sandbox;
