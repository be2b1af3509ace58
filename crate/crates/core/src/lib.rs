//! Scene-graph image captioning with learned theme nodes.
pub mod checkpoint;
pub mod decode;
pub mod experiment;
pub mod interpret;
pub mod metrics;
pub mod microworld;
pub mod numerics;
pub mod scene_graph;
pub mod training;
pub mod ttn;
pub mod vocab;
