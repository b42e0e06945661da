//! Desk-scale experiments on synthetic rooms.

pub mod experiments;
pub mod report;
pub mod scene;

pub use experiments::{Benchmark, Cell, ExperimentResult};
pub use scene::{synth_scene, Archetype, SceneSpec};
