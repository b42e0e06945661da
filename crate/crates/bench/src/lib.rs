//! Shared fixtures for the criterion benches.

use sqn_core::harness::{synth_scene, Benchmark, SceneSpec};
use sqn_core::model::SqnModel;
use sqn_core::weak_labels::{sample_sparse_labels, SparseLabelSet};
use sqn_core::PointCloud;

/// Desk-scale room, a fresh model and 0.5% labels.
pub struct Fixture {
    pub bench: Benchmark,
    pub cloud: PointCloud,
    pub labels: SparseLabelSet,
    pub model: SqnModel,
}

pub fn fixture() -> Fixture {
    let bench = Benchmark::desk();
    let cloud = synth_scene(&bench.train_scene).expect("desk scene");
    let labels = sample_sparse_labels(&cloud, 0.005, 0).expect("labels");
    let model = SqnModel::for_cloud(bench.model.clone(), &cloud, 0).expect("model");
    Fixture {
        bench,
        cloud,
        labels,
        model,
    }
}

/// A room with `per_class` points in each of its four classes.
pub fn room(per_class: usize, seed: u64) -> PointCloud {
    let mut spec = SceneSpec::room(seed);
    spec.points_per_class = vec![per_class; spec.classes.len()];
    synth_scene(&spec).expect("room")
}
