//! Experiment suites: supervision-ratio sweep, query-level ablation, query-K
//! sweep and seed sensitivity.
//!
//! Each cell trains on one synthetic room and evaluates on a second room built
//! from a different seed. Every cell owns its seed bundle (scene, labels,
//! initialization), so results are bit-identical whether cells run in order
//! or on parallel threads.

use std::time::Instant;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::harness::scene::{synth_scene, SceneSpec};
use crate::metrics::{evaluate, EvalReport};
use crate::pointcloud::PointCloud;
use crate::trainer::{train, TrainConfig};
use crate::weak_labels::sample_sparse_labels;

/// Scenes and configs shared by every cell of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train_scene: SceneSpec,
    pub test_scene: SceneSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the annotation sampler.
    pub label_seed: u64,
    /// Boundary radii reported per cell.
    pub boundary_radii: Vec<f64>,
    /// Run independent cells on separate threads.
    pub parallel: bool,
}

impl Benchmark {
    /// The desk benchmark: two 8,000-point rooms, desk-width encoder.
    pub fn desk() -> Self {
        let mut model = ModelConfig::default();
        model.query.head_widths = vec![64, 32];
        model.query.votes = 8;
        let train = TrainConfig {
            epochs: 100,
            steps_per_epoch: 3,
            ..TrainConfig::default()
        };
        Self {
            train_scene: SceneSpec::room(1),
            test_scene: SceneSpec::room(2),
            model,
            train,
            label_seed: 0,
            boundary_radii: vec![0.05],
            parallel: false,
        }
    }

    pub fn scenes(&self) -> Result<(PointCloud, PointCloud)> {
        Ok((synth_scene(&self.train_scene)?, synth_scene(&self.test_scene)?))
    }
}

/// Outcome of one train + evaluate run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Value of the swept parameter, e.g. `0.01`, `1,2`, `k=5`.
    pub param: String,
    pub seed: u64,
    pub num_labels: usize,
    pub report: EvalReport,
    /// Test metrics of the first stage when pseudo-label retraining ran.
    pub first_stage: Option<EvalReport>,
    /// Logged epochs across both stages.
    pub epochs: usize,
    /// Training plus evaluation wall clock.
    pub seconds: f64,
}

impl Cell {
    pub fn oa(&self) -> f64 {
        self.report.overall.oa
    }

    pub fn miou(&self) -> f64 {
        self.report.overall.miou
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    /// Name of the swept parameter.
    pub parameter: String,
    pub class_names: Vec<String>,
    pub cells: Vec<Cell>,
}

impl ExperimentResult {
    /// Mean mIoU of all cells whose parameter equals `param`.
    pub fn mean_miou(&self, param: &str) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter(|c| c.param == param).map(Cell::miou).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Distinct parameter values in first-appearance order.
    pub fn params(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.param) {
                out.push(c.param.clone());
            }
        }
        out
    }
}

/// Train on `bench`'s training room with `ratio` annotations and evaluate.
pub fn run_cell(
    bench: &Benchmark,
    scenes: &(PointCloud, PointCloud),
    ratio: f64,
    label_seed: u64,
    param: String,
) -> Result<Cell> {
    let (train_cloud, test_cloud) = scenes;
    let labels = sample_sparse_labels(train_cloud, ratio, label_seed)?;
    let start = Instant::now();
    let outcome = train(train_cloud, &labels, &bench.model, &bench.train)?;
    let report = evaluate(test_cloud, &outcome.model.predict_cloud(test_cloud)?, &bench.boundary_radii)?;
    let first_stage = match &outcome.first_stage {
        Some((m, _)) => Some(evaluate(test_cloud, &m.predict_cloud(test_cloud)?, &bench.boundary_radii)?),
        None => None,
    };
    Ok(Cell {
        param,
        seed: label_seed,
        num_labels: labels.len(),
        report,
        first_stage,
        epochs: outcome.log.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn result(name: &str, parameter: &str, bench: &Benchmark, cells: Vec<Cell>) -> ExperimentResult {
    ExperimentResult {
        name: name.into(),
        parameter: parameter.into(),
        class_names: bench.train_scene.class_names(),
        cells,
    }
}

/// One unit of work: a config variant, an annotation ratio and a seed.
struct Job {
    bench: Benchmark,
    ratio: f64,
    label_seed: u64,
    param: String,
}

fn run_jobs(bench: &Benchmark, jobs: Vec<Job>) -> Result<Vec<Cell>> {
    let scenes = bench.scenes()?;
    let run = |j: &Job| run_cell(&j.bench, &scenes, j.ratio, j.label_seed, j.param.clone());
    if !bench.parallel || jobs.len() < 2 {
        return jobs.iter().map(run).collect();
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let mut slots: Vec<Option<Result<Cell>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = jobs.len().div_ceil(threads);
        for (js, out) in jobs.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let run = &run;
            scope.spawn(move || {
                for (j, o) in js.iter().zip(out) {
                    *o = Some(run(j));
                }
            });
        }
    });
    slots.into_iter().map(|c| c.expect("every job ran")).collect()
}

/// One cell per ratio. The sampler's seed is shared, so the annotated
/// subsets are nested.
pub fn degradation_sweep(bench: &Benchmark, ratios: &[f64]) -> Result<ExperimentResult> {
    if ratios.is_empty() || ratios.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::invalid("ratios must be non-empty and strictly descending"));
    }
    let jobs = ratios
        .iter()
        .map(|&r| Job {
            bench: bench.clone(),
            ratio: r,
            label_seed: bench.label_seed,
            param: r.to_string(),
        })
        .collect();
    Ok(result("degradation", "ratio", bench, run_jobs(bench, jobs)?))
}

/// Level subsets of the ablation table: {1}, {4}, {1,2}, {1,2,3}, {1,2,3,4}.
pub fn ablation_subsets() -> Vec<Vec<usize>> {
    vec![vec![1], vec![4], vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4]]
}

/// Parameter label of a level subset, e.g. `1+2+3`.
pub fn subset_label(levels: &[usize]) -> String {
    levels.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

/// One cell per (level subset, seed). The seed drives both annotation and
/// initialization.
pub fn query_level_ablation(
    bench: &Benchmark,
    ratio: f64,
    subsets: &[Vec<usize>],
    seeds: &[u64],
) -> Result<ExperimentResult> {
    let mut jobs = Vec::new();
    for subset in subsets {
        for &seed in seeds {
            let mut b = bench.clone();
            b.model.query.levels = subset.clone();
            b.train.seed = seed;
            b.model.validate()?;
            jobs.push(Job {
                bench: b,
                ratio,
                label_seed: seed,
                param: subset_label(subset),
            });
        }
    }
    Ok(result("query_levels", "levels", bench, run_jobs(bench, jobs)?))
}

/// One cell per query-head K.
pub fn k_sweep(bench: &Benchmark, ratio: f64, ks: &[usize]) -> Result<ExperimentResult> {
    let mut jobs = Vec::new();
    for &k in ks {
        let mut b = bench.clone();
        b.model.query.k = k;
        b.model.validate()?;
        jobs.push(Job {
            bench: b,
            ratio,
            label_seed: bench.label_seed,
            param: k.to_string(),
        });
    }
    Ok(result("query_k", "k", bench, run_jobs(bench, jobs)?))
}

/// One cell per seed; each seed draws its own annotations and initialization.
pub fn seed_sensitivity(bench: &Benchmark, ratio: f64, seeds: &[u64]) -> Result<ExperimentResult> {
    let jobs = seeds
        .iter()
        .map(|&seed| {
            let mut b = bench.clone();
            b.train.seed = seed;
            Job {
                bench: b,
                ratio,
                label_seed: seed,
                param: seed.to_string(),
            }
        })
        .collect();
    Ok(result("seeds", "seed", bench, run_jobs(bench, jobs)?))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
