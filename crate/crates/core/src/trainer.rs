//! Weakly supervised training loop.
//!
//! Each optimizer step augments the cloud, encodes it, queries the labeled
//! positions (all of them, or a seeded batch when there are many), and takes
//! one Adam step on the class-weighted cross-entropy of those queries only.
//! Every random draw is derived from the run seed and the global step, so a
//! run resumed from a checkpoint continues exactly where it stopped.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::derive_seed;
use crate::model::SqnModel;
use crate::pointcloud::sampling::seeded_prefix_sample;
use crate::pointcloud::{ClassId, PointCloud};
use crate::query::argmax_rows;
use crate::tensor::{AdamConfig, Scalar, Tape, Var};
use crate::weak_labels::{class_weights, overlay_labels, SparseLabelSet};

/// Below this many annotations `RetrainMode::Auto` adds the pseudo-label stage.
pub const AUTO_RETRAIN_BELOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainMode {
    Auto,
    On,
    Off,
}

impl RetrainMode {
    pub fn enabled_for(self, num_labels: usize) -> bool {
        match self {
            RetrainMode::Auto => num_labels < AUTO_RETRAIN_BELOW,
            RetrainMode::On => true,
            RetrainMode::Off => false,
        }
    }
}

impl fmt::Display for RetrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrainMode::Auto => "auto",
            RetrainMode::On => "on",
            RetrainMode::Off => "off",
        })
    }
}

impl FromStr for RetrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(RetrainMode::Auto),
            "on" | "true" => Ok(RetrainMode::On),
            "off" | "false" => Ok(RetrainMode::Off),
            other => Err(Error::Config {
                key: "retrain".into(),
                reason: format!("expected auto, on or off, got `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Mirror x and y independently with probability 1/2.
    pub flip: bool,
    /// Rotate about the vertical axis by a uniform angle.
    pub rotate: bool,
    /// Gaussian position jitter (meters), clipped to `noise_clip`.
    pub noise_sigma: f64,
    pub noise_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flip: true,
            rotate: true,
            noise_sigma: 0.005,
            noise_clip: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub queries_per_step: usize,
    pub lr: f64,
    /// Multiplied into the learning rate once per epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub class_weighting: bool,
    pub retrain: RetrainMode,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            steps_per_epoch: 1,
            queries_per_step: 4096,
            lr: 0.01,
            lr_decay: 0.95,
            seed: 0,
            class_weighting: true,
            retrain: RetrainMode::Auto,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch", "must be positive");
        }
        if self.queries_per_step == 0 {
            return bad("queries_per_step", "must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", "must lie in (0, 1]");
        }
        let a = &self.augment;
        if !(a.noise_sigma >= 0.0 && a.noise_clip >= 0.0) {
            return bad("noise_sigma", "noise magnitudes must be non-negative");
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// Random flip, rotation about z and clipped Gaussian jitter; labels unchanged.
pub fn augment(cloud: &PointCloud, config: &AugmentConfig, seed: u64) -> Result<PointCloud> {
    if !config.enabled {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy) = if config.flip {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    let angle = if config.rotate {
        rng.random_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let (sin, cos) = angle.sin_cos();
    let noise = if config.noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let positions = cloud
        .positions()
        .iter()
        .map(|p| {
            let mut x = p[0] as f64;
            let mut y = p[1] as f64;
            if fx {
                x = -x;
            }
            if fy {
                y = -y;
            }
            let mut out = [cos * x - sin * y, sin * x + cos * y, p[2] as f64];
            if let Some(n) = &noise {
                for c in &mut out {
                    *c += n.sample(&mut rng).clamp(-config.noise_clip, config.noise_clip);
                }
            }
            out.map(|c| c as f32)
        })
        .collect();
    cloud.with_positions(positions)
}

/// Mean over the queried points of `w[y] * -log softmax(logits)[y]`.
///
/// Queries are drawn from the annotated set only, so unlabeled points never
/// enter the sum.
pub fn masked_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[ClassId], weights: &[f64]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Empty("query batch"));
    }
    let classes: Vec<usize> = labels.iter().map(|&c| c as usize).collect();
    let per_query: Vec<T> = classes
        .iter()
        .map(|&c| {
            weights
                .get(c)
                .map(|&w| T::from_f64(w))
                .ok_or_else(|| Error::invalid(format!("no weight for class {c}")))
        })
        .collect::<Result<_>>()?;
    tape.cross_entropy(logits, &classes, &per_query)
}

/// [`masked_loss`] over dense per-point logits: only the rows of annotated
/// points are read.
pub fn sparse_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &SparseLabelSet, weights: &[f64]) -> Result<Var> {
    let rows = tape.gather_rows(logits, labels.indices())?;
    masked_loss(tape, rows, labels.labels(), weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub seconds: f64,
}

pub fn format_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,train_acc,seconds\n");
    for row in log {
        let _ = writeln!(s, "{},{},{},{:.3}", row.epoch, row.loss, row.train_acc, row.seconds);
    }
    s
}

pub fn save_log_csv(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_log_csv(log)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
    pub queried: usize,
}

/// Optimizer state for one model on one cloud.
pub struct Trainer<'a> {
    pub model: SqnModel,
    cloud: &'a PointCloud,
    labels: &'a SparseLabelSet,
    config: TrainConfig,
    weights: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: SqnModel, cloud: &'a PointCloud, labels: &'a SparseLabelSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Empty("label set"));
        }
        if labels.cloud_len() != cloud.len() {
            return Err(Error::invalid(format!(
                "labels refer to {} points, cloud has {}",
                labels.cloud_len(),
                cloud.len()
            )));
        }
        let c = model.num_classes;
        let weights = if config.class_weighting {
            class_weights(labels, c)
        } else {
            vec![1.0; c]
        };
        Ok(Self {
            model,
            cloud,
            labels,
            config,
            weights,
        })
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Labeled entries queried at global step `step`.
    pub fn batch_for_step(&self, step: u64) -> Vec<usize> {
        let n = self.labels.len();
        if n <= self.config.queries_per_step {
            (0..n).collect()
        } else {
            seeded_prefix_sample(n, self.config.queries_per_step, derive_seed(self.step_seed(step), 3))
        }
    }

    fn step_seed(&self, step: u64) -> u64 {
        derive_seed(self.config.seed, step.wrapping_add(1) << 8)
    }

    /// One augment / encode / query / update cycle.
    pub fn step(&mut self) -> Result<StepStats> {
        let step = self.model.params.step();
        let epoch = (step / self.config.steps_per_epoch as u64) as usize;
        let seed = self.step_seed(step);
        let cloud = augment(self.cloud, &self.config.augment, derive_seed(seed, 1))?;
        let batch = self.batch_for_step(step);
        let queries: Vec<[f32; 3]> = batch.iter().map(|&j| cloud.positions()[self.labels.indices()[j]]).collect();
        let targets: Vec<ClassId> = batch.iter().map(|&j| self.labels.labels()[j]).collect();

        let mut tape = Tape::<f32>::new();
        let (logits, _, _) = self
            .model
            .logits(&mut tape, &self.model.params, &cloud, derive_seed(seed, 2), &queries)?;
        let predicted = argmax_rows(tape.value(logits).data(), self.model.num_classes);
        let correct = predicted.iter().zip(&targets).filter(|(p, t)| p == t).count();
        let loss = masked_loss(&mut tape, logits, &targets, &self.weights)?;
        tape.backward(loss)?;
        let loss_value = tape.value(loss).data()[0] as f64;
        self.model.params.accumulate_grads(&tape);
        self.model.params.adam_step(&AdamConfig {
            lr: self.config.learning_rate(epoch),
            ..AdamConfig::default()
        });
        Ok(StepStats {
            loss: loss_value,
            correct,
            queried: targets.len(),
        })
    }

    /// Run `epochs` more epochs, one log row each.
    pub fn run(&mut self, epochs: usize) -> Result<Vec<EpochLog>> {
        let start = Instant::now();
        let mut log = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = (self.model.params.step() / self.config.steps_per_epoch as u64) as usize;
            let mut loss = 0.0;
            let (mut correct, mut queried) = (0, 0);
            for _ in 0..self.config.steps_per_epoch {
                let s = self.step()?;
                loss += s.loss;
                correct += s.correct;
                queried += s.queried;
            }
            log.push(EpochLog {
                epoch,
                loss: loss / self.config.steps_per_epoch as f64,
                train_acc: correct as f64 / queried as f64,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
        Ok(log)
    }
}

/// A trained model with the per-epoch log of every stage that produced it.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SqnModel,
    pub log: Vec<EpochLog>,
    /// First-stage model and log when the pseudo-label stage ran.
    pub first_stage: Option<(SqnModel, Vec<EpochLog>)>,
}

/// One training stage from freshly initialized weights.
pub fn train_stage(
    cloud: &PointCloud,
    labels: &SparseLabelSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(SqnModel, Vec<EpochLog>)> {
    let model = SqnModel::for_cloud(model_config.clone(), cloud, config.seed)?;
    let mut trainer = Trainer::new(model, cloud, labels, config.clone())?;
    let log = trainer.run(config.epochs)?;
    Ok((trainer.model, log))
}

/// Predictions over the whole cloud with annotated points kept at their true class.
pub fn generate_pseudo_labels(model: &SqnModel, cloud: &PointCloud, labels: &SparseLabelSet) -> Result<Vec<ClassId>> {
    overlay_labels(&model.predict_cloud(cloud)?, labels)
}

/// Pseudo-label the cloud with `model`, then train a new model from scratch on them.
pub fn retrain_with_pseudo(
    model: &SqnModel,
    cloud: &PointCloud,
    labels: &SparseLabelSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(SqnModel, Vec<EpochLog>)> {
    let pseudo = generate_pseudo_labels(model, cloud, labels)?;
    let dense = SparseLabelSet::new(pseudo.into_iter().enumerate().collect(), cloud.len(), cloud.num_classes(), labels.seed)?;
    train_stage(cloud, &dense, model_config, config)
}

/// Train, adding the pseudo-label stage when `config.retrain` asks for it.
pub fn train(
    cloud: &PointCloud,
    labels: &SparseLabelSet,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let (model, log) = train_stage(cloud, labels, model_config, config)?;
    if !config.retrain.enabled_for(labels.len()) {
        return Ok(TrainOutcome {
            model,
            log,
            first_stage: None,
        });
    }
    let (second, mut second_log) = retrain_with_pseudo(&model, cloud, labels, model_config, config)?;
    let offset = log.last().map_or(0, |r| r.epoch + 1);
    let elapsed = log.last().map_or(0.0, |r| r.seconds);
    for row in &mut second_log {
        row.epoch += offset;
        row.seconds += elapsed;
    }
    let mut full = log.clone();
    full.extend(second_log);
    Ok(TrainOutcome {
        model: second,
        log: full,
        first_stage: Some((model, log)),
    })
}

/// `SQNP v1`: one class id per line, in query order.
pub fn format_predictions(labels: &[ClassId]) -> String {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        let _ = writeln!(s, "{l}");
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<Vec<ClassId>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                reason: format!("bad class id `{}`", l.trim()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::index::dist2;
    use crate::tensor::Tensor;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        PointCloud::new(pos, None, Some(vec![0; n]), 2).unwrap()
    }

    #[test]
    fn disabled_components_give_identity() {
        let c = cloud(50, 1);
        let cfg = AugmentConfig {
            flip: false,
            rotate: false,
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert_eq!(augment(&c, &cfg, 7).unwrap(), c);
        let off = AugmentConfig {
            enabled: false,
            ..Default::default()
        };
        assert_eq!(augment(&c, &off, 7).unwrap(), c);
    }

    #[test]
    fn isometry_without_noise() {
        let c = cloud(80, 2);
        let cfg = AugmentConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        for seed in 0..10 {
            let a = augment(&c, &cfg, seed).unwrap();
            assert_eq!(a.labels(), c.labels());
            for i in 0..40 {
                let j = 79 - i;
                let before = dist2(&c.positions()[i], &c.positions()[j]).sqrt();
                let after = dist2(&a.positions()[i], &a.positions()[j]).sqrt();
                assert!((before - after).abs() < 1e-5);
                assert_eq!(a.positions()[i][2], c.positions()[i][2]);
            }
        }
    }

    #[test]
    fn half_turn_twice_restores_positions() {
        let c = cloud(30, 3);
        let (s, co) = std::f64::consts::PI.sin_cos();
        let turn = |p: &[f32; 3]| {
            let (x, y) = (p[0] as f64, p[1] as f64);
            [(co * x - s * y) as f32, (s * x + co * y) as f32, p[2]]
        };
        for p in c.positions() {
            let q = turn(&turn(p));
            for a in 0..3 {
                assert!((q[a] - p[a]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn noise_is_clipped_and_seeded() {
        let c = cloud(500, 4);
        let cfg = AugmentConfig {
            flip: false,
            rotate: false,
            noise_sigma: 0.05,
            noise_clip: 0.02,
            ..Default::default()
        };
        let a = augment(&c, &cfg, 1).unwrap();
        assert_eq!(a, augment(&c, &cfg, 1).unwrap());
        assert_ne!(a, augment(&c, &cfg, 2).unwrap());
        for (p, q) in c.positions().iter().zip(a.positions()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() <= 0.02 + 1e-6);
            }
        }
    }

    fn loss_of(logits: Vec<f64>, c: usize, labels: &[ClassId], weights: &[f64]) -> f64 {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::new(vec![labels.len(), c], logits).unwrap());
        let loss = masked_loss(&mut tape, l, labels, weights).unwrap();
        tape.value(loss).data()[0]
    }

    #[test]
    fn loss_closed_forms() {
        assert!(loss_of(vec![10.0, -10.0], 2, &[0], &[1.0, 1.0]) < 1e-4);
        let c = 5;
        let uniform = loss_of(vec![0.3; 3 * c], c, &[0, 4, 2], &[1.0; 5]);
        assert!((uniform - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, c) = (17, 4);
        let logits: Vec<f64> = (0..q * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<ClassId> = (0..q).map(|_| rng.random_range(0..c as ClassId)).collect();
        let weights = [0.5, 1.5, 1.2, 0.8];
        let mut expected = 0.0;
        for i in 0..q {
            let row = &logits[i * c..(i + 1) * c];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -weights[labels[i] as usize] * (row[labels[i] as usize].exp() / z).ln();
        }
        expected /= q as f64;
        assert!((loss_of(logits, c, &labels, &weights) - expected).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let l = tape.constant(Tensor::zeros(vec![0, 2]));
        assert!(matches!(masked_loss(&mut tape, l, &[], &[1.0, 1.0]), Err(Error::Empty(_))));
    }

    #[test]
    fn retrain_mode_threshold() {
        assert!(RetrainMode::Auto.enabled_for(499));
        assert!(!RetrainMode::Auto.enabled_for(500));
        assert!(RetrainMode::On.enabled_for(10_000));
        assert!(!RetrainMode::Off.enabled_for(1));
        assert_eq!("auto".parse::<RetrainMode>().unwrap(), RetrainMode::Auto);
        assert!("maybe".parse::<RetrainMode>().is_err());
    }

    #[test]
    fn learning_rate_decays_per_epoch() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate(0), 0.01);
        assert!((cfg.learning_rate(2) - 0.01 * 0.95 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn prediction_file_round_trip() {
        let labels = vec![0, 3, 1, 1, 12];
        let text = format_predictions(&labels);
        assert_eq!(text, "0\n3\n1\n1\n12\n");
        assert_eq!(parse_predictions(&text).unwrap(), labels);
        assert!(matches!(parse_predictions("1\nx\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn log_csv_layout() {
        let log = [EpochLog {
            epoch: 0,
            loss: 1.5,
            train_acc: 0.25,
            seconds: 0.1234,
        }];
        assert_eq!(format_log_csv(&log), "epoch,loss,train_acc,seconds\n0,1.5,0.25,0.123\n");
    }
}
