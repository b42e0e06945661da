//! Encoder and query head bundled with their parameters.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::encoder::{input_features, input_width, Encoder, EncoderGeometry, HierarchicalFeatures};
use crate::error::{Error, Result};
use crate::layers::derive_seed;
use crate::pointcloud::{ClassId, PointCloud};
use crate::query::{argmax_rows, gather_query_features, plan_queries, QueryHead, QueryPlan};
use crate::tensor::{checkpoint, Parameters, Scalar, Tape, Tensor, Var};

/// Queries classified per tape during inference.
pub const INFERENCE_BATCH: usize = 4096;
const META_CONFIG: &str = "meta.config";
const META_SHAPE: &str = "meta.shape";
const INIT_TAG: u64 = 0x1A17;

fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = row.iter().map(|x| (x - m).exp()).sum();
        out.extend(row.iter().map(|x| (x - m).exp() / z));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SqnModel {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub encoder: Encoder,
    pub head: QueryHead,
    pub params: Parameters<f32>,
}

impl SqnModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INIT_TAG));
        let mut params = Parameters::new();
        let encoder = Encoder::new(&mut params, config.encoder.clone(), input_dim, &mut rng)?;
        let width = config.query.feature_width(&config.encoder.level_dims);
        let head = QueryHead::new(&mut params, width, &config.query.head_widths, num_classes, &mut rng)?;
        Ok(Self {
            config,
            input_dim,
            num_classes,
            encoder,
            head,
            params,
        })
    }

    /// Fresh model sized for `cloud` (input width from its colors).
    pub fn for_cloud(config: ModelConfig, cloud: &PointCloud, seed: u64) -> Result<Self> {
        Self::new(config, input_width(cloud.colors().is_some()), cloud.num_classes() as usize, seed)
    }

    /// Encode `cloud` and classify `queries` on one tape, returning the
    /// `Q x C` logits with the encoding and the neighbor plan.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Parameters<T>,
        cloud: &PointCloud,
        sample_seed: u64,
        queries: &[[f32; 3]],
    ) -> Result<(Var, HierarchicalFeatures, QueryPlan)> {
        let hf = self.encoder.encode(tape, params, cloud, sample_seed)?;
        let plan = plan_queries(&hf, queries, &self.config.query)?;
        let features = gather_query_features(tape, &hf.feature_vars(), &plan)?;
        let logits = self.head.forward(tape, params, features)?;
        Ok((logits, hf, plan))
    }

    /// Class of each query position given the context `cloud`.
    ///
    /// Queries may lie anywhere in space. The cloud is encoded once per vote
    /// and queries are classified in batches. With several votes the class
    /// probabilities of each sampling pass are averaged; pass 0 always uses
    /// the encoder seed.
    pub fn predict(&self, cloud: &PointCloud, queries: &[[f32; 3]]) -> Result<Vec<ClassId>> {
        let seed = self.config.encoder.seed;
        let logits = self.logits_for(cloud, queries, seed)?;
        if self.config.query.votes <= 1 {
            return Ok(argmax_rows(&logits, self.num_classes));
        }
        let mut probs = softmax_rows(&logits, self.num_classes);
        for v in 1..self.config.query.votes {
            let more = softmax_rows(&self.logits_for(cloud, queries, derive_seed(seed, v as u64))?, self.num_classes);
            probs.iter_mut().zip(&more).for_each(|(p, m)| *p += m);
        }
        Ok(argmax_rows(&probs, self.num_classes))
    }

    /// Row-major `[queries, classes]` logits with the encoder's random
    /// sampling driven by `sample_seed`.
    pub fn logits_for(&self, cloud: &PointCloud, queries: &[[f32; 3]], sample_seed: u64) -> Result<Vec<f32>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::<f32>::new();
        let geometry = EncoderGeometry::build(cloud.positions(), &self.config.encoder, sample_seed)?;
        let width = input_width(cloud.colors().is_some());
        if width != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "predict input",
                lhs: vec![cloud.len(), width],
                rhs: vec![cloud.len(), self.input_dim],
            });
        }
        let input = tape.constant(input_features(cloud));
        let hf = self.encoder.forward(&mut tape, &self.params, input, &geometry)?;
        let level_values: Vec<Tensor<f32>> = hf.levels.iter().map(|l| tape.value(l.features).clone()).collect();
        drop(tape);

        let mut out = Vec::with_capacity(queries.len() * self.num_classes);
        for batch in queries.chunks(INFERENCE_BATCH) {
            let plan = plan_queries(&hf, batch, &self.config.query)?;
            let mut tape = Tape::<f32>::new();
            let vars: Vec<Var> = level_values.iter().map(|t| tape.constant(t.clone())).collect();
            let features = gather_query_features(&mut tape, &vars, &plan)?;
            let logits = self.head.forward(&mut tape, &self.params, features)?;
            out.extend_from_slice(tape.value(logits).data());
        }
        Ok(out)
    }

    /// Labels for every point of `cloud`.
    pub fn predict_cloud(&self, cloud: &PointCloud) -> Result<Vec<ClassId>> {
        self.predict(cloud, cloud.positions())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut all = self.params.clone();
        let text: Vec<f32> = self.config.to_text().bytes().map(f32::from).collect();
        let shape = vec![self.input_dim as f32, self.num_classes as f32];
        all.insert(META_CONFIG, Tensor::new(vec![text.len()], text).expect("1-D"))
            .expect("meta names are reserved");
        all.insert(META_SHAPE, Tensor::new(vec![2], shape).expect("1-D"))
            .expect("meta names are reserved");
        checkpoint::encode(&all)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let stored = checkpoint::decode(bytes)?;
        let text: String = stored
            .value(stored.id(META_CONFIG)?)
            .data()
            .iter()
            .map(|&b| b as u8 as char)
            .collect();
        let config = ModelConfig::parse(&text)?;
        let shape = stored.value(stored.id(META_SHAPE)?).data();
        let mut model = Self::new(config, shape[0] as usize, shape[1] as usize, 0)?;
        if stored.len() != model.params.len() + 2 {
            return Err(Error::invalid(format!(
                "checkpoint holds {} tensors, architecture expects {}",
                stored.len() - 2,
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let src = stored.id(model.params.name(id))?;
            if stored.value(src).shape() != model.params.value(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint load",
                    lhs: stored.value(src).shape().to_vec(),
                    rhs: model.params.value(id).shape().to_vec(),
                });
            }
            *model.params.value_mut(id) = stored.value(src).clone();
            let (m, v) = stored.moments(src);
            model.params.set_moments(id, m.to_vec(), v.to_vec())?;
        }
        model.params.set_step(stored.step());
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
