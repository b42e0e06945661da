//! Semantic query head.
//!
//! For each query position the K nearest points of every encoder level are
//! found, their features blended with inverse-distance weights, the per-level
//! vectors concatenated shallow to deep, and the result classified by an MLP.

use rand::Rng;

use crate::encoder::{HierarchicalFeatures, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::layers::Dense;
use crate::pointcloud::ClassId;
use crate::tensor::{Parameters, Scalar, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct QueryConfig {
    pub k: usize,
    /// Hidden widths; the output layer of width C is appended.
    pub head_widths: Vec<usize>,
    pub distance_power: f64,
    pub epsilon: f64,
    /// Queried levels, 1-based, ascending.
    pub levels: Vec<usize>,
    /// Encoder sampling passes averaged at inference.
    pub votes: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            k: 3,
            head_widths: vec![256, 128, 96],
            distance_power: 2.0,
            epsilon: 1e-8,
            levels: (1..=NUM_LEVELS).collect(),
            votes: 1,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("query k must be at least 1"));
        }
        if self.votes == 0 {
            return Err(Error::invalid("votes must be at least 1"));
        }
        if self.head_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("head widths must be positive"));
        }
        if !(self.epsilon > 0.0) || !self.distance_power.is_finite() || self.distance_power <= 0.0 {
            return Err(Error::invalid("epsilon and distance power must be positive"));
        }
        if self.levels.is_empty()
            || self.levels.windows(2).any(|w| w[0] >= w[1])
            || self.levels.iter().any(|&l| l == 0 || l > NUM_LEVELS)
        {
            return Err(Error::invalid(format!(
                "levels must be a non-empty ascending subset of 1..={NUM_LEVELS}, got {:?}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Width of the concatenated query feature for the given level widths.
    pub fn feature_width(&self, level_dims: &[usize; NUM_LEVELS]) -> usize {
        self.levels.iter().map(|&l| level_dims[l - 1]).sum()
    }
}

/// Normalized inverse-distance weights `1 / (d^p + eps)`.
///
/// When any distance is below `eps` the query coincides with a stored point:
/// those neighbors share the weight equally and every other neighbor gets 0.
pub fn idw_weights(distances: &[f64], power: f64, epsilon: f64) -> Vec<f64> {
    let coincident = distances.iter().filter(|&&d| d < epsilon).count();
    if coincident > 0 {
        let w = 1.0 / coincident as f64;
        return distances.iter().map(|&d| if d < epsilon { w } else { 0.0 }).collect();
    }
    let raw: Vec<f64> = distances.iter().map(|&d| 1.0 / (d.powf(power) + epsilon)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Blend `K` neighbor feature rows with [`idw_weights`].
pub fn interpolate(features: &[Vec<f64>], distances: &[f64], config: &QueryConfig) -> Vec<f64> {
    let d = features.first().map_or(0, Vec::len);
    let weights = idw_weights(distances, config.distance_power, config.epsilon);
    let mut out = vec![0.0; d];
    let mut first = true;
    for (f, &w) in features.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(f) {
            *o = if first { w * v } else { *o + w * v };
        }
        first = false;
    }
    out
}

/// Neighbor rows and weights of a query batch at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelQuery {
    /// 1-based level number.
    pub level: usize,
    /// Effective K (clamped to the level size).
    pub k: usize,
    /// `Q x k` row indices into the level.
    pub indices: Vec<usize>,
    /// `Q x k` weights, each row summing to one.
    pub weights: Vec<f64>,
}

/// Neighbor search results for a batch of queries over the configured levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub num_queries: usize,
    pub levels: Vec<LevelQuery>,
}

pub fn plan_queries(hf: &HierarchicalFeatures, queries: &[[f32; 3]], config: &QueryConfig) -> Result<QueryPlan> {
    config.validate()?;
    let mut levels = Vec::with_capacity(config.levels.len());
    for &level in &config.levels {
        let index = &hf.indices[level - 1];
        let k = config.k.min(index.len());
        let mut indices = Vec::with_capacity(queries.len() * k);
        let mut weights = Vec::with_capacity(queries.len() * k);
        for q in queries {
            let nbrs = index.knn(q, k)?;
            let dists: Vec<f64> = nbrs.iter().map(|n| n.distance).collect();
            indices.extend(nbrs.iter().map(|n| n.index));
            weights.extend(idw_weights(&dists, config.distance_power, config.epsilon));
        }
        levels.push(LevelQuery {
            level,
            k,
            indices,
            weights,
        });
    }
    Ok(QueryPlan {
        num_queries: queries.len(),
        levels,
    })
}

/// Interpolated per-level features concatenated into a `Q x width` matrix.
///
/// `level_features` holds one `N_l x D_l` variable per encoder level.
pub fn gather_query_features<T: Scalar>(tape: &mut Tape<T>, level_features: &[Var], plan: &QueryPlan) -> Result<Var> {
    let mut parts = Vec::with_capacity(plan.levels.len());
    for lq in &plan.levels {
        let weights: Vec<T> = lq.weights.iter().map(|&w| T::from_f64(w)).collect();
        let features = level_features[lq.level - 1];
        parts.push(tape.weighted_gather(features, &lq.indices, &weights, lq.k)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat(&parts, 1)
    }
}

/// MLP classifier over concatenated query features.
#[derive(Debug, Clone)]
pub struct QueryHead {
    pub in_width: usize,
    pub num_classes: usize,
    pub layers: Vec<Dense>,
}

impl QueryHead {
    pub fn new<T: Scalar>(
        params: &mut Parameters<T>,
        in_width: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("classifier needs at least one class"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut d = in_width;
        for (i, &w) in hidden.iter().chain([&num_classes]).enumerate() {
            layers.push(Dense::new(params, &format!("head.fc{i}"), d, w, true, rng)?);
            d = w;
        }
        Ok(Self {
            in_width,
            num_classes,
            layers,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Parameters<T>, features: Var) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.in_width {
            return Err(Error::ShapeMismatch {
                op: "classify",
                lhs: shape,
                rhs: vec![self.in_width],
            });
        }
        let mut x = features;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = if i < last {
                layer.forward_act(tape, params, x)?
            } else {
                layer.forward(tape, params, x)?
            };
        }
        Ok(x)
    }
}

/// Row-wise argmax of a `Q x C` logit matrix; ties go to the smaller class id.
pub fn argmax_rows<T: Scalar>(logits: &[T], num_classes: usize) -> Vec<ClassId> {
    logits
        .chunks_exact(num_classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best as ClassId
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Encoder, EncoderConfig};
    use crate::tensor::Tensor;
    use crate::PointCloud;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn coincident_neighbor_is_returned_exactly() {
        let f = vec![vec![0.1, 0.7], vec![3.0, -2.0], vec![9.0, 9.0]];
        let out = interpolate(&f, &[0.5, 0.0, 0.25], &QueryConfig::default());
        assert_eq!(out, vec![3.0, -2.0]);
    }

    #[test]
    fn equal_distances_average() {
        let f = vec![vec![1.0, 4.0], vec![3.0, 0.0]];
        let out = interpolate(&f, &[0.7, 0.7], &QueryConfig::default());
        assert!(close(&out, &[2.0, 2.0], 1e-12));
    }

    #[test]
    fn inverse_square_weights() {
        let w = idw_weights(&[1.0, 2.0, 2.0], 2.0, 1e-8);
        // 1 : 1/4 : 1/4 normalizes to 4/6 : 1/6 : 1/6.
        assert!(close(&w, &[4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 1e-8));
        let f = vec![vec![6.0], vec![12.0], vec![-6.0]];
        let out = interpolate(&f, &[1.0, 2.0, 2.0], &QueryConfig::default());
        assert!(close(&out, &[4.0 + 2.0 - 1.0], 1e-7));
    }

    #[test]
    fn config_validation() {
        assert!(QueryConfig::default().validate().is_ok());
        for bad in [
            QueryConfig { k: 0, ..Default::default() },
            QueryConfig { levels: vec![], ..Default::default() },
            QueryConfig { levels: vec![2, 1], ..Default::default() },
            QueryConfig { levels: vec![5], ..Default::default() },
            QueryConfig { epsilon: 0.0, ..Default::default() },
            QueryConfig { head_widths: vec![0], ..Default::default() },
            QueryConfig { votes: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!(QueryConfig::default().feature_width(&[8, 16, 32, 64]), 120);
    }

    #[test]
    fn zero_head_gives_zero_logits_and_class_zero() {
        let mut params = Parameters::<f64>::new();
        let head = QueryHead::new(&mut params, 5, &[4], 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in params.ids().collect::<Vec<_>>() {
            params.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 5], (0..10).map(|v| v as f64).collect()).unwrap());
        let logits = head.forward(&mut tape, &params, x).unwrap();
        assert!(tape.value(logits).data().iter().all(|&v| v == 0.0));
        assert_eq!(argmax_rows(tape.value(logits).data(), 3), vec![0, 0]);
    }

    #[test]
    fn identity_linear_head_passes_inputs_through() {
        let mut params = Parameters::<f64>::new();
        let head = QueryHead::new(&mut params, 2, &[], 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = head.layers[0].weight;
        params.value_mut(w).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![0.25, -3.0]).unwrap());
        let logits = head.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(logits).data(), &[0.25, -3.0]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut params = Parameters::<f32>::new();
        let head = QueryHead::new(&mut params, 4, &[3], 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 5]));
        assert!(matches!(head.forward(&mut tape, &params, x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn argmax_ties_pick_smallest() {
        assert_eq!(argmax_rows(&[1.0f32, 3.0, 3.0, 0.0, 0.0, 0.0], 3), vec![1, 0]);
    }

    fn encoded(n: usize) -> (PointCloud, Parameters<f64>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let pos: Vec<[f32; 3]> = (0..n)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let cloud = PointCloud::from_positions(pos).unwrap();
        let mut params = Parameters::new();
        let enc = Encoder::new(&mut params, EncoderConfig::default(), 4, &mut rng).unwrap();
        (cloud, params, enc)
    }

    #[test]
    fn plan_weights_are_normalized_and_monotone() {
        let (cloud, params, enc) = encoded(512);
        let mut tape = Tape::new();
        let hf = enc.encode(&mut tape, &params, &cloud, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let queries: Vec<[f32; 3]> = (0..50)
            .map(|_| [rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2), rng.random_range(0.0..1.0)])
            .collect();
        let plan = plan_queries(&hf, &queries, &QueryConfig::default()).unwrap();
        // Level 4 holds 2 points, so k is clamped there.
        assert_eq!(plan.levels.iter().map(|l| l.k).collect::<Vec<_>>(), vec![3, 3, 3, 2]);
        for lq in &plan.levels {
            let pos = &hf.levels[lq.level - 1].positions;
            for (qi, q) in queries.iter().enumerate() {
                let w = &lq.weights[qi * lq.k..(qi + 1) * lq.k];
                let rows = &lq.indices[qi * lq.k..(qi + 1) * lq.k];
                assert!(w.iter().all(|&v| v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                let d: Vec<f64> = rows.iter().map(|&r| crate::pointcloud::index::dist2(q, &pos[r])).collect();
                for a in 0..lq.k {
                    for b in 0..lq.k {
                        if d[a] < d[b] {
                            assert!(w[a] >= w[b]);
                        }
                    }
                }
            }
        }
        let x = gather_query_features(&mut tape, &hf.feature_vars(), &plan).unwrap();
        assert_eq!(tape.shape(x), &[50, 120]);
    }

    #[test]
    fn query_at_stored_point_snaps_at_every_level() {
        let (cloud, params, enc) = encoded(512);
        let mut tape = Tape::new();
        let hf = enc.encode(&mut tape, &params, &cloud, 3).unwrap();
        // A point that survives to the deepest level is stored at all four.
        let p = hf.levels[3].positions[0];
        let plan = plan_queries(&hf, &[p], &QueryConfig::default()).unwrap();
        let x = gather_query_features(&mut tape, &hf.feature_vars(), &plan).unwrap();
        let got = tape.value(x).data().to_vec();
        let mut expected = Vec::new();
        for level in &hf.levels {
            let row = level.positions.iter().position(|q| *q == p).unwrap();
            let width = tape.shape(level.features)[1];
            expected.extend_from_slice(&tape.value(level.features).data()[row * width..(row + 1) * width]);
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn selected_levels_only() {
        let (cloud, params, enc) = encoded(512);
        let mut tape = Tape::new();
        let hf = enc.encode(&mut tape, &params, &cloud, 3).unwrap();
        let cfg = QueryConfig {
            levels: vec![1, 4],
            ..Default::default()
        };
        let plan = plan_queries(&hf, &[[0.5, 0.5, 0.5]], &cfg).unwrap();
        let x = gather_query_features(&mut tape, &hf.feature_vars(), &plan).unwrap();
        assert_eq!(tape.shape(x), &[1, 8 + 64]);
    }
}
