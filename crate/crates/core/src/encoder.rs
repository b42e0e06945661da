//! Hierarchical point encoder: four Local Feature Aggregation (LFA) blocks,
//! each followed by random sampling.
//!
//! Block `l` runs on the points of the previous level (the input cloud for
//! the first block) and keeps its feature width; random sampling then keeps
//! `ceil(N / decimation)` of its rows. Every level retains the positions of
//! its surviving points so the query head can search them.
//!
//! Inside a block:
//!
//! ```text
//! x0    = act(fc_in(x))                                   N   x h
//! code  = [p_i, p_k, p_i - p_k, |p_i - p_k|]              N*K x 10
//! u1    = pool1([act(loc1(code)), x0[nbr]])                N   x 2h
//! x1    = act(post1(u1))                                  N   x h
//! u2    = pool2([act(loc2(code)), x1[nbr]])                N   x 2h
//! out   = act(post2(u2) + skip(x))                        N   x d_out
//! ```
//!
//! with `h = d_out / 2` and `act` the leaky ReLU. `pool` is attentive
//! pooling: a bias-free linear gate, softmax over the K neighbors, and a
//! score-weighted sum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{derive_seed, Dense};
use crate::pointcloud::sampling::seeded_prefix_sample;
use crate::pointcloud::{PointCloud, SpatialIndex};
use crate::tensor::{Parameters, Scalar, Tape, Tensor, Var};

pub const NUM_LEVELS: usize = 4;
/// Width of the raw relative-position code.
pub const REL_CODE_WIDTH: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub level_dims: [usize; NUM_LEVELS],
    pub decimation: [usize; NUM_LEVELS],
    /// Neighbors aggregated inside each LFA block.
    pub neighbors_k: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            level_dims: [8, 16, 32, 64],
            decimation: [4; NUM_LEVELS],
            neighbors_k: 16,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Full-size widths 32/128/256/512.
    pub fn full_widths() -> Self {
        Self {
            level_dims: [32, 128, 256, 512],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("level widths must be positive"));
        }
        if self.decimation.iter().any(|&d| d == 0) {
            return Err(Error::invalid("decimation ratios must be at least 1"));
        }
        if self.neighbors_k == 0 {
            return Err(Error::invalid("encoder neighbor count must be positive"));
        }
        Ok(())
    }

    /// Point counts of the four levels for an `n`-point input.
    pub fn level_sizes(&self, n: usize) -> [usize; NUM_LEVELS] {
        let mut sizes = [0; NUM_LEVELS];
        let mut cur = n;
        for (s, &r) in sizes.iter_mut().zip(&self.decimation) {
            cur = cur.div_ceil(r);
            *s = cur;
        }
        sizes
    }

    /// The input must hold at least the product of the decimation ratios so
    /// the deepest level still has one point per full sampling chain.
    pub fn check_input_size(&self, n: usize) -> Result<()> {
        let needed = self.decimation.iter().product::<usize>();
        if n == 0 || n < needed {
            return Err(Error::CloudTooSmall { n });
        }
        Ok(())
    }
}

/// Per-point input feature: position, color / 255 when present, constant 1.
pub fn input_width(has_colors: bool) -> usize {
    if has_colors {
        7
    } else {
        4
    }
}

pub fn input_features<T: Scalar>(cloud: &PointCloud) -> Tensor<T> {
    let width = input_width(cloud.colors().is_some());
    let mut data = Vec::with_capacity(cloud.len() * width);
    for (i, p) in cloud.positions().iter().enumerate() {
        data.extend(p.iter().map(|&c| T::from_f64(c as f64)));
        if let Some(colors) = cloud.colors() {
            data.extend(colors[i].iter().map(|&c| T::from_f64(c as f64 / 255.0)));
        }
        data.push(T::ONE);
    }
    Tensor::new(vec![cloud.len(), width], data).expect("width matches data")
}

/// Raw geometric code of each neighbor relative to a center point.
pub fn relative_position_code(center: &[f32; 3], neighbors: &[[f32; 3]]) -> Vec<[f32; REL_CODE_WIDTH]> {
    neighbors
        .iter()
        .map(|p| {
            let d = [center[0] - p[0], center[1] - p[1], center[2] - p[2]];
            let dist = crate::pointcloud::index::dist2(center, p).sqrt() as f32;
            [center[0], center[1], center[2], p[0], p[1], p[2], d[0], d[1], d[2], dist]
        })
        .collect()
}

/// Parameter-free structure of one encoder stage.
#[derive(Debug, Clone)]
pub struct StageGeometry {
    /// Neighbor count actually used (clamped to the stage size).
    pub k: usize,
    /// `n_in x k` neighbor rows into the stage input.
    pub neighbors: Vec<usize>,
    /// `n_in*k x 10` relative-position codes.
    pub rel_code: Vec<f32>,
    /// Rows of the stage input that survive random sampling, ascending.
    pub kept: Vec<usize>,
    /// Positions of the surviving rows.
    pub positions: Vec<[f32; 3]>,
}

impl StageGeometry {
    pub fn build(positions: &[[f32; 3]], neighbors_k: usize, ratio: usize, seed: u64) -> Result<Self> {
        let n = positions.len();
        let k = neighbors_k.min(n);
        let index = SpatialIndex::build(positions)?;
        let neighbors = index.knn_indices(positions, k)?;
        let mut rel_code = Vec::with_capacity(n * k * REL_CODE_WIDTH);
        for (i, center) in positions.iter().enumerate() {
            let nbr: Vec<[f32; 3]> = neighbors[i * k..(i + 1) * k].iter().map(|&j| positions[j]).collect();
            for code in relative_position_code(center, &nbr) {
                rel_code.extend_from_slice(&code);
            }
        }
        let kept = random_sample_rows(n, ratio, seed)?;
        let positions = kept.iter().map(|&i| positions[i]).collect();
        Ok(Self {
            k,
            neighbors,
            rel_code,
            kept,
            positions,
        })
    }
}

/// Neighborhoods and sampling decisions for all four stages of one cloud.
#[derive(Debug, Clone)]
pub struct EncoderGeometry {
    pub input_len: usize,
    pub stages: Vec<StageGeometry>,
}

impl EncoderGeometry {
    pub fn build(positions: &[[f32; 3]], config: &EncoderConfig, sample_seed: u64) -> Result<Self> {
        config.validate()?;
        config.check_input_size(positions.len())?;
        let mut stages = Vec::with_capacity(NUM_LEVELS);
        let mut current: Vec<[f32; 3]> = positions.to_vec();
        for level in 0..NUM_LEVELS {
            let stage = StageGeometry::build(
                &current,
                config.neighbors_k,
                config.decimation[level],
                derive_seed(sample_seed, level as u64),
            )?;
            current = stage.positions.clone();
            stages.push(stage);
        }
        Ok(Self {
            input_len: positions.len(),
            stages,
        })
    }

    /// For each level, the input-cloud index of every surviving point.
    pub fn lineage(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(NUM_LEVELS);
        let mut current: Vec<usize> = (0..self.input_len).collect();
        for stage in &self.stages {
            current = stage.kept.iter().map(|&i| current[i]).collect();
            out.push(current.clone());
        }
        out
    }
}

/// Uniform selection of `ceil(n / ratio)` rows without replacement, ascending.
pub fn random_sample_rows(n: usize, ratio: usize, seed: u64) -> Result<Vec<usize>> {
    if ratio == 0 {
        return Err(Error::invalid("decimation ratio must be at least 1"));
    }
    let keep = n.div_ceil(ratio);
    if keep == 0 {
        return Err(Error::Empty("random sampling result"));
    }
    Ok(seeded_prefix_sample(n, keep, seed))
}

/// Random sampling of a level: `(positions, features, kept_indices)`.
pub fn random_sample_level<T: Scalar>(
    tape: &mut Tape<T>,
    positions: &[[f32; 3]],
    features: Var,
    ratio: usize,
    seed: u64,
) -> Result<(Vec<[f32; 3]>, Var, Vec<usize>)> {
    let kept = random_sample_rows(positions.len(), ratio, seed)?;
    let feats = tape.gather_rows(features, &kept)?;
    Ok((kept.iter().map(|&i| positions[i]).collect(), feats, kept))
}

/// Attentive pooling of `n*k` neighbor rows into `n` rows.
pub fn attentive_pooling<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Parameters<T>,
    gate: &Dense,
    features: Var,
    k: usize,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    let (rows, d) = match shape[..] {
        [r, d] if k > 0 && r % k == 0 => (r, d),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "attentive_pooling",
                lhs: shape,
                rhs: vec![k],
            })
        }
    };
    let n = rows / k;
    let scores = gate.forward(tape, params, features)?;
    let scores = tape.reshape(scores, vec![n, k, d])?;
    let scores = tape.softmax(scores, 1)?;
    let feats = tape.reshape(features, vec![n, k, d])?;
    let weighted = tape.mul(scores, feats)?;
    tape.sum_axis(weighted, 1)
}

#[derive(Debug, Clone)]
pub struct LfaBlock {
    pub d_in: usize,
    pub d_out: usize,
    fc_in: Dense,
    loc1: Dense,
    gate1: Dense,
    post1: Dense,
    loc2: Dense,
    gate2: Dense,
    post2: Dense,
    skip: Dense,
}

impl LfaBlock {
    pub fn new<T: Scalar>(
        params: &mut Parameters<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = (d_out / 2).max(1);
        Ok(Self {
            d_in,
            d_out,
            fc_in: Dense::new(params, &format!("{name}.fc_in"), d_in, h, true, rng)?,
            loc1: Dense::new(params, &format!("{name}.loc1"), REL_CODE_WIDTH, h, true, rng)?,
            gate1: Dense::new(params, &format!("{name}.gate1"), 2 * h, 2 * h, false, rng)?,
            post1: Dense::new(params, &format!("{name}.post1"), 2 * h, h, true, rng)?,
            loc2: Dense::new(params, &format!("{name}.loc2"), REL_CODE_WIDTH, h, true, rng)?,
            gate2: Dense::new(params, &format!("{name}.gate2"), 2 * h, 2 * h, false, rng)?,
            post2: Dense::new(params, &format!("{name}.post2"), 2 * h, d_out, true, rng)?,
            skip: Dense::new(params, &format!("{name}.skip"), d_in, d_out, true, rng)?,
        })
    }

    /// Shared one-layer MLP over the relative-position code (first unit).
    pub fn encode_positions<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Parameters<T>,
        code: Var,
    ) -> Result<Var> {
        self.loc1.forward_act(tape, params, code)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Parameters<T>,
        x: Var,
        stage: &StageGeometry,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let n = stage.neighbors.len() / stage.k.max(1);
        if shape != [n, self.d_in] {
            return Err(Error::ShapeMismatch {
                op: "lfa_block",
                lhs: shape,
                rhs: vec![n, self.d_in],
            });
        }
        let k = stage.k;
        let code = Tensor::new(
            vec![n * k, REL_CODE_WIDTH],
            stage.rel_code.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?;
        let code = tape.constant(code);

        let x0 = self.fc_in.forward_act(tape, params, x)?;
        let l1 = self.loc1.forward_act(tape, params, code)?;
        let n1 = tape.gather_rows(x0, &stage.neighbors)?;
        let c1 = tape.concat(&[l1, n1], 1)?;
        let u1 = attentive_pooling(tape, params, &self.gate1, c1, k)?;
        let x1 = self.post1.forward_act(tape, params, u1)?;

        let l2 = self.loc2.forward_act(tape, params, code)?;
        let n2 = tape.gather_rows(x1, &stage.neighbors)?;
        let c2 = tape.concat(&[l2, n2], 1)?;
        let u2 = attentive_pooling(tape, params, &self.gate2, c2, k)?;
        let main = self.post2.forward(tape, params, u2)?;

        let shortcut = self.skip.forward(tape, params, x)?;
        let sum = tape.add(main, shortcut)?;
        Ok(tape.leaky_relu(sum, T::from_f64(crate::layers::LEAKY_SLOPE)))
    }
}

/// Parameter handles of the four-block encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub input_dim: usize,
    pub blocks: Vec<LfaBlock>,
}

/// One encoded level: positions and the feature rows recorded on a tape.
#[derive(Debug, Clone)]
pub struct EncodedLevel {
    pub positions: Vec<[f32; 3]>,
    pub features: Var,
    /// Input-cloud index of every row.
    pub source_indices: Vec<usize>,
}

/// The four levels produced by one encoder pass, shallow to deep.
#[derive(Debug, Clone)]
pub struct HierarchicalFeatures {
    pub levels: Vec<EncodedLevel>,
    pub indices: Vec<SpatialIndex>,
}

impl HierarchicalFeatures {
    pub fn feature_vars(&self) -> Vec<Var> {
        self.levels.iter().map(|l| l.features).collect()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.positions.len()).collect()
    }
}

impl Encoder {
    pub fn new<T: Scalar>(
        params: &mut Parameters<T>,
        config: EncoderConfig,
        input_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(NUM_LEVELS);
        let mut d_in = input_dim;
        for (l, &d_out) in config.level_dims.iter().enumerate() {
            blocks.push(LfaBlock::new(params, &format!("enc.l{}", l + 1), d_in, d_out, rng)?);
            d_in = d_out;
        }
        Ok(Self {
            config,
            input_dim,
            blocks,
        })
    }

    /// Run the four blocks over precomputed geometry.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Parameters<T>,
        input: Var,
        geometry: &EncoderGeometry,
    ) -> Result<HierarchicalFeatures> {
        let lineage = geometry.lineage();
        let mut x = input;
        let mut levels = Vec::with_capacity(NUM_LEVELS);
        let mut indices = Vec::with_capacity(NUM_LEVELS);
        for ((block, stage), source) in self.blocks.iter().zip(&geometry.stages).zip(lineage) {
            let y = block.forward(tape, params, x, stage)?;
            x = tape.gather_rows(y, &stage.kept)?;
            indices.push(SpatialIndex::build(&stage.positions)?);
            levels.push(EncodedLevel {
                positions: stage.positions.clone(),
                features: x,
                source_indices: source,
            });
        }
        Ok(HierarchicalFeatures { levels, indices })
    }

    /// Encode a cloud: geometry with `sample_seed`, then the forward pass.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &Parameters<T>,
        cloud: &PointCloud,
        sample_seed: u64,
    ) -> Result<HierarchicalFeatures> {
        let width = input_width(cloud.colors().is_some());
        if width != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encode input",
                lhs: vec![cloud.len(), width],
                rhs: vec![cloud.len(), self.input_dim],
            });
        }
        let geometry = EncoderGeometry::build(cloud.positions(), &self.config, sample_seed)?;
        let input = tape.constant(input_features(cloud));
        self.forward(tape, params, input, &geometry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_positions(n: usize, seed: u64) -> Vec<[f32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)])
            .collect()
    }

    #[test]
    fn raw_code_layout() {
        let c = [1.0, 2.0, 3.0];
        let codes = relative_position_code(&c, &[c, [1.0, 2.0, 5.0]]);
        assert_eq!(codes[0].len(), REL_CODE_WIDTH);
        assert_eq!(&codes[0][6..], &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&codes[1][6..], &[0.0, 0.0, -2.0, 2.0]);
    }

    #[test]
    fn translation_only_moves_absolute_terms() {
        let c = [0.5, -1.0, 2.0];
        let nbrs = [[1.0, 1.0, 1.0], [0.0, 0.25, 2.5]];
        let t = [4.0, -8.0, 16.0];
        let shift = |p: [f32; 3]| [p[0] + t[0], p[1] + t[1], p[2] + t[2]];
        let a = relative_position_code(&c, &nbrs);
        let b = relative_position_code(&shift(c), &nbrs.map(shift));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(&x[6..], &y[6..]);
            assert_ne!(&x[..3], &y[..3]);
        }
    }

    #[test]
    fn level_sizes_follow_ceil_division() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.level_sizes(256), [64, 16, 4, 1]);
        assert_eq!(cfg.level_sizes(1024), [256, 64, 16, 4]);
        assert_eq!(cfg.level_sizes(1000), [250, 63, 16, 4]);
        assert!(cfg.check_input_size(256).is_ok());
        assert!(matches!(cfg.check_input_size(255), Err(Error::CloudTooSmall { n: 255 })));
        let small = EncoderConfig {
            decimation: [2; NUM_LEVELS],
            ..cfg
        };
        assert!(small.check_input_size(16).is_ok());
    }

    #[test]
    fn random_sampling_contract() {
        assert_eq!(random_sample_rows(10, 1, 3).unwrap(), (0..10).collect::<Vec<_>>());
        let kept = random_sample_rows(256, 4, 3).unwrap();
        assert_eq!(kept.len(), 64);
        assert!(kept.windows(2).all(|w| w[0] < w[1]) && kept[63] < 256);
        assert_eq!(kept, random_sample_rows(256, 4, 3).unwrap());
        assert!(random_sample_rows(0, 4, 3).is_err());
    }

    #[test]
    fn sample_level_gathers_matching_rows() {
        let pos = random_positions(20, 1);
        let mut tape = Tape::<f64>::new();
        let feats = tape.constant(Tensor::new(vec![20, 1], (0..20).map(|v| v as f64).collect()).unwrap());
        let (p, f, kept) = random_sample_level(&mut tape, &pos, feats, 4, 9).unwrap();
        assert_eq!(kept.len(), 5);
        for (j, &i) in kept.iter().enumerate() {
            assert_eq!(p[j], pos[i]);
            assert_eq!(tape.value(f).data()[j], i as f64);
        }
    }

    fn gate(params: &mut Parameters<f64>, d: usize, seed: u64) -> Dense {
        Dense::new(params, "gate", d, d, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn pooling_single_neighbor_is_identity() {
        let mut params = Parameters::<f64>::new();
        let g = gate(&mut params, 3, 1);
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap());
        let out = attentive_pooling(&mut tape, &params, &g, f, 1).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(f).data());
    }

    #[test]
    fn pooling_identical_neighbors_returns_shared_feature() {
        let mut params = Parameters::<f64>::new();
        let g = gate(&mut params, 2, 2);
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new(vec![4, 2], [0.3, -1.7].repeat(4)).unwrap());
        let out = attentive_pooling(&mut tape, &params, &g, f, 4).unwrap();
        for (a, b) in tape.value(out).data().iter().zip([0.3, -1.7]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_matches_two_loop_oracle_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (k, d) = (4, 3);
        let mut params = Parameters::<f64>::new();
        let g = gate(&mut params, d, 5);
        let feats: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = params.value(g.weight).data().to_vec();

        // Oracle: score[j][c] = sum_i f[j][i] w[i][c]; softmax over j per c.
        let mut expected = vec![0.0; d];
        for c in 0..d {
            let s: Vec<f64> = (0..k).map(|j| (0..d).map(|i| feats[j * d + i] * w[i * d + c]).sum()).collect();
            let z: f64 = s.iter().map(|v| v.exp()).sum();
            for j in 0..k {
                expected[c] += s[j].exp() / z * feats[j * d + c];
            }
        }

        let run = |rows: &[usize]| -> Vec<f64> {
            let mut tape = Tape::new();
            let data: Vec<f64> = rows.iter().flat_map(|&j| feats[j * d..(j + 1) * d].to_vec()).collect();
            let f = tape.constant(Tensor::new(vec![k, d], data).unwrap());
            let out = attentive_pooling(&mut tape, &params, &g, f, k).unwrap();
            tape.value(out).data().to_vec()
        };
        let got = run(&[0, 1, 2, 3]);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6);
        }
        for perm in [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]] {
            for (a, b) in run(&perm).iter().zip(&got) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn block_keeps_row_count_and_width() {
        let pos = random_positions(64, 2);
        let stage = StageGeometry::build(&pos, 16, 4, 1).unwrap();
        let mut params = Parameters::<f32>::new();
        let block = LfaBlock::new(&mut params, "b", 4, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cloud = PointCloud::from_positions(pos).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(input_features(&cloud));
        let y = block.forward(&mut tape, &params, x, &stage).unwrap();
        assert_eq!(tape.shape(y), &[64, 8]);
    }

    #[test]
    fn block_output_is_invariant_to_neighbor_order() {
        let pos = random_positions(48, 3);
        let stage = &StageGeometry::build(&pos, 16, 4, 1).unwrap();
        let k = stage.k;
        let mut shuffled = stage.clone();
        for i in 0..48 {
            // Reverse each neighbor list together with its codes.
            shuffled.neighbors[i * k..(i + 1) * k].reverse();
            let codes: Vec<f32> = stage.rel_code[i * k * REL_CODE_WIDTH..(i + 1) * k * REL_CODE_WIDTH]
                .chunks_exact(REL_CODE_WIDTH)
                .rev()
                .flatten()
                .copied()
                .collect();
            shuffled.rel_code[i * k * REL_CODE_WIDTH..(i + 1) * k * REL_CODE_WIDTH].copy_from_slice(&codes);
        }
        let mut params = Parameters::<f64>::new();
        let block = LfaBlock::new(&mut params, "b", 4, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cloud = PointCloud::from_positions(pos).unwrap();
        let run = |s: &StageGeometry| {
            let mut tape = Tape::new();
            let x = tape.constant(input_features(&cloud));
            let y = block.forward(&mut tape, &params, x, s).unwrap();
            tape.value(y).data().to_vec()
        };
        for (a, b) in run(stage).iter().zip(run(&shuffled)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn encode_shapes() {
        let mut params = Parameters::<f32>::new();
        let enc = Encoder::new(&mut params, EncoderConfig::default(), 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cloud = PointCloud::from_positions(random_positions(1024, 4)).unwrap();
        let mut tape = Tape::new();
        let hf = enc.encode(&mut tape, &params, &cloud, 11).unwrap();
        assert_eq!(hf.level_sizes(), vec![256, 64, 16, 4]);
        for (level, &d) in hf.levels.iter().zip(&[8, 16, 32, 64]) {
            assert_eq!(tape.shape(level.features), &[level.positions.len(), d]);
        }
        let small = PointCloud::from_positions(random_positions(256, 4)).unwrap();
        let mut tape = Tape::new();
        assert_eq!(enc.encode(&mut tape, &params, &small, 1).unwrap().level_sizes(), vec![64, 16, 4, 1]);
    }

    #[test]
    fn levels_are_nested_subsets_with_lineage() {
        let pos = random_positions(600, 5);
        let geom = EncoderGeometry::build(&pos, &EncoderConfig::default(), 2).unwrap();
        let prov = geom.lineage();
        let mut prev: Vec<[f32; 3]> = pos.clone();
        for (stage, src) in geom.stages.iter().zip(&prov) {
            for (p, &s) in stage.positions.iter().zip(src) {
                assert_eq!(*p, pos[s]);
                assert!(prev.contains(p));
            }
            prev = stage.positions.clone();
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let cloud = PointCloud::from_positions(random_positions(300, 6)).unwrap();
        let run = || {
            let mut params = Parameters::<f32>::new();
            let enc = Encoder::new(&mut params, EncoderConfig::default(), 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
            let mut tape = Tape::new();
            let hf = enc.encode(&mut tape, &params, &cloud, 3).unwrap();
            hf.levels
                .iter()
                .flat_map(|l| tape.value(l.features).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn color_mismatch_is_an_error() {
        let mut params = Parameters::<f32>::new();
        let enc = Encoder::new(&mut params, EncoderConfig::default(), 7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cloud = PointCloud::from_positions(random_positions(300, 7)).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(enc.encode(&mut tape, &params, &cloud, 0), Err(Error::ShapeMismatch { .. })));
    }
}
