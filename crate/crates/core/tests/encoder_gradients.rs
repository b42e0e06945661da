use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqn_core::encoder::{
    input_features, Encoder, EncoderConfig, EncoderGeometry, LfaBlock, StageGeometry, NUM_LEVELS,
};
use sqn_core::tensor::{Parameters, Tape, Tensor, Var};
use sqn_core::PointCloud;

fn positions(n: usize, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5)])
        .collect()
}

fn small_config() -> EncoderConfig {
    EncoderConfig {
        level_dims: [4, 6, 6, 8],
        decimation: [2; NUM_LEVELS],
        neighbors_k: 4,
        seed: 0,
    }
}

/// Compares tape gradients with central differences for a sample of entries of
/// every parameter. `loss` must rebuild the graph from scratch.
fn check_gradients(params: &mut Parameters<f64>, loss: impl Fn(&Parameters<f64>, &mut Tape<f64>) -> Var) {
    let mut tape = Tape::new();
    let l = loss(params, &mut tape);
    tape.backward(l).unwrap();
    let analytic: Vec<(sqn_core::tensor::ParamId, Vec<f64>)> =
        tape.param_grads().map(|(id, g)| (id, g.to_vec())).collect();
    assert!(!analytic.is_empty());

    let eval = |p: &Parameters<f64>| {
        let mut t = Tape::new();
        let v = loss(p, &mut t);
        t.value(v).data()[0]
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (id, grad) in analytic {
        let n = grad.len();
        for j in (0..n).step_by((n / 6).max(1)) {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + h;
            let up = eval(params);
            params.value_mut(id).data_mut()[j] = orig - h;
            let down = eval(params);
            params.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grad[j]).abs() / (numeric.abs() + grad[j].abs()).max(1e-4);
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(checked > 20);
    assert!(worst < 1e-3, "worst relative gradient error {worst}");
}

fn readout(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape.clone(), (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let w = tape.constant(w);
    let prod = tape.mul(x, w).unwrap();
    tape.sum_all(prod)
}

#[test]
fn lfa_block_gradients_match_finite_differences() {
    let pos = positions(32, 1);
    let cloud = PointCloud::from_positions(pos.clone()).unwrap();
    let stage = StageGeometry::build(&pos, 8, 4, 0).unwrap();
    let mut params = Parameters::<f64>::new();
    let block = LfaBlock::new(&mut params, "b", 4, 6, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    check_gradients(&mut params, |p, tape| {
        let x = tape.constant(input_features(&cloud));
        let y = block.forward(tape, p, x, &stage).unwrap();
        readout(tape, y, 9)
    });
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let cloud = PointCloud::from_positions(positions(64, 3)).unwrap();
    let mut params = Parameters::<f64>::new();
    let enc = Encoder::new(&mut params, small_config(), 4, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    check_gradients(&mut params, |p, tape| {
        let hf = enc.encode(tape, p, &cloud, 5).unwrap();
        readout(tape, hf.levels[3].features, 10)
    });
}

#[test]
fn deepest_level_ignores_features_outside_its_receptive_field() {
    let pos = positions(256, 6);
    let cfg = small_config();
    let geometry = EncoderGeometry::build(&pos, &cfg, 7).unwrap();

    // Trace back: a block output row depends on its own input row (skip), its
    // neighbors, and their neighbors (two pooling units).
    let mut needed: BTreeSet<usize> = (0..geometry.stages[3].kept.len()).collect();
    for stage in geometry.stages.iter().rev() {
        let k = stage.k;
        let mut rows: BTreeSet<usize> = needed.iter().map(|&r| stage.kept[r]).collect();
        for _ in 0..2 {
            let expanded: Vec<usize> = rows
                .iter()
                .flat_map(|&r| stage.neighbors[r * k..(r + 1) * k].iter().copied())
                .collect();
            rows.extend(expanded);
        }
        needed = rows;
    }
    assert!(needed.len() < pos.len(), "receptive field must not cover the whole cloud");

    let cloud = PointCloud::from_positions(pos.clone()).unwrap();
    let mut params = Parameters::<f32>::new();
    let enc = Encoder::new(&mut params, cfg, 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let run = |zero_outside: bool| {
        let mut feats = input_features::<f32>(&cloud);
        if zero_outside {
            for i in (0..pos.len()).filter(|i| !needed.contains(i)) {
                feats.data_mut()[i * 4..(i + 1) * 4].fill(0.0);
            }
        }
        let mut tape = Tape::new();
        let x = tape.constant(feats);
        let hf = enc.forward(&mut tape, &params, x, &geometry).unwrap();
        tape.value(hf.levels[3].features).data().to_vec()
    };
    let base = run(false);
    assert_eq!(base, run(true));
}
