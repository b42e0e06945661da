use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};

/// Output of [`grid_downsample`].
#[derive(Debug, Clone)]
pub struct GridSampleResult {
    pub sampled: PointCloud,
    pub cell_size: f64,
    /// Source indices merged into each sampled point, ascending.
    pub source_map: Vec<Vec<usize>>,
}

/// Integer cell coordinates of a point; cells are anchored at the origin.
pub fn cell_of(p: &[f32; 3], cell_size: f64) -> [i64; 3] {
    p.map(|c| (c as f64 / cell_size).floor() as i64)
}

/// One point per occupied cell: barycenter position, majority label (ties go
/// to the smaller class id), per-channel mean color rounded half-up.
///
/// Output order follows the first source point of each cell.
pub fn grid_downsample(cloud: &PointCloud, cell_size: f64) -> Result<GridSampleResult> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::invalid(format!(
            "cell size must be positive and finite, got {cell_size}"
        )));
    }
    let mut slot_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        let slot = *slot_of.entry(cell_of(p, cell_size)).or_insert_with(|| {
            cells.push(Vec::new());
            cells.len() - 1
        });
        cells[slot].push(i);
    }

    let positions = cells
        .iter()
        .map(|members| {
            let mut sum = [0f64; 3];
            for &i in members {
                for (s, c) in sum.iter_mut().zip(cloud.positions()[i]) {
                    *s += c as f64;
                }
            }
            sum.map(|s| (s / members.len() as f64) as f32)
        })
        .collect();

    let colors = cloud.colors().map(|colors| {
        cells
            .iter()
            .map(|members| {
                let n = members.len() as u64;
                let mut sum = [0u64; 3];
                for &i in members {
                    for (s, c) in sum.iter_mut().zip(colors[i]) {
                        *s += c as u64;
                    }
                }
                // floor(sum / n + 1/2)
                sum.map(|s| ((2 * s + n) / (2 * n)) as u8)
            })
            .collect()
    });

    let labels = cloud.labels().map(|labels| {
        cells
            .iter()
            .map(|members| majority(members.iter().map(|&i| labels[i])))
            .collect()
    });

    let sampled = PointCloud::new(positions, colors, labels, cloud.num_classes())?;
    Ok(GridSampleResult {
        sampled,
        cell_size,
        source_map: cells,
    })
}

fn majority(labels: impl Iterator<Item = ClassId>) -> ClassId {
    let mut counts: HashMap<ClassId, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(lb.cmp(la)))
        .map(|(l, _)| l)
        .unwrap_or(0)
}

/// `round(ratio * n)` with validation shared by every ratio-based sampler.
///
/// Halves round to even, so 5% of 10 points selects zero points and is
/// rejected.
pub fn count_for_ratio(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let m = (ratio * n as f64).round_ties_even() as usize;
    if m == 0 {
        return Err(Error::invalid(format!(
            "ratio {ratio} of {n} points selects zero points"
        )));
    }
    Ok(m.min(n))
}

/// The first `m` entries of a seeded permutation of `0..n`, sorted ascending.
///
/// For a fixed seed the selections are nested: a smaller `m` always picks a
/// subset of a larger one.
pub fn seeded_prefix_sample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm.truncate(m.min(n));
    perm.sort_unstable();
    perm
}

/// Uniform sampling without replacement of `round(ratio * N)` points.
pub fn random_downsample(
    cloud: &PointCloud,
    ratio: f64,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    let m = count_for_ratio(cloud.len(), ratio)?;
    let index_map = seeded_prefix_sample(cloud.len(), m, seed);
    Ok((cloud.select(&index_map), index_map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn single_point_unchanged() {
        let cloud = PointCloud::new(vec![[1.25, -3.5, 7.0]], Some(vec![[1, 2, 3]]), Some(vec![4]), 5)
            .unwrap();
        for size in [0.01, 1.0, 100.0] {
            let r = grid_downsample(&cloud, size).unwrap();
            assert_eq!(r.sampled, cloud);
            assert_eq!(r.source_map, vec![vec![0]]);
        }
    }

    #[test]
    fn unit_cube_corners_collapse_to_center() {
        let mut pos = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pos.push([x, y, z]);
                }
            }
        }
        let r = grid_downsample(&PointCloud::from_positions(pos).unwrap(), 10.0).unwrap();
        assert_eq!(r.sampled.positions(), &[[0.5, 0.5, 0.5]]);
        assert_eq!(r.source_map[0].len(), 8);
    }

    #[test]
    fn majority_label_tie_prefers_smaller_class() {
        let cloud = PointCloud::new(vec![[0.1; 3]; 4], None, Some(vec![3, 1, 3, 1]), 4).unwrap();
        let r = grid_downsample(&cloud, 1.0).unwrap();
        assert_eq!(r.sampled.labels().unwrap(), &[1]);
    }

    #[test]
    fn color_mean_rounds_half_up() {
        let cloud = PointCloud::new(vec![[0.1; 3]; 2], Some(vec![[0, 1, 255], [1, 2, 254]]), None, 0)
            .unwrap();
        let r = grid_downsample(&cloud, 1.0).unwrap();
        // means 0.5, 1.5, 254.5
        assert_eq!(r.sampled.colors().unwrap(), &[[1, 2, 255]]);
    }

    #[test]
    fn negative_coordinates_use_floor() {
        let cloud = PointCloud::from_positions(vec![[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]).unwrap();
        assert_eq!(grid_downsample(&cloud, 1.0).unwrap().sampled.len(), 2);
    }

    #[test]
    fn rejects_bad_cell_size() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]]).unwrap();
        assert!(grid_downsample(&cloud, 0.0).is_err());
        assert!(grid_downsample(&cloud, -1.0).is_err());
        assert!(grid_downsample(&cloud, f64::NAN).is_err());
    }

    #[test]
    fn ratio_one_is_identity() {
        let cloud = PointCloud::from_positions((0..17).map(|i| [i as f32, 0.0, 0.0]).collect()).unwrap();
        let (out, map) = random_downsample(&cloud, 1.0, 99).unwrap();
        assert_eq!(map, (0..17).collect::<Vec<_>>());
        assert_eq!(out, cloud);
    }

    #[test]
    fn deterministic_and_distinct() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]; 1000]).unwrap();
        let (_, a) = random_downsample(&cloud, 0.1, 7).unwrap();
        let (_, b) = random_downsample(&cloud, 0.1, 7).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 100);
        let differs = (0..10u64).any(|s| {
            random_downsample(&cloud, 0.1, 2 * s).unwrap().1
                != random_downsample(&cloud, 0.1, 2 * s + 1).unwrap().1
        });
        assert!(differs);
    }

    #[test]
    fn zero_selection_is_an_error() {
        let cloud = PointCloud::from_positions(vec![[0.0; 3]; 10]).unwrap();
        assert!(random_downsample(&cloud, 0.05, 1).is_err());
        assert!(random_downsample(&cloud, 0.0, 1).is_err());
        assert!(random_downsample(&cloud, 1.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn cell_count_matches_hash_oracle(seed in 0u64..1000, n in 1usize..400, cell in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos: Vec<[f32; 3]> = (0..n)
                .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0)])
                .collect();
            let cloud = PointCloud::from_positions(pos.clone()).unwrap();
            let r = grid_downsample(&cloud, cell).unwrap();

            // Independent oracle: stringly-keyed set of floor(x / s) triples.
            let occupied: HashSet<String> = pos
                .iter()
                .map(|p| format!("{}:{}:{}",
                    (p[0] as f64 / cell).floor(), (p[1] as f64 / cell).floor(), (p[2] as f64 / cell).floor()))
                .collect();
            prop_assert_eq!(r.sampled.len(), occupied.len());

            let mut seen = vec![0usize; n];
            for members in &r.source_map {
                for &i in members {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn prefix_samples_are_nested(n in 1usize..500, seed in any::<u64>(), a in 0usize..500, b in 0usize..500) {
            let (small, large) = (a.min(b).min(n), a.max(b).min(n));
            let s = seeded_prefix_sample(n, small, seed);
            let l: HashSet<usize> = seeded_prefix_sample(n, large, seed).into_iter().collect();
            prop_assert!(s.iter().all(|i| l.contains(i)));
        }
    }
}
