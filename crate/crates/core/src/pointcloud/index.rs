//! Exact nearest-neighbor search over a fixed 3D point set.
//!
//! The index is a median-split KD-tree. Coordinates are stored as `f32`;
//! squared distances are accumulated in `f64`. Neighbors are ordered by
//! `(distance, index)`, so equal distances resolve to the smaller point index
//! and every query result is fully deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f32, left: u32, right: u32 },
}

/// Immutable KD-tree; safe to share across threads for concurrent queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f32; 3]>,
    /// Point indices permuted into leaf order.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

/// Squared Euclidean distance, differences taken in `f64`.
#[inline]
pub fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

#[derive(Clone, Copy)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    pub fn build(positions: &[[f32; 3]]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if positions.len() > u32::MAX as usize {
            return Err(Error::invalid("index supports at most 2^32 - 1 points"));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("position {i} is not finite")));
        }
        let mut index = SpatialIndex {
            points: positions.to_vec(),
            order: (0..positions.len() as u32).collect(),
            nodes: Vec::with_capacity(2 * positions.len() / LEAF_SIZE + 1),
        };
        index.build_node(0, positions.len());
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        // Split along the axis of largest extent.
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][dim].total_cmp(&points[b as usize][dim])
        });
        let value = self.points[self.order[mid] as usize][dim];
        // Placeholder, patched once both children exist.
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize] = Node::Split {
            dim: dim as u8,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.points
    }

    /// The `k` nearest points, ascending by `(distance, index)`.
    pub fn knn(&self, query: &[f32; 3], k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, size: self.len() });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        Ok(found
            .into_iter()
            .map(|c| Neighbor {
                index: c.index as usize,
                distance: c.d2.sqrt(),
            })
            .collect())
    }

    fn knn_node(&self, node: u32, q: &[f32; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let cand = Candidate {
                        d2: dist2(q, &self.points[i as usize]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] as f64 - value as f64;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, heap);
                // A far-side point at exactly the current worst distance can
                // still win on index, so only strictly farther planes prune.
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").d2 {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    /// All points within distance `r` (inclusive), ascending by index.
    pub fn radius_neighbors(&self, query: &[f32; 3], r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("radius must be positive, got {r}")));
        }
        let mut out = Vec::new();
        self.radius_node(0, query, r, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn radius_node(&self, node: u32, q: &[f32; 3], r: f64, out: &mut Vec<usize>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    if dist2(q, &self.points[i as usize]).sqrt() <= r {
                        out.push(i as usize);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] as f64 - value as f64;
                if diff <= r {
                    self.radius_node(left, q, r, out);
                }
                if -diff <= r {
                    self.radius_node(right, q, r, out);
                }
            }
        }
    }

    /// Neighbor indices for many queries, row-major `queries.len() x k`.
    pub fn knn_indices(&self, queries: &[[f32; 3]], k: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(queries.len() * k);
        for q in queries {
            out.extend(self.knn(q, k)?.into_iter().map(|n| n.index));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[[f32; 3]], q: &[f32; 3], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f32; 3]> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(SpatialIndex::build(&[]), Err(Error::EmptyIndex)));
    }

    #[test]
    fn single_point() {
        let idx = SpatialIndex::build(&[[3.0, 4.0, 0.0]]).unwrap();
        let nn = idx.knn(&[0.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(nn, vec![Neighbor { index: 0, distance: 5.0 }]);
        assert!(idx.knn(&[0.0; 3], 2).is_err());
        assert!(idx.knn(&[0.0; 3], 0).is_err());
    }

    #[test]
    fn query_on_point_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 500);
        let idx = SpatialIndex::build(&pts).unwrap();
        let nn = idx.knn(&pts[123], 1).unwrap();
        assert_eq!(nn[0], Neighbor { index: 123, distance: 0.0 });
    }

    #[test]
    fn collinear_example() {
        let idx = SpatialIndex::build(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let nn = idx.knn(&[0.9, 0.0, 0.0], 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn duplicates_both_returned_in_index_order() {
        let mut pts = vec![[5.0, 5.0, 5.0]; 3];
        pts[0] = [0.5, 0.5, 0.5];
        pts[2] = [0.5, 0.5, 0.5];
        let idx = SpatialIndex::build(&pts).unwrap();
        let nn = idx.knn(&[0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn ties_on_a_grid_follow_index_order() {
        // Many exact ties: integer lattice queried at lattice points.
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..6 {
                    pts.push([x as f32, y as f32, z as f32]);
                }
            }
        }
        let idx = SpatialIndex::build(&pts).unwrap();
        for q in [[2.0, 2.0, 2.0], [0.5, 0.5, 0.5], [5.0, 0.0, 2.5]] {
            for k in [1, 7, 19, 33] {
                let got: Vec<usize> = idx.knn(&q, k).unwrap().iter().map(|n| n.index).collect();
                assert_eq!(got, brute_knn(&pts, &q, k), "q={q:?} k={k}");
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 4096);
        let idx = SpatialIndex::build(&pts).unwrap();
        for _ in 0..100 {
            let q = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
            let k = rng.random_range(1..=32);
            let got: Vec<usize> = idx.knn(&q, k).unwrap().iter().map(|n| n.index).collect();
            assert_eq!(got, brute_knn(&pts, &q, k));
        }
    }

    #[test]
    fn radius_basics() {
        let idx = SpatialIndex::build(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(idx.radius_neighbors(&[0.5, 0.5, 0.0], 0.1).unwrap().is_empty());
        assert_eq!(idx.radius_neighbors(&[1.0, 0.0, 0.0], 1e-9).unwrap(), vec![1]);
        assert_eq!(idx.radius_neighbors(&[0.0; 3], 1.0).unwrap(), vec![0, 1]);
        assert!(idx.radius_neighbors(&[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn radius_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 2000);
        let idx = SpatialIndex::build(&pts).unwrap();
        for _ in 0..100 {
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = rng.random_range(0.01..0.5);
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(&q, &pts[i]).sqrt() <= r).collect();
            assert_eq!(idx.radius_neighbors(&q, r).unwrap(), expected);
        }
    }
}
