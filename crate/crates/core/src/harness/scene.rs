//! Synthetic indoor rooms with exact per-class point counts.
//!
//! Objects touch each other (boxes stand on the floor, spheres rest on boxes
//! or the floor, walls meet the floor), so every class shares a boundary with
//! at least one other class.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::derive_seed;
use crate::pointcloud::{ClassId, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archetype {
    Floor,
    Wall,
    FurnitureBox,
    ClutterSphere,
}

impl Archetype {
    pub fn name(self) -> &'static str {
        match self {
            Archetype::Floor => "floor",
            Archetype::Wall => "wall",
            Archetype::FurnitureBox => "furniture",
            Archetype::ClutterSphere => "clutter",
        }
    }

    /// Object colors. Palettes overlap across classes (gray furniture next to
    /// gray walls, wooden clutter on wooden boxes) so color alone is ambiguous.
    fn palette(self) -> &'static [[u8; 3]] {
        match self {
            Archetype::Floor => &[[150, 120, 90], [125, 125, 120], [170, 150, 120]],
            Archetype::Wall => &[[220, 215, 200], [200, 200, 205], [230, 220, 190], [170, 150, 120]],
            Archetype::FurnitureBox => &[[140, 95, 60], [90, 70, 50], [200, 200, 205], [60, 60, 70], [150, 120, 90]],
            Archetype::ClutterSphere => &[[200, 60, 50], [60, 120, 190], [140, 95, 60], [125, 125, 120], [220, 215, 200]],
        }
    }
}

/// Half-width of the per-channel color noise, in 0-255 units.
const COLOR_NOISE: f32 = 18.0;
const PAINT_TAG: u64 = 0xC010;
pub const MIN_POINTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room size in meters: x, y, wall height.
    pub extent: [f32; 3],
    /// Class `i` is drawn from `classes[i]`.
    pub classes: Vec<Archetype>,
    pub points_per_class: Vec<usize>,
    /// Standard deviation of the per-point position jitter (meters).
    pub jitter: f32,
    /// Give every object an RGB color drawn from its class palette.
    pub colored: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::room(0)
    }
}

impl SceneSpec {
    /// Four-class room of 8,000 points.
    pub fn room(seed: u64) -> Self {
        Self {
            extent: [6.0, 5.0, 2.5],
            classes: vec![
                Archetype::Floor,
                Archetype::Wall,
                Archetype::FurnitureBox,
                Archetype::ClutterSphere,
            ],
            points_per_class: vec![2000; 4],
            jitter: 0.004,
            colored: false,
            seed,
        }
    }

    pub fn total_points(&self) -> usize {
        self.points_per_class.iter().sum()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|a| a.name().to_string()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.classes.len() != self.points_per_class.len() {
            return Err(Error::invalid("one point count per class is required"));
        }
        let [x, y, z] = self.extent;
        if !(x >= 3.0 && y >= 3.0 && z >= 1.0) {
            return Err(Error::invalid("room must be at least 3 x 3 m with walls of at least 1 m"));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        if self.total_points() < MIN_POINTS {
            return Err(Error::invalid(format!("a scene needs at least {MIN_POINTS} points")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cuboid {
    min: [f32; 3],
    max: [f32; 3],
}

impl Cuboid {
    fn contains_xy(&self, x: f32, y: f32) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    fn size(&self) -> [f32; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    /// Top and four side faces (the bottom rests on the floor).
    fn sample_surface(&self, rng: &mut impl Rng) -> [f32; 3] {
        let [sx, sy, sz] = self.size();
        let areas = [sx * sy, sx * sz, sx * sz, sy * sz, sy * sz];
        let total: f32 = areas.iter().sum();
        let mut pick = rng.random_range(0.0..total);
        let mut face = 0;
        while face < 4 && pick >= areas[face] {
            pick -= areas[face];
            face += 1;
        }
        let (u, v): (f32, f32) = (rng.random(), rng.random());
        let lerp = |a: usize, t: f32| self.min[a] + t * (self.max[a] - self.min[a]);
        match face {
            0 => [lerp(0, u), lerp(1, v), self.max[2]],
            1 => [lerp(0, u), self.min[1], lerp(2, v)],
            2 => [lerp(0, u), self.max[1], lerp(2, v)],
            3 => [self.min[0], lerp(1, u), lerp(2, v)],
            _ => [self.max[0], lerp(1, u), lerp(2, v)],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sphere {
    center: [f32; 3],
    radius: f32,
    /// Points below this height are hidden by the support.
    floor: f32,
}

fn place_boxes(rng: &mut impl Rng, half: [f32; 2]) -> Vec<Cuboid> {
    let mut boxes: Vec<Cuboid> = Vec::new();
    let target = 4;
    let mut attempts = 0;
    while boxes.len() < target && attempts < 200 {
        attempts += 1;
        let w = rng.random_range(0.6..1.4);
        let d = rng.random_range(0.5..1.0);
        let h = rng.random_range(0.45..1.0);
        let margin = 0.3;
        let x = rng.random_range(-half[0] + margin..half[0] - margin - w);
        let y = rng.random_range(-half[1] + margin..half[1] - margin - d);
        let candidate = Cuboid {
            min: [x, y, 0.0],
            max: [x + w, y + d, h],
        };
        let clear = boxes.iter().all(|b| {
            candidate.min[0] > b.max[0] + 0.4
                || candidate.max[0] < b.min[0] - 0.4
                || candidate.min[1] > b.max[1] + 0.4
                || candidate.max[1] < b.min[1] - 0.4
        });
        if clear {
            boxes.push(candidate);
        }
    }
    boxes
}

fn place_spheres(rng: &mut impl Rng, boxes: &[Cuboid], half: [f32; 2]) -> Vec<Sphere> {
    let mut spheres = Vec::new();
    // One on top of each box, two on the floor.
    for b in boxes {
        let r = rng.random_range(0.15..0.28);
        let [sx, sy, _] = b.size();
        let cx = b.min[0] + sx * rng.random_range(0.3..0.7);
        let cy = b.min[1] + sy * rng.random_range(0.3..0.7);
        spheres.push(Sphere {
            center: [cx, cy, b.max[2] + r],
            radius: r,
            floor: b.max[2],
        });
    }
    let mut attempts = 0;
    while spheres.len() < boxes.len() + 2 && attempts < 200 {
        attempts += 1;
        let r = rng.random_range(0.15..0.3);
        let cx = rng.random_range(-half[0] + 0.4..half[0] - 0.4);
        let cy = rng.random_range(-half[1] + 0.4..half[1] - 0.4);
        let free = boxes.iter().all(|b| {
            cx < b.min[0] - r - 0.1 || cx > b.max[0] + r + 0.1 || cy < b.min[1] - r - 0.1 || cy > b.max[1] + r + 0.1
        });
        if free {
            spheres.push(Sphere {
                center: [cx, cy, r],
                radius: r,
                floor: 0.0,
            });
        }
    }
    spheres
}

fn sample_sphere(rng: &mut impl Rng, spheres: &[Sphere]) -> ([f32; 3], usize) {
    let areas: Vec<f32> = spheres.iter().map(|s| s.radius * s.radius).collect();
    let total: f32 = areas.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut i = 0;
    while i + 1 < spheres.len() && pick >= areas[i] {
        pick -= areas[i];
        i += 1;
    }
    let s = spheres[i];
    loop {
        // Uniform direction from (z, angle).
        let z: f32 = rng.random_range(-1.0..1.0);
        let a: f32 = rng.random_range(0.0..TAU);
        let rxy = (1.0 - z * z).sqrt();
        let p = [
            s.center[0] + s.radius * rxy * a.cos(),
            s.center[1] + s.radius * rxy * a.sin(),
            s.center[2] + s.radius * z,
        ];
        if p[2] >= s.floor {
            return (p, i);
        }
    }
}

/// A labeled room cloud, deterministic per `spec.seed`.
pub fn synth_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [ex, ey, ez] = spec.extent;
    let half = [ex / 2.0, ey / 2.0];
    let boxes = place_boxes(&mut rng, half);
    let spheres = place_spheres(&mut rng, &boxes, half);
    let covered = |x: f32, y: f32| {
        boxes.iter().any(|b| b.contains_xy(x, y))
            || spheres
                .iter()
                .filter(|s| s.floor == 0.0)
                .any(|s| (x - s.center[0]).powi(2) + (y - s.center[1]).powi(2) < (0.5 * s.radius).powi(2))
    };

    let mut paint = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, PAINT_TAG));
    let palettes: Vec<Vec<[u8; 3]>> = spec
        .classes
        .iter()
        .map(|&a| {
            let objects = match a {
                Archetype::Floor => 1,
                Archetype::Wall => 3,
                Archetype::FurnitureBox => boxes.len(),
                Archetype::ClutterSphere => spheres.len(),
            };
            let palette = a.palette();
            (0..objects.max(1)).map(|_| palette[paint.random_range(0..palette.len())]).collect()
        })
        .collect();
    let mut colors = Vec::with_capacity(spec.total_points());
    let mut positions = Vec::with_capacity(spec.total_points());
    let mut labels = Vec::with_capacity(spec.total_points());
    for (class, (&arch, &count)) in spec.classes.iter().zip(&spec.points_per_class).enumerate() {
        for _ in 0..count {
            let p = match arch {
                Archetype::Floor => loop {
                    let x = rng.random_range(-half[0]..half[0]);
                    let y = rng.random_range(-half[1]..half[1]);
                    if !covered(x, y) {
                        break ([x, y, 0.0], 0);
                    }
                },
                Archetype::Wall => {
                    // Walls along x = -half and y = -half and y = +half.
                    let lengths = [ey, ex, ex];
                    let total: f32 = lengths.iter().sum();
                    let t = rng.random_range(0.0..total);
                    let z = rng.random_range(0.0..ez);
                    if t < ey {
                        ([-half[0], t - half[1], z], 0)
                    } else if t < ey + ex {
                        ([t - ey - half[0], -half[1], z], 1)
                    } else {
                        ([t - ey - ex - half[0], half[1], z], 2)
                    }
                }
                Archetype::FurnitureBox => {
                    let areas: Vec<f32> = boxes
                        .iter()
                        .map(|b| {
                            let [sx, sy, sz] = b.size();
                            sx * sy + 2.0 * (sx + sy) * sz
                        })
                        .collect();
                    let total: f32 = areas.iter().sum();
                    let mut pick = rng.random_range(0.0..total);
                    let mut i = 0;
                    while i + 1 < boxes.len() && pick >= areas[i] {
                        pick -= areas[i];
                        i += 1;
                    }
                    (boxes[i].sample_surface(&mut rng), i)
                }
                Archetype::ClutterSphere => sample_sphere(&mut rng, &spheres),
            };
            let (p, object) = p;
            let base = palettes[class][object];
            colors.push(base.map(|c| {
                let noise = (paint.random::<f32>() + paint.random::<f32>() + paint.random::<f32>() - 1.5) * 2.0;
                (c as f32 + COLOR_NOISE * noise).round().clamp(0.0, 255.0) as u8
            }));
            let p = if spec.jitter > 0.0 {
                let j = spec.jitter;
                p.map(|c| c + j * (rng.random::<f32>() + rng.random::<f32>() + rng.random::<f32>() - 1.5) * 2.0)
            } else {
                p
            };
            positions.push(p);
            labels.push(class as ClassId);
        }
    }
    let colors = spec.colored.then_some(colors);
    PointCloud::new(positions, colors, Some(labels), spec.classes.len() as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_class_counts() {
        let spec = SceneSpec::room(3);
        let cloud = synth_scene(&spec).unwrap();
        assert_eq!(cloud.len(), 8000);
        let labels = cloud.labels().unwrap();
        for (c, &n) in spec.points_per_class.iter().enumerate() {
            assert_eq!(labels.iter().filter(|&&l| l as usize == c).count(), n);
        }
    }

    #[test]
    fn single_class_scene() {
        let spec = SceneSpec {
            classes: vec![Archetype::Floor],
            points_per_class: vec![600],
            ..SceneSpec::room(1)
        };
        let cloud = synth_scene(&spec).unwrap();
        assert!(cloud.labels().unwrap().iter().all(|&l| l == 0));
        assert_eq!(cloud.num_classes(), 1);
    }

    #[test]
    fn seeds_change_geometry_not_proportions() {
        let a = synth_scene(&SceneSpec::room(1)).unwrap();
        let b = synth_scene(&SceneSpec::room(2)).unwrap();
        assert_ne!(a.positions(), b.positions());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a, synth_scene(&SceneSpec::room(1)).unwrap());
    }

    #[test]
    fn stays_inside_the_room() {
        let spec = SceneSpec::room(4);
        let cloud = synth_scene(&spec).unwrap();
        for p in cloud.positions() {
            assert!(p[0].abs() <= 3.05 && p[1].abs() <= 2.55 && p[2] >= -0.05 && p[2] <= 2.55);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SceneSpec::room(0);
        spec.points_per_class.pop();
        assert!(synth_scene(&spec).is_err());
        let tiny = SceneSpec {
            extent: [2.0, 5.0, 2.5],
            ..SceneSpec::room(0)
        };
        assert!(synth_scene(&tiny).is_err());
    }
}
