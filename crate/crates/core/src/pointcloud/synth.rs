//! Synthetic labeled room scenes built from planes and boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cloud::{normalize_coords, PointCloud};
use crate::error::{Error, Result};

pub const FLOOR: usize = 0;
pub const WALL: usize = 1;
pub const BOARD: usize = 2;
pub const TABLE: usize = 3;
pub const CHAIR: usize = 4;
pub const BOOKCASE: usize = 5;

pub const ROOM_CLASSES: [&str; 6] = ["floor", "wall", "board", "table", "chair", "bookcase"];

/// Sampling surface, in raw scene units (meters).
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
    Plane {
        origin: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
    },
    /// Surface of an axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Shape {
    pub fn area(&self) -> f64 {
        match self {
            Shape::Plane { u, v, .. } => norm(cross(*u, *v)),
            Shape::Box { min, max } => {
                let [a, b, c] = box_dims(min, max);
                2.0 * (a * b + b * c + c * a)
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            Shape::Plane { origin, u, v } => {
                let s: f64 = rng.random();
                let t: f64 = rng.random();
                std::array::from_fn(|a| origin[a] + s * u[a] + t * v[a])
            }
            Shape::Box { min, max } => {
                let [a, b, c] = box_dims(min, max);
                // Faces normal to x, y, z, each appearing twice.
                let w = [b * c, a * c, a * b];
                let total = 2.0 * (w[0] + w[1] + w[2]);
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                let mut high = true;
                'outer: for (ax, &wa) in w.iter().enumerate() {
                    for side in [false, true] {
                        if pick < wa {
                            axis = ax;
                            high = side;
                            break 'outer;
                        }
                        pick -= wa;
                    }
                }
                let mut p: [f64; 3] = std::array::from_fn(|d| min[d] + rng.random::<f64>() * (max[d] - min[d]));
                p[axis] = if high { max[axis] } else { min[axis] };
                p
            }
        }
    }
}

fn box_dims(min: &[f64; 3], max: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|d| (max[d] - min[d]).abs())
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub label: usize,
    /// Candidate base colors; one is drawn per primitive.
    pub palette: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_points: usize,
    pub num_classes: usize,
    pub primitives: Vec<Primitive>,
    pub noise_std: f64,
    pub seed: u64,
}

pub const DEFAULT_POINTS: usize = 1024;
pub const DEFAULT_TRAIN_SCENES: usize = 200;
pub const DEFAULT_TEST_SCENES: usize = 20;

/// Splitmix-style mix of a global seed and an index.
pub fn derive_seed(global: u64, index: u64) -> u64 {
    let mut z = global ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scene seeds for a train/test split; the two ranges never collide.
pub fn benchmark_seeds(global: u64, num_train: usize, num_test: usize) -> (Vec<u64>, Vec<u64>) {
    let train = (0..num_train as u64).map(|i| derive_seed(global, i)).collect();
    let test = (0..num_test as u64).map(|i| derive_seed(global, (1 << 32) + i)).collect();
    (train, test)
}

/// Default-room scenes for the given seeds.
pub fn room_scenes(seeds: &[u64], num_points: usize) -> Result<Vec<PointCloud>> {
    seeds
        .iter()
        .map(|&s| synth_scene(&SceneSpec::default_room(num_points, s)))
        .collect()
}

const ROOM_PALETTES: [[[f64; 3]; 2]; 6] = [
    [[0.477, 0.464, 0.446], [0.522, 0.500, 0.477]],
    [[0.635, 0.626, 0.608], [0.662, 0.653, 0.622]],
    [[0.365, 0.419, 0.388], [0.383, 0.388, 0.405]],
    [[0.554, 0.482, 0.410], [0.590, 0.522, 0.446]],
    [[0.365, 0.388, 0.522], [0.522, 0.347, 0.347]],
    [[0.455, 0.401, 0.356], [0.423, 0.383, 0.365]],
];

/// Per-scene shift applied to every palette entry.
const PALETTE_JITTER: f64 = 0.04;

pub const DEFAULT_NOISE_STD: f64 = 0.03;

impl SceneSpec {
    /// A randomized six-class office corner: floor, three walls, a board on
    /// one wall, a table with legs, two chairs and a bookcase.
    pub fn default_room(num_points: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_600d_c0de);
        let w = rng.random_range(4.0..6.0);
        let d = rng.random_range(4.0..6.0);
        let h = rng.random_range(2.6..3.2);

        let palettes: Vec<Vec<[f64; 3]>> = ROOM_PALETTES
            .iter()
            .map(|pal| {
                let shift: [f64; 3] =
                    std::array::from_fn(|_| rng.random_range(-PALETTE_JITTER..PALETTE_JITTER));
                pal.iter()
                    .map(|c| std::array::from_fn(|i| (c[i] + shift[i]).clamp(0.0, 1.0)))
                    .collect()
            })
            .collect();
        let prim = |shape, label: usize| Primitive {
            shape,
            label,
            palette: palettes[label].clone(),
        };
        let plane = |origin, u, v| Shape::Plane { origin, u, v };
        let boxed = |min, max| Shape::Box { min, max };

        let mut prims = vec![
            prim(plane([0.0; 3], [w, 0.0, 0.0], [0.0, d, 0.0]), FLOOR),
            prim(plane([0.0; 3], [0.0, d, 0.0], [0.0, 0.0, h]), WALL),
            prim(plane([0.0; 3], [w, 0.0, 0.0], [0.0, 0.0, h]), WALL),
            prim(plane([w, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, h]), WALL),
        ];

        let bw = rng.random_range(1.5..2.5f64).min(d - 1.0);
        let by = rng.random_range(0.5..(d - bw - 0.3));
        let bz = rng.random_range(0.9..1.1);
        let bh = rng.random_range(1.0..1.3);
        prims.push(prim(
            plane([0.03, by, bz], [0.0, bw, 0.0], [0.0, 0.0, bh]),
            BOARD,
        ));

        let (tw, td) = if rng.random_bool(0.5) { (1.6, 0.8) } else { (0.8, 1.6) };
        let tx = rng.random_range(1.0..(w - 1.0 - tw));
        let ty = rng.random_range(1.0..(d - 1.0 - td));
        let top = 0.74;
        prims.push(prim(boxed([tx, ty, top], [tx + tw, ty + td, top + 0.04]), TABLE));
        for (lx, ly) in [(tx, ty), (tx + tw - 0.05, ty), (tx, ty + td - 0.05), (tx + tw - 0.05, ty + td - 0.05)] {
            prims.push(prim(boxed([lx, ly, 0.0], [lx + 0.05, ly + 0.05, top]), TABLE));
        }

        // Chairs on the two long sides of the table, backs facing away.
        let long_x = tw > td;
        for side in [false, true] {
            let (cx, cy) = if long_x {
                let y = if side { ty + td + 0.15 } else { ty - 0.6 };
                (tx + tw / 2.0 - 0.225 + rng.random_range(-0.3..0.3), y)
            } else {
                let x = if side { tx + tw + 0.15 } else { tx - 0.6 };
                (x, ty + td / 2.0 - 0.225 + rng.random_range(-0.3..0.3))
            };
            prims.push(prim(boxed([cx, cy, 0.42], [cx + 0.45, cy + 0.45, 0.47]), CHAIR));
            let back = match (long_x, side) {
                (true, true) => ([cx, cy + 0.41, 0.47], [cx + 0.45, cy + 0.45, 0.95]),
                (true, false) => ([cx, cy, 0.47], [cx + 0.45, cy + 0.04, 0.95]),
                (false, true) => ([cx + 0.41, cy, 0.47], [cx + 0.45, cy + 0.45, 0.95]),
                (false, false) => ([cx, cy, 0.47], [cx + 0.04, cy + 0.45, 0.95]),
            };
            prims.push(prim(boxed(back.0, back.1), CHAIR));
        }

        let bx = rng.random_range(0.5..(w - 1.7));
        let bkh = rng.random_range(1.8..2.2);
        prims.push(prim(boxed([bx, 0.02, 0.0], [bx + 1.2, 0.42, bkh]), BOOKCASE));

        Self {
            num_points,
            num_classes: ROOM_CLASSES.len(),
            primitives: prims,
            noise_std: DEFAULT_NOISE_STD,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_points == 0 {
            return Err(Error::InvalidArgument("scene needs at least one point".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_std {}", self.noise_std)));
        }
        let mut seen = vec![false; self.num_classes];
        for (i, p) in self.primitives.iter().enumerate() {
            if p.label >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "primitive {i} has label {} outside [0, {})",
                    p.label, self.num_classes
                )));
            }
            if p.palette.is_empty() || p.palette.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {i} needs a non-empty palette in [0, 1]"
                )));
            }
            if !(p.shape.area() > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {i} is degenerate (zero extent)"
                )));
            }
            seen[p.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "class {missing} appears in no primitive"
            )));
        }
        Ok(())
    }
}

/// Splits `total` into integer counts proportional to `weights`
/// (largest-remainder rounding, ties to the earlier entry).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Samples a labeled cloud from `spec`; deterministic in `spec.seed`.
pub fn synth_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise_std: {e}")))?;
    let areas: Vec<f64> = spec.primitives.iter().map(|p| p.shape.area()).collect();
    let counts = apportion(&areas, spec.num_points);

    let mut coords = Vec::with_capacity(spec.num_points);
    let mut feats = Vec::with_capacity(spec.num_points * 3);
    let mut labels = Vec::with_capacity(spec.num_points);
    for (p, &count) in spec.primitives.iter().zip(&counts) {
        let base = p.palette[rng.random_range(0..p.palette.len())];
        for _ in 0..count {
            coords.push(p.shape.sample(&mut rng));
            for c in base {
                feats.push((c + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
            labels.push(p.label);
        }
    }
    normalize_coords(&mut coords);
    PointCloud::new(coords, feats, 3, Some(labels), spec.num_classes)
}
