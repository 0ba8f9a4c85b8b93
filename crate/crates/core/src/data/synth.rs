use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, LabeledCloud};
use crate::geometry::CartesianPoint;

pub const CLASS_GROUND: usize = 1;
pub const CLASS_BOX: usize = 2;
pub const CLASS_POLE: usize = 3;
pub const CLASS_WALL: usize = 4;

/// Train-id names of the synthetic classes; id 0 is the ignore class.
pub const SYNTH_CLASS_NAMES: [&str; 5] = ["unlabelled", "ground", "box", "pole", "wall"];

/// Recipe for one synthetic scene. Objects stand on the plane `z = 0` at
/// radial distances between 2 m and `extent`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSceneSpec {
    pub seed: u64,
    pub extent: f64,
    pub ground_points: usize,
    pub boxes: usize,
    pub box_points: (usize, usize),
    pub poles: usize,
    pub pole_points: (usize, usize),
    pub walls: usize,
    pub wall_points: (usize, usize),
    pub noise_sigma: f64,
    /// Box length, width and height ranges (meters).
    pub box_size: [(f64, f64); 3],
    pub pole_height: (f64, f64),
    /// Wall length and height ranges (meters).
    pub wall_size: [(f64, f64); 2],
    /// When set, poles stand beside a random wall at this perpendicular gap
    /// range instead of in open ground.
    pub pole_wall_gap: Option<(f64, f64)>,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: 12.0,
            ground_points: 400,
            boxes: 3,
            box_points: (80, 120),
            poles: 4,
            pole_points: (25, 40),
            walls: 2,
            wall_points: (100, 150),
            noise_sigma: 0.03,
            box_size: [(1.5, 3.0), (1.2, 2.0), (1.2, 2.0)],
            pole_height: (2.5, 4.0),
            wall_size: [(6.0, 10.0), (1.2, 2.0)],
            pole_wall_gap: None,
        }
    }
}

impl SynthSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if !(self.extent > 2.0) || !self.extent.is_finite() {
            return bad("extent must exceed 2 m");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise sigma must be non-negative");
        }
        for (name, (lo, hi)) in [
            ("box", self.box_points),
            ("pole", self.pole_points),
            ("wall", self.wall_points),
        ] {
            if lo == 0 || lo > hi {
                return Err(DataError::InvalidSpec(format!(
                    "{name} point range ({lo}, {hi}) must be positive and ordered"
                )));
            }
        }
        let ranges = self
            .box_size
            .iter()
            .chain(&self.wall_size)
            .chain([&self.pole_height]);
        for &(lo, hi) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(DataError::InvalidSpec(format!(
                    "size range ({lo}, {hi}) must be positive and ordered"
                )));
            }
        }
        if let Some((lo, hi)) = self.pole_wall_gap {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad("pole gap range must be non-negative and ordered");
            }
            if self.poles > 0 && self.walls == 0 {
                return bad("poles beside walls need at least one wall");
            }
        }
        if self.ground_points + self.boxes + self.poles + self.walls == 0 {
            return bad("scene has no objects");
        }
        Ok(())
    }
}

/// One generated object and the number of points it received.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthObject {
    pub class: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub cloud: LabeledCloud,
    pub objects: Vec<SynthObject>,
}

struct Builder {
    rng: ChaCha20Rng,
    noise: Option<Normal<f64>>,
    points: Vec<CartesianPoint>,
    labels: Vec<usize>,
    objects: Vec<SynthObject>,
    footprints: Vec<([f64; 2], f64)>,
    /// Centre, unit direction and length of each wall.
    walls: Vec<([f64; 2], [f64; 2], f64)>,
}

impl Builder {
    fn emit(&mut self, class: usize, p: [f64; 3]) {
        let mut p = p;
        if let Some(n) = self.noise {
            for v in &mut p {
                *v += n.sample(&mut self.rng);
            }
        }
        let intensity = self.rng.random_range(0.0..1.0);
        self.points
            .push(CartesianPoint::new(p[0], p[1], p[2], intensity));
        self.labels.push(class);
    }

    fn count(&mut self, range: (usize, usize)) -> usize {
        self.rng.random_range(range.0..=range.1)
    }

    /// Centre for an object of footprint radius `radius`, avoiding earlier
    /// footprints when possible.
    fn place(&mut self, extent: f64, radius: f64) -> [f64; 2] {
        let inner = 2.0 + radius;
        let outer = (extent - radius).max(inner);
        let mut candidate = [0.0; 2];
        for _ in 0..64 {
            let r = self.rng.random_range(inner..=outer);
            let a = self.rng.random_range(0.0..TAU);
            candidate = [r * a.cos(), r * a.sin()];
            let clear = self.footprints.iter().all(|(c, rr)| {
                let dx = c[0] - candidate[0];
                let dy = c[1] - candidate[1];
                (dx * dx + dy * dy).sqrt() > rr + radius + 0.5
            });
            if clear {
                break;
            }
        }
        self.footprints.push((candidate, radius));
        candidate
    }
}

/// Deterministic scene from `spec.seed`: a ground disc (class 1), boxes
/// (class 2, axis-aligned), vertical poles (class 3) and planar walls (class 4).
pub fn synth_scene(spec: &SynthSceneSpec) -> Result<SynthScene, DataError> {
    spec.validate()?;
    let mut b = Builder {
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
        noise: (spec.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, spec.noise_sigma).expect("valid sigma")),
        points: Vec::new(),
        labels: Vec::new(),
        objects: Vec::new(),
        footprints: Vec::new(),
        walls: Vec::new(),
    };

    if spec.ground_points > 0 {
        for _ in 0..spec.ground_points {
            let r = spec.extent * b.rng.random_range(0.0f64..1.0).sqrt();
            let a = b.rng.random_range(0.0..TAU);
            b.emit(CLASS_GROUND, [r * a.cos(), r * a.sin(), 0.0]);
        }
        b.objects.push(SynthObject {
            class: CLASS_GROUND,
            points: spec.ground_points,
        });
    }

    for _ in 0..spec.walls {
        let length = b
            .rng
            .random_range(spec.wall_size[0].0..=spec.wall_size[0].1);
        let height = b
            .rng
            .random_range(spec.wall_size[1].0..=spec.wall_size[1].1);
        let yaw = b.rng.random_range(0.0..TAU);
        let c = b.place(spec.extent, length / 2.0);
        let n = b.count(spec.wall_points);
        let (dx, dy) = (yaw.cos(), yaw.sin());
        b.walls.push((c, [dx, dy], length));
        for _ in 0..n {
            let s = b.rng.random_range(-0.5..0.5) * length;
            let z = b.rng.random_range(0.0..height);
            b.emit(CLASS_WALL, [c[0] + s * dx, c[1] + s * dy, z]);
        }
        b.objects.push(SynthObject {
            class: CLASS_WALL,
            points: n,
        });
    }

    for _ in 0..spec.boxes {
        let [length, width, height] = spec.box_size.map(|(lo, hi)| b.rng.random_range(lo..=hi));
        let c = b.place(spec.extent, 0.5 * length.hypot(width));
        let n = b.count(spec.box_points);
        // faces: 2 long sides, 2 short sides, top; sampled by area
        let areas = [
            length * height,
            length * height,
            width * height,
            width * height,
            length * width,
        ];
        let total: f64 = areas.iter().sum();
        for _ in 0..n {
            let mut pick = b.rng.random_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let s = b.rng.random_range(-0.5..0.5);
            let t = b.rng.random_range(0.0..1.0);
            let (along, across, z) = match face {
                0 => (s * length, 0.5 * width, t * height),
                1 => (s * length, -0.5 * width, t * height),
                2 => (0.5 * length, s * width, t * height),
                3 => (-0.5 * length, s * width, t * height),
                _ => (s * length, (t - 0.5) * width, height),
            };
            b.emit(CLASS_BOX, [c[0] + along, c[1] + across, z]);
        }
        b.objects.push(SynthObject {
            class: CLASS_BOX,
            points: n,
        });
    }

    for _ in 0..spec.poles {
        let height = b.rng.random_range(spec.pole_height.0..=spec.pole_height.1);
        let c = match spec.pole_wall_gap {
            Some((lo, hi)) => {
                let w = b.rng.random_range(0..b.walls.len());
                let (wc, [dx, dy], length) = b.walls[w];
                let along = b.rng.random_range(-0.4..0.4) * length;
                let side = if b.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let gap = side * b.rng.random_range(lo..=hi);
                [wc[0] + along * dx - gap * dy, wc[1] + along * dy + gap * dx]
            }
            None => b.place(spec.extent, 0.1),
        };
        let n = b.count(spec.pole_points);
        for _ in 0..n {
            let z = b.rng.random_range(0.0..height);
            b.emit(CLASS_POLE, [c[0], c[1], z]);
        }
        b.objects.push(SynthObject {
            class: CLASS_POLE,
            points: n,
        });
    }

    let cloud = LabeledCloud::new(b.points, b.labels)?;
    Ok(SynthScene {
        cloud,
        objects: b.objects,
    })
}
