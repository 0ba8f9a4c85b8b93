use std::fmt;

use crate::geometry::{OutlierFilter, VoxelGridSpec};
use crate::nncore::MlpSpec;

use super::ModelError;

/// One coarseness level: its voxel grid, edge radius and feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelConfig {
    pub grid: VoxelGridSpec,
    pub radius: f64,
    pub width: usize,
    /// Optional per-node neighbour cap.
    pub k_max: Option<usize>,
}

/// Message-passing iterations per level.
///
/// `down[i]` runs on level `i` before descending to level `i + 1` (for the
/// top level it is the only block); `up[i]` runs on level `i` after the
/// coarser levels have been folded back in. For two levels this is
/// `(T1, T2, T3) = (down[0], down[1], up[0])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub down: Vec<usize>,
    pub up: Vec<usize>,
}

impl Schedule {
    pub fn two_level(t1: usize, t2: usize, t3: usize) -> Self {
        Self {
            down: vec![t1, t2],
            up: vec![t3],
        }
    }

    /// `(T1, T2, T3)` view of a two-level schedule.
    pub fn as_triple(&self) -> Option<(usize, usize, usize)> {
        match (self.down.as_slice(), self.up.as_slice()) {
            ([a, b], [c]) => Some((*a, *b, *c)),
            _ => None,
        }
    }

    /// Total iterations at `level`.
    pub fn iterations(&self, level: usize) -> usize {
        self.down.get(level).copied().unwrap_or(0) + self.up.get(level).copied().unwrap_or(0)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut all: Vec<usize> = self.down.clone();
        all.extend(self.up.iter().rev());
        let parts: Vec<String> = all.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Number of hidden layers in each learned function. Hidden layers take the
/// width of the level the function writes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDepths {
    pub embed: usize,
    pub message: usize,
    pub update: usize,
    pub edge: usize,
    pub attention: usize,
    pub down: usize,
    pub up: usize,
    pub mixer: usize,
}

impl Default for MlpDepths {
    fn default() -> Self {
        Self {
            embed: 1,
            message: 1,
            update: 1,
            edge: 1,
            attention: 0,
            down: 0,
            up: 0,
            mixer: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpgnnConfig {
    /// Finest level first.
    pub levels: Vec<LevelConfig>,
    pub schedule: Schedule,
    pub depths: MlpDepths,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Class never predicted and skipped by the losses and metrics.
    pub ignore_index: Option<usize>,
    pub outlier_filter: Option<OutlierFilter>,
}

/// Width of the raw per-point attributes `(intensity, z)`.
pub const POINT_ATTRIBUTES: usize = 2;
/// Width of relative positions fed alongside features.
pub const OFFSET_WIDTH: usize = 3;

impl Default for HpgnnConfig {
    fn default() -> Self {
        let lower = VoxelGridSpec::with_sectors((0.0, 50.0), (-4.0, 4.0), 0.5, 180, 0.5)
            .expect("valid default grid");
        let higher = VoxelGridSpec::with_sectors((0.0, 50.0), (-4.0, 4.0), 2.0, 45, 2.0)
            .expect("valid default grid");
        Self {
            levels: vec![
                LevelConfig {
                    grid: lower,
                    radius: 1.0,
                    width: 32,
                    k_max: None,
                },
                LevelConfig {
                    grid: higher,
                    radius: 4.0,
                    width: 64,
                    k_max: None,
                },
            ],
            schedule: Schedule::two_level(1, 2, 1),
            depths: MlpDepths::default(),
            classifier_hidden: vec![32],
            num_classes: 5,
            ignore_index: Some(0),
            outlier_filter: Some(OutlierFilter::default()),
        }
    }
}

/// Parameter prefix of a level, `L0`, `L1`, ….
pub fn level_tag(level: usize) -> String {
    format!("L{level}")
}

impl HpgnnConfig {
    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        let n = self.levels.len();
        if n < 2 {
            return bad(format!("need at least two levels, got {n}"));
        }
        if self.schedule.down.len() != n || self.schedule.up.len() != n - 1 {
            return bad(format!(
                "schedule {} does not fit {n} levels",
                self.schedule
            ));
        }
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if let Some(ig) = self.ignore_index {
            if ig >= self.num_classes {
                return bad(format!(
                    "ignore index {ig} outside {} classes",
                    self.num_classes
                ));
            }
        }
        if self.classifier_hidden.contains(&0) {
            return bad("zero classifier width".into());
        }
        for (i, l) in self.levels.iter().enumerate() {
            l.grid.validate()?;
            if l.width == 0 {
                return bad(format!("level {i} has zero width"));
            }
            if !(l.radius > 0.0) {
                return bad(format!("level {i} radius must be positive"));
            }
            if l.k_max == Some(0) {
                return bad(format!("level {i} neighbour cap must be positive"));
            }
        }
        for (i, pair) in self.levels.windows(2).enumerate() {
            let (fine, coarse) = (&pair[0], &pair[1]);
            if fine.radius >= coarse.radius {
                return bad(format!("radius of level {i} must be below level {}", i + 1));
            }
            let (a, b) = (&fine.grid, &coarse.grid);
            if a.delta_r >= b.delta_r || a.delta_theta >= b.delta_theta || a.delta_z >= b.delta_z {
                return bad(format!(
                    "grid of level {i} must be strictly finer than level {}",
                    i + 1
                ));
            }
            if a.r_min != b.r_min || a.r_max != b.r_max || a.z_min != b.z_min || a.z_max != b.z_max
            {
                return bad(format!("levels {i} and {} must share outer bounds", i + 1));
            }
        }
        if let Some(f) = self.outlier_filter {
            if f.k == 0 || !(f.ratio > 0.0) {
                return bad("outlier filter needs k ≥ 1 and ratio > 0".into());
            }
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.levels[level].width
    }

    fn mlp(input: usize, hidden_width: usize, depth: usize, output: usize) -> MlpSpec {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden_width, depth));
        widths.push(output);
        MlpSpec::relu(widths).expect("widths validated")
    }

    pub fn embed_spec(&self) -> MlpSpec {
        let w = self.width(0);
        Self::mlp(POINT_ATTRIBUTES, w, self.depths.embed, w)
    }

    /// `h`: child state plus offset to the parent → edge feature of `level`.
    pub fn edge_spec(&self, level: usize) -> MlpSpec {
        let child = if level == 0 {
            self.width(0)
        } else {
            self.width(level - 1)
        };
        let w = self.width(level);
        Self::mlp(child + OFFSET_WIDTH, w, self.depths.edge, w)
    }

    pub fn attention_spec(&self, level: usize) -> MlpSpec {
        let w = self.width(level);
        Self::mlp(w, w, self.depths.attention, 1)
    }

    pub fn down_spec(&self, level: usize) -> MlpSpec {
        let w = self.width(level);
        Self::mlp(w, w, self.depths.down, w)
    }

    /// `f`: `[s_u ‖ s_v ‖ x_v − x_u]` → message.
    pub fn message_spec(&self, level: usize) -> MlpSpec {
        let w = self.width(level);
        Self::mlp(2 * w + OFFSET_WIDTH, w, self.depths.message, w)
    }

    pub fn update_spec(&self, level: usize) -> MlpSpec {
        let w = self.width(level);
        Self::mlp(w, w, self.depths.update, w)
    }

    /// `U` from `level + 1` down to `level`; `None` targets the raw points.
    pub fn up_spec(&self, target: Option<usize>) -> MlpSpec {
        let (src, dst) = match target {
            Some(l) => (self.width(l + 1), self.width(l)),
            None => (self.width(0), self.width(0)),
        };
        Self::mlp(src, dst, self.depths.up, dst)
    }

    pub fn mixer_spec(&self, target: Option<usize>) -> MlpSpec {
        let w = self.width(target.unwrap_or(0));
        Self::mlp(2 * w, w, self.depths.mixer, w)
    }

    pub fn classifier_spec(&self) -> MlpSpec {
        let mut widths = vec![self.width(0)];
        widths.extend(&self.classifier_hidden);
        widths.push(self.num_classes);
        MlpSpec::relu(widths).expect("widths validated")
    }

    /// Every learned function as `(parameter prefix, spec)`.
    pub fn layout(&self) -> Vec<(String, MlpSpec)> {
        let n = self.levels.len();
        let mut out = vec![("embed".to_string(), self.embed_spec())];
        for level in 0..n {
            let down = format!("down{level}");
            out.push((format!("{down}/h"), self.edge_spec(level)));
            out.push((format!("{down}/att"), self.attention_spec(level)));
            out.push((format!("{down}/D"), self.down_spec(level)));
            let tag = level_tag(level);
            for t in 0..self.schedule.iterations(level) {
                out.push((format!("{tag}/iter{t}/f"), self.message_spec(level)));
                out.push((format!("{tag}/iter{t}/g"), self.update_spec(level)));
            }
        }
        for level in 0..n - 1 {
            out.push((format!("up{level}/U"), self.up_spec(Some(level))));
            out.push((format!("up{level}/mix"), self.mixer_spec(Some(level))));
        }
        out.push(("up_points/U".to_string(), self.up_spec(None)));
        out.push(("up_points/mix".to_string(), self.mixer_spec(None)));
        out.push(("classifier".to_string(), self.classifier_spec()));
        out
    }
}
