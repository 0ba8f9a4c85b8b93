//! TOML run configuration. Every field has a default, so an empty file is a
//! valid config; the resolved config is echoed next to every command's output.

use std::path::{Path, PathBuf};

use hpgnn::data::SynthSceneSpec;
use hpgnn::geometry::{OutlierFilter, VoxelGridSpec};
use hpgnn::loss::LossWeights;
use hpgnn::model::{HpgnnConfig, LevelConfig, MlpDepths, Schedule};
use hpgnn::nncore::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub ablate: AblateSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            model: ModelSection::default(),
            loss: LossSection::default(),
            optimizer: OptimizerSection::default(),
            train: TrainSection::default(),
            ablate: AblateSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSection {
    pub r_range: [f64; 2],
    pub z_range: [f64; 2],
    pub delta_r: f64,
    pub theta_bins: usize,
    pub delta_z: f64,
    pub radius: f64,
    pub width: usize,
    /// 0 means uncapped.
    pub k_max: usize,
}

impl Default for LevelSection {
    fn default() -> Self {
        Self {
            r_range: [0.0, 50.0],
            z_range: [-4.0, 4.0],
            delta_r: 0.5,
            theta_bins: 180,
            delta_z: 0.5,
            radius: 1.0,
            width: 32,
            k_max: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    pub embed: usize,
    pub message: usize,
    pub update: usize,
    pub edge: usize,
    pub attention: usize,
    pub down: usize,
    pub up: usize,
    pub mixer: usize,
}

impl Default for DepthSection {
    fn default() -> Self {
        let d = MlpDepths::default();
        Self {
            embed: d.embed,
            message: d.message,
            update: d.update,
            edge: d.edge,
            attention: d.attention,
            down: d.down,
            up: d.up,
            mixer: d.mixer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Finest level first.
    pub levels: Vec<LevelSection>,
    /// Iterations per level on the way down, then on the way back up:
    /// `[T1, T2, T3]` for two levels.
    pub schedule: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Negative disables the ignore class.
    pub ignore_index: i64,
    pub outlier_k: usize,
    /// Non-positive disables the outlier filter.
    pub outlier_ratio: f64,
    pub depths: DepthSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            levels: vec![
                LevelSection::default(),
                LevelSection {
                    delta_r: 2.0,
                    theta_bins: 45,
                    delta_z: 2.0,
                    radius: 4.0,
                    width: 64,
                    ..LevelSection::default()
                },
            ],
            schedule: vec![1, 2, 1],
            classifier_hidden: vec![32],
            num_classes: 5,
            ignore_index: 0,
            outlier_k: 8,
            outlier_ratio: 2.0,
            depths: DepthSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Added to class frequencies before inverting them.
    pub class_weight_epsilon: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            class_weight_epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    /// 0 stops only at the end of the last epoch.
    pub max_steps: u64,
    /// Write `checkpoint-<step>.hpgn` every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub shuffle: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            max_steps: 0,
            checkpoint_every: 0,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Initialization seeds averaged per schedule; empty means `[seed]`.
    pub init_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Synth,
    Kitti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub synth: SynthSection,
    pub kitti: KittiSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::Synth,
            synth: SynthSection::default(),
            kitti: KittiSection::default(),
        }
    }
}

/// Train scenes use seeds `train_seed..train_seed + train_scenes`, eval
/// scenes likewise from `eval_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_scenes: u64,
    pub train_seed: u64,
    pub eval_scenes: u64,
    pub eval_seed: u64,
    pub extent: f64,
    pub ground_points: usize,
    pub boxes: usize,
    pub box_points: [usize; 2],
    pub poles: usize,
    pub pole_points: [usize; 2],
    pub walls: usize,
    pub wall_points: [usize; 2],
    pub noise_sigma: f64,
    pub box_length: [f64; 2],
    pub box_width: [f64; 2],
    pub box_height: [f64; 2],
    pub pole_height: [f64; 2],
    pub wall_length: [f64; 2],
    pub wall_height: [f64; 2],
    /// Empty places poles in open ground; `[lo, hi]` stands them beside walls.
    pub pole_wall_gap: Vec<f64>,
}

/// Roughly 200 points per scene.
impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthSceneSpec::default();
        Self {
            train_scenes: 5,
            train_seed: 0,
            eval_scenes: 5,
            eval_seed: 1000,
            extent: 10.0,
            ground_points: 80,
            boxes: 2,
            box_points: [20, 30],
            poles: 2,
            pole_points: [10, 15],
            walls: 1,
            wall_points: [30, 40],
            noise_sigma: d.noise_sigma,
            box_length: pair(d.box_size[0]),
            box_width: pair(d.box_size[1]),
            box_height: pair(d.box_size[2]),
            pole_height: pair(d.pole_height),
            wall_length: pair(d.wall_size[0]),
            wall_height: pair(d.wall_size[1]),
            pole_wall_gap: Vec::new(),
        }
    }
}

fn pair<T: Copy>(p: (T, T)) -> [T; 2] {
    [p.0, p.1]
}

fn tuple<T: Copy>(p: [T; 2]) -> (T, T) {
    (p[0], p[1])
}

impl SynthSection {
    pub fn scene_spec(&self, seed: u64) -> Result<SynthSceneSpec, CliError> {
        let pole_wall_gap = match self.pole_wall_gap.as_slice() {
            [] => None,
            [lo, hi] => Some((*lo, *hi)),
            other => {
                return Err(CliError::Config(format!(
                    "pole_wall_gap needs two values, got {}",
                    other.len()
                )))
            }
        };
        Ok(SynthSceneSpec {
            seed,
            extent: self.extent,
            ground_points: self.ground_points,
            boxes: self.boxes,
            box_points: tuple(self.box_points),
            poles: self.poles,
            pole_points: tuple(self.pole_points),
            walls: self.walls,
            wall_points: tuple(self.wall_points),
            noise_sigma: self.noise_sigma,
            box_size: [
                tuple(self.box_length),
                tuple(self.box_width),
                tuple(self.box_height),
            ],
            pole_height: tuple(self.pole_height),
            wall_size: [tuple(self.wall_length), tuple(self.wall_height)],
            pole_wall_gap,
        })
    }
}

/// SemanticKITTI-layout sequences: each directory holds `velodyne/*.bin`
/// and `labels/*.label`. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KittiSection {
    pub train_sequences: Vec<PathBuf>,
    pub eval_sequences: Vec<PathBuf>,
    /// Empty uses the bundled SemanticKITTI map.
    pub learning_map: PathBuf,
    /// Take every n-th scan of each sequence.
    pub stride: usize,
    pub class_names: Vec<String>,
}

impl Default for KittiSection {
    fn default() -> Self {
        Self {
            train_sequences: Vec::new(),
            eval_sequences: Vec::new(),
            learning_map: PathBuf::new(),
            stride: 1,
            class_names: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let k = &mut cfg.data.kitti;
        for p in k.train_sequences.iter_mut().chain(k.eval_sequences.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if !k.learning_map.as_os_str().is_empty() && k.learning_map.is_relative() {
            k.learning_map = base.join(&k.learning_map);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hpgnn_config(&self) -> Result<HpgnnConfig, CliError> {
        let m = &self.model;
        let mut levels = Vec::with_capacity(m.levels.len());
        for l in &m.levels {
            let grid = VoxelGridSpec::with_sectors(
                tuple(l.r_range),
                tuple(l.z_range),
                l.delta_r,
                l.theta_bins,
                l.delta_z,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            levels.push(LevelConfig {
                grid,
                radius: l.radius,
                width: l.width,
                k_max: (l.k_max > 0).then_some(l.k_max),
            });
        }
        let d = m.depths;
        let config = HpgnnConfig {
            schedule: schedule_from_list(&m.schedule, levels.len())?,
            levels,
            depths: MlpDepths {
                embed: d.embed,
                message: d.message,
                update: d.update,
                edge: d.edge,
                attention: d.attention,
                down: d.down,
                up: d.up,
                mixer: d.mixer,
            },
            classifier_hidden: m.classifier_hidden.clone(),
            num_classes: m.num_classes,
            ignore_index: usize::try_from(m.ignore_index).ok(),
            outlier_filter: (m.outlier_ratio > 0.0).then_some(OutlierFilter {
                k: m.outlier_k,
                ratio: m.outlier_ratio,
            }),
        };
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.loss.alpha,
            beta: self.loss.beta,
            gamma: self.loss.gamma,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let o = self.optimizer;
        AdamConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        }
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        self.hpgnn_config()?;
        self.loss_weights()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let o = self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(CliError::Config("invalid optimizer settings".into()));
        }
        if self.train.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if self.data.kind == DataKind::Kitti && self.data.kitti.stride == 0 {
            return Err(CliError::Config("kitti stride must be positive".into()));
        }
        Ok(())
    }
}

/// `[down₀, …, down_{n−1}, up_{n−2}, …, up₀]`.
pub fn schedule_from_list(list: &[usize], levels: usize) -> Result<Schedule, CliError> {
    if levels == 0 || list.len() != 2 * levels - 1 {
        return Err(CliError::Config(format!(
            "schedule needs {} entries for {levels} levels, got {}",
            (2 * levels).saturating_sub(1),
            list.len()
        )));
    }
    let down = list[..levels].to_vec();
    let up = list[levels..].iter().rev().copied().collect();
    Ok(Schedule { down, up })
}

/// Parses `"1,1,1;1,0,1"` style schedule lists.
pub fn parse_schedules(text: &str) -> Result<Vec<Vec<usize>>, CliError> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .trim_start_matches('(')
                .trim_end_matches(')')
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Config(format!("bad schedule entry {t:?} in {s:?}")))
                })
                .collect()
        })
        .collect()
}
