use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hpgnn::data::{
    pair_scan_labels, read_labels, read_velodyne_bin, synth_scene, write_labels, LabeledCloud,
    LearningMap, SYNTH_CLASS_NAMES,
};
use hpgnn::geometry::CartesianPoint;
use hpgnn::metrics::{iou_table_csv, iou_table_text, miou, ConfusionMatrix, IouReport};
use hpgnn::model::{argmax_classes, predict_logits, HpgnnConfig, LevelCounters, SceneGraph};
use hpgnn::nncore::ParamStore;
use hpgnn::train::{scene_class_weights, StepReport, Trainer, TrainingScene};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{schedule_from_list, DataKind, RunConfig};
use crate::CliError;

const BUNDLED_MAP: &str = include_str!("../data/semantic-kitti-learning-map.txt");

pub const KITTI_CLASS_NAMES: [&str; 20] = [
    "unlabeled",
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// A cloud and a name for logs.
#[derive(Debug, Clone)]
pub struct NamedCloud {
    pub name: String,
    pub cloud: LabeledCloud,
}

pub fn learning_map(cfg: &RunConfig) -> Result<LearningMap, CliError> {
    let path = &cfg.data.kitti.learning_map;
    let text = if path.as_os_str().is_empty() {
        BUNDLED_MAP.to_string()
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?
    };
    Ok(LearningMap::parse(&text)?)
}

pub fn class_names(cfg: &RunConfig) -> Vec<String> {
    match cfg.data.kind {
        DataKind::Synth => SYNTH_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        DataKind::Kitti if !cfg.data.kitti.class_names.is_empty() => cfg.data.kitti.class_names.clone(),
        DataKind::Kitti => KITTI_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_scan(path: &Path) -> Result<Vec<CartesianPoint>, CliError> {
    Ok(read_velodyne_bin(&read_file(path)?)?)
}

/// Scan files of one sequence directory, sorted by name.
fn sequence_scans(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let velodyne = dir.join("velodyne");
    let mut scans: Vec<PathBuf> = std::fs::read_dir(&velodyne)
        .map_err(|e| CliError::io(&velodyne, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    scans.sort();
    Ok(scans)
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<NamedCloud>, CliError> {
    match cfg.data.kind {
        DataKind::Synth => {
            let s = &cfg.data.synth;
            let (start, count) = match split {
                Split::Train => (s.train_seed, s.train_scenes),
                Split::Eval => (s.eval_seed, s.eval_scenes),
            };
            (start..start + count)
                .map(|seed| {
                    let scene = synth_scene(&s.scene_spec(seed)?)?;
                    Ok(NamedCloud {
                        name: format!("synth-{seed}"),
                        cloud: scene.cloud,
                    })
                })
                .collect()
        }
        DataKind::Kitti => {
            let k = &cfg.data.kitti;
            let map = learning_map(cfg)?;
            let dirs = match split {
                Split::Train => &k.train_sequences,
                Split::Eval => &k.eval_sequences,
            };
            let mut out = Vec::new();
            for dir in dirs {
                for scan in sequence_scans(dir)?.into_iter().step_by(k.stride.max(1)) {
                    let stem = scan.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    let label_path = dir.join("labels").join(format!("{stem}.label"));
                    let raw = read_labels(&read_file(&label_path)?)?;
                    let cloud = pair_scan_labels(read_scan(&scan)?, &raw, &map)?;
                    out.push(NamedCloud {
                        name: format!("{}/{stem}", dir.display()),
                        cloud,
                    });
                }
            }
            Ok(out)
        }
    }
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let echo = out.join("config.toml");
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| CliError::io(&echo, e))?;
    Ok(out)
}

fn prepare_scenes(clouds: &[NamedCloud], config: &HpgnnConfig) -> Result<Vec<TrainingScene>, CliError> {
    clouds
        .iter()
        .map(|c| {
            TrainingScene::new(&c.cloud, config)
                .map_err(|e| CliError::Scene(c.name.clone(), Box::new(e.into())))
        })
        .collect()
}

/// One training run without any file output.
pub struct TrainRun {
    pub trainer: Trainer,
    pub reports: Vec<(usize, usize, StepReport)>,
    pub counters: Vec<LevelCounters>,
}

/// Trains from scratch with `init_seed`; `on_step` sees each report with its
/// epoch and scene index and may persist it.
pub fn train_model(
    cfg: &RunConfig,
    config: &HpgnnConfig,
    scenes: &[TrainingScene],
    init_seed: u64,
    mut on_step: impl FnMut(&Trainer, usize, usize, &StepReport) -> Result<(), CliError>,
) -> Result<TrainRun, CliError> {
    let weights = if scenes.is_empty() {
        hpgnn::loss::ClassWeights::uniform(config.num_classes)
    } else {
        scene_class_weights(
            scenes,
            config.num_classes,
            cfg.loss.class_weight_epsilon,
            config.ignore_index,
        )?
    };
    let mut trainer = Trainer::new(config.clone(), init_seed, cfg.adam(), weights, cfg.loss_weights())?;
    let mut reports = Vec::new();
    let mut counters = vec![LevelCounters::default(); config.level_count()];
    if scenes.is_empty() {
        return Ok(TrainRun {
            trainer,
            reports,
            counters,
        });
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    'epochs: for epoch in 0..cfg.train.epochs {
        if cfg.train.shuffle {
            order.shuffle(&mut order_rng);
        }
        for chunk in order.chunks(cfg.train.batch_size) {
            if cfg.train.max_steps > 0 && trainer.adam.step >= cfg.train.max_steps {
                break 'epochs;
            }
            let batch: Vec<&TrainingScene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let step_reports = trainer.step_batch(&batch)?;
            for (&scene, report) in chunk.iter().zip(step_reports) {
                for (c, r) in counters.iter_mut().zip(&report.counters) {
                    c.message_steps += r.message_steps;
                    c.messages += r.messages;
                }
                on_step(&trainer, epoch, scene, &report)?;
                reports.push((epoch, scene, report));
            }
        }
    }
    Ok(TrainRun {
        trainer,
        reports,
        counters,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    /// Total loss of every scene visit, in order.
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

/// Trains on the train split, logging every step to `metrics.csv` and saving
/// `checkpoint.hpgn` (plus periodic snapshots) under the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let config = cfg.hpgnn_config()?;
    let out = prepare_out_dir(cfg)?;
    let echoed = cfg.to_toml();
    let scenes = prepare_scenes(&load_split(cfg, Split::Train)?, &config)?;

    let metrics_log = out.join("metrics.csv");
    let file = File::create(&metrics_log).map_err(|e| CliError::io(&metrics_log, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "step,epoch,scene,wce,lovasz,reg,total").map_err(|e| CliError::io(&metrics_log, e))?;

    let every = cfg.train.checkpoint_every;
    let mut last_saved = 0;
    let run = train_model(cfg, &config, &scenes, cfg.seed, |trainer, epoch, scene, r| {
        writeln!(
            log,
            "{},{epoch},{scene},{},{},{},{}",
            r.step, r.wce, r.lovasz, r.reg, r.total
        )
        .map_err(|e| CliError::io(&metrics_log, e))?;
        let step = trainer.adam.step;
        if every > 0 && step % every == 0 && step != last_saved {
            last_saved = step;
            let path = out.join(format!("checkpoint-{step}.hpgn"));
            Checkpoint::capture(&echoed, &trainer.store, &trainer.adam).save(&path)?;
        }
        Ok(())
    })?;
    log.flush().map_err(|e| CliError::io(&metrics_log, e))?;

    let checkpoint = out.join("checkpoint.hpgn");
    Checkpoint::capture(&echoed, &run.trainer.store, &run.trainer.adam).save(&checkpoint)?;
    Ok(TrainSummary {
        steps: run.trainer.adam.step,
        losses: run.reports.iter().map(|(_, _, r)| r.total).collect(),
        checkpoint,
        metrics_log,
    })
}

fn load_params(cfg: &RunConfig, config: &HpgnnConfig, checkpoint: &Path) -> Result<ParamStore, CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    Ok(ck.restore(config, cfg.adam())?.0)
}

/// Whole-cloud predictions: outliers copy their nearest kept point and
/// out-of-bounds points get the ignore id.
pub fn predict_cloud(
    store: &ParamStore,
    config: &HpgnnConfig,
    points: &[CartesianPoint],
) -> Result<Vec<usize>, CliError> {
    let graph = SceneGraph::build(points, config)?;
    let logits = predict_logits(store, config, &graph)?;
    let preds = argmax_classes(&logits, config.ignore_index);
    Ok(graph.expand_predictions(&preds, points, config.ignore_index.unwrap_or(0)))
}

pub fn confusion_over(
    store: &ParamStore,
    config: &HpgnnConfig,
    clouds: &[NamedCloud],
) -> Result<ConfusionMatrix, CliError> {
    let mut cm = ConfusionMatrix::new(config.num_classes, config.ignore_index);
    for c in clouds {
        let preds = predict_cloud(store, config, &c.cloud.points)
            .map_err(|e| CliError::Scene(c.name.clone(), Box::new(e)))?;
        cm.accumulate(&c.cloud.labels, &preds)?;
    }
    Ok(cm)
}

/// Scores `checkpoint` on the eval split and writes `iou.txt` / `iou.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<IouReport, CliError> {
    cfg.validate()?;
    let config = cfg.hpgnn_config()?;
    let store = load_params(cfg, &config, checkpoint)?;
    let out = prepare_out_dir(cfg)?;
    let cm = confusion_over(&store, &config, &load_split(cfg, Split::Eval)?)?;
    let report = miou(&cm)?;
    let names = class_names(cfg);
    for (file, text) in [
        ("iou.txt", iou_table_text(&report, &names)),
        ("iou.csv", iou_table_csv(&report, &names)),
    ] {
        let path = out.join(file);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(report)
}

/// Labels one scan; writes `<stem>.label` under the output directory.
pub fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, scan: &Path) -> Result<(PathBuf, Vec<usize>), CliError> {
    cfg.validate()?;
    let config = cfg.hpgnn_config()?;
    let store = load_params(cfg, &config, checkpoint)?;
    let points = read_scan(scan)?;
    let preds = predict_cloud(&store, &config, &points)?;
    let out = prepare_out_dir(cfg)?;
    let stem = scan.file_stem().unwrap_or_default().to_string_lossy();
    let path = out.join(format!("{stem}.label"));
    let raw: Vec<u32> = preds.iter().map(|&p| p as u32).collect();
    std::fs::write(&path, write_labels(&raw)).map_err(|e| CliError::io(&path, e))?;
    Ok((path, preds))
}

fn histogram_line(h: &[usize]) -> String {
    h.iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(k, n)| format!("{k}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Most frequent non-ignored label among `members`, ties to the lower id.
fn majority(members: &[usize], labels: &[usize], ignore: Option<usize>, classes: usize) -> Option<usize> {
    let mut counts = vec![0usize; classes];
    for &m in members {
        let l = labels[m];
        if Some(l) != ignore && l < classes {
            counts[l] += 1;
        }
    }
    let best = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (*best.1 > 0).then_some(best.0)
}

/// Structure of the hierarchy built for one scan; `labels` (a label file)
/// adds per-level homophily under majority node labels.
pub fn cmd_graphstats(cfg: &RunConfig, scan: &Path, labels: Option<&Path>) -> Result<String, CliError> {
    cfg.validate()?;
    let config = cfg.hpgnn_config()?;
    let points = read_scan(scan)?;
    let point_labels = match labels {
        None => None,
        Some(path) => {
            let raw = read_labels(&read_file(path)?)?;
            let map = match cfg.data.kind {
                DataKind::Kitti => learning_map(cfg)?,
                DataKind::Synth => LearningMap::identity(config.num_classes),
            };
            Some(pair_scan_labels(points.clone(), &raw, &map)?.labels)
        }
    };
    let graph = SceneGraph::build(&points, &config)?;
    let net_labels = point_labels.as_ref().map(|l| graph.gather_labels(l));

    let mut r = String::new();
    let _ = writeln!(r, "scan: {}", scan.display());
    let _ = writeln!(
        r,
        "points: {} total, {} out of bounds, {} outliers, {} used",
        points.len(),
        graph.out_of_bounds.len(),
        graph.outliers.len(),
        graph.point_count()
    );
    let _ = writeln!(r, "points -> level 0 fanout: {}", histogram_line(&graph.point_links.fanout_histogram()));
    // Members of level l in terms of network points, for majority labels.
    let mut members: Vec<Vec<usize>> = graph.point_links.children_of.clone();
    for (l, level) in graph.levels.iter().enumerate() {
        let _ = writeln!(r, "level {l}: radius {}", level.radius);
        let _ = writeln!(r, "  nodes: {}", level.node_count());
        let _ = writeln!(r, "  edges: {}", level.edge_count());
        let _ = writeln!(r, "  degree histogram: {}", histogram_line(&level.degree_histogram()));
        if let Some(labels) = &net_labels {
            let node_labels: Vec<Option<usize>> = members
                .iter()
                .map(|m| majority(m, labels, config.ignore_index, config.num_classes))
                .collect();
            match level.homophily(&node_labels) {
                Some(h) => {
                    let _ = writeln!(r, "  homophily: {h:.6}");
                }
                None => {
                    let _ = writeln!(r, "  homophily: n/a");
                }
            }
        }
        if let Some(link) = graph.links.get(l) {
            let _ = writeln!(r, "  level {l} -> {} fanout: {}", l + 1, histogram_line(&link.fanout_histogram()));
            members = link
                .children_of
                .iter()
                .map(|kids| kids.iter().flat_map(|&k| members[k].iter().copied()).collect())
                .collect();
        }
    }
    let out = prepare_out_dir(cfg)?;
    let path = out.join("graph-stats.txt");
    std::fs::write(&path, &r).map_err(|e| CliError::io(&path, e))?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub schedule: Vec<usize>,
    /// Eval mIoU for each init seed.
    pub miou: Vec<f64>,
    pub mean: f64,
    /// Messages computed per level over the first seed's training.
    pub messages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, schedule: &[usize]) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.schedule == schedule)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("schedule,seed_mious,mean_miou,messages_per_level\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                join(&r.schedule, "-"),
                join(&r.miou, " "),
                r.mean,
                join(&r.messages, " ")
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>9}  {:<28} {}\n", "schedule", "mIoU", "per seed", "messages");
        for r in &self.rows {
            let seeds: Vec<String> = r.miou.iter().map(|m| format!("{m:.4}")).collect();
            let _ = writeln!(
                s,
                "{:<12} {:>9.4}  {:<28} {}",
                format!("({})", join(&r.schedule, ",")),
                r.mean,
                seeds.join(" "),
                join(&r.messages, " ")
            );
        }
        s
    }
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

/// Trains and scores one model per schedule and init seed on identical data.
pub fn cmd_ablate(cfg: &RunConfig, schedules: &[Vec<usize>]) -> Result<AblationTable, CliError> {
    cfg.validate()?;
    let base = cfg.hpgnn_config()?;
    let mut configs = Vec::with_capacity(schedules.len());
    for s in schedules {
        let mut c = base.clone();
        c.schedule = schedule_from_list(s, base.level_count())?;
        c.validate()?;
        configs.push(c);
    }
    let out = prepare_out_dir(cfg)?;
    // Scene graphs do not depend on the schedule.
    let scenes = prepare_scenes(&load_split(cfg, Split::Train)?, &base)?;
    let eval = load_split(cfg, Split::Eval)?;
    let seeds = if cfg.ablate.init_seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.ablate.init_seeds.clone()
    };

    let mut rows = Vec::with_capacity(schedules.len());
    for (schedule, config) in schedules.iter().zip(&configs) {
        let mut mious = Vec::with_capacity(seeds.len());
        let mut messages = Vec::new();
        for (i, &seed) in seeds.iter().enumerate() {
            let run = train_model(cfg, config, &scenes, seed, |_, _, _, _| Ok(()))?;
            if i == 0 {
                messages = run.counters.iter().map(|c| c.messages).collect();
            }
            let cm = confusion_over(&run.trainer.store, config, &eval)?;
            mious.push(miou(&cm)?.mean);
        }
        let mean = mious.iter().sum::<f64>() / mious.len() as f64;
        rows.push(AblationRow {
            schedule: schedule.clone(),
            miou: mious,
            mean,
            messages,
        });
    }
    let table = AblationTable { rows };
    for (file, text) in [("ablation.csv", table.to_csv()), ("ablation.txt", table.to_text())] {
        let path = out.join(file);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(table)
}
