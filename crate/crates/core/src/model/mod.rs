//! The hierarchical point-graph network: embedding, per-level message
//! passing, attentive downsampling, skip-mixed upsampling and the classifier.

mod config;
mod layers;
mod scene;

pub use config::{
    level_tag, HpgnnConfig, LevelConfig, MlpDepths, Schedule, OFFSET_WIDTH, POINT_ATTRIBUTES,
};
pub use layers::{
    downsample, init_point_features, message_step, upsample, DownsampleOutput, DownsampleParams,
    MessageParams, UpsampleParams,
};
pub use scene::SceneGraph;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::graph::GraphError;
use crate::nncore::{mlp_forward, NnError, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("feature width mismatch: {0}")]
    WidthMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Fresh parameters for every learned function of `config`.
pub fn init_model_params(config: &HpgnnConfig, seed: u64) -> Result<ParamStore, ModelError> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (prefix, spec) in config.layout() {
        store.register_mlp(&prefix, &spec, seed)?;
    }
    Ok(store)
}

/// Work done on one level during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelCounters {
    pub message_steps: usize,
    /// Directed messages computed, summed over steps.
    pub messages: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One row of class scores per network point.
    pub logits: Var,
    /// Attention column of each downsample, points → level 0 first.
    pub attention: Vec<Var>,
    /// State of each level after its last message step.
    pub level_states: Vec<Var>,
    pub counters: Vec<LevelCounters>,
}

fn run_block(
    tape: &mut Tape,
    store: &ParamStore,
    config: &HpgnnConfig,
    scene: &SceneGraph,
    level: usize,
    first_iter: usize,
    iterations: usize,
    mut states: Var,
    counters: &mut LevelCounters,
) -> Result<Var, ModelError> {
    let graph = &scene.levels[level];
    let f = config.message_spec(level);
    let g = config.update_spec(level);
    let tag = level_tag(level);
    for t in first_iter..first_iter + iterations {
        let prefix = format!("{tag}/iter{t}");
        let params = MessageParams {
            prefix: &prefix,
            f: &f,
            g: &g,
        };
        states = message_step(tape, store, &params, graph, states)?;
        counters.message_steps += 1;
        counters.messages += 2 * graph.edge_count();
    }
    Ok(states)
}

fn down_into(
    tape: &mut Tape,
    store: &ParamStore,
    config: &HpgnnConfig,
    scene: &SceneGraph,
    level: usize,
    child_states: Var,
) -> Result<DownsampleOutput, ModelError> {
    let (h, att, d) = (
        config.edge_spec(level),
        config.attention_spec(level),
        config.down_spec(level),
    );
    let prefix = format!("down{level}");
    let params = DownsampleParams {
        prefix: &prefix,
        h: &h,
        attention: &att,
        d: &d,
    };
    let parents = scene.levels[level].positions();
    if level == 0 {
        downsample(
            tape,
            store,
            &params,
            &scene.point_links,
            child_states,
            &scene.positions,
            &parents,
        )
    } else {
        let children = scene.levels[level - 1].positions();
        downsample(
            tape,
            store,
            &params,
            &scene.links[level - 1],
            child_states,
            &children,
            &parents,
        )
    }
}

/// Records the whole network on `tape` for one scene.
///
/// Order: embed points, merge them into level 0, then for each level run
/// its first block of iterations and merge into the next level; on the way
/// back, each level receives its parent's states through `U`, mixes them with
/// the states it had before descending, and runs its second block. Points
/// finally receive level 0 the same way, with their embedding as skip.
pub fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    config: &HpgnnConfig,
    scene: &SceneGraph,
) -> Result<ForwardOutput, ModelError> {
    let n = config.level_count();
    if scene.levels.len() != n {
        return Err(ModelError::Config(format!(
            "scene has {} levels, config {n}",
            scene.levels.len()
        )));
    }
    let mut counters = vec![LevelCounters::default(); n];
    let mut attention = Vec::with_capacity(n);
    let embedded = init_point_features(tape, store, &config.embed_spec(), &scene.attributes)?;

    // Descent: skip[i] is level i's state before it hands off to level i + 1.
    let mut skips = Vec::with_capacity(n);
    let mut below = embedded;
    for level in 0..n {
        let merged = down_into(tape, store, config, scene, level, below)?;
        attention.push(merged.alpha);
        let t = config.schedule.down[level];
        let states = run_block(
            tape,
            store,
            config,
            scene,
            level,
            0,
            t,
            merged.states,
            &mut counters[level],
        )?;
        skips.push(states);
        below = states;
    }

    let mut level_states = skips.clone();
    let mut above = skips[n - 1];
    for level in (0..n - 1).rev() {
        let (u, mix) = (config.up_spec(Some(level)), config.mixer_spec(Some(level)));
        let prefix = format!("up{level}");
        let params = UpsampleParams {
            prefix: &prefix,
            u: &u,
            mixer: &mix,
        };
        let refreshed = upsample(
            tape,
            store,
            &params,
            &scene.links[level],
            above,
            skips[level],
        )?;
        let first = config.schedule.down[level];
        let t = config.schedule.up[level];
        above = run_block(
            tape,
            store,
            config,
            scene,
            level,
            first,
            t,
            refreshed,
            &mut counters[level],
        )?;
        level_states[level] = above;
    }

    let (u, mix) = (config.up_spec(None), config.mixer_spec(None));
    let params = UpsampleParams {
        prefix: "up_points",
        u: &u,
        mixer: &mix,
    };
    let point_states = upsample(tape, store, &params, &scene.point_links, above, embedded)?;
    let logits = mlp_forward(
        tape,
        store,
        "classifier",
        &config.classifier_spec(),
        point_states,
    )?
    .output;
    Ok(ForwardOutput {
        logits,
        attention,
        level_states,
        counters,
    })
}

/// Forward pass that keeps only the logits.
pub fn predict_logits(
    store: &ParamStore,
    config: &HpgnnConfig,
    scene: &SceneGraph,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, store, config, scene)?;
    Ok(tape.value(out.logits).clone())
}

/// Row-wise argmax that never picks `ignore`; ties go to the lower class.
pub fn argmax_classes(logits: &Tensor, ignore: Option<usize>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let mut best: Option<(usize, f64)> = None;
            for (c, &v) in logits.row(r).iter().enumerate() {
                if Some(c) == ignore {
                    continue;
                }
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            best.map_or(0, |(c, _)| c)
        })
        .collect()
}
