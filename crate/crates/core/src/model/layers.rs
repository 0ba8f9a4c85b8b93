use crate::graph::{HierarchyLinks, LevelGraph};
use crate::nncore::{mlp_forward, MlpSpec, ParamStore, Tape, Tensor, Var};

use super::ModelError;

fn offsets(pairs: impl Iterator<Item = ([f64; 3], [f64; 3])>) -> Vec<f64> {
    pairs
        .flat_map(|(to, from)| [to[0] - from[0], to[1] - from[1], to[2] - from[2]])
        .collect()
}

fn check_width(
    tape: &Tape,
    v: Var,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<(), ModelError> {
    let t = tape.value(v);
    if t.rows() != rows || t.cols() != cols {
        return Err(ModelError::WidthMismatch(format!(
            "{what}: got {}x{}, expected {rows}x{cols}",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

/// Embeds `(intensity, z)` of each point.
pub fn init_point_features(
    tape: &mut Tape,
    store: &ParamStore,
    spec: &MlpSpec,
    attributes: &[[f64; 2]],
) -> Result<Var, ModelError> {
    let data = attributes.iter().flatten().copied().collect();
    let input = tape.constant(Tensor::matrix(attributes.len(), 2, data)?)?;
    Ok(mlp_forward(tape, store, "embed", spec, input)?.output)
}

/// Parameter names and specs for one message-passing iteration.
pub struct MessageParams<'a> {
    pub prefix: &'a str,
    pub f: &'a MlpSpec,
    pub g: &'a MlpSpec,
}

/// One synchronous iteration: every directed edge `v → u` carries
/// `f([s_u ‖ s_v ‖ x_v − x_u])`, each node max-pools its incoming messages
/// (zeros when it has none) and adds `g` of the result to its state.
pub fn message_step(
    tape: &mut Tape,
    store: &ParamStore,
    params: &MessageParams<'_>,
    graph: &LevelGraph,
    states: Var,
) -> Result<Var, ModelError> {
    let n = graph.node_count();
    check_width(
        tape,
        states,
        n,
        params.g.output_width(),
        "message_step states",
    )?;
    let edges = graph.directed_edges();
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let pos = |i: usize| graph.keypoints[i].position;
    let dx = offsets(edges.iter().map(|&(v, u)| (pos(v), pos(u))));

    let su = tape.gather(states, &dst)?;
    let sv = tape.gather(states, &src)?;
    let dx = tape.constant(Tensor::matrix(edges.len(), 3, dx)?)?;
    let input = tape.concat(&[su, sv, dx])?;
    let msg = mlp_forward(
        tape,
        store,
        &format!("{}/f", params.prefix),
        params.f,
        input,
    )?
    .output;
    let agg = tape.segment_max(msg, &dst, n)?;
    let upd = mlp_forward(tape, store, &format!("{}/g", params.prefix), params.g, agg)?.output;
    Ok(tape.add(upd, states)?)
}

pub struct DownsampleParams<'a> {
    pub prefix: &'a str,
    pub h: &'a MlpSpec,
    pub attention: &'a MlpSpec,
    pub d: &'a MlpSpec,
}

#[derive(Debug, Clone, Copy)]
pub struct DownsampleOutput {
    pub states: Var,
    /// Per-child attention weight (an n×1 column).
    pub alpha: Var,
}

/// Attentive merge of children into their parents:
/// `s_p = D(Σ_i α_i h([s_i ‖ x_i − x_p]))` with `α` the softmax of the
/// scorer over each parent's children.
pub fn downsample(
    tape: &mut Tape,
    store: &ParamStore,
    params: &DownsampleParams<'_>,
    links: &HierarchyLinks,
    child_states: Var,
    child_positions: &[[f64; 3]],
    parent_positions: &[[f64; 3]],
) -> Result<DownsampleOutput, ModelError> {
    links.ensure_no_childless()?;
    let nc = links.child_count();
    let np = links.parent_count();
    check_width(
        tape,
        child_states,
        nc,
        params.h.input_width() - 3,
        "downsample children",
    )?;
    let dx = offsets(
        links
            .parent_of
            .iter()
            .enumerate()
            .map(|(c, &p)| (child_positions[c], parent_positions[p])),
    );
    let dx = tape.constant(Tensor::matrix(nc, 3, dx)?)?;
    let input = tape.concat(&[child_states, dx])?;
    let p = params.prefix;
    let e = mlp_forward(tape, store, &format!("{p}/h"), params.h, input)?.output;
    let score = mlp_forward(tape, store, &format!("{p}/att"), params.attention, e)?.output;
    let alpha = tape.segment_softmax(score, &links.parent_of, np)?;
    let weighted = tape.scale_rows(e, alpha)?;
    let pooled = tape.segment_sum(weighted, &links.parent_of, np)?;
    let states = mlp_forward(tape, store, &format!("{p}/D"), params.d, pooled)?.output;
    Ok(DownsampleOutput { states, alpha })
}

pub struct UpsampleParams<'a> {
    pub prefix: &'a str,
    pub u: &'a MlpSpec,
    pub mixer: &'a MlpSpec,
}

/// `s_q ← mixer([U(s_p) ‖ skip_q])` for every child `q` of parent `p`.
pub fn upsample(
    tape: &mut Tape,
    store: &ParamStore,
    params: &UpsampleParams<'_>,
    links: &HierarchyLinks,
    parent_states: Var,
    child_skip: Var,
) -> Result<Var, ModelError> {
    check_width(
        tape,
        parent_states,
        links.parent_count(),
        params.u.input_width(),
        "upsample parents",
    )?;
    check_width(
        tape,
        child_skip,
        links.child_count(),
        params.mixer.input_width() - params.u.output_width(),
        "upsample skip",
    )?;
    let p = params.prefix;
    let up = mlp_forward(tape, store, &format!("{p}/U"), params.u, parent_states)?.output;
    let spread = tape.gather(up, &links.parent_of)?;
    let input = tape.concat(&[spread, child_skip])?;
    Ok(mlp_forward(tape, store, &format!("{p}/mix"), params.mixer, input)?.output)
}
