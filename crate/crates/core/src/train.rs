//! One optimizer step per scene: forward, composite loss, backward, Adam.

use thiserror::Error;

use crate::data::LabeledCloud;
use crate::loss::{
    class_weights_excluding, record_total_loss, ClassWeights, LossError, LossVars, LossWeights,
};
use crate::metrics::{ConfusionMatrix, MetricsError};
use crate::model::{
    argmax_classes, forward, init_model_params, predict_logits, ForwardOutput, HpgnnConfig,
    LevelCounters, ModelError, SceneGraph,
};
use crate::nncore::{adam_step, AdamConfig, AdamState, ParamStore, Tape};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no training scenes")]
    NoScenes,
}

impl From<crate::nncore::NnError> for TrainError {
    fn from(e: crate::nncore::NnError) -> Self {
        TrainError::Model(e.into())
    }
}

/// A cloud prepared for the network together with the labels of the points
/// the network sees.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub graph: SceneGraph,
    pub labels: Vec<usize>,
}

impl TrainingScene {
    pub fn new(cloud: &LabeledCloud, config: &HpgnnConfig) -> Result<Self, ModelError> {
        let graph = SceneGraph::build(&cloud.points, config)?;
        let labels = graph.gather_labels(&cloud.labels);
        Ok(Self { graph, labels })
    }
}

/// Inverse-frequency class weights over the labels of `scenes`.
pub fn scene_class_weights(
    scenes: &[TrainingScene],
    classes: usize,
    epsilon: f64,
    ignore: Option<usize>,
) -> Result<ClassWeights, LossError> {
    let mut hist = vec![0u64; classes];
    for s in scenes {
        for &l in &s.labels {
            if l >= classes {
                return Err(LossError::LabelOutOfRange { label: l, classes });
            }
            hist[l] += 1;
        }
    }
    class_weights_excluding(&hist, epsilon, ignore)
}

/// Records forward pass and loss of one scene.
pub fn record_scene_loss(
    tape: &mut Tape,
    store: &ParamStore,
    config: &HpgnnConfig,
    scene: &TrainingScene,
    weights: &ClassWeights,
    lw: &LossWeights,
) -> Result<(ForwardOutput, LossVars), TrainError> {
    let out = forward(tape, store, config, &scene.graph)?;
    let probs = tape.softmax_rows(out.logits)?;
    let vars = record_total_loss(
        tape,
        store,
        probs,
        &scene.labels,
        weights,
        config.ignore_index,
        lw,
    )?;
    Ok((out, vars))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub wce: f64,
    pub lovasz: f64,
    pub reg: f64,
    pub total: f64,
    pub counters: Vec<LevelCounters>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: HpgnnConfig,
    pub store: ParamStore,
    pub adam: AdamState,
    pub class_weights: ClassWeights,
    pub loss_weights: LossWeights,
}

impl Trainer {
    pub fn new(
        config: HpgnnConfig,
        seed: u64,
        adam: AdamConfig,
        class_weights: ClassWeights,
        loss_weights: LossWeights,
    ) -> Result<Self, TrainError> {
        loss_weights.validate()?;
        let store = init_model_params(&config, seed)?;
        Ok(Self {
            config,
            store,
            adam: AdamState::new(adam),
            class_weights,
            loss_weights,
        })
    }

    /// One Adam update on `scene`; the reported losses are those before the
    /// update.
    pub fn step(&mut self, scene: &TrainingScene) -> Result<StepReport, TrainError> {
        Ok(self.step_batch(&[scene])?.remove(0))
    }

    /// One Adam update on the mean gradient over `batch`, accumulated in
    /// order. Returns one report per scene.
    pub fn step_batch(&mut self, batch: &[&TrainingScene]) -> Result<Vec<StepReport>, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::NoScenes);
        }
        let mut reports = Vec::with_capacity(batch.len());
        for scene in batch {
            let mut tape = Tape::new();
            let (out, vars) = record_scene_loss(
                &mut tape,
                &self.store,
                &self.config,
                scene,
                &self.class_weights,
                &self.loss_weights,
            )?;
            let grads = tape.backward(vars.total)?;
            grads.accumulate_into(&mut self.store)?;
            let value = |v| tape.value(v).data()[0];
            reports.push(StepReport {
                step: self.adam.step + 1,
                wce: value(vars.wce),
                lovasz: value(vars.lovasz),
                reg: value(vars.reg),
                total: value(vars.total),
                counters: out.counters,
            });
        }
        if batch.len() > 1 {
            self.store.scale_grads(1.0 / batch.len() as f64);
        }
        adam_step(&mut self.store, &mut self.adam);
        Ok(reports)
    }

    /// Class per network point of `scene`.
    pub fn predict(&self, graph: &SceneGraph) -> Result<Vec<usize>, TrainError> {
        let logits = predict_logits(&self.store, &self.config, graph)?;
        Ok(argmax_classes(&logits, self.config.ignore_index))
    }

    /// Confusion matrix of the current parameters over `scenes`.
    pub fn evaluate(&self, scenes: &[TrainingScene]) -> Result<ConfusionMatrix, TrainError> {
        evaluate(&self.store, &self.config, scenes)
    }
}

pub fn evaluate(
    store: &ParamStore,
    config: &HpgnnConfig,
    scenes: &[TrainingScene],
) -> Result<ConfusionMatrix, TrainError> {
    let mut cm = ConfusionMatrix::new(config.num_classes, config.ignore_index);
    for s in scenes {
        let logits = predict_logits(store, config, &s.graph)?;
        cm.accumulate(&s.labels, &argmax_classes(&logits, config.ignore_index))?;
    }
    Ok(cm)
}
