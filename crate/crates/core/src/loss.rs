//! Training objective: class-weighted cross entropy, Lovász-softmax and L2
//! regularization, combined affinely.
//!
//! Each loss comes in two forms: a plain value function and a `*_with_grad`
//! variant that also returns the gradient with respect to the probability
//! matrix, which is what the tape records.

use thiserror::Error;

use crate::nncore::{NnError, ParamKind, ParamStore, Tape, Tensor, Var};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label histogram has no counts")]
    AllZeroHistogram,
    #[error("class {0} never occurs and epsilon is zero")]
    ZeroFrequency(usize),
    #[error("{0}")]
    Shape(String),
    #[error("loss weights must be non-negative and not all zero")]
    InvalidLossWeights,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-class multipliers for the cross-entropy term.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `w_c ∝ 1 / (freq_c + epsilon)`, scaled so the mean weight is 1.
pub fn class_weights(histogram: &[u64], epsilon: f64) -> Result<ClassWeights, LossError> {
    class_weights_excluding(histogram, epsilon, None)
}

/// As [`class_weights`], with `ignore` left out of the frequencies and the
/// normalization. The ignored slot is set to 1 so the overall mean stays 1.
pub fn class_weights_excluding(
    histogram: &[u64],
    epsilon: f64,
    ignore: Option<usize>,
) -> Result<ClassWeights, LossError> {
    let active: Vec<usize> = (0..histogram.len())
        .filter(|&c| Some(c) != ignore)
        .collect();
    let total: u64 = active.iter().map(|&c| histogram[c]).sum();
    if total == 0 {
        return Err(LossError::AllZeroHistogram);
    }
    let mut w = vec![1.0; histogram.len()];
    for &c in &active {
        let freq = histogram[c] as f64 / total as f64;
        if freq + epsilon <= 0.0 {
            return Err(LossError::ZeroFrequency(c));
        }
        w[c] = 1.0 / (freq + epsilon);
    }
    let mean = active.iter().map(|&c| w[c]).sum::<f64>() / active.len() as f64;
    for &c in &active {
        w[c] /= mean;
    }
    Ok(ClassWeights(w))
}

fn check_inputs(probs: &Tensor, labels: &[usize]) -> Result<(), LossError> {
    if probs.rows() != labels.len() {
        return Err(LossError::Shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let classes = probs.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

pub fn weighted_ce(
    probs: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
    ignore: Option<usize>,
) -> Result<f64, LossError> {
    weighted_ce_with_grad(probs, labels, weights, ignore).map(|(v, _)| v)
}

/// Mean of `−w_y · ln ŷ_y` over labelled points, with its gradient w.r.t.
/// `probs`. Points labelled `ignore` contribute nothing and are not counted.
pub fn weighted_ce_with_grad(
    probs: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
    ignore: Option<usize>,
) -> Result<(f64, Tensor), LossError> {
    check_inputs(probs, labels)?;
    if weights.len() != probs.cols() {
        return Err(LossError::Shape(format!(
            "{} class weights for {} classes",
            weights.len(),
            probs.cols()
        )));
    }
    let mut grad = Tensor::zeros(probs.shape().to_vec());
    let counted = labels.iter().filter(|&&l| Some(l) != ignore).count();
    if counted == 0 {
        return Ok((0.0, grad));
    }
    let n = counted as f64;
    let cols = probs.cols();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if Some(y) == ignore {
            continue;
        }
        let p = probs.get(i, y);
        let w = weights.get(y);
        total -= w * p.max(PROB_CLAMP).ln();
        if p > PROB_CLAMP {
            grad.data_mut()[i * cols + y] = -w / (n * p);
        }
    }
    Ok((total / n, grad))
}

pub fn lovasz_softmax(
    probs: &Tensor,
    labels: &[usize],
    ignore: Option<usize>,
) -> Result<f64, LossError> {
    lovasz_softmax_with_grad(probs, labels, ignore).map(|(v, _)| v)
}

/// Lovász extension of the per-class Jaccard error, averaged over the classes
/// present among the labelled points, with its gradient w.r.t. `probs`.
pub fn lovasz_softmax_with_grad(
    probs: &Tensor,
    labels: &[usize],
    ignore: Option<usize>,
) -> Result<(f64, Tensor), LossError> {
    check_inputs(probs, labels)?;
    let cols = probs.cols();
    let mut grad = Tensor::zeros(probs.shape().to_vec());
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| Some(labels[i]) != ignore)
        .collect();
    let present: Vec<usize> = (0..cols)
        .filter(|&c| rows.iter().any(|&i| labels[i] == c))
        .collect();
    if present.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / present.len() as f64;
    let mut total = 0.0;
    for &c in &present {
        let fg: Vec<bool> = rows.iter().map(|&i| labels[i] == c).collect();
        let errors: Vec<f64> = rows
            .iter()
            .zip(&fg)
            .map(|(&i, &f)| {
                let p = probs.get(i, c);
                if f {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
        let sorted_fg: Vec<bool> = order.iter().map(|&k| fg[k]).collect();
        let jaccard_grad = lovasz_grad(&sorted_fg);
        for (pos, &k) in order.iter().enumerate() {
            let g = jaccard_grad[pos];
            total += scale * errors[k] * g;
            let sign = if fg[k] { -1.0 } else { 1.0 };
            grad.data_mut()[rows[k] * cols + c] += scale * sign * g;
        }
    }
    Ok((total, grad))
}

/// Increments of the Jaccard error `|M| / |G ∪ M|` as the prefix `M` of the
/// sorted order grows one element at a time.
fn lovasz_grad(sorted_fg: &[bool]) -> Vec<f64> {
    let gts = sorted_fg.iter().filter(|&&f| f).count() as f64;
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    let mut prev = 0.0;
    sorted_fg
        .iter()
        .map(|&f| {
            if f {
                cum_fg += 1.0;
            } else {
                cum_bg += 1.0;
            }
            let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
            let g = jaccard - prev;
            prev = jaccard;
            g
        })
        .collect()
}

/// Sum of squared weight entries; biases are excluded.
pub fn l2_reg(store: &ParamStore) -> f64 {
    store
        .iter()
        .filter(|(_, p)| p.kind == ParamKind::Weight)
        .map(|(_, p)| p.value.data().iter().map(|w| w * w).sum::<f64>())
        .sum()
}

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|&w| w == 0.0) {
            return Err(LossError::InvalidLossWeights);
        }
        Ok(())
    }
}

pub fn total_loss(wce: f64, ls: f64, reg: f64, lw: &LossWeights) -> f64 {
    lw.alpha * wce + lw.beta * ls + lw.gamma * reg
}

/// Tape nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub wce: Var,
    pub lovasz: Var,
    pub reg: Var,
    pub total: Var,
}

/// Records the composite loss on `tape`, given the softmax output `probs`.
pub fn record_total_loss(
    tape: &mut Tape,
    store: &ParamStore,
    probs: Var,
    labels: &[usize],
    weights: &ClassWeights,
    ignore: Option<usize>,
    lw: &LossWeights,
) -> Result<LossVars, LossError> {
    let (ce, ce_grad) = weighted_ce_with_grad(tape.value(probs), labels, weights, ignore)?;
    let wce = tape.scalar_fn(probs, ce, ce_grad)?;
    let (ls, ls_grad) = lovasz_softmax_with_grad(tape.value(probs), labels, ignore)?;
    let lovasz = tape.scalar_fn(probs, ls, ls_grad)?;

    let mut reg_terms = Vec::new();
    for (name, p) in store.iter().filter(|(_, p)| p.kind == ParamKind::Weight) {
        let v = tape.param(store, name)?;
        let sq = p.value.data().iter().map(|w| w * w).sum();
        let mut g = p.value.clone();
        g.data_mut().iter_mut().for_each(|w| *w *= 2.0);
        reg_terms.push(tape.scalar_fn(v, sq, g)?);
    }
    let reg = match reg_terms.split_first() {
        None => tape.constant(Tensor::scalar(0.0))?,
        Some((&first, rest)) => rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))?,
    };

    let a = tape.scale(wce, lw.alpha)?;
    let b = tape.scale(lovasz, lw.beta)?;
    let c = tape.scale(reg, lw.gamma)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossVars {
        wce,
        lovasz,
        reg,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn uniform_frequencies_give_unit_weights() {
        let w = class_weights(&[10, 10, 10], 1e-3).unwrap();
        assert_eq!(w.0, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_class_weights() {
        let w = class_weights(&[9, 1], 0.0).unwrap();
        assert!((w.0[0] - 0.2).abs() < 1e-12);
        assert!((w.0[1] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn absent_class_gets_capped_weight() {
        let eps = 1e-3;
        let w = class_weights(&[5, 5, 0], eps).unwrap();
        // raw weights: 1/(0.5+ε), 1/(0.5+ε), 1/ε
        let raw = [1.0 / (0.5 + eps), 1.0 / (0.5 + eps), 1.0 / eps];
        let mean = raw.iter().sum::<f64>() / 3.0;
        assert!((w.0[2] * mean - 1.0 / eps).abs() < 1e-6);
        assert_eq!(
            class_weights(&[5, 0], 0.0),
            Err(LossError::ZeroFrequency(1))
        );
        assert_eq!(
            class_weights(&[0, 0], 0.1),
            Err(LossError::AllZeroHistogram)
        );
    }

    #[test]
    fn ignored_class_is_excluded() {
        let w = class_weights_excluding(&[1000, 9, 1], 0.0, Some(0)).unwrap();
        assert_eq!(w.0[0], 1.0);
        assert!((w.0[1] - 0.2).abs() < 1e-12 && (w.0[2] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn ce_examples() {
        let p = probs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            weighted_ce(&p, &[0, 1], &ClassWeights::uniform(2), None).unwrap(),
            0.0
        );
        let e = (-1.0f64).exp();
        let p = probs(&[&[1.0 - e, e]]);
        let v = weighted_ce(&p, &[1], &ClassWeights::uniform(2), None).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(
            weighted_ce(&p, &[2], &ClassWeights::uniform(2), None),
            Err(LossError::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        );
    }

    #[test]
    fn ce_zero_probability_is_clamped() {
        let p = probs(&[&[1.0, 0.0]]);
        let (v, g) = weighted_ce_with_grad(&p, &[1], &ClassWeights::uniform(2), None).unwrap();
        assert!((v + PROB_CLAMP.ln()).abs() < 1e-12);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lovasz_examples() {
        let p = probs(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(lovasz_softmax(&p, &[0, 2], None).unwrap(), 0.0);
        let p = probs(&[&[0.3, 0.7]]);
        let v = lovasz_softmax(&p, &[1], None).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        // only ignored points: nothing to score
        assert_eq!(lovasz_softmax(&p, &[0], Some(0)).unwrap(), 0.0);
    }

    #[test]
    fn l2_examples() {
        let mut s = ParamStore::new();
        assert_eq!(l2_reg(&s), 0.0);
        s.insert("a/w1", Tensor::new(vec![1, 1], vec![2.0]).unwrap())
            .unwrap();
        s.insert("a/b1", Tensor::new(vec![1], vec![7.0]).unwrap())
            .unwrap();
        assert_eq!(l2_reg(&s), 4.0);
    }

    #[test]
    fn total_loss_examples() {
        let lw = LossWeights {
            alpha: 2.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(total_loss(0.5, 0.2, 10.0, &lw), 1.0);
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(total_loss(0.5, 0.2, 10.0, &zero), 0.0);
        assert!(zero.validate().is_err());
        let lw = LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1e-4,
        };
        assert!((total_loss(0.5, 0.2, 10.0, &lw) - 0.701).abs() < 1e-12);
    }
}
