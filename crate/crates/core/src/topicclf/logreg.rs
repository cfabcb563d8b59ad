use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tfidf::{SparseVector, Vocabulary};
use super::TopicError;
use crate::model::Topic;

/// Samples per partial-gradient block. Blocks are reduced in index order, so
/// the result does not depend on the thread count.
const BLOCK: usize = 256;
const MIN_STEP: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub l2_lambda: f64,
    pub grad_tol: f64,
    pub initial_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            l2_lambda: 1e-4,
            grad_tol: 1e-6,
            initial_step: 1.0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), TopicError> {
        if self.max_iter == 0 {
            return Err(TopicError::Config("max_iter must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(TopicError::Config("l2_lambda must be non-negative".into()));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(TopicError::Config("grad_tol must be positive".into()));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(TopicError::Config("initial_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// No step size down to 1e-20 decreased the loss.
    LineSearchStalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_loss: f64,
    /// Infinity norm of the gradient at the returned weights.
    pub final_grad_norm: f64,
    pub stop_reason: StopReason,
    /// Loss at the start and after every accepted step.
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

/// Multinomial logistic regression over TF-IDF features.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    vocabulary: Vocabulary,
    topic_order: Vec<Topic>,
    /// K rows of V feature weights followed by one bias, row-major.
    weights: Vec<f64>,
}

impl TopicModel {
    pub fn from_parts(
        vocabulary: Vocabulary,
        topic_order: Vec<Topic>,
        weights: Vec<f64>,
    ) -> Result<Self, TopicError> {
        if topic_order.len() < 2 {
            return Err(TopicError::DegenerateLabels);
        }
        let mut seen = topic_order.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != topic_order.len() {
            return Err(TopicError::Config("topic order has duplicates".into()));
        }
        if weights.len() != topic_order.len() * (vocabulary.len() + 1) {
            return Err(TopicError::Config(format!(
                "weight matrix has {} values, expected {}",
                weights.len(),
                topic_order.len() * (vocabulary.len() + 1)
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TopicError::Numeric("weights"));
        }
        Ok(Self {
            vocabulary,
            topic_order,
            weights,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn topic_order(&self) -> &[Topic] {
        &self.topic_order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Most probable topic (ties go to the earliest in `topic_order`) and
    /// the probability of every topic in `topic_order`.
    pub fn predict(&self, text: &str) -> (Topic, Vec<f64>) {
        self.predict_vector(&self.vocabulary.transform(text))
    }

    pub fn predict_vector(&self, x: &SparseVector) -> (Topic, Vec<f64>) {
        let mut p = logits(&self.weights, self.topic_order.len(), x);
        softmax_in_place(&mut p);
        let mut best = 0;
        for (k, &pk) in p.iter().enumerate() {
            if pk > p[best] {
                best = k;
            }
        }
        (self.topic_order[best], p)
    }
}

fn logits(weights: &[f64], k: usize, x: &SparseVector) -> Vec<f64> {
    let cols = weights.len() / k;
    (0..k)
        .map(|c| {
            let row = &weights[c * cols..(c + 1) * cols];
            row[cols - 1] + x.iter().map(|(j, v)| row[j] * v).sum::<f64>()
        })
        .collect()
}

/// Replaces logits by probabilities; returns log-sum-exp of the input.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

/// Mean softmax cross-entropy plus (λ/2)‖W‖² over the non-bias weights,
/// and its gradient. `weights` is K × (V + 1) row-major, bias last.
pub fn objective(
    weights: &[f64],
    n_classes: usize,
    features: &[SparseVector],
    labels: &[usize],
    l2_lambda: f64,
) -> (f64, Vec<f64>) {
    let k = n_classes;
    let cols = weights.len() / k;
    let n = features.len() as f64;

    let partials: Vec<(f64, Vec<f64>)> = features
        .par_chunks(BLOCK)
        .zip(labels.par_chunks(BLOCK))
        .map(|(xs, ys)| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; weights.len()];
            for (x, &y) in xs.iter().zip(ys) {
                let mut p = logits(weights, k, x);
                let z_y = p[y];
                loss += softmax_in_place(&mut p) - z_y;
                p[y] -= 1.0;
                for (c, &r) in p.iter().enumerate() {
                    let row = &mut grad[c * cols..(c + 1) * cols];
                    for (j, v) in x.iter() {
                        row[j] += r * v;
                    }
                    row[cols - 1] += r;
                }
            }
            (loss, grad)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);

    if l2_lambda > 0.0 {
        let mut penalty = 0.0;
        for c in 0..k {
            for j in 0..cols - 1 {
                let w = weights[c * cols + j];
                penalty += w * w;
                grad[c * cols + j] += l2_lambda * w;
            }
        }
        loss += 0.5 * l2_lambda * penalty;
    }
    (loss, grad)
}

/// Full-batch gradient descent from zero weights. Each iteration starts at
/// twice the previously accepted step (`initial_step` on the first) and
/// halves it until the loss strictly decreases, so the loss sequence is
/// monotone. Stops when the gradient infinity norm drops below `grad_tol`
/// or after `max_iter` accepted steps.
pub fn train(
    vocabulary: Vocabulary,
    features: &[SparseVector],
    labels: &[Topic],
    cfg: &TrainConfig,
) -> Result<(TopicModel, TrainReport), TopicError> {
    cfg.check()?;
    if features.len() != labels.len() {
        return Err(TopicError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let topic_order: Vec<Topic> = Topic::ALL
        .into_iter()
        .filter(|t| labels.contains(t))
        .collect();
    if topic_order.len() < 2 {
        return Err(TopicError::DegenerateLabels);
    }
    let v = vocabulary.len();
    for x in features {
        if !x.is_finite() {
            return Err(TopicError::Numeric("features"));
        }
        if x.dim() != v {
            return Err(TopicError::FeatureIndex {
                index: x.dim(),
                size: v,
            });
        }
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|t| topic_order.iter().position(|o| o == t).expect("label in topic order"))
        .collect();
    let k = topic_order.len();

    let mut w = vec![0.0; k * (v + 1)];
    let (mut loss, mut grad) = objective(&w, k, features, &y, cfg.l2_lambda);
    let mut history = vec![loss];
    let mut step = cfg.initial_step;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < cfg.max_iter {
        if inf_norm(&grad) < cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut t = step;
        let accepted = loop {
            let cand: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - t * gi).collect();
            let (cl, cg) = objective(&cand, k, features, &y, cfg.l2_lambda);
            if cl < loss {
                break Some((cand, cl, cg));
            }
            t *= 0.5;
            if t < MIN_STEP {
                break None;
            }
        };
        let Some((cand, cl, cg)) = accepted else {
            stop = StopReason::LineSearchStalled;
            break;
        };
        if !cl.is_finite() {
            return Err(TopicError::Numeric("loss"));
        }
        w = cand;
        loss = cl;
        grad = cg;
        history.push(loss);
        iterations += 1;
        step = 2.0 * t;
    }
    if stop == StopReason::MaxIterations && inf_norm(&grad) < cfg.grad_tol {
        stop = StopReason::GradientTolerance;
    }

    let report = TrainReport {
        iterations,
        final_loss: loss,
        final_grad_norm: inf_norm(&grad),
        stop_reason: stop,
        loss_history: history,
    };
    let model = TopicModel::from_parts(vocabulary, topic_order, w)?;
    Ok((model, report))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
