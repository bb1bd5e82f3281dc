//! Margin-based negative-sampling loss.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::ids::EntityId;
use crate::model::{EmbeddedQuery, Forward};
use crate::numeric::{RealMat, Var};
use crate::regex::{RegexExpr, Variant};

/// How negative terms are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Sampling {
    /// Every negative weighs `1/n`.
    Uniform,
    /// Softmax of `-temperature * distance` over the negatives, treated as
    /// constants.
    SelfAdversarial { temperature: f64 },
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Softmax of `-temperature * d`, shifted for stability.
pub fn adversarial_weights(neg_dists: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = neg_dists.iter().map(|d| -temperature * d).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

pub fn negative_weights(neg_dists: &[f64], sampling: Sampling) -> Vec<f64> {
    match sampling {
        Sampling::Uniform => uniform_weights(neg_dists.len()),
        Sampling::SelfAdversarial { temperature } => adversarial_weights(neg_dists, temperature),
    }
}

/// `-log s(gamma - d_pos) - sum_i w_i log s(d_neg_i - gamma)`.
pub fn loss_value(pos_dist: f64, neg_dists: &[f64], gamma: f64, weights: &[f64]) -> f64 {
    let neg: f64 = neg_dists.iter().zip(weights).map(|(d, w)| w * log_sigmoid(d - gamma)).sum();
    -log_sigmoid(gamma - pos_dist) - neg
}

/// Loss on the tape from a distance column whose first row is the
/// positive answer and the rest negatives.
pub fn loss_from_distances(fwd: &mut Forward<'_>, dists: Var, gamma: f64, sampling: Sampling) -> Result<Var, TrainError> {
    let d = fwd.tape.value(dists).data().to_vec();
    let rows = d.len();
    let weights = negative_weights(&d[1..], sampling);
    let mut pos_mask = vec![0.0; rows];
    pos_mask[0] = 1.0;
    let mut neg_mask = vec![0.0; rows];
    neg_mask[1..].copy_from_slice(&weights);
    let t = &mut fwd.tape;
    let pos_mask = t.constant(RealMat::new(rows, 1, pos_mask)?);
    let neg_mask = t.constant(RealMat::new(rows, 1, neg_mask)?);
    let nd = t.neg(dists);
    let margin_pos = t.add_scalar(nd, gamma);
    let pos = t.log_sigmoid(margin_pos);
    let margin_neg = t.add_scalar(dists, -gamma);
    let neg = t.log_sigmoid(margin_neg);
    let pos = t.mul(pos, pos_mask)?;
    let neg = t.mul(neg, neg_mask)?;
    let both = t.add(pos, neg)?;
    let total = t.sum(both);
    Ok(t.neg(total))
}

/// Records the loss of one (query, answer, negatives) example. Returns
/// `None` when the variant cannot embed the query.
#[allow(clippy::too_many_arguments)]
pub fn example_loss(
    fwd: &mut Forward<'_>,
    variant: Variant,
    head: EntityId,
    expr: &RegexExpr,
    answer: EntityId,
    negatives: &[EntityId],
    gamma: f64,
    sampling: Sampling,
) -> Result<Option<Var>, TrainError> {
    let q = fwd.embed_regex(variant, head, expr)?;
    if let EmbeddedQuery::Unanswerable = q {
        return Ok(None);
    }
    let mut ids = Vec::with_capacity(negatives.len() + 1);
    ids.push(answer);
    ids.extend_from_slice(negatives);
    let rows = fwd.entity_rows(Some(&ids))?;
    let d = fwd.score(&q, rows)?.expect("answerable query has a box");
    Ok(Some(loss_from_distances(fwd, d, gamma, sampling)?))
}
