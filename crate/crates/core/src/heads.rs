//! Metric functions mapping support and query embeddings to per-class
//! query logits, and the softmax cross-entropy episode loss.

use std::fmt;
use std::str::FromStr;

use crate::encoder::glorot_uniform;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Graph, ParamStore, Tensor};

/// Added to the row norm inside the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;
/// Floor inside the matching head's log of class attention mass.
pub const MATCHING_LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Proto,
    Matching,
    Relation,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proto" | "protonet" => Ok(HeadKind::Proto),
            "matching" | "matchingnet" => Ok(HeadKind::Matching),
            "relation" | "relationnet" => Ok(HeadKind::Relation),
            other => Err(Error::Config(format!("unknown head kind `{other}`"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Proto => "proto",
            HeadKind::Matching => "matching",
            HeadKind::Relation => "relation",
        })
    }
}

/// Two-layer perceptron scoring `concat(query, prototype)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationHeadState {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

const REL_FIELDS: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl RelationHeadState {
    pub fn build(embed_dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        if hidden == 0 || embed_dim == 0 {
            return Err(Error::Config("relation head needs positive embedding and hidden widths".into()));
        }
        Ok(Self {
            w1: glorot_uniform(2 * embed_dim, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: glorot_uniform(hidden, 1, rng),
            b2: Tensor::zeros(&[1]),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w1.shape()[0] / 2
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        for (f, t) in REL_FIELDS.iter().zip([&self.w1, &self.b1, &self.w2, &self.b2]) {
            store.insert(format!("head.rel.{f}"), t.clone())?;
        }
        Ok(())
    }

    pub fn from_store(store: &ParamStore) -> Result<Option<Self>> {
        if !store.contains("head.rel.w1") {
            return Ok(None);
        }
        let get = |f: &str| store.get(&format!("head.rel.{f}")).cloned();
        let s = Self {
            w1: get("w1")?,
            b1: get("b1")?,
            w2: get("w2")?,
            b2: get("b2")?,
        };
        let ok = s.w1.ndim() == 2
            && s.w1.shape()[0] % 2 == 0
            && s.b1.shape() == [s.hidden()]
            && s.w2.shape() == [s.hidden(), 1]
            && s.b2.shape() == [1];
        if !ok {
            return Err(Error::dim("relation_head", "inconsistent head.rel.* shapes"));
        }
        Ok(Some(s))
    }
}

/// A metric function together with its parameters, if any.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricHead {
    Proto,
    Matching,
    Relation(RelationHeadState),
}

impl MetricHead {
    pub fn kind(&self) -> HeadKind {
        match self {
            MetricHead::Proto => HeadKind::Proto,
            MetricHead::Matching => HeadKind::Matching,
            MetricHead::Relation(_) => HeadKind::Relation,
        }
    }

    pub fn logits(&self, g: &Graph, support: &Tensor, labels: &[usize], query: &Tensor) -> Result<Tensor> {
        match self {
            MetricHead::Proto => proto_logits(g, support, labels, query),
            MetricHead::Matching => matching_logits(g, support, labels, query),
            MetricHead::Relation(h) => relation_logits(g, support, labels, query, h),
        }
    }
}

/// Number of classes, checking every label `0..n` has a support row.
fn class_count(labels: &[usize]) -> Result<usize> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!("class {missing} has no support rows")));
    }
    if n < 1 {
        return Err(Error::Contract("empty support set".into()));
    }
    Ok(n)
}

fn check_embeddings(support: &Tensor, labels: &[usize], query: &Tensor) -> Result<()> {
    if support.ndim() != 2 || query.ndim() != 2 || support.shape()[1] != query.shape()[1] {
        return Err(Error::dim(
            "metric_head",
            format!("support {:?} vs query {:?}", support.shape(), query.shape()),
        ));
    }
    if support.shape()[0] != labels.len() {
        return Err(Error::dim(
            "metric_head",
            format!("{} support rows, {} labels", support.shape()[0], labels.len()),
        ));
    }
    Ok(())
}

/// Class-mean of support embeddings, shape (N, C).
fn prototypes(g: &Graph, support: &Tensor, labels: &[usize], n_way: usize) -> Result<Tensor> {
    let mut counts = vec![0usize; n_way];
    for &l in labels {
        counts[l] += 1;
    }
    let s = labels.len();
    let mut avg = vec![0.0; n_way * s];
    for (j, &l) in labels.iter().enumerate() {
        avg[l * s + j] = 1.0 / counts[l] as f64;
    }
    g.matmul(&Tensor::from_parts(vec![n_way, s], avg), support)
}

/// `logit[i, k] = -||query_i - prototype_k||^2`.
pub fn proto_logits(g: &Graph, support: &Tensor, labels: &[usize], query: &Tensor) -> Result<Tensor> {
    check_embeddings(support, labels, query)?;
    let n = class_count(labels)?;
    let protos = prototypes(g, support, labels, n)?;
    let (q, c) = (query.shape()[0], query.shape()[1]);
    let diff = g.sub(&g.reshape(query, &[q, 1, c])?, &protos)?;
    let dist = g.sum_axis(&g.square(&diff)?, 2)?;
    g.neg(&dist)
}

fn unit_rows(g: &Graph, x: &Tensor) -> Result<Tensor> {
    let rows = x.shape()[0];
    let sq = g.add_scalar(&g.sum_axis(&g.square(x)?, 1)?, COSINE_EPS)?;
    let inv = g.exp(&g.scale(&g.log(&sq)?, -0.5)?)?;
    g.mul(x, &g.reshape(&inv, &[rows, 1])?)
}

/// Row-wise softmax of a rank-2 tensor with a max shift.
pub fn softmax_rows(g: &Graph, x: &Tensor) -> Result<Tensor> {
    let rows = x.shape()[0];
    let shift = row_max(x);
    let e = g.exp(&g.sub(x, &shift)?)?;
    let total = g.reshape(&g.sum_axis(&e, 1)?, &[rows, 1])?;
    g.mul(&e, &g.exp(&g.neg(&g.log(&total)?)?)?)
}

/// Detached per-row maximum, shape (rows, 1). The shift cancels in softmax
/// and log-sum-exp, so it carries no gradient.
fn row_max(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let m = (0..rows)
        .map(|r| x.data()[r * cols..(r + 1) * cols].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Tensor::from_parts(vec![rows, 1], m)
}

/// Cosine attention over support items, pooled per class:
/// `logit[i, k] = ln(sum_{j: y_j = k} softmax_j(cos(q_i, s_j)) + 1e-12)`.
pub fn matching_logits(g: &Graph, support: &Tensor, labels: &[usize], query: &Tensor) -> Result<Tensor> {
    check_embeddings(support, labels, query)?;
    let n = class_count(labels)?;
    let s = labels.len();
    let cos = g.matmul(&unit_rows(g, query)?, &g.transpose(&unit_rows(g, support)?)?)?;
    let attn = softmax_rows(g, &cos)?;
    let mut onehot = vec![0.0; s * n];
    for (j, &l) in labels.iter().enumerate() {
        onehot[j * n + l] = 1.0;
    }
    let scores = g.matmul(&attn, &Tensor::from_parts(vec![s, n], onehot))?;
    g.log(&g.add_scalar(&scores, MATCHING_LOG_FLOOR)?)
}

/// Learned comparator on `concat(query_i, prototype_k)`:
/// `r[i, k] = w2^T relu(W1^T [q_i; p_k] + b1) + b2`.
pub fn relation_logits(
    g: &Graph,
    support: &Tensor,
    labels: &[usize],
    query: &Tensor,
    head: &RelationHeadState,
) -> Result<Tensor> {
    check_embeddings(support, labels, query)?;
    let n = class_count(labels)?;
    let (q, c) = (query.shape()[0], query.shape()[1]);
    if head.embed_dim() != c {
        return Err(Error::dim(
            "relation_logits",
            format!("head expects width {}, embeddings have {c}", head.embed_dim()),
        ));
    }
    let protos = prototypes(g, support, labels, n)?;
    let qe = g.broadcast_to(&g.reshape(query, &[q, 1, c])?, &[q, n, c])?;
    let pe = g.broadcast_to(&protos, &[q, n, c])?;
    let pairs = g.reshape(&g.concat(&[&qe, &pe], 2)?, &[q * n, 2 * c])?;
    let hidden = g.relu(&g.add(&g.matmul(&pairs, &head.w1)?, &head.b1)?)?;
    let r = g.add(&g.matmul(&hidden, &head.w2)?, &head.b2)?;
    g.reshape(&r, &[q, n])
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    let (rows, cols) = (logits.shape()[0], logits.shape()[1]);
    (0..rows)
        .map(|r| {
            let row = &logits.data()[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Predicted query labels under `head`; evaluated without recording.
pub fn predict_episode(head: &MetricHead, support: &Tensor, labels: &[usize], query: &Tensor) -> Result<Vec<usize>> {
    let g = Graph::new();
    Ok(predict(&head.logits(&g, &support.detach(), labels, &query.detach())?))
}

/// Mean softmax cross-entropy of `logits` (Q, N) against `labels`.
pub fn episode_loss(g: &Graph, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::dim(
            "episode_loss",
            format!("logits {:?} for {} labels", logits.shape(), labels.len()),
        ));
    }
    let (q, n) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Contract(format!("label {bad} out of range for {n} classes")));
    }
    let shift = row_max(logits);
    let sum_exp = g.sum_axis(&g.exp(&g.sub(logits, &shift)?)?, 1)?;
    let lse = g.add(&g.log(&sum_exp)?, &g.reshape(&shift, &[q])?)?;
    let mut onehot = vec![0.0; q * n];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * n + l] = 1.0;
    }
    let picked = g.sum_axis(&g.mul(logits, &Tensor::from_parts(vec![q, n], onehot))?, 1)?;
    g.mean(&g.sub(&lse, &picked)?)
}
