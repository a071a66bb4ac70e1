//! Self/mutual information matching: whether a platform should ask for help,
//! and which candidates should answer.
//!
//! Each platform pools its feature map to a `C`-vector and derives a query
//! `q` and key `k` (both `qk_dim`). Its confidence is `p = σ(qᵀk)`. A platform
//! with `p < request_threshold` compresses its pooled feature into a request
//! `r` (`request_dim`) and broadcasts it. Every candidate `j` answers with the
//! raw relevance `rᵀ W_α k_j` using its own key; the requester softmax-normalises
//! the replies into match scores and keeps candidates scoring strictly above
//! `1/(N−1)` as supporters.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{collaboration_threshold, NetConfig, SmimConfig};
use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::params::{glorot_uniform, init_linear, Bound, ParamSet};
use crate::tensor::Tensor;

/// Parameters `smim.query.*`, `smim.key.*`, `smim.request.*`, `smim.w_alpha`.
pub fn init_smim<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> ParamSet {
    let mut set = ParamSet::new();
    let c = cfg.feature_channels;
    init_linear(&mut set, rng, "smim.query", c, cfg.qk_dim);
    init_linear(&mut set, rng, "smim.key", c, cfg.qk_dim);
    init_linear(&mut set, rng, "smim.request", c, cfg.request_dim);
    set.insert(
        "smim.w_alpha",
        glorot_uniform(rng, &[cfg.request_dim, cfg.qk_dim], cfg.request_dim, cfg.qk_dim),
    );
    set
}

/// Per-platform matching state for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SmimState {
    pub query: Tensor,
    pub key: Tensor,
    pub request: Option<Tensor>,
    /// `qᵀk`.
    pub correlation: f64,
    /// `σ(qᵀk)`, the probability that no collaboration is needed.
    pub confidence: f64,
    /// `(candidate, s_ij)` over every other platform, in platform order.
    pub scores: Vec<(usize, f64)>,
    pub requested: bool,
    pub supporters: Vec<usize>,
}

fn pooled(g: &mut Graph, feature: Var) -> Result<Var, Error> {
    if g.shape(feature).len() != 3 {
        return Err(Error::Shape(format!("feature map must be H×W×C, got {:?}", g.shape(feature))));
    }
    g.mean_pool(feature)
}

/// Global-average-pool `x`, then the query and key encoders: `(q, k)`, each `1×qk_dim`.
pub fn encode_query_key(g: &mut Graph, p: &Bound, feature: Var) -> Result<(Var, Var), Error> {
    let v = pooled(g, feature)?;
    let q = g.conv1x1(v, p.get("smim.query.weight")?, Some(p.get("smim.query.bias")?))?;
    let k = g.conv1x1(v, p.get("smim.key.weight")?, Some(p.get("smim.key.bias")?))?;
    Ok((q, k))
}

/// `σ(qᵀk)` as a scalar node.
pub fn self_confidence(g: &mut Graph, q: Var, k: Var) -> Result<Var, Error> {
    if g.shape(q) != g.shape(k) {
        return Err(Error::Shape(format!("query {:?} and key {:?} differ", g.shape(q), g.shape(k))));
    }
    let c = g.dot(q, k)?;
    Ok(g.sigmoid(c))
}

/// Request help when confidence is strictly below the threshold. A tie goes
/// to the non-collaborating branch.
pub fn decide_request(confidence: f64, cfg: &SmimConfig) -> bool {
    confidence < cfg.request_threshold
}

/// Compact request `r`, `1×request_dim`.
pub fn encode_request(g: &mut Graph, p: &Bound, feature: Var) -> Result<Var, Error> {
    let v = pooled(g, feature)?;
    g.conv1x1(v, p.get("smim.request.weight")?, Some(p.get("smim.request.bias")?))
}

/// Raw relevance `rᵀ W_α k_j` computed by candidate `j` from its own key.
pub fn candidate_relevance(g: &mut Graph, p: &Bound, request: Var, key: Var) -> Result<Var, Error> {
    let projected = g.matmul(request, p.get("smim.w_alpha")?)?;
    g.dot(projected, key)
}

/// Plain-value relevance for a candidate holding only tensors.
pub fn relevance_value(request: &Tensor, w_alpha: &Tensor, key: &Tensor) -> Result<f64, Error> {
    let (r, k) = (request.numel(), key.numel());
    if w_alpha.shape() != [r, k] {
        return Err(Error::Shape(format!(
            "W_alpha {:?} does not map request dim {r} to key dim {k}",
            w_alpha.shape()
        )));
    }
    let w = w_alpha.data();
    let mut total = 0.0;
    for (i, &ri) in request.data().iter().enumerate() {
        let row = &w[i * k..(i + 1) * k];
        let mut proj = 0.0;
        for (wv, kv) in row.iter().zip(key.data()) {
            proj += wv * kv;
        }
        total += ri * proj;
    }
    Ok(total)
}

/// Softmax of the relevance logits over the candidates.
pub fn match_scores(g: &mut Graph, relevances: &[Var]) -> Result<Var, Error> {
    if relevances.is_empty() {
        return Err(Error::Protocol("no candidates replied to the request".into()));
    }
    let logits = g.concat(relevances, 0)?;
    g.softmax(logits, 0)
}

/// Plain-value softmax of relevance logits.
pub fn match_scores_value(relevances: &[f64]) -> Result<Vec<f64>, Error> {
    if relevances.is_empty() {
        return Err(Error::Protocol("no candidates replied to the request".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(alloc::vec![relevances.len()], relevances.to_vec())?);
    let s = g.softmax(x, 0)?;
    Ok(g.value(s).data().to_vec())
}

/// Candidates whose score strictly exceeds `1/(N−1)`.
///
/// With `N = 2` the threshold is 1 and can never be exceeded; a requester then
/// falls back to its only candidate.
pub fn select_supporters(scores: &[(usize, f64)], platforms: usize, requested: bool) -> Vec<usize> {
    if !requested {
        return Vec::new();
    }
    if platforms == 2 && scores.len() == 1 {
        return alloc::vec![scores[0].0];
    }
    let threshold = collaboration_threshold(platforms);
    scores.iter().filter(|(_, s)| *s > threshold).map(|(j, _)| *j).collect()
}
