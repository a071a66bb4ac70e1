//! Fusion policies and the centralised training forward pass.
//!
//! Every method shares the per-platform encoder and decoder; they differ in
//! how the ego platform combines its own feature map with the others'.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::NetConfig;
use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::net::{decode_segmentation, encode_view, init_decoder, init_encoder};
use crate::params::{init_linear, Bound, ParamSet};
use crate::rff::{fuse, init_rff, related_from, FuseMode};
use crate::scene::SceneSample;
use crate::smim::{candidate_relevance, encode_query_key, encode_request, init_smim, match_scores, self_confidence};

/// The compared collaboration policies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Local features only.
    NoInteraction,
    /// Every other feature map, channel-concatenated and reduced by a 1×1 conv.
    ConcatAll,
    /// Every feature map, weighted by a softmax over pooled dot products with the ego's.
    AuxViewAttention,
    /// Local features plus those of one uniformly drawn candidate.
    RandomSelection,
    /// Confidence-gated request, matched supporters, related-feature fusion.
    DcpNet,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NoInteraction,
        Method::ConcatAll,
        Method::AuxViewAttention,
        Method::RandomSelection,
        Method::DcpNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoInteraction => "no-interaction",
            Method::ConcatAll => "concat-all",
            Method::AuxViewAttention => "aux-view-attention",
            Method::RandomSelection => "random-selection",
            Method::DcpNet => "dcp-net",
        }
    }

    /// Row label used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            Method::NoInteraction => "No-Interaction",
            Method::ConcatAll => "Concat-All",
            Method::AuxViewAttention => "AuxView-Attention",
            Method::RandomSelection => "Random-Selection",
            Method::DcpNet => "DCP-Net",
        }
    }

    /// Table grouping: the two fixed-bandwidth regimes and the learned one.
    pub fn group(self) -> &'static str {
        match self {
            Method::NoInteraction => "Baseline",
            Method::ConcatAll | Method::AuxViewAttention => "All-to-one",
            Method::RandomSelection => "Single-selection",
            Method::DcpNet => "Dynamic",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown method `{s}` (expected no-interaction, concat-all, aux-view-attention, random-selection or dcp-net)"
            ))
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which platforms contribute a segmentation loss during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    VictimOnly,
    AllPlatforms,
}

impl Supervision {
    pub fn name(self) -> &'static str {
        match self {
            Supervision::VictimOnly => "victim-only",
            Supervision::AllPlatforms => "all-platforms",
        }
    }

    pub fn targets(self, sample: &SceneSample) -> Vec<usize> {
        match self {
            Supervision::VictimOnly => alloc::vec![sample.victim],
            Supervision::AllPlatforms => (0..sample.platforms()).collect(),
        }
    }
}

impl FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "victim-only" => Ok(Supervision::VictimOnly),
            "all-platforms" => Ok(Supervision::AllPlatforms),
            other => Err(Error::Config(format!("unknown supervision `{other}`"))),
        }
    }
}

/// Fresh parameters for `method`, seeded.
pub fn init_params(method: Method, cfg: &NetConfig, platforms: usize, seed: u64) -> Result<ParamSet, Error> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = init_encoder(cfg, &mut rng);
    set.extend(init_decoder(cfg, &mut rng));
    match method {
        Method::DcpNet => {
            set.extend(init_smim(cfg, &mut rng));
            set.extend(init_rff(cfg, &mut rng));
        }
        Method::ConcatAll => {
            let c = cfg.feature_channels;
            init_linear(&mut set, &mut rng, "fusion.concat", platforms * c, c);
        }
        _ => {}
    }
    Ok(set)
}

/// Candidates whose feature maps a fixed-policy method pulls to `ego`.
/// `pick` is the draw for random selection.
pub fn baseline_sources(method: Method, platforms: usize, ego: usize, pick: usize) -> Vec<usize> {
    match method {
        Method::NoInteraction | Method::DcpNet => Vec::new(),
        Method::ConcatAll | Method::AuxViewAttention => (0..platforms).filter(|&j| j != ego).collect(),
        Method::RandomSelection => alloc::vec![pick],
    }
}

/// Uniform draw of one candidate other than `ego`.
pub fn random_candidate<R: Rng + ?Sized>(rng: &mut R, platforms: usize, ego: usize) -> usize {
    let pick = rng.gen_range(0..platforms - 1);
    if pick >= ego {
        pick + 1
    } else {
        pick
    }
}

/// Fused map of `ego` for a fixed-policy method. `feats[j]` may be `None`
/// for platforms the method does not read.
pub fn baseline_fuse(
    g: &mut Graph,
    p: &Bound,
    method: Method,
    feats: &[Option<Var>],
    ego: usize,
    pick: usize,
) -> Result<Var, Error> {
    let get = |j: usize| feats.get(j).copied().flatten().ok_or_else(|| Error::Protocol(format!("feature map of platform {j} unavailable")));
    let local = get(ego)?;
    match method {
        Method::NoInteraction => Ok(local),
        Method::ConcatAll => {
            let mut parts = alloc::vec![local];
            for j in (0..feats.len()).filter(|&j| j != ego) {
                parts.push(get(j)?);
            }
            let stacked = g.concat(&parts, 2)?;
            g.conv1x1(stacked, p.get("fusion.concat.weight")?, Some(p.get("fusion.concat.bias")?))
        }
        Method::AuxViewAttention => {
            let c = g.shape(local)[2] as f64;
            let ego_pool = g.mean_pool(local)?;
            let mut logits = Vec::with_capacity(feats.len());
            let mut maps = Vec::with_capacity(feats.len());
            for j in 0..feats.len() {
                let f = get(j)?;
                let pj = g.mean_pool(f)?;
                let d = g.dot(ego_pool, pj)?;
                logits.push(g.scale(d, 1.0 / libm::sqrt(c)));
                maps.push(f);
            }
            let stacked = g.concat(&logits, 0)?;
            let w = g.softmax(stacked, 0)?;
            let mut acc: Option<Var> = None;
            for (j, f) in maps.into_iter().enumerate() {
                let wj = g.index(w, j)?;
                let term = g.mul_scalar(wj, f)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term)?,
                });
            }
            Ok(acc.unwrap())
        }
        Method::RandomSelection => {
            if pick == ego || pick >= feats.len() {
                return Err(Error::Input(format!("random pick {pick} is not a candidate of platform {ego}")));
            }
            let other = get(pick)?;
            g.add(local, other)
        }
        Method::DcpNet => Err(Error::Input("DCP-Net fusion is not a fixed policy".into())),
    }
}

/// Soft, fully connected DCP-Net fusion for `ego` as used in training: every
/// candidate contributes with its match score and the request indicator is 1.
/// `fixed_confidence` replaces `p` by a constant (gate warm-up).
pub fn dcp_soft_fuse(
    g: &mut Graph,
    p: &Bound,
    feats: &[Var],
    keys: &[Var],
    queries: &[Var],
    ego: usize,
    fixed_confidence: Option<f64>,
) -> Result<Var, Error> {
    let local = feats[ego];
    let confidence = match fixed_confidence {
        Some(v) => g.constant(crate::tensor::Tensor::scalar(v)),
        None => self_confidence(g, queries[ego], keys[ego])?,
    };
    let request = encode_request(g, p, local)?;
    let mut relevances = Vec::new();
    let mut related = Vec::new();
    for j in (0..feats.len()).filter(|&j| j != ego) {
        relevances.push(candidate_relevance(g, p, request, keys[j])?);
        related.push(related_from(g, p, local, feats[j])?);
    }
    let scores = match_scores(g, &relevances)?;
    let mut terms = Vec::with_capacity(related.len());
    for (n, fr) in related.into_iter().enumerate() {
        terms.push((g.index(scores, n)?, fr));
    }
    fuse(g, local, confidence, &terms, FuseMode::Training)
}

/// Training-time options of the centralised forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub supervision: Supervision,
    /// Hold DCP-Net's confidence at this value instead of `σ(qᵀk)`.
    pub fixed_confidence: Option<f64>,
}

impl LossConfig {
    pub fn new(supervision: Supervision) -> Self {
        LossConfig { supervision, fixed_confidence: None }
    }
}

/// Sum of the supervised platforms' cross-entropies with every feature map
/// available centrally. `rng` drives random selection only.
pub fn centralized_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    p: &Bound,
    method: Method,
    sample: &SceneSample,
    cfg: LossConfig,
    rng: &mut R,
) -> Result<Var, Error> {
    let n = sample.platforms();
    let targets = cfg.supervision.targets(sample);
    let needs_all = method != Method::NoInteraction;
    let mut feats: Vec<Option<Var>> = alloc::vec![None; n];
    for j in 0..n {
        if needs_all || targets.contains(&j) {
            let img = g.constant(sample.views[j].clone());
            feats[j] = Some(encode_view(g, p, img)?);
        }
    }
    let mut total: Option<Var> = None;
    let dcp = if method == Method::DcpNet {
        let all: Vec<Var> = feats.iter().map(|f| f.unwrap()).collect();
        let mut qs = Vec::with_capacity(n);
        let mut ks = Vec::with_capacity(n);
        for &f in &all {
            let (q, k) = encode_query_key(g, p, f)?;
            qs.push(q);
            ks.push(k);
        }
        Some((all, qs, ks))
    } else {
        None
    };
    for &i in &targets {
        let fused = match &dcp {
            Some((all, qs, ks)) => dcp_soft_fuse(g, p, all, ks, qs, i, cfg.fixed_confidence)?,
            None => {
                let pick = if method == Method::RandomSelection { random_candidate(rng, n, i) } else { i };
                baseline_fuse(g, p, method, &feats, i, pick)?
            }
        };
        let logits = decode_segmentation(g, p, fused)?;
        let ce = g.cross_entropy(logits, &sample.masks[i])?;
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    total.ok_or_else(|| Error::Input("no supervised platform".into()))
}
