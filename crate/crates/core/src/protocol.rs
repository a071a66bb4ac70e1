//! Distributed inference as phase-barrier message passing, with byte-exact
//! accounting of everything that crosses a link.
//!
//! Wire format of one message, little-endian:
//!
//! ```text
//! "DCPM" | kind u8 | src u16 | dst u16 | frame u32 | payload_len u32 | payload
//! ```
//!
//! The header is 17 bytes. Payloads are f32 arrays: the request vector, one
//! relevance value, or a flattened `H'×W'×C` feature map.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;
use core::str::FromStr;

use rand::Rng;

use crate::config::{NetConfig, SmimConfig};
use crate::error::{Error, FormatError};
use crate::graph::Graph;
use crate::model::{baseline_fuse, baseline_sources, Method};
use crate::net::{decode_segmentation, encode_view};
use crate::params::ParamSet;
use crate::rff::fuse_values;
use crate::scene::SceneSample;
use crate::smim::{decide_request, encode_query_key, encode_request, match_scores_value, relevance_value, select_supporters, self_confidence};
use crate::tensor::{read_u32, ClassMask, Tensor};

pub const MESSAGE_MAGIC: &[u8; 4] = b"DCPM";
pub const HEADER_BYTES: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    RequestBroadcast = 1,
    RelevanceReply = 2,
    FeatureGrant = 3,
}

impl MessageKind {
    pub fn from_u8(b: u8) -> Result<Self, FormatError> {
        match b {
            1 => Ok(MessageKind::RequestBroadcast),
            2 => Ok(MessageKind::RelevanceReply),
            3 => Ok(MessageKind::FeatureGrant),
            other => Err(FormatError::BadKind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::RequestBroadcast => "request",
            MessageKind::RelevanceReply => "relevance",
            MessageKind::FeatureGrant => "feature",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Request(Vec<f32>),
    Relevance(f32),
    Feature(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolMessage {
    pub src: u16,
    pub dst: u16,
    pub frame: u32,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Request(_) => MessageKind::RequestBroadcast,
            Payload::Relevance(_) => MessageKind::RelevanceReply,
            Payload::Feature(_) => MessageKind::FeatureGrant,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::Request(v) | Payload::Feature(v) => 4 * v.len(),
            Payload::Relevance(_) => 4,
        }
    }

    pub fn wire_bytes(&self) -> usize {
        HEADER_BYTES + self.payload_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_bytes());
        out.extend_from_slice(MESSAGE_MAGIC);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&self.frame.to_le_bytes());
        out.extend_from_slice(&(self.payload_bytes() as u32).to_le_bytes());
        match &self.payload {
            Payload::Request(v) | Payload::Feature(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Relevance(x) => out.extend_from_slice(&x.to_le_bytes()),
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_BYTES {
            if bytes.len() >= 4 && &bytes[..4] != MESSAGE_MAGIC {
                return Err(bad_magic(bytes));
            }
            return Err(FormatError::Truncated { needed: HEADER_BYTES, got: bytes.len() });
        }
        if &bytes[..4] != MESSAGE_MAGIC {
            return Err(bad_magic(bytes));
        }
        let kind = MessageKind::from_u8(bytes[4])?;
        let src = u16::from_le_bytes([bytes[5], bytes[6]]);
        let dst = u16::from_le_bytes([bytes[7], bytes[8]]);
        let frame = read_u32(bytes, 9);
        let len = read_u32(bytes, 13) as usize;
        let needed = HEADER_BYTES.checked_add(len).ok_or(FormatError::BadDims)?;
        if bytes.len() < needed {
            return Err(FormatError::Truncated { needed, got: bytes.len() });
        }
        if bytes.len() > needed {
            return Err(FormatError::LengthMismatch { expected: needed, got: bytes.len() });
        }
        if len % 4 != 0 {
            return Err(FormatError::BadPayload { kind: kind.name(), len });
        }
        let floats: Vec<f32> = bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let payload = match kind {
            MessageKind::RequestBroadcast => Payload::Request(floats),
            MessageKind::FeatureGrant => Payload::Feature(floats),
            MessageKind::RelevanceReply => {
                if floats.len() != 1 {
                    return Err(FormatError::BadPayload { kind: kind.name(), len });
                }
                Payload::Relevance(floats[0])
            }
        };
        Ok(ProtocolMessage { src, dst, frame, payload })
    }

    /// Sort key for delivery at a barrier.
    pub fn order_key(&self) -> (u32, u16, u16, MessageKind) {
        (self.frame, self.src, self.dst, self.kind())
    }
}

fn bad_magic(bytes: &[u8]) -> FormatError {
    FormatError::BadMagic { expected: *MESSAGE_MAGIC, got: [bytes[0], bytes[1], bytes[2], bytes[3]] }
}

/// One metered transmission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub frame: u32,
    pub src: u16,
    pub dst: u16,
    pub kind: MessageKind,
    /// Serialized length, header included.
    pub bytes: usize,
}

impl LedgerEntry {
    pub fn payload_bytes(&self) -> usize {
        self.bytes - HEADER_BYTES
    }
}

/// Which bytes count towards MBpf.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accounting {
    /// Payload bytes of feature grants only.
    FeatureOnly,
    /// Every serialized byte of every message.
    Total,
}

impl Accounting {
    pub fn name(self) -> &'static str {
        match self {
            Accounting::FeatureOnly => "feature_only",
            Accounting::Total => "total",
        }
    }
}

impl FromStr for Accounting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "feature_only" => Ok(Accounting::FeatureOnly),
            "total" => Ok(Accounting::Total),
            other => Err(Error::Config(format!("unknown accounting `{other}` (expected feature_only or total)"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        CommLedger::default()
    }

    pub fn record(&mut self, msg: &ProtocolMessage) {
        self.entries.push(LedgerEntry {
            frame: msg.frame,
            src: msg.src,
            dst: msg.dst,
            kind: msg.kind(),
            bytes: msg.wire_bytes(),
        });
    }

    pub fn extend(&mut self, other: CommLedger) {
        self.entries.extend(other.entries);
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn feature_bytes(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == MessageKind::FeatureGrant)
            .map(LedgerEntry::payload_bytes)
            .sum()
    }

    /// Everything that is not feature payload: headers, requests, replies.
    pub fn control_bytes(&self) -> usize {
        self.total_bytes() - self.feature_bytes()
    }

    pub fn bytes(&self, accounting: Accounting) -> usize {
        match accounting {
            Accounting::FeatureOnly => self.feature_bytes(),
            Accounting::Total => self.total_bytes(),
        }
    }

    pub fn count(&self, kind: MessageKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// `frame,src,dst,kind,bytes` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,src,dst,kind,bytes\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{}", e.frame, e.src, e.dst, e.kind, e.bytes);
        }
        out
    }
}

/// Megabytes (2²⁰ bytes) per frame.
pub fn mbpf(ledger: &CommLedger, frames: usize, accounting: Accounting) -> Result<f64, Error> {
    if frames == 0 {
        return Err(Error::Input("MBpf needs at least one frame".into()));
    }
    Ok(ledger.bytes(accounting) as f64 / frames as f64 / (1u64 << 20) as f64)
}

/// Runs per-platform work between barriers. Implementations must return
/// results in platform order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>, Error>
    where
        T: Send,
        F: Fn(usize) -> Result<T, Error> + Sync + Send;
}

/// Runs every platform in turn on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>, Error>
    where
        T: Send,
        F: Fn(usize) -> Result<T, Error> + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Inference-time switches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferenceConfig {
    pub smim: SmimConfig,
    /// Platforms that never answer with a feature grant (fault injection).
    pub unresponsive: Vec<usize>,
}

/// What one platform decided in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PlatformDecision {
    pub confidence: f64,
    pub requested: bool,
    /// `(candidate, s_ij)` before thresholding; empty for non-requesters.
    pub scores: Vec<(usize, f64)>,
    pub supporters: Vec<usize>,
}

/// Result of one frame of distributed inference.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutcome {
    pub predictions: Vec<ClassMask>,
    pub decisions: Vec<PlatformDecision>,
    pub ledger: CommLedger,
}

/// State a platform keeps between phases.
#[derive(Clone, Debug)]
pub struct PlatformActor {
    pub id: usize,
    pub feature: Tensor,
    pub key: Tensor,
    pub confidence: f64,
    pub requested: bool,
    pub request: Option<Tensor>,
    pub inbox: Vec<ProtocolMessage>,
}

fn f32_vec(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|&v| v as f32).collect()
}

fn from_f32(shape: &[usize], v: &[f32]) -> Result<Tensor, Error> {
    Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f64).collect())
}

/// Send every message through its wire encoding, meter it and deliver it to
/// the addressee's inbox in `(frame, src, dst, kind)` order.
fn deliver(mut out: Vec<ProtocolMessage>, actors: &mut [PlatformActor], ledger: &mut CommLedger) -> Result<(), Error> {
    out.sort_by_key(ProtocolMessage::order_key);
    for msg in out {
        let wire = msg.to_bytes();
        let received = ProtocolMessage::parse(&wire)?;
        ledger.record(&received);
        let dst = received.dst as usize;
        let actor = actors
            .get_mut(dst)
            .ok_or_else(|| Error::Protocol(format!("message for unknown platform {dst}")))?;
        actor.inbox.push(received);
    }
    Ok(())
}

/// Decode an `H'×W'×C` map to a class mask.
pub fn predict(params: &ParamSet, fused: &Tensor) -> Result<ClassMask, Error> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let f = g.constant(fused.clone());
    let logits = decode_segmentation(&mut g, &b, f)?;
    Ok(ClassMask::argmax(g.value(logits)))
}

/// Local feature map of one view.
pub fn encode_local(params: &ParamSet, view: &Tensor) -> Result<Tensor, Error> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let img = g.constant(view.clone());
    let f = encode_view(&mut g, &b, img)?;
    Ok(g.value(f).clone())
}

/// One frame of DCP-Net inference: local encoding and the request decision,
/// request broadcast and relevance replies, supporter selection, feature
/// grants, then fusion and decoding on every platform.
pub fn run_frame<E: Executor + ?Sized>(
    exec: &E,
    sample: &SceneSample,
    params: &ParamSet,
    cfg: &InferenceConfig,
    frame: u32,
) -> Result<FrameOutcome, Error> {
    cfg.smim.validate()?;
    let n = sample.platforms();
    if n < 2 || n > u16::MAX as usize {
        return Err(Error::Config(format!("platform count {n} out of range")));
    }
    let mut ledger = CommLedger::new();

    // phase 1: encode, self-match, decide
    let mut actors = exec.map(n, |i| {
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let img = g.constant(sample.views[i].clone());
        let f = encode_view(&mut g, &b, img)?;
        let (q, k) = encode_query_key(&mut g, &b, f)?;
        let p = self_confidence(&mut g, q, k)?;
        let confidence = g.value(p).item();
        let requested = decide_request(confidence, &cfg.smim);
        let request = if requested {
            let r = encode_request(&mut g, &b, f)?;
            Some(g.value(r).clone())
        } else {
            None
        };
        Ok(PlatformActor {
            id: i,
            feature: g.value(f).clone(),
            key: g.value(k).clone(),
            confidence,
            requested,
            request,
            inbox: Vec::new(),
        })
    })?;
    let mut out = Vec::new();
    for a in &actors {
        if let Some(r) = &a.request {
            let payload = f32_vec(r);
            for j in (0..n).filter(|&j| j != a.id) {
                out.push(ProtocolMessage { src: a.id as u16, dst: j as u16, frame, payload: Payload::Request(payload.clone()) });
            }
        }
    }
    deliver(out, &mut actors, &mut ledger)?;

    // phase 2: candidates answer every request with their relevance
    let w_alpha = params
        .get("smim.w_alpha")
        .ok_or_else(|| Error::Config("missing parameter `smim.w_alpha`".into()))?;
    let replies = exec.map(n, |j| {
        let a = &actors[j];
        let mut msgs = Vec::new();
        for m in a.inbox.iter().filter(|m| m.kind() == MessageKind::RequestBroadcast) {
            let Payload::Request(r) = &m.payload else { unreachable!() };
            let r = from_f32(&[1, r.len()], r)?;
            let rel = relevance_value(&r, w_alpha, &a.key)?;
            msgs.push(ProtocolMessage { src: j as u16, dst: m.src, frame, payload: Payload::Relevance(rel as f32) });
        }
        Ok(msgs)
    })?;
    deliver(replies.into_iter().flatten().collect(), &mut actors, &mut ledger)?;

    // phase 3: requesters normalise the replies and pick supporters
    let decisions = exec.map(n, |i| {
        let a = &actors[i];
        if !a.requested {
            return Ok(PlatformDecision { confidence: a.confidence, requested: false, scores: Vec::new(), supporters: Vec::new() });
        }
        let mut rel: Vec<(usize, f64)> = a
            .inbox
            .iter()
            .filter_map(|m| match m.payload {
                Payload::Relevance(v) => Some((m.src as usize, v as f64)),
                _ => None,
            })
            .collect();
        rel.sort_by_key(|&(j, _)| j);
        let expected: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        if rel.iter().map(|&(j, _)| j).ne(expected.iter().copied()) {
            return Err(Error::Protocol(format!("platform {i} did not hear back from every candidate")));
        }
        let s = match_scores_value(&rel.iter().map(|&(_, v)| v).collect::<Vec<_>>())?;
        let scores: Vec<(usize, f64)> = expected.iter().copied().zip(s).collect();
        let supporters = select_supporters(&scores, n, true);
        Ok(PlatformDecision { confidence: a.confidence, requested: true, scores, supporters })
    })?;

    // phase 4: supporters grant their feature maps
    let grants = exec.map(n, |j| {
        if cfg.unresponsive.contains(&j) {
            return Ok(Vec::new());
        }
        let payload = f32_vec(&actors[j].feature);
        Ok(decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.supporters.contains(&j))
            .map(|(i, _)| ProtocolMessage { src: j as u16, dst: i as u16, frame, payload: Payload::Feature(payload.clone()) })
            .collect::<Vec<_>>())
    })?;
    deliver(grants.into_iter().flatten().collect(), &mut actors, &mut ledger)?;

    // phase 5: fuse and decode
    let predictions = exec.map(n, |i| {
        let a = &actors[i];
        let d = &decisions[i];
        let mut related = Vec::new();
        for &j in &d.supporters {
            let m = a
                .inbox
                .iter()
                .find(|m| m.src as usize == j && m.kind() == MessageKind::FeatureGrant)
                .ok_or_else(|| Error::Protocol(format!("supporter {j} did not grant its features to requester {i} (frame {frame})")))?;
            let Payload::Feature(v) = &m.payload else { unreachable!() };
            if v.len() != a.feature.numel() {
                return Err(Error::Protocol(format!("grant {j}→{i} carries {} values, expected {}", v.len(), a.feature.numel())));
            }
            let collab = from_f32(a.feature.shape(), v)?;
            related.push((j, related_value(params, &a.feature, &collab)?));
        }
        let weights: Vec<(usize, f64)> =
            d.scores.iter().map(|&(j, s)| (j, if d.supporters.contains(&j) { s } else { 0.0 })).collect();
        let fused = fuse_values(&a.feature, a.confidence, &weights, &related, a.requested, cfg.smim.eq9_literal)?;
        predict(params, &fused)
    })?;
    Ok(FrameOutcome { predictions, decisions, ledger })
}

fn related_value(params: &ParamSet, local: &Tensor, collab: &Tensor) -> Result<Tensor, Error> {
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let l = g.constant(local.clone());
    let c = g.constant(collab.clone());
    let r = crate::rff::related_from(&mut g, &b, l, c)?;
    Ok(g.value(r).clone())
}

/// One frame of a fixed-policy method seen from `ego`: the method's sources
/// grant their maps to `ego`, which fuses and decodes.
pub fn run_baseline_frame<R: Rng + ?Sized>(
    method: Method,
    sample: &SceneSample,
    params: &ParamSet,
    ego: usize,
    frame: u32,
    rng: &mut R,
) -> Result<(ClassMask, CommLedger), Error> {
    let n = sample.platforms();
    if ego >= n {
        return Err(Error::Input(format!("ego platform {ego} out of range for {n} platforms")));
    }
    if method == Method::DcpNet {
        return Err(Error::Input("DCP-Net frames run through run_frame".into()));
    }
    let pick = if method == Method::RandomSelection { crate::model::random_candidate(rng, n, ego) } else { ego };
    let sources = baseline_sources(method, n, ego, pick);
    let mut ledger = CommLedger::new();
    let mut received: Vec<Option<Tensor>> = vec![None; n];
    let local = encode_local(params, &sample.views[ego])?;
    for &j in &sources {
        let f = encode_local(params, &sample.views[j])?;
        let msg = ProtocolMessage { src: j as u16, dst: ego as u16, frame, payload: Payload::Feature(f32_vec(&f)) };
        let got = ProtocolMessage::parse(&msg.to_bytes())?;
        ledger.record(&got);
        let Payload::Feature(v) = &got.payload else { unreachable!() };
        received[j] = Some(from_f32(f.shape(), v)?);
    }
    received[ego] = Some(local);
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let vars: Vec<_> = received.into_iter().map(|t| t.map(|t| g.constant(t))).collect();
    let fused = baseline_fuse(&mut g, &b, method, &vars, ego, pick)?;
    let logits = decode_segmentation(&mut g, &b, fused)?;
    Ok((ClassMask::argmax(g.value(logits)), ledger))
}

/// Feature-grant bytes of one `h×w×c` f32 map.
pub fn grant_bytes(h: usize, w: usize, c: usize) -> usize {
    4 * h * w * c
}

/// Feature bytes per frame of a method at a given feature geometry,
/// assuming one ego per frame.
pub fn nominal_feature_bytes(method: Method, platforms: usize, cfg: &NetConfig) -> usize {
    let f = cfg.feature_size();
    let per = grant_bytes(f, f, cfg.feature_channels);
    per * baseline_sources(method, platforms, 0, 1).len()
}
