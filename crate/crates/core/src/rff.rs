//! Related-feature fusion: pixel-level cross-attention from the local map
//! onto a collaborator's map, then confidence-weighted fusion.
//!
//! `θ(F_l)` and `φ(F_c)` are 1×1 embeddings to `C'` channels; `g(F_c)` keeps
//! `C`. Both affinity embeddings also read a fixed sinusoidal code of the
//! cell position, since the toy encoder's receptive field carries none. The
//! affinity `A = softmax_rows(θ φᵀ)` is `HW×HW` and the related feature is
//! `F_r = A · g(F_c)` reshaped back to `H×W×C`. The fused map is
//! `O = p·F_l + (1 − p)·request·Σ_j s_j·F_r,j`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::NetConfig;
use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::params::{glorot_uniform, init_linear, Bound, ParamSet};
use crate::tensor::Tensor;

/// Parameters `rff.theta.*`, `rff.phi.weight` (`C+P→C'`) and `rff.g.*`
/// (`C→C`), where `P` is the width of the position code.
///
/// `φ` has no bias: it would add `θ_i·b` to every logit of row `i`, which the
/// row softmax cancels.
pub fn init_rff<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> ParamSet {
    let mut set = ParamSet::new();
    let c = cfg.feature_channels;
    let cp = c + cfg.position_channels();
    init_linear(&mut set, rng, "rff.theta", cp, cfg.embed_dim);
    set.insert("rff.phi.weight", glorot_uniform(rng, &[cp, cfg.embed_dim], cp, cfg.embed_dim));
    init_linear(&mut set, rng, "rff.g", c, c);
    set
}

/// Amplitude of the position code. Feature channels are O(1) at
/// initialisation; a larger code lets the affinity become position-selective
/// within a short training budget.
pub const CODE_GAIN: f64 = 3.0;

/// Fixed `H×W×4F` code of each cell's position: `sin` and `cos` of the row
/// and column index at periods `2H, H, H/2, …` (resp. `W`), scaled by
/// [`CODE_GAIN`].
pub fn position_code(h: usize, w: usize, freqs: usize) -> Tensor {
    let mut data = Vec::with_capacity(h * w * 4 * freqs);
    for y in 0..h {
        for x in 0..w {
            for f in 0..freqs {
                let scale = (1u64 << f) as f64;
                let ay = core::f64::consts::PI * scale * y as f64 / h as f64;
                let ax = core::f64::consts::PI * scale * x as f64 / w as f64;
                data.extend_from_slice(&[
                    CODE_GAIN * libm::sin(ay),
                    CODE_GAIN * libm::cos(ay),
                    CODE_GAIN * libm::sin(ax),
                    CODE_GAIN * libm::cos(ax),
                ]);
            }
        }
    }
    Tensor::new(alloc::vec![h, w, 4 * freqs], data).unwrap()
}

/// Append the position code when the embedding weight has rows for it.
fn with_position(g: &mut Graph, x: Var, weight: Var) -> Result<Var, Error> {
    let s = g.shape(x).to_vec();
    let rows = g.shape(weight)[0];
    if rows <= s[2] {
        return Ok(x);
    }
    let extra = rows - s[2];
    if extra % 4 != 0 {
        return Err(Error::Shape(format!("embedding weight has {rows} rows for {} feature channels", s[2])));
    }
    let code = g.constant(position_code(s[0], s[1], extra / 4));
    g.concat(&[x, code], 2)
}

/// `(θ(F_l), φ(F_c), g(F_c))`.
pub fn embed_features(g: &mut Graph, p: &Bound, local: Var, collab: Var) -> Result<(Var, Var, Var), Error> {
    let (sl, sc) = (g.shape(local), g.shape(collab));
    if sl.len() != 3 || sl != sc {
        return Err(Error::Shape(format!("local features {sl:?} and collaborative features {sc:?} differ")));
    }
    let (wt, wp) = (p.get("rff.theta.weight")?, p.get("rff.phi.weight")?);
    let lx = with_position(g, local, wt)?;
    let cx = with_position(g, collab, wp)?;
    let theta = g.conv1x1(lx, wt, Some(p.get("rff.theta.bias")?))?;
    let phi = g.conv1x1(cx, wp, None)?;
    let gout = g.conv1x1(collab, p.get("rff.g.weight")?, Some(p.get("rff.g.bias")?))?;
    Ok((theta, phi, gout))
}

/// Row-stochastic `HW×HW` affinity between two `H×W×C'` embeddings.
pub fn affinity(g: &mut Graph, theta: Var, phi: Var) -> Result<Var, Error> {
    let (st, sp) = (g.shape(theta).to_vec(), g.shape(phi).to_vec());
    if st.len() != 3 || st != sp {
        return Err(Error::Shape(format!("embeddings {st:?} and {sp:?} differ")));
    }
    let cells = st[0] * st[1];
    let t = g.reshape(theta, &[cells, st[2]])?;
    let f = g.reshape(phi, &[cells, st[2]])?;
    let ft = g.transpose(f)?;
    let logits = g.matmul(t, ft)?;
    g.softmax(logits, 1)
}

/// `A · g(F_c)`, reshaped to `H×W×C`.
pub fn related_feature(g: &mut Graph, affinity: Var, gout: Var) -> Result<Var, Error> {
    let sg = g.shape(gout).to_vec();
    if sg.len() != 3 {
        return Err(Error::Shape(format!("g(F_c) must be H×W×C, got {sg:?}")));
    }
    let cells = sg[0] * sg[1];
    if g.shape(affinity) != [cells, cells] {
        return Err(Error::Shape(format!(
            "affinity {:?} does not match {cells} cells",
            g.shape(affinity)
        )));
    }
    let flat = g.reshape(gout, &[cells, sg[2]])?;
    let r = g.matmul(affinity, flat)?;
    g.reshape(r, &sg)
}

/// Embeddings, affinity and related feature of one collaborator in one call.
pub fn related_from(g: &mut Graph, p: &Bound, local: Var, collab: Var) -> Result<Var, Error> {
    let (theta, phi, gout) = embed_features(g, p, local, collab)?;
    let a = affinity(g, theta, phi)?;
    related_feature(g, a, gout)
}

/// How the request indicator enters the fusion formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseMode {
    /// Centralised training: `request ≡ 1`.
    Training,
    /// Distributed inference with the request decision and the literal-formula flag.
    Inference { requested: bool, literal: bool },
}

/// Weighted fusion of the local map with `(s_j, F_r,j)` terms, as graph nodes.
///
/// When `1 − p` is exactly zero the collaborative sum is skipped; its
/// gradient would be multiplied by zero anyway. At inference a requester left
/// without supporters keeps its local map, like a non-requester.
pub fn fuse(g: &mut Graph, local: Var, confidence: Var, terms: &[(Var, Var)], mode: FuseMode) -> Result<Var, Error> {
    if !g.value(confidence).is_scalar() {
        return Err(Error::Shape("confidence must be a scalar".into()));
    }
    for (s, fr) in terms {
        if !g.value(*s).is_scalar() || g.shape(*fr) != g.shape(local) {
            return Err(Error::Shape(format!(
                "related feature {:?} does not match local {:?}",
                g.shape(*fr),
                g.shape(local)
            )));
        }
    }
    let requested = match mode {
        FuseMode::Training => true,
        FuseMode::Inference { requested, literal } => {
            if (!requested || terms.is_empty()) && !literal {
                return Ok(local);
            }
            requested
        }
    };
    let scaled_local = g.mul_scalar(confidence, local)?;
    if !requested || terms.is_empty() || g.value(confidence).item() == 1.0 {
        return Ok(scaled_local);
    }
    let mut sum: Option<Var> = None;
    for (s, fr) in terms {
        let w = g.mul_scalar(*s, *fr)?;
        sum = Some(match sum {
            None => w,
            Some(acc) => g.add(acc, w)?,
        });
    }
    let complement = g.affine(confidence, -1.0, 1.0);
    let collab = g.mul_scalar(complement, sum.unwrap())?;
    g.add(scaled_local, collab)
}

/// Value-level inference fusion: `weights` holds `(candidate, s_ij)` with
/// dropped candidates already zeroed, `related` the received related features.
pub fn fuse_values(
    local: &Tensor,
    confidence: f64,
    weights: &[(usize, f64)],
    related: &[(usize, Tensor)],
    requested: bool,
    literal: bool,
) -> Result<Tensor, Error> {
    let mut terms: Vec<(f64, &Tensor)> = Vec::new();
    for &(j, s) in weights {
        if s == 0.0 {
            continue;
        }
        let fr = related
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Protocol(format!("no related feature from supporter {j} (s = {s})")))?;
        if fr.shape() != local.shape() {
            return Err(Error::Shape(format!("related feature {:?} vs local {:?}", fr.shape(), local.shape())));
        }
        terms.push((s, fr));
    }
    let mut g = Graph::new();
    let l = g.constant(local.clone());
    let p = g.constant(Tensor::scalar(confidence));
    let vars: Vec<(Var, Var)> = terms
        .iter()
        .map(|(s, fr)| (g.constant(Tensor::scalar(*s)), g.constant((*fr).clone())))
        .collect();
    let out = fuse(&mut g, l, p, &vars, FuseMode::Inference { requested, literal })?;
    Ok(g.value(out).clone())
}
