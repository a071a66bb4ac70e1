//! Toy per-platform backbone and segmentation head.
//!
//! The encoder is three stride-2 3×3 convolutions with ReLU (channels
//! `stage_channels`) followed by a 1×1 projection to `C` channels, for a
//! total stride of 8. The decoder is a 1×1 projection to `K` class logits and
//! 8× nearest-neighbour upsampling back to the view resolution.

use alloc::format;

use rand::Rng;

use crate::config::{NetConfig, ENCODER_STRIDE};
use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::params::{glorot_uniform, init_linear, Bound, ParamSet};
use crate::tensor::Tensor;

/// An `H'×W'×C` activation grid produced by one platform for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub platform: usize,
    pub frame: u32,
}

impl FeatureMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.tensor.shape();
        (s[0], s[1], s[2])
    }
}

/// Parameters of the encoder (`encoder.*`).
pub fn init_encoder<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> ParamSet {
    let mut set = ParamSet::new();
    let mut c_in = cfg.in_channels;
    for (i, &c_out) in cfg.stage_channels.iter().enumerate() {
        let w = glorot_uniform(rng, &[3, 3, c_in, c_out], 9 * c_in, 9 * c_out);
        set.insert(format!("encoder.stage{}.weight", i + 1), w);
        set.insert(format!("encoder.stage{}.bias", i + 1), Tensor::zeros(&[c_out]));
        c_in = c_out;
    }
    init_linear(&mut set, rng, "encoder.head", c_in, cfg.feature_channels);
    set
}

/// Parameters of the decoder (`decoder.*`).
pub fn init_decoder<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> ParamSet {
    let mut set = ParamSet::new();
    init_linear(&mut set, rng, "decoder.head", cfg.feature_channels, cfg.num_classes);
    set
}

/// `H×W×3` image → `H/8×W/8×C` feature map.
pub fn encode_view(g: &mut Graph, p: &Bound, image: Var) -> Result<Var, Error> {
    let s = g.shape(image);
    if s.len() != 3 {
        return Err(Error::Shape(format!("image must be H×W×C, got {s:?}")));
    }
    if s[0] % ENCODER_STRIDE != 0 || s[1] % ENCODER_STRIDE != 0 || s[0] == 0 || s[1] == 0 {
        return Err(Error::Input(format!(
            "image {}×{} is not divisible by {ENCODER_STRIDE}",
            s[0], s[1]
        )));
    }
    let mut x = image;
    for stage in 1..=3 {
        let w = p.get(&format!("encoder.stage{stage}.weight"))?;
        let b = p.get(&format!("encoder.stage{stage}.bias"))?;
        let y = g.conv3x3(x, w, b, 2)?;
        x = g.relu(y);
    }
    g.conv1x1(x, p.get("encoder.head.weight")?, Some(p.get("encoder.head.bias")?))
}

/// Fused `H'×W'×C` features → `8H'×8W'×K` logits.
pub fn decode_segmentation(g: &mut Graph, p: &Bound, fused: Var) -> Result<Var, Error> {
    if g.shape(fused).len() != 3 {
        return Err(Error::Shape(format!("fused features must be H×W×C, got {:?}", g.shape(fused))));
    }
    let logits = g.conv1x1(fused, p.get("decoder.head.weight")?, Some(p.get("decoder.head.bias")?))?;
    g.upsample(logits, ENCODER_STRIDE)
}

/// Check that a fused map matches the grid the decoder expects for `view_size`.
pub fn check_fused_dims(cfg: &NetConfig, fused: &Tensor) -> Result<(), Error> {
    let f = cfg.feature_size();
    let expect = [f, f, cfg.feature_channels];
    if fused.shape() != expect {
        return Err(Error::Shape(format!("fused map {:?} but decoder expects {:?}", fused.shape(), expect)));
    }
    Ok(())
}
