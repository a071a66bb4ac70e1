//! Procedural multi-view scenes: a labelled world, `N` random crops of it,
//! a degraded victim platform and the three experiment modes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Error;
use crate::tensor::{ClassMask, Tensor};

/// World and view geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub world_size: usize,
    pub view_size: usize,
    pub num_classes: usize,
    /// Expected number of shapes per 32×32 block of world.
    pub density: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec { world_size: 128, view_size: 64, num_classes: 6, density: 1.0, seed: 0 }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.view_size == 0 || self.view_size > self.world_size {
            return Err(Error::Config(format!(
                "view size {} must be in 1..={} (the world size)",
                self.view_size, self.world_size
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Config(format!("need 2..=256 classes, got {}", self.num_classes)));
        }
        if !(self.density >= 0.0) || !self.density.is_finite() {
            return Err(Error::Config(format!("density must be finite and non-negative, got {}", self.density)));
        }
        Ok(())
    }
}

/// Full-size image and its per-pixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub image: Tensor,
    pub mask: ClassMask,
}

/// Base colour of a class. The first six follow the usual aerial palette.
pub fn class_color(class: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [0.55, 0.55, 0.55],
        [0.20, 0.25, 0.80],
        [0.30, 0.80, 0.80],
        [0.20, 0.65, 0.20],
        [0.85, 0.80, 0.25],
        [0.80, 0.30, 0.20],
    ];
    if class < PALETTE.len() {
        return PALETTE[class];
    }
    let mut h = (class as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut c = [0.0; 3];
    for v in &mut c {
        h ^= h >> 29;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        *v = 0.1 + 0.8 * ((h >> 40) as f64 / (1u64 << 24) as f64);
    }
    c
}

/// Rectangles, ellipses and thin strips of random classes over a class-0
/// background, with per-shape and per-pixel colour jitter.
pub fn generate_world(spec: &WorldSpec) -> Result<World, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.world_size;
    let mut labels = vec![0u8; s * s];
    let mut tint = vec![[0.0f64; 3]; s * s];
    let blocks = (s * s) as f64 / 1024.0;
    let count = libm::round(spec.density * blocks) as usize;
    for _ in 0..count {
        let class = rng.gen_range(1..spec.num_classes) as u8;
        let shift = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)];
        let cy = rng.gen_range(0.0..s as f64);
        let cx = rng.gen_range(0.0..s as f64);
        let kind = rng.gen_range(0..3);
        let (hy, hx) = match kind {
            0 | 1 => (rng.gen_range(6.0..20.0), rng.gen_range(6.0..20.0)),
            _ => {
                let long = rng.gen_range(20.0..56.0);
                let thin = rng.gen_range(4.0..8.0);
                if rng.gen_bool(0.5) {
                    (long, thin)
                } else {
                    (thin, long)
                }
            }
        };
        let y0 = libm::floor(cy - hy).max(0.0) as usize;
        let y1 = (libm::ceil(cy + hy) as usize).min(s);
        let x0 = libm::floor(cx - hx).max(0.0) as usize;
        let x1 = (libm::ceil(cx + hx) as usize).min(s);
        for y in y0..y1 {
            for x in x0..x1 {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let inside = if kind == 1 {
                    let (dy, dx) = ((py - cy) / hy, (px - cx) / hx);
                    dy * dy + dx * dx <= 1.0
                } else {
                    (py - cy).abs() <= hy && (px - cx).abs() <= hx
                };
                if inside {
                    labels[y * s + x] = class;
                    tint[y * s + x] = shift;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(s * s * 3);
    for i in 0..s * s {
        let base = class_color(labels[i] as usize);
        for ch in 0..3 {
            let v = base[ch] + tint[i][ch] + rng.gen_range(-0.06..0.06);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let image = Tensor::new(vec![s, s, 3], data)?.to_f32_precision();
    Ok(World { image, mask: ClassMask::new(s, s, labels)? })
}

/// One crop: view, labels, and the top-left corner in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub view: Tensor,
    pub mask: ClassMask,
    pub offset: (usize, usize),
}

/// Copy the `size×size` window at `(y, x)` out of `world`.
pub fn crop_at(world: &World, size: usize, offset: (usize, usize)) -> Result<Crop, Error> {
    let s = world.mask.height;
    let (oy, ox) = offset;
    if oy + size > s || ox + size > world.mask.width {
        return Err(Error::Input(format!("crop {size}×{size} at {offset:?} leaves the {s}-pixel world")));
    }
    let w = world.mask.width;
    let src = world.image.data();
    let mut data = Vec::with_capacity(size * size * 3);
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        let row = (oy + y) * w + ox;
        data.extend_from_slice(&src[row * 3..(row + size) * 3]);
        labels.extend_from_slice(&world.mask.labels[row..row + size]);
    }
    Ok(Crop {
        view: Tensor::new(vec![size, size, 3], data)?,
        mask: ClassMask::new(size, size, labels)?,
        offset,
    })
}

/// `n` uniformly placed crops.
pub fn crop_views<R: Rng + ?Sized>(world: &World, view_size: usize, n: usize, rng: &mut R) -> Result<Vec<Crop>, Error> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 platforms, got {n}")));
    }
    let s = world.mask.height;
    if view_size == 0 || view_size > s || view_size > world.mask.width {
        return Err(Error::Input(format!("view size {view_size} exceeds the {s}-pixel world")));
    }
    (0..n)
        .map(|_| {
            let oy = rng.gen_range(0..=s - view_size);
            let ox = rng.gen_range(0..=world.mask.width - view_size);
            crop_at(world, view_size, (oy, ox))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Occlusion,
    Blur,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "occlusion" => Ok(NoiseKind::Occlusion),
            "blur" => Ok(NoiseKind::Blur),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Occlusion => "occlusion",
            NoiseKind::Blur => "blur",
        })
    }
}

/// One degradation: for gaussian noise `strength` is σ in units of the
/// `[0, 1]` dynamic range; the other kinds ignore it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub kind: NoiseKind,
    pub strength: f64,
}

/// Occluded rectangle of the last occlusion applied, `(y, x, h, w)`.
pub type Rect = (usize, usize, usize, usize);

/// Apply one degradation to an `H×W×3` view with values in `[0, 1]`.
pub fn degrade<R: Rng + ?Sized>(view: &Tensor, d: &Degradation, rng: &mut R) -> Result<Tensor, Error> {
    degrade_traced(view, d, rng).map(|(t, _)| t)
}

/// [`degrade`] that also reports where an occlusion landed.
pub fn degrade_traced<R: Rng + ?Sized>(view: &Tensor, d: &Degradation, rng: &mut R) -> Result<(Tensor, Option<Rect>), Error> {
    let s = view.shape();
    if s.len() != 3 || s[0] == 0 || s[1] == 0 {
        return Err(Error::Shape(format!("view must be H×W×C, got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    match d.kind {
        NoiseKind::Gaussian => {
            if !(d.strength >= 0.0) || !d.strength.is_finite() {
                return Err(Error::Config(format!("gaussian σ must be finite and ≥ 0, got {}", d.strength)));
            }
            if d.strength == 0.0 {
                return Ok((view.clone(), None));
            }
            let normal = Normal::new(0.0, d.strength).map_err(|e| Error::Config(format!("{e}")))?;
            let mut out = view.clone();
            for v in out.data_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
            Ok((out, None))
        }
        NoiseKind::Occlusion => {
            let total = h * w;
            // draw until the area lands in [25%, 50%]; a short rejection loop
            loop {
                let rh = rng.gen_range(1..=h);
                let rw = rng.gen_range(1..=w);
                let area = rh * rw;
                if area * 4 < total || area * 2 > total {
                    continue;
                }
                let y = rng.gen_range(0..=h - rh);
                let x = rng.gen_range(0..=w - rw);
                let mut out = view.clone();
                let data = out.data_mut();
                for yy in y..y + rh {
                    for xx in x..x + rw {
                        let base = (yy * w + xx) * c;
                        data[base..base + c].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                return Ok((out, Some((y, x, rh, rw))));
            }
        }
        NoiseKind::Blur => Ok((box_blur(view, 2), None)),
    }
}

/// `(2r+1)²` box filter, averaging only over in-bounds pixels.
fn box_blur(view: &Tensor, r: usize) -> Tensor {
    let s = view.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let src = view.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for ch in 0..c {
                let mut acc = 0.0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[(yy * w + xx) * c + ch];
                    }
                }
                out[(y * w + x) * c + ch] = acc / n;
            }
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

/// Degradations applied to the victim and how often.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Applied in order to a degraded view.
    pub stack: Vec<Degradation>,
    /// Probability that the victim is degraded in a given sample.
    pub probability: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            stack: vec![
                Degradation { kind: NoiseKind::Gaussian, strength: 0.3 },
                Degradation { kind: NoiseKind::Occlusion, strength: 0.0 },
            ],
            probability: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    HomoCis,
    HomoPis,
    HeteroPis,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::HomoCis, Mode::HomoPis, Mode::HeteroPis];

    pub fn name(self) -> &'static str {
        match self {
            Mode::HomoCis => "homo-cis",
            Mode::HomoPis => "homo-pis",
            Mode::HeteroPis => "hetero-pis",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected homo-cis, homo-pis or hetero-pis)")))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One group of `N` co-observing platforms.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub views: Vec<Tensor>,
    pub masks: Vec<ClassMask>,
    pub degraded: Vec<bool>,
    /// The platform that may be degraded.
    pub victim: usize,
    /// Platform holding the victim's noise-free view (Homo-CIS, degraded samples).
    pub clean_twin: Option<usize>,
    pub offsets: Vec<(usize, usize)>,
    pub mode: Mode,
    pub seed: u64,
    pub index: u64,
}

impl SceneSample {
    pub fn platforms(&self) -> usize {
        self.views.len()
    }

    pub fn victim_degraded(&self) -> bool {
        self.degraded[self.victim]
    }
}

/// Everything needed to build a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub world: WorldSpec,
    pub platforms: usize,
    pub noise: NoiseConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { world: WorldSpec::default(), platforms: 4, noise: NoiseConfig::default() }
    }
}

/// The "second sensor": channel rotation with fixed gains, then a 2× average
/// down-sample and nearest up-sample.
pub fn hetero_transform(view: &Tensor) -> Result<Tensor, Error> {
    let s = view.shape();
    if s.len() != 3 || s[2] != 3 || s[0] % 2 != 0 || s[1] % 2 != 0 {
        return Err(Error::Shape(format!("hetero transform needs an even H×W×3 view, got {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    const GAIN: [f64; 3] = [0.85, 1.1, 0.95];
    const OFFSET: [f64; 3] = [0.05, -0.05, 0.08];
    let src = view.data();
    let remapped: Vec<f64> = (0..h * w * 3)
        .map(|i| {
            let (px, ch) = (i / 3, i % 3);
            (src[px * 3 + (ch + 1) % 3] * GAIN[ch] + OFFSET[ch]).clamp(0.0, 1.0)
        })
        .collect();
    let mut out = vec![0.0; h * w * 3];
    for by in 0..h / 2 {
        for bx in 0..w / 2 {
            for ch in 0..3 {
                let at = |y: usize, x: usize| remapped[(y * w + x) * 3 + ch];
                let (y, x) = (2 * by, 2 * bx);
                let m = (at(y, x) + at(y, x + 1) + at(y + 1, x) + at(y + 1, x + 1)) / 4.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    out[((y + dy) * w + x + dx) * 3 + ch] = m;
                }
            }
        }
    }
    Ok(Tensor::new(s.to_vec(), out)?.to_f32_precision())
}

/// Per-sample generator stream: independent of every other index.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Build sample `index` of the `(cfg, mode, seed)` dataset.
pub fn generate_sample(cfg: &SceneConfig, mode: Mode, seed: u64, index: u64) -> Result<SceneSample, Error> {
    if cfg.platforms < 2 {
        return Err(Error::Config(format!("need at least 2 platforms, got {}", cfg.platforms)));
    }
    if !(0.0..=1.0).contains(&cfg.noise.probability) {
        return Err(Error::Config(format!("degradation probability {} not in [0, 1]", cfg.noise.probability)));
    }
    let mut rng = sample_rng(seed, index);
    let spec = WorldSpec { seed: rng.gen(), ..cfg.world.clone() };
    let world = generate_world(&spec)?;
    let crops = crop_views(&world, spec.view_size, cfg.platforms, &mut rng)?;
    let n = cfg.platforms;
    let victim = rng.gen_range(0..n);
    let is_degraded = rng.gen_bool(cfg.noise.probability);
    let mut views: Vec<Tensor> = crops.iter().map(|c| c.view.clone()).collect();
    let mut masks: Vec<ClassMask> = crops.iter().map(|c| c.mask.clone()).collect();
    let mut offsets: Vec<(usize, usize)> = crops.iter().map(|c| c.offset).collect();
    let clean = views[victim].clone();
    if is_degraded {
        let mut v = clean.clone();
        for d in &cfg.noise.stack {
            v = degrade(&v, d, &mut rng)?;
        }
        views[victim] = v.to_f32_precision();
    }
    let mut clean_twin = None;
    match mode {
        Mode::HomoCis => {
            let pick = rng.gen_range(0..n - 1);
            let twin = if pick >= victim { pick + 1 } else { pick };
            views[twin] = clean;
            masks[twin] = masks[victim].clone();
            offsets[twin] = offsets[victim];
            clean_twin = Some(twin);
        }
        Mode::HomoPis => {}
        Mode::HeteroPis => {
            for (j, v) in views.iter_mut().enumerate() {
                if j != victim {
                    *v = hetero_transform(v)?;
                }
            }
        }
    }
    let mut degraded = vec![false; n];
    degraded[victim] = is_degraded;
    Ok(SceneSample { views, masks, degraded, victim, clean_twin, offsets, mode, seed, index })
}

/// Samples `0..count` of a dataset, generated serially.
pub fn generate_dataset(cfg: &SceneConfig, mode: Mode, seed: u64, count: usize) -> Result<Vec<SceneSample>, Error> {
    (0..count as u64).map(|i| generate_sample(cfg, mode, seed, i)).collect()
}

/// Human-readable summary used in manifests and logs.
pub fn describe(cfg: &SceneConfig) -> String {
    format!(
        "world={} view={} classes={} density={} platforms={} p_degrade={}",
        cfg.world.world_size,
        cfg.world.view_size,
        cfg.world.num_classes,
        cfg.world.density,
        cfg.platforms,
        cfg.noise.probability
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_is_background() {
        let w = generate_world(&WorldSpec { density: 0.0, ..WorldSpec::default() }).unwrap();
        assert!(w.mask.labels.iter().all(|&c| c == 0));
    }

    #[test]
    fn world_is_deterministic() {
        let spec = WorldSpec { seed: 42, ..WorldSpec::default() };
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        assert!(a.image.bitwise_eq(&b.image));
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn full_size_crop_is_the_world() {
        let spec = WorldSpec { world_size: 64, view_size: 64, seed: 3, ..WorldSpec::default() };
        let w = generate_world(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in crop_views(&w, 64, 3, &mut rng).unwrap() {
            assert!(c.view.bitwise_eq(&w.image));
            assert_eq!(c.mask, w.mask);
        }
    }

    #[test]
    fn oversized_view_is_rejected() {
        let w = generate_world(&WorldSpec { world_size: 32, view_size: 32, ..WorldSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(crop_views(&w, 40, 2, &mut rng).is_err());
    }

    #[test]
    fn zero_sigma_keeps_view() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Degradation { kind: NoiseKind::Gaussian, strength: 0.0 };
        assert!(degrade(&w.image, &d, &mut rng).unwrap().bitwise_eq(&w.image));
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!("speckle".parse::<NoiseKind>().is_err());
        assert_eq!("blur".parse::<NoiseKind>().unwrap(), NoiseKind::Blur);
        assert!("homo".parse::<Mode>().is_err());
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let t = Tensor::full(&[9, 7, 3], 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Degradation { kind: NoiseKind::Blur, strength: 0.0 };
        let b = degrade(&t, &d, &mut rng).unwrap();
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn twin_holds_clean_victim_view() {
        let cfg = SceneConfig { noise: NoiseConfig { probability: 1.0, ..NoiseConfig::default() }, ..SceneConfig::default() };
        let s = generate_sample(&cfg, Mode::HomoCis, 5, 0).unwrap();
        let twin = s.clean_twin.unwrap();
        assert_ne!(twin, s.victim);
        assert!(!s.views[twin].bitwise_eq(&s.views[s.victim]));
        assert_eq!(s.masks[twin], s.masks[s.victim]);
    }
}
