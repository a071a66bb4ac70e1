//! DCPT tensor files, checkpoints and datasets on disk.
//!
//! A checkpoint is a directory holding `manifest.txt` and one `.dcpt` file
//! per parameter block:
//!
//! ```text
//! dcpnet-checkpoint 1
//! method dcp-net
//! net view_size 64
//! ...
//! tensor encoder.head.bias encoder.head.bias.dcpt
//! ```
//!
//! A dataset is a directory holding `manifest.txt` and one sub-directory per
//! sample with `view-{j}.dcpt` and `mask-{j}.dcpt` for every platform:
//!
//! ```text
//! dcpnet-dataset 1
//! mode homo-cis
//! platforms 4
//! classes 6
//! samples 64
//! sample 0 seed=7 victim=2 twin=0 degraded=0010 offsets=12,40;3,5;... dir=s00000
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dcpnet_core::config::NetConfig;
use dcpnet_core::model::Method;
use dcpnet_core::params::ParamSet;
use dcpnet_core::scene::{Mode, SceneSample};
use dcpnet_core::{ClassMask, Tensor};

use crate::error::{Error, Result};

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, t.to_dcpt()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_dcpt(&bytes).map_err(|source| Error::Format { path: path.to_path_buf(), source })
}

fn manifest_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Manifest { path: path.to_path_buf(), line, msg: msg.into() }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parameters plus what is needed to rebuild the network around them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub net: NetConfig,
    pub platforms: usize,
    pub params: ParamSet,
}

const NET_KEYS: [&str; 9] = [
    "view_size",
    "in_channels",
    "feature_channels",
    "num_classes",
    "qk_dim",
    "request_dim",
    "embed_dim",
    "position_freqs",
    "stage_channels",
];

fn net_lines(net: &NetConfig) -> String {
    let s = net.stage_channels;
    format!(
        "net view_size {}\nnet in_channels {}\nnet feature_channels {}\nnet num_classes {}\nnet qk_dim {}\nnet request_dim {}\nnet embed_dim {}\nnet position_freqs {}\nnet stage_channels {},{},{}\n",
        net.view_size,
        net.in_channels,
        net.feature_channels,
        net.num_classes,
        net.qk_dim,
        net.request_dim,
        net.embed_dim,
        net.position_freqs,
        s[0],
        s[1],
        s[2]
    )
}

fn parse_usize(path: &Path, line: usize, v: &str) -> Result<usize> {
    v.parse().map_err(|_| manifest_err(path, line, format!("`{v}` is not a non-negative integer")))
}

/// Write parameters as f32 DCPT files; values are rounded to f32.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut manifest = format!("dcpnet-checkpoint 1\nmethod {}\nplatforms {}\n", ckpt.method, ckpt.platforms);
    manifest.push_str(&net_lines(&ckpt.net));
    for (name, t) in ckpt.params.iter() {
        let file = format!("{name}.dcpt");
        write_tensor(&dir.join(&file), t)?;
        let _ = writeln!(manifest, "tensor {name} {file}");
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "dcpnet-checkpoint 1")) => {}
        _ => return Err(manifest_err(&path, 1, "not a dcpnet checkpoint manifest")),
    }
    let mut method = None;
    let mut platforms = None;
    let mut net = NetConfig::default();
    let mut seen_keys = Vec::new();
    let mut params = ParamSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["method", m] => method = Some(m.parse::<Method>()?),
            ["platforms", p] => platforms = Some(parse_usize(&path, n, p)?),
            ["net", key, value] => {
                match *key {
                    "view_size" => net.view_size = parse_usize(&path, n, value)?,
                    "in_channels" => net.in_channels = parse_usize(&path, n, value)?,
                    "feature_channels" => net.feature_channels = parse_usize(&path, n, value)?,
                    "num_classes" => net.num_classes = parse_usize(&path, n, value)?,
                    "qk_dim" => net.qk_dim = parse_usize(&path, n, value)?,
                    "request_dim" => net.request_dim = parse_usize(&path, n, value)?,
                    "embed_dim" => net.embed_dim = parse_usize(&path, n, value)?,
                    "position_freqs" => net.position_freqs = parse_usize(&path, n, value)?,
                    "stage_channels" => {
                        let v: Vec<usize> =
                            value.split(',').map(|x| parse_usize(&path, n, x)).collect::<Result<_>>()?;
                        if v.len() != 3 {
                            return Err(manifest_err(&path, n, "stage_channels needs three values"));
                        }
                        net.stage_channels = [v[0], v[1], v[2]];
                    }
                    other => return Err(manifest_err(&path, n, format!("unknown net key `{other}`"))),
                }
                seen_keys.push(key.to_string());
            }
            ["tensor", name, file] => {
                if file.contains('/') || file.contains("..") {
                    return Err(manifest_err(&path, n, format!("tensor file `{file}` escapes the checkpoint")));
                }
                params.insert(*name, read_tensor(&dir.join(file))?);
            }
            _ => return Err(manifest_err(&path, n, format!("unrecognised line `{line}`"))),
        }
    }
    for key in NET_KEYS {
        if !seen_keys.iter().any(|k| k == key) {
            return Err(manifest_err(&path, 0, format!("missing net key `{key}`")));
        }
    }
    let method = method.ok_or_else(|| manifest_err(&path, 0, "missing method"))?;
    let platforms = platforms.ok_or_else(|| manifest_err(&path, 0, "missing platforms"))?;
    net.validate()?;
    Ok(Checkpoint { method, net, platforms, params })
}

fn mask_tensor(m: &ClassMask) -> Tensor {
    m.to_tensor()
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Write `samples` under `dir`. All samples must share mode and platform count.
pub fn save_dataset(samples: &[SceneSample], classes: usize, dir: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Core(dcpnet_core::Error::Input("cannot save an empty dataset".into())))?;
    if samples.iter().any(|s| s.mode != first.mode || s.platforms() != first.platforms()) {
        return Err(Error::Core(dcpnet_core::Error::Input("samples mix modes or platform counts".into())));
    }
    create_dir(dir)?;
    let mut manifest = format!(
        "dcpnet-dataset 1\nmode {}\nplatforms {}\nclasses {classes}\nsamples {}\n",
        first.mode,
        first.platforms(),
        samples.len()
    );
    for (k, s) in samples.iter().enumerate() {
        let name = format!("s{k:05}");
        let sub = dir.join(&name);
        create_dir(&sub)?;
        for j in 0..s.platforms() {
            write_tensor(&sub.join(format!("view-{j}.dcpt")), &s.views[j])?;
            write_tensor(&sub.join(format!("mask-{j}.dcpt")), &mask_tensor(&s.masks[j]))?;
        }
        let twin = s.clean_twin.map_or("-".to_string(), |t| t.to_string());
        let offsets: Vec<String> = s.offsets.iter().map(|(y, x)| format!("{y},{x}")).collect();
        let _ = writeln!(
            manifest,
            "sample {} seed={} victim={} twin={} degraded={} offsets={} dir={name}",
            s.index,
            s.seed,
            s.victim,
            twin,
            bits(&s.degraded),
            offsets.join(";")
        );
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Dataset contents plus the class count recorded in the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SceneSample>,
    pub classes: usize,
    pub mode: Mode,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "dcpnet-dataset 1")) => {}
        _ => return Err(manifest_err(&path, 1, "not a dcpnet dataset manifest")),
    }
    let (mut mode, mut platforms, mut classes, mut count) = (None, None, None, None);
    let mut samples = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let mut words = line.split_whitespace();
        match words.next() {
            None => {}
            Some("mode") => mode = Some(words.next().unwrap_or("").parse::<Mode>()?),
            Some("platforms") => platforms = Some(parse_usize(&path, n, words.next().unwrap_or(""))?),
            Some("classes") => classes = Some(parse_usize(&path, n, words.next().unwrap_or(""))?),
            Some("samples") => count = Some(parse_usize(&path, n, words.next().unwrap_or(""))?),
            Some("sample") => {
                let (Some(mode), Some(platforms), Some(classes)) = (mode, platforms, classes) else {
                    return Err(manifest_err(&path, n, "sample line before mode/platforms/classes"));
                };
                samples.push(parse_sample(dir, &path, n, words.collect(), mode, platforms, classes)?);
            }
            Some(other) => return Err(manifest_err(&path, n, format!("unrecognised key `{other}`"))),
        }
    }
    let count = count.ok_or_else(|| manifest_err(&path, 0, "missing sample count"))?;
    if count != samples.len() {
        return Err(manifest_err(&path, 0, format!("manifest announces {count} samples but lists {}", samples.len())));
    }
    Ok(Dataset {
        samples,
        classes: classes.ok_or_else(|| manifest_err(&path, 0, "missing classes"))?,
        mode: mode.ok_or_else(|| manifest_err(&path, 0, "missing mode"))?,
    })
}

fn parse_sample(
    dir: &Path,
    path: &Path,
    n: usize,
    fields: Vec<&str>,
    mode: Mode,
    platforms: usize,
    classes: usize,
) -> Result<SceneSample> {
    let index: u64 = fields
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| manifest_err(path, n, "sample line needs an index"))?;
    let get = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| manifest_err(path, n, format!("missing `{key}=`")))
    };
    let seed: u64 = get("seed")?.parse().map_err(|_| manifest_err(path, n, "bad seed"))?;
    let victim = parse_usize(path, n, get("victim")?)?;
    let clean_twin = match get("twin")? {
        "-" => None,
        v => Some(parse_usize(path, n, v)?),
    };
    let degraded: Vec<bool> = get("degraded")?
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(manifest_err(path, n, "degraded flags must be 0/1")),
        })
        .collect::<Result<_>>()?;
    let offsets: Vec<(usize, usize)> = get("offsets")?
        .split(';')
        .map(|p| {
            let (y, x) = p.split_once(',').ok_or_else(|| manifest_err(path, n, "offsets are y,x pairs"))?;
            Ok((parse_usize(path, n, y)?, parse_usize(path, n, x)?))
        })
        .collect::<Result<_>>()?;
    let sub = get("dir")?;
    if sub.contains('/') || sub.contains("..") {
        return Err(manifest_err(path, n, format!("sample dir `{sub}` escapes the dataset")));
    }
    if victim >= platforms || degraded.len() != platforms || offsets.len() != platforms || clean_twin.is_some_and(|t| t >= platforms) {
        return Err(manifest_err(path, n, "per-platform fields disagree with the platform count"));
    }
    let sub = dir.join(sub);
    let mut views = Vec::with_capacity(platforms);
    let mut masks = Vec::with_capacity(platforms);
    for j in 0..platforms {
        views.push(read_tensor(&sub.join(format!("view-{j}.dcpt")))?);
        let m = ClassMask::from_tensor(&read_tensor(&sub.join(format!("mask-{j}.dcpt")))?)?;
        if m.labels.iter().any(|&c| c as usize >= classes) {
            return Err(manifest_err(path, n, format!("mask {j} has class ids ≥ {classes}")));
        }
        masks.push(m);
    }
    Ok(SceneSample { views, masks, degraded, victim, clean_twin, offsets, mode, seed, index })
}

/// Sub-directories of a dataset directory that hold samples.
pub fn sample_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}
