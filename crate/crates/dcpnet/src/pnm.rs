//! Binary PGM (`P5`) and PPM (`P6`) images with maxval 255.

use std::path::Path;

use dcpnet_core::scene::class_color;
use dcpnet_core::{ClassMask, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Pnm {
    pub fn to_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Pnm> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Image("header is not ASCII".into()))?);
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Image(format!("unsupported magic `{m}`"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad header number `{s}`")));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(Error::Image(format!("maxval {maxval} unsupported, expected 255")));
        }
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Image("image dimensions overflow".into()))?;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != len {
            return Err(Error::Image(format!("raster holds {} bytes, expected {len}", raster.len())));
        }
        Ok(Pnm { width, height, channels, data: raster.to_vec() })
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An `H×W×3` image with values in `[0, 1]`.
pub fn image_to_ppm(image: &Tensor) -> Result<Pnm> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Image(format!("expected an H×W×3 image, got {s:?}")));
    }
    Ok(Pnm { width: s[1], height: s[0], channels: 3, data: image.data().iter().map(|&v| to_byte(v)).collect() })
}

/// Class ids spread over the grey range: id `c` becomes `c·⌊255/(K−1)⌋`.
pub fn mask_to_pgm(mask: &ClassMask, classes: usize) -> Result<Pnm> {
    let step = grey_step(classes)?;
    if let Some(&bad) = mask.labels.iter().find(|&&c| c as usize >= classes) {
        return Err(dcpnet_core::Error::Input(format!("class id {bad} out of range for {classes} classes")).into());
    }
    let data = mask.labels.iter().map(|&c| c * step).collect();
    Ok(Pnm { width: mask.width, height: mask.height, channels: 1, data })
}

/// Inverse of [`mask_to_pgm`].
pub fn pgm_to_mask(pnm: &Pnm, classes: usize) -> Result<ClassMask> {
    let step = grey_step(classes)?;
    if pnm.channels != 1 {
        return Err(Error::Image("expected a greyscale image".into()));
    }
    let labels = pnm
        .data
        .iter()
        .map(|&v| {
            if v % step != 0 || (v / step) as usize >= classes {
                Err(Error::Image(format!("grey level {v} is not a class id")))
            } else {
                Ok(v / step)
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(ClassMask::new(pnm.height, pnm.width, labels)?)
}

/// A mask painted with the scene palette.
pub fn mask_to_ppm(mask: &ClassMask) -> Pnm {
    let data = mask.labels.iter().flat_map(|&c| class_color(c as usize).map(to_byte)).collect();
    Pnm { width: mask.width, height: mask.height, channels: 3, data }
}

fn grey_step(classes: usize) -> Result<u8> {
    if !(2..=256).contains(&classes) {
        return Err(Error::Image(format!("cannot encode {classes} classes as grey levels")));
    }
    Ok((255 / (classes - 1)).max(1) as u8)
}

pub fn write_pnm(pnm: &Pnm, path: &Path) -> Result<()> {
    std::fs::write(path, pnm.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Pnm::parse(&bytes)
}
