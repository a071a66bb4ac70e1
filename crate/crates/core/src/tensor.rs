//! Dense row-major `f64` tensors and the flat `DCPT` binary encoding.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, FormatError};

/// Magic prefix of the flat tensor format.
pub const DCPT_MAGIC: &[u8; 4] = b"DCPT";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, Error> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(alloc::format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    /// `n×n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, Error> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(alloc::format!(
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Round every value through `f32`, the precision of the wire format.
    pub fn to_f32_precision(&self) -> Tensor {
        self.map(|v| v as f32 as f64)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Encode as `DCPT`: magic, `u32` rank, `u32` dims, little-endian `f32` payload.
    pub fn to_dcpt(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(DCPT_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_dcpt(bytes: &[u8]) -> Result<Tensor, FormatError> {
        if bytes.len() < 8 {
            return Err(FormatError::Truncated { needed: 8, got: bytes.len() });
        }
        if &bytes[..4] != DCPT_MAGIC {
            return Err(FormatError::BadMagic { expected: *DCPT_MAGIC, got: [bytes[0], bytes[1], bytes[2], bytes[3]] });
        }
        let rank = read_u32(bytes, 4) as usize;
        let header = 8usize
            .checked_add(rank.checked_mul(4).ok_or(FormatError::BadDims)?)
            .ok_or(FormatError::BadDims)?;
        if bytes.len() < header {
            return Err(FormatError::Truncated { needed: header, got: bytes.len() });
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for i in 0..rank {
            let d = read_u32(bytes, 8 + 4 * i) as usize;
            numel = numel.checked_mul(d).ok_or(FormatError::BadDims)?;
            shape.push(d);
        }
        let needed = numel
            .checked_mul(4)
            .and_then(|p| p.checked_add(header))
            .ok_or(FormatError::BadDims)?;
        if bytes.len() != needed {
            return if bytes.len() < needed {
                Err(FormatError::Truncated { needed, got: bytes.len() })
            } else {
                Err(FormatError::LengthMismatch { expected: needed, got: bytes.len() })
            };
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Per-pixel class ids of an `H×W` segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, Error> {
        if labels.len() != height * width {
            return Err(Error::Shape(alloc::format!(
                "mask {}x{} given {} labels",
                height,
                width,
                labels.len()
            )));
        }
        Ok(ClassMask { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        ClassMask { height, width, labels: vec![class; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: self.labels.iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, Error> {
        if t.rank() != 2 {
            return Err(Error::Shape(alloc::format!("mask tensor must be rank 2, got {:?}", t.shape())));
        }
        let mut labels = Vec::with_capacity(t.numel());
        for &v in t.data() {
            if !(0.0..=255.0).contains(&v) || libm::trunc(v) != v {
                return Err(Error::Input(alloc::format!("mask value {} is not a class id", v)));
            }
            labels.push(v as u8);
        }
        Ok(ClassMask { height: t.shape()[0], width: t.shape()[1], labels })
    }

    /// Per-pixel argmax over the last axis of `H×W×K` logits; lowest index wins ties.
    pub fn argmax(logits: &Tensor) -> ClassMask {
        let s = logits.shape();
        let (h, w, k) = (s[0], s[1], s[2]);
        let labels = logits
            .data()
            .chunks_exact(k)
            .map(|px| {
                let mut best = 0;
                for c in 1..k {
                    if px[c] > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        ClassMask { height: h, width: w, labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn dcpt_layout_is_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = t.to_dcpt();
        assert_eq!(&b[..4], b"DCPT");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn dcpt_rejects_corruption() {
        let t = Tensor::from_fn(&[3, 4], |i| i as f64);
        let b = t.to_dcpt();
        assert_eq!(Tensor::from_dcpt(&b).unwrap(), t);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Tensor::from_dcpt(&bad), Err(FormatError::BadMagic { .. })));
        assert!(matches!(Tensor::from_dcpt(&b[..b.len() - 1]), Err(FormatError::Truncated { .. })));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(Tensor::from_dcpt(&long), Err(FormatError::LengthMismatch { .. })));
        let mut huge = b;
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(Tensor::from_dcpt(&huge).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let logits = Tensor::new(vec![1, 2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(ClassMask::argmax(&logits).labels, vec![0, 1]);
    }
}
