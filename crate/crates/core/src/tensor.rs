//! Dense row-major tensor with an optional gradient buffer.
//!
//! This is the universal currency of the numeric core: a shape vector, a
//! contiguous scalar buffer (last index fastest), and an optional same-shape
//! gradient buffer that hand-written backward passes accumulate into.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Scalar element type of a tensor. Single precision drives training,
/// double precision drives finite-difference checks and oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element trait implemented by `f32` and `f64`.
pub trait Scalar:
    Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Shorthand for converting an `f64` literal into the generic scalar type.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v)
}

/// Dense n-dimensional array, row-major, with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and positive");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| sc(normal.sample(rng))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        if self.grad.is_none() {
            self.grad = Some(vec![S::zero(); self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_deref_mut() {
            g.fill(S::zero());
        }
    }

    /// Element-wise accumulate `other` into this tensor's grad buffer.
    pub fn accumulate_grad(&mut self, other: &[S]) {
        debug_assert_eq!(other.len(), self.data.len());
        let g = self.grad_mut();
        for (gi, oi) in g.iter_mut().zip(other) {
            *gi += *oi;
        }
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &x) in idx.iter().enumerate() {
            debug_assert!(x < self.shape[i]);
            off = off * self.shape[i] + x;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> S {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: S) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Convert element type, dropping any gradient buffer.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.into_f64())).collect(),
            grad: None,
        }
    }

    /// Error out if any element is NaN or infinite.
    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    /// Serialize in the PIPT dump format:
    /// magic "PIPT", version u16, rank u16, extents u64 LE, dtype tag u8,
    /// then the raw little-endian row-major payload.
    pub fn to_pipt_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.shape.len() * 8 + self.data.len() * 8);
        out.extend_from_slice(b"PIPT");
        out.extend_from_slice(&PIPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(S::DTYPE.tag());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_pipt_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != b"PIPT" {
            return Err(Error::Format("bad magic, expected PIPT".into()));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != PIPT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let rank = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            shape.push(d as usize);
        }
        let dtype = Dtype::from_tag(cur.take(1)?[0])?;
        if dtype != S::DTYPE {
            return Err(Error::Format(format!(
                "dtype tag {} does not match requested element type",
                dtype.tag()
            )));
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(n * dtype.size())?;
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        let data = payload
            .chunks_exact(dtype.size())
            .map(S::read_le)
            .collect();
        Tensor::from_vec(&shape, data)
    }

    pub fn write_pipt(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_pipt_bytes())?;
        Ok(())
    }

    pub fn read_pipt(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_pipt_bytes(&bytes)
    }
}

pub const PIPT_VERSION: u16 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated tensor dump".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shape_product_matches_len() {
        let t = Tensor::<f64>::zeros(&[2, 3, 4]);
        assert_eq!(t.len(), 24);
        assert_eq!(t.shape(), &[2, 3, 4]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn offsets_are_row_major_last_fastest() {
        let t = Tensor::<f64>::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0]), 0.0);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
    }

    #[test]
    fn grad_allocates_lazily_and_accumulates() {
        let mut t = Tensor::<f64>::zeros(&[3]);
        assert!(t.grad().is_none());
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::<f32>::zeros(&[2]);
        assert!(t.check_finite("test").is_ok());
        t.data_mut()[1] = f32::NAN;
        assert!(t.check_finite("test").is_err());
    }

    #[test]
    fn pipt_header_layout_is_stable() {
        let t = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = t.to_pipt_bytes();
        assert_eq!(&b[0..4], b"PIPT");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1); // version
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 2); // rank
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(b[24], 0); // f32 tag
        assert_eq!(b.len(), 25 + 8);
    }

    #[test]
    fn pipt_rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = t.to_pipt_bytes();
        assert!(Tensor::<f32>::from_pipt_bytes(&b).is_err());
        assert!(Tensor::<f64>::from_pipt_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn pipt_round_trip_f64(data in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let n = data.len();
            let t = Tensor::<f64>::from_vec(&[n], data).unwrap();
            let back = Tensor::<f64>::from_pipt_bytes(&t.to_pipt_bytes()).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn pipt_round_trip_f32_2d(rows in 1usize..5, cols in 1usize..5, seedv in -1e3f32..1e3) {
            let data: Vec<f32> = (0..rows * cols).map(|i| seedv + i as f32).collect();
            let t = Tensor::<f32>::from_vec(&[rows, cols], data).unwrap();
            let back = Tensor::<f32>::from_pipt_bytes(&t.to_pipt_bytes()).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
