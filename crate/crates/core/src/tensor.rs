//! Dense 4-D tensors in (batch, channel, row, col) order.
//!
//! Data is contiguous and row-major within a channel plane, so convolution
//! inner loops stride unit-length over the last axis. Values are `f32` for
//! training state; the same type instantiated at `f64` backs the
//! finite-difference gradient checks.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Magic prefix of the binary tensor format: "CT4\0".
pub const TENSOR_MAGIC: [u8; 4] = *b"CT4\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    /// All-zero tensor. Every dimension must be at least 1.
    pub fn zeros(dims: (usize, usize, usize, usize)) -> Result<Self> {
        Self::check_dims(dims)?;
        let (n, c, h, w) = dims;
        Ok(Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![T::ZERO; n * c * h * w],
        })
    }

    pub fn from_vec(dims: (usize, usize, usize, usize), data: Vec<T>) -> Result<Self> {
        Self::check_dims(dims)?;
        let (n, c, h, w) = dims;
        if data.len() != n * c * h * w {
            return Err(Error::shape(
                "Tensor4::from_vec",
                format!(
                    "data length {} does not match dims {:?} (expected {})",
                    data.len(),
                    dims,
                    n * c * h * w
                ),
            ));
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    /// Entries drawn i.i.d. from a normal(0, std^2) distribution.
    /// Deterministic given the rng state.
    pub fn gaussian(
        dims: (usize, usize, usize, usize),
        std: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::arg(
                "Tensor4::gaussian",
                format!("std must be positive and finite, got {std}"),
            ));
        }
        let mut t = Self::zeros(dims)?;
        for v in t.data.iter_mut() {
            *v = T::from_f64(rng.next_gaussian() * std);
        }
        Ok(t)
    }

    fn check_dims(dims: (usize, usize, usize, usize)) -> Result<()> {
        let (n, c, h, w) = dims;
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::arg(
                "Tensor4",
                format!("all dims must be >= 1, got {dims:?}"),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.c
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        &mut self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    /// One (sample, channel) plane as a contiguous h*w slice.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.h * self.w;
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.h * self.w;
        let start = (n * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    fn zip_elementwise(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !self.same_dims(other) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_elementwise(other, "Tensor4::add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_elementwise(other, "Tensor4::sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_elementwise(other, "Tensor4::mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = *v * factor;
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = f(*v);
        }
        out
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }
}

impl Tensor4<f32> {
    /// Binary format: magic "CT4\0", four little-endian u32 dims (n, c, h, w),
    /// then the raw f32 values little-endian in (n, c, h, w) order.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&TENSOR_MAGIC)?;
        for d in [self.n, self.c, self.h, self.w] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let bad = |what: String| Error::Checkpoint(what);
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|e| bad(format!("tensor magic: {e}")))?;
        if magic != TENSOR_MAGIC {
            return Err(bad(format!("bad tensor magic {magic:?}")));
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            input
                .read_exact(&mut b)
                .map_err(|e| bad(format!("tensor dims: {e}")))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        Self::check_dims((n, c, h, w)).map_err(|e| bad(e.to_string()))?;
        let count = n * c * h * w;
        let mut raw = vec![0u8; count * 4];
        input
            .read_exact(&mut raw)
            .map_err(|e| bad(format!("tensor payload ({count} values): {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Tensor4 { n, c, h, w, data })
    }
}

/// Serialize a flat vector as a (1, 1, 1, len) tensor record.
pub fn write_vec_record<W: Write>(values: &[f32], out: &mut W) -> std::io::Result<()> {
    out.write_all(&TENSOR_MAGIC)?;
    for d in [1u32, 1, 1, values.len() as u32] {
        out.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_vec_record<R: Read>(input: &mut R, expected_len: usize) -> Result<Vec<f32>> {
    let t = Tensor4::<f32>::read_from(input)?;
    if t.dims() != (1, 1, 1, expected_len) {
        return Err(Error::Checkpoint(format!(
            "expected flat record of length {expected_len}, got dims {:?}",
            t.dims()
        )));
    }
    Ok(t.into_data())
}
