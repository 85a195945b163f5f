//! Little-endian binary helpers plus the raw tensor (`BTEN`) and mask
//! (`BMSK`) file formats.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"BTEN";
pub const TENSOR_VERSION: u32 = 1;
pub const MASK_MAGIC: &[u8; 4] = b"BMSK";

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn f32s(&mut self, vs: impl Iterator<Item = f32>) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes(1, field)?[0])
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.bytes(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(field, "length overflows"))?;
        let b = self.bytes(len, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(field, "length overflows"))?;
        let b = self.bytes(len, field)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Encodes a `[W, H, C]` or `[W, H]` tensor as `BTEN` (values narrowed to f32).
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let (w, h, c) = match *t.shape() {
        [w, h] => (w, h, 1),
        [w, h, c] => (w, h, c),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "BTEN stores rank-2 or rank-3 tensors, got shape {:?}",
                t.shape()
            )))
        }
    };
    let mut wr = Writer::default();
    wr.bytes(TENSOR_MAGIC);
    wr.u32(TENSOR_VERSION);
    wr.u32(w as u32);
    wr.u32(h as u32);
    wr.u32(c as u32);
    wr.f32s(t.data().iter().map(|&v| v as f32));
    Ok(wr.into_inner())
}

/// Decodes a `BTEN` buffer into a `[W, H, C]` tensor.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    if r.bytes(4, "magic")? != TENSOR_MAGIC {
        return Err(Error::format("magic", "bad magic"));
    }
    let version = r.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let w = r.u32("width")? as usize;
    let h = r.u32("height")? as usize;
    let c = r.u32("channels")? as usize;
    if w == 0 || h == 0 || c == 0 {
        return Err(Error::format("shape", format!("zero dimension in {w}x{h}x{c}")));
    }
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("shape", "element count overflows"))?;
    let data = r.f32s(n, "data")?;
    if r.remaining() != 0 {
        return Err(Error::format("data", format!("{} unexpected trailing bytes", r.remaining())));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("data", "non-finite value"));
    }
    Tensor::new(vec![w, h, c], data.into_iter().map(f64::from).collect())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Binary `W x H` mask, stored row-major with one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask {width}x{height} needs {} pixels, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for i in 0..width {
            for j in 0..height {
                bits.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.height + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.height + j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Tight bounding box `(x, y, w, h)` along the first and second axis.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let mut lo = (usize::MAX, usize::MAX);
        let mut hi = (0, 0);
        let mut any = false;
        for i in 0..self.width {
            for j in 0..self.height {
                if self.get(i, j) {
                    any = true;
                    lo = (lo.0.min(i), lo.1.min(j));
                    hi = (hi.0.max(i), hi.1.max(j));
                }
            }
        }
        any.then(|| [lo.0, lo.1, hi.0 - lo.0 + 1, hi.1 - lo.1 + 1])
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }
}

pub fn encode_mask(m: &Mask) -> Vec<u8> {
    let mut wr = Writer::default();
    wr.bytes(MASK_MAGIC);
    wr.u32(m.width as u32);
    wr.u32(m.height as u32);
    wr.bytes(&m.bits.iter().map(|&b| b as u8).collect::<Vec<_>>());
    wr.into_inner()
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let mut r = Reader::new(bytes);
    if r.bytes(4, "magic")? != MASK_MAGIC {
        return Err(Error::format("magic", "bad magic"));
    }
    let w = r.u32("width")? as usize;
    let h = r.u32("height")? as usize;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::format("shape", "pixel count overflows"))?;
    let raw = r.bytes(n, "pixels")?;
    if r.remaining() != 0 {
        return Err(Error::format("pixels", format!("{} unexpected trailing bytes", r.remaining())));
    }
    let bits = raw
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format("pixels", format!("value {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::from_bits(w, h, bits)
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mask(m)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}
