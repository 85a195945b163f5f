//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BBM1"  u32 version  u32 layer_count  u32 W  u32 H  u32 C
//! per layer: u8 kind tag, then
//!   conv2d: u32 kernel, u32 in, u32 out, f64 weights [k,k,in,out], f64 bias [out]
//!   dense:  u32 in, u32 out, f64 weights [out,in], f64 bias [out]
//!   others: nothing
//! ```

use std::path::Path;

use super::layer::{Conv2d, Dense, Layer, LayerKind};
use super::model::ModelSpec;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"BBM1";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &ModelSpec) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u32(model.num_layers() as u32);
    for d in model.input_shape() {
        w.u32(d as u32);
    }
    for layer in model.layers() {
        w.u8(layer.kind().tag());
        match layer {
            Layer::Conv2d(c) => {
                w.u32(c.kernel as u32);
                w.u32(c.in_channels as u32);
                w.u32(c.out_channels as u32);
                w.f64s(&c.weight);
                w.f64s(&c.bias);
            }
            Layer::Dense(d) => {
                w.u32(d.inputs as u32);
                w.u32(d.outputs as u32);
                w.f64s(&d.weight);
                w.f64s(&d.bias);
            }
            _ => {}
        }
    }
    w.into_inner()
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelSpec> {
    let mut r = Reader::new(bytes);
    if r.bytes(4, "magic")? != MODEL_MAGIC {
        return Err(Error::format("magic", "bad magic"));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    let input_shape = [
        r.u32("input width")? as usize,
        r.u32("input height")? as usize,
        r.u32("input channels")? as usize,
    ];
    // Every layer needs at least its tag byte.
    if count > r.remaining() {
        return Err(Error::format("layer count", format!("{count} layers cannot fit in the file")));
    }
    let mut layers = Vec::with_capacity(count);
    for idx in 0..count {
        let field = |name: &str| format!("layer {idx} {name}");
        let tag = r.u8(&field("kind tag"))?;
        let kind = LayerKind::from_tag(tag)
            .ok_or_else(|| Error::format(field("kind tag"), format!("unknown tag {tag}")))?;
        let layer = match kind {
            LayerKind::Conv2d => {
                let kernel = r.u32(&field("kernel"))? as usize;
                let cin = r.u32(&field("input channels"))? as usize;
                let cout = r.u32(&field("output channels"))? as usize;
                let n = kernel
                    .checked_mul(kernel)
                    .and_then(|v| v.checked_mul(cin))
                    .and_then(|v| v.checked_mul(cout))
                    .ok_or_else(|| Error::format(field("shape"), "weight count overflows"))?;
                let weight = r.f64s(n, &field("weights"))?;
                let bias = r.f64s(cout, &field("bias"))?;
                Layer::Conv2d(Conv2d {
                    kernel,
                    in_channels: cin,
                    out_channels: cout,
                    weight,
                    bias,
                })
            }
            LayerKind::Dense => {
                let inputs = r.u32(&field("inputs"))? as usize;
                let outputs = r.u32(&field("outputs"))? as usize;
                let n = inputs
                    .checked_mul(outputs)
                    .ok_or_else(|| Error::format(field("shape"), "weight count overflows"))?;
                let weight = r.f64s(n, &field("weights"))?;
                let bias = r.f64s(outputs, &field("bias"))?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                })
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Maxpool2 => Layer::Maxpool2,
            LayerKind::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerKind::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::format("trailer", format!("{} unexpected trailing bytes", r.remaining())));
    }
    if let Some((idx, _)) = layers.iter().enumerate().find(|(_, l)| match l {
        Layer::Conv2d(c) => !c.weight.iter().chain(&c.bias).all(|v| v.is_finite()),
        Layer::Dense(d) => !d.weight.iter().chain(&d.bias).all(|v| v.is_finite()),
        _ => false,
    }) {
        return Err(Error::format(format!("layer {idx} weights"), "non-finite value"));
    }
    ModelSpec::new(input_shape, layers).map_err(|e| Error::format("layer shapes", e.to_string()))
}

pub fn save_model(model: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = ModelSpec::desk_cnn([16, 16, 3], 5, 42).unwrap();
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back, m);
        let bits = |m: &ModelSpec| m.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_model(&ModelSpec::desk_cnn([8, 8, 1], 2, 1).unwrap());
        for cut in [0, 3, 10, 30, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_model(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_model(&ModelSpec::desk_cnn([8, 8, 1], 2, 1).unwrap());
        bytes[0] = b'X';
        let err = decode_model(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn wrong_version_and_tag_name_the_field() {
        let good = encode_model(&ModelSpec::desk_cnn([8, 8, 1], 2, 1).unwrap());
        let mut bytes = good.clone();
        bytes[4] = 9;
        assert!(decode_model(&bytes).unwrap_err().to_string().contains("version"));
        let mut bytes = good;
        bytes[24] = 77; // first layer tag
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("layer 0 kind tag"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bbm");
        let m = ModelSpec::desk_cnn([8, 8, 3], 2, 7).unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}
