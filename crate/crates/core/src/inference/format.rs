//! Binary model file, little-endian throughout.
//!
//! ```text
//! offset size  field
//! 0      4     magic "KWSM"
//! 4      2     version (1)
//! 6      1     kind: 1 = encoder, 2 = speaker embedding
//! 7      1     reserved, 0
//! 8      2     num_channels
//! 10     2     num_stacked_frames
//! 12     2     num_units (keyword units M; 0 for embeddings)
//! 14     2     num_layers
//! 16     2     name_len
//! 18     n     name, UTF-8
//! then per layer:
//!        2     in_dim
//!        2     out_dim
//!        1     activation: 0 none, 1 relu, 2 softmax
//!        3     reserved, 0
//!        4     input_min  f32
//!        4     input_max  f32
//!        4     weight_min f32
//!        4     weight_max f32
//!        in*out  weights u8, row-major [out][in]
//!        4*out   bias i32
//! ```
//!
//! Scales and zero points are derived from the stored ranges on load, so a
//! file has exactly one valid encoding and `serialize(load(b)) == b`.

use alloc::string::String;
use alloc::vec::Vec;

use super::network::{Activation, InputSpec, Layer, Network};
use super::quant::{QuantParams, QuantizedTensor};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"KWSM";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 18;
pub const LAYER_HEADER_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Encoder,
    Embedding,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Encoder => 1,
            ModelKind::Embedding => 2,
        }
    }
}

/// Serialized size of a network without building the bytes.
pub fn serialized_size(network: &Network) -> usize {
    HEADER_BYTES
        + network.name.len()
        + network
            .layers()
            .iter()
            .map(|l| LAYER_HEADER_BYTES + l.weights.data.len() + 4 * l.bias.len())
            .sum::<usize>()
}

pub(crate) fn write(kind: ModelKind, num_units: usize, network: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_size(network));
    let u16le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u16).to_le_bytes());
    out.extend_from_slice(&MAGIC);
    u16le(&mut out, VERSION as usize);
    out.push(kind.code());
    out.push(0);
    u16le(&mut out, network.input_spec.num_channels);
    u16le(&mut out, network.input_spec.num_stacked_frames);
    u16le(&mut out, num_units);
    u16le(&mut out, network.layers().len());
    u16le(&mut out, network.name.len());
    out.extend_from_slice(network.name.as_bytes());
    for layer in network.layers() {
        u16le(&mut out, layer.in_dim());
        u16le(&mut out, layer.out_dim());
        out.push(layer.activation.code());
        out.extend_from_slice(&[0; 3]);
        for v in [
            layer.input_params.min_val,
            layer.input_params.max_val,
            layer.weights.params.min_val,
            layer.weights.params.max_val,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&layer.weights.data);
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                alloc::format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn params(&mut self, what: &str) -> Result<QuantParams> {
        let at = self.pos;
        let lo = self.f32(what)?;
        let hi = self.f32(what)?;
        QuantParams::from_range(lo, hi).map_err(|e| Error::parse(at, alloc::format!("{what}: {e}")))
    }
}

pub(crate) struct Parsed {
    pub kind: ModelKind,
    pub num_units: usize,
    pub network: Network,
}

pub(crate) fn read(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, expected KWSM"));
    }
    let version = r.u16("version")?;
    if version != VERSION as usize {
        return Err(Error::parse(4, alloc::format!("unsupported version {version}")));
    }
    let kind = match r.u8("kind")? {
        1 => ModelKind::Encoder,
        2 => ModelKind::Embedding,
        k => return Err(Error::parse(6, alloc::format!("unknown model kind {k}"))),
    };
    if r.u8("reserved")? != 0 {
        return Err(Error::parse(7, "reserved byte must be zero"));
    }
    let input_spec = InputSpec {
        num_channels: r.u16("num_channels")?,
        num_stacked_frames: r.u16("num_stacked_frames")?,
    };
    let num_units = r.u16("num_units")?;
    let num_layers = r.u16("num_layers")?;
    let name_len = r.u16("name_len")?;
    let name_at = r.pos;
    let name = core::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|_| Error::parse(name_at, "name is not UTF-8"))?;
    let name = String::from(name);

    let mut layers = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let at = r.pos;
        let in_dim = r.u16("layer in_dim")?;
        let out_dim = r.u16("layer out_dim")?;
        let act_at = r.pos;
        let activation = Activation::from_code(r.u8("activation")?)
            .ok_or_else(|| Error::parse(act_at, alloc::format!("layer {i}: unknown activation")))?;
        if r.take(3, "reserved")? != [0, 0, 0] {
            return Err(Error::parse(act_at + 1, "reserved bytes must be zero"));
        }
        let input_params = r.params("input range")?;
        let weight_params = r.params("weight range")?;
        let data = r.take(in_dim * out_dim, "weights")?.to_vec();
        let bias = r
            .take(4 * out_dim, "bias")?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let weights = QuantizedTensor::new(data, alloc::vec![out_dim, in_dim], weight_params)
            .map_err(|e| Error::parse(at, alloc::format!("layer {i}: {e}")))?;
        layers.push(Layer {
            weights,
            bias,
            activation,
            input_params,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, alloc::format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let network = Network::new(name, input_spec, layers).map_err(|e| Error::parse(HEADER_BYTES + name_len, alloc::format!("{e}")))?;
    Ok(Parsed {
        kind,
        num_units,
        network,
    })
}
