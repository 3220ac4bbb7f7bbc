//! 8-bit acoustic encoder: feature frames in, keyword-unit posteriors out.
//!
//! The last output of every encoder is the filler unit; the first `num_units`
//! outputs are the keyword's acoustic units in keyword order.

mod format;
mod network;
mod quant;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use format::{serialized_size, ModelKind, HEADER_BYTES, LAYER_HEADER_BYTES, MAGIC, VERSION};
pub use network::{Activation, FrameStacker, InputSpec, Layer, Network, Requantizer};
pub use quant::{
    compute_quant_params, dequantize, quantize, quantized_matvec, AccumMode, QuantParams, QuantizedTensor,
    MAX_DOT_LEN,
};

use crate::frontend::FeatureFrame;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorFrame {
    pub keyword_posteriors: Vec<f32>,
    pub filler_posterior: f32,
    pub frame_index: u64,
}

impl PosteriorFrame {
    pub fn num_units(&self) -> usize {
        self.keyword_posteriors.len()
    }

    pub fn total(&self) -> f32 {
        self.keyword_posteriors.iter().sum::<f32>() + self.filler_posterior
    }
}

fn check_encodable(network: &Network) -> Result<()> {
    let too_big = |v: usize| v > u16::MAX as usize;
    if too_big(network.name.len())
        || too_big(network.input_spec.num_channels)
        || too_big(network.input_spec.num_stacked_frames)
        || too_big(network.layers().len())
        || network.layers().iter().any(|l| too_big(l.in_dim()) || too_big(l.out_dim()))
    {
        return Err(Error::config("model field exceeds the 16-bit limits of the file format"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    network: Network,
    num_units: usize,
    byte_size: usize,
}

impl EncoderModel {
    pub fn new(network: Network, num_units: usize) -> Result<Self> {
        check_encodable(&network)?;
        let last = network.layers().last().expect("network is non-empty");
        if num_units == 0 {
            return Err(Error::config("encoder needs at least one keyword unit"));
        }
        if last.activation != Activation::Softmax || last.out_dim() != num_units + 1 {
            return Err(Error::config(format!(
                "encoder must end in softmax over {} outputs ({num_units} units + filler)",
                num_units + 1
            )));
        }
        let byte_size = serialized_size(&network);
        Ok(Self {
            network,
            num_units,
            byte_size,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn input_spec(&self) -> InputSpec {
        self.network.input_spec
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn has_filler(&self) -> bool {
        true
    }

    /// Exact serialized size in bytes.
    pub fn byte_size(&self) -> usize {
        self.byte_size
    }

    pub fn name(&self) -> &str {
        &self.network.name
    }

    /// Same network under a different name; names are how test models are
    /// padded to an exact byte size.
    pub fn renamed(&self, name: impl Into<String>) -> Result<Self> {
        let mut network = self.network.clone();
        network.name = name.into();
        Self::new(network, self.num_units)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::write(ModelKind::Encoder, self.num_units, &self.network)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match load_model(bytes)? {
            Model::Encoder(m) => Ok(m),
            Model::Embedding(_) => Err(Error::parse(6, "expected an encoder model, found an embedding model")),
        }
    }

    /// Posteriors for one stacked input vector.
    pub fn posteriors(&self, stacked: &[f32], mode: AccumMode, frame_index: u64) -> Result<PosteriorFrame> {
        let mut out = self.network.forward(stacked, mode)?;
        let filler_posterior = out.pop().expect("num_units + 1 outputs");
        Ok(PosteriorFrame {
            keyword_posteriors: out,
            filler_posterior,
            frame_index,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    network: Network,
    byte_size: usize,
}

impl EmbeddingModel {
    pub fn new(network: Network) -> Result<Self> {
        check_encodable(&network)?;
        if network.layers().last().expect("non-empty").activation == Activation::Softmax {
            return Err(Error::config("embedding networks end in a linear or relu layer"));
        }
        let byte_size = serialized_size(&network);
        Ok(Self { network, byte_size })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn dim(&self) -> usize {
        self.network.output_dim()
    }

    pub fn byte_size(&self) -> usize {
        self.byte_size
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::write(ModelKind::Embedding, 0, &self.network)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match load_model(bytes)? {
            Model::Embedding(m) => Ok(m),
            Model::Encoder(_) => Err(Error::parse(6, "expected an embedding model, found an encoder model")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Encoder(EncoderModel),
    Embedding(EmbeddingModel),
}

impl Model {
    pub fn byte_size(&self) -> usize {
        match self {
            Model::Encoder(m) => m.byte_size(),
            Model::Embedding(m) => m.byte_size(),
        }
    }

    pub fn network(&self) -> &Network {
        match self {
            Model::Encoder(m) => m.network(),
            Model::Embedding(m) => m.network(),
        }
    }
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    let parsed = format::read(bytes)?;
    let wrap = |e: Error| match e {
        e @ Error::Parse { .. } => e,
        e => Error::parse(0, format!("{e}")),
    };
    match parsed.kind {
        ModelKind::Encoder => EncoderModel::new(parsed.network, parsed.num_units)
            .map(Model::Encoder)
            .map_err(wrap),
        ModelKind::Embedding => {
            if parsed.num_units != 0 {
                return Err(Error::parse(12, "embedding models must have num_units == 0"));
            }
            EmbeddingModel::new(parsed.network).map(Model::Embedding).map_err(wrap)
        }
    }
}

pub fn serialize_model(model: &Model) -> Vec<u8> {
    match model {
        Model::Encoder(m) => m.to_bytes(),
        Model::Embedding(m) => m.to_bytes(),
    }
}

/// Batch encoder over a frame sequence: one posterior frame per input frame
/// from index `num_stacked_frames - 1` on.
pub fn encoder_forward(frames: &[FeatureFrame], model: &EncoderModel, mode: AccumMode) -> Result<Vec<PosteriorFrame>> {
    let spec = model.input_spec();
    if frames.len() < spec.num_stacked_frames {
        return Err(Error::InsufficientFrames {
            needed: spec.num_stacked_frames,
            got: frames.len(),
        });
    }
    let mut stacker = FrameStacker::new(spec);
    let mut out = Vec::with_capacity(frames.len() + 1 - spec.num_stacked_frames);
    for frame in frames {
        if let Some(stacked) = stacker.push(frame)? {
            out.push(model.posteriors(&stacked, mode, frame.frame_index)?);
        }
    }
    Ok(out)
}
