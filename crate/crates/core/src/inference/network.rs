//! Feed-forward stack of 8-bit layers over stacked feature frames.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::quant::{dot_fixed, dot_float, quantize, AccumMode, QuantParams, QuantizedTensor, MAX_DOT_LEN};
use super::quant::compute_quant_params;
use crate::frontend::FeatureFrame;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub num_channels: usize,
    pub num_stacked_frames: usize,
}

impl InputSpec {
    pub fn input_dim(&self) -> usize {
        self.num_channels * self.num_stacked_frames
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `[out, in]`, row-major.
    pub weights: QuantizedTensor,
    /// In units of `weights.scale * input_params.scale`.
    pub bias: Vec<i32>,
    pub activation: Activation,
    /// Calibrated range of this layer's input activations.
    pub input_params: QuantParams,
}

/// Weight range used when a tensor is constant: keep the value, widen to include 0.
fn weight_params(values: &[f32]) -> Result<QuantParams> {
    match compute_quant_params(values) {
        Err(Error::DegenerateRange(_)) if !values.is_empty() => {
            let v = values[0];
            if v == 0.0 {
                QuantParams::from_range(-1.0, 1.0)
            } else {
                QuantParams::from_range(v.min(0.0), v.max(0.0))
            }
        }
        other => other,
    }
}

impl Layer {
    /// Quantizes float weights (`[out][in]` row-major) and bias.
    pub fn from_float(
        weights: &[f32],
        bias: &[f32],
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        input_range: (f32, f32),
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::dimension(format!(
                "layer {in_dim}x{out_dim}: got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        let wp = weight_params(weights)?;
        let input_params = QuantParams::from_range(input_range.0, input_range.1)?;
        let bias_scale = wp.scale as f64 * input_params.scale as f64;
        let bias = bias
            .iter()
            .map(|&b| math::round(b as f64 / bias_scale).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            .collect();
        Ok(Self {
            weights: quantize(weights, &[out_dim, in_dim], wp)?,
            bias,
            activation,
            input_params,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape[1]
    }

    /// Real value of one accumulator unit.
    pub fn acc_scale(&self) -> f64 {
        self.weights.params.scale as f64 * self.input_params.scale as f64
    }

    /// Biases as real numbers.
    pub fn bias_real(&self) -> Vec<f32> {
        let s = self.acc_scale();
        self.bias.iter().map(|&b| (b as f64 * s) as f32).collect()
    }
}

/// Integer rescale `x * multiplier / 2^shift`, rounding half up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantizer {
    pub multiplier: i32,
    pub shift: u32,
}

impl Requantizer {
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < (1u64 << 31) as f64) {
            return Err(Error::config(format!("requantization ratio {ratio} out of range")));
        }
        let (lo, hi) = ((1u64 << 30) as f64, (1u64 << 31) as f64);
        let mut r = ratio;
        let mut shift = 0u32;
        while r < lo {
            r *= 2.0;
            shift += 1;
        }
        let mut m = math::round(r);
        if m >= hi {
            m /= 2.0;
            shift = shift
                .checked_sub(1)
                .ok_or_else(|| Error::config(format!("requantization ratio {ratio} out of range")))?;
        }
        Ok(Self {
            multiplier: m as i32,
            shift,
        })
    }

    pub fn apply(&self, x: i32) -> i64 {
        let prod = x as i64 * self.multiplier as i64;
        match self.shift {
            0 => prod,
            s if s >= 63 => 0,
            s => (prod + (1i64 << (s - 1))) >> s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub input_spec: InputSpec,
    layers: Vec<Layer>,
    requant: Vec<Requantizer>,
}

impl Network {
    pub fn new(name: impl Into<String>, input_spec: InputSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut expected = input_spec.input_dim();
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.shape.len() != 2 || layer.in_dim() != expected {
                return Err(Error::dimension(format!(
                    "layer {i} expects input {expected}, has shape {:?}",
                    layer.weights.shape
                )));
            }
            if layer.in_dim() > MAX_DOT_LEN {
                return Err(Error::dimension(format!("layer {i} input too wide for i32 accumulation")));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::dimension(format!("layer {i} bias length mismatch")));
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::config(format!("softmax only allowed on the last layer (layer {i})")));
            }
            expected = layer.out_dim();
        }
        let requant = layers
            .windows(2)
            .map(|w| Requantizer::from_ratio(w[0].acc_scale() / w[1].input_params.scale as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.into(),
            input_spec,
            layers,
            requant,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Runs the layer chain on one stacked input vector.
    pub fn forward(&self, input: &[f32], mode: AccumMode) -> Result<Vec<f32>> {
        if input.len() != self.input_spec.input_dim() {
            return Err(Error::dimension(format!(
                "network expects {} inputs, got {}",
                self.input_spec.input_dim(),
                input.len()
            )));
        }
        let last = self.layers.last().expect("validated non-empty");
        let mut out = match mode {
            AccumMode::FixedAccum => self.forward_fixed(input),
            AccumMode::FloatAccum => self.forward_float(input),
        };
        if last.activation == Activation::Softmax {
            softmax(&mut out);
        }
        Ok(out)
    }

    fn forward_fixed(&self, input: &[f32]) -> Vec<f32> {
        let first = &self.layers[0];
        let mut x: Vec<u8> = input.iter().map(|&v| first.input_params.quantize_value(v)).collect();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let zw = layer.weights.params.zero_point as i32;
            let zx = layer.input_params.zero_point as i32;
            let rows = layer.weights.data.chunks_exact(layer.in_dim());
            let mut acc: Vec<i32> = rows
                .zip(&layer.bias)
                .map(|(row, &b)| dot_fixed(row, zw, &x, zx).saturating_add(b))
                .collect();
            if layer.activation == Activation::Relu {
                acc.iter_mut().for_each(|a| *a = (*a).max(0));
            }
            if i + 1 == n {
                let s = layer.acc_scale();
                return acc.iter().map(|&a| (a as f64 * s) as f32).collect();
            }
            let rq = self.requant[i];
            let zn = self.layers[i + 1].input_params.zero_point as i64;
            x = acc
                .iter()
                .map(|&a| (zn + rq.apply(a)).clamp(0, 255) as u8)
                .collect();
        }
        unreachable!("loop returns on the last layer")
    }

    fn forward_float(&self, input: &[f32]) -> Vec<f32> {
        let mut real = input.to_vec();
        for layer in &self.layers {
            let x: Vec<u8> = real.iter().map(|&v| layer.input_params.quantize_value(v)).collect();
            let zw = layer.weights.params.zero_point as i32;
            let zx = layer.input_params.zero_point as i32;
            let s = layer.acc_scale() as f32;
            real = layer
                .weights
                .data
                .chunks_exact(layer.in_dim())
                .zip(&layer.bias)
                .map(|(row, &b)| dot_float(row, zw, &x, zx) * s + b as f32 * s)
                .collect();
            if layer.activation == Activation::Relu {
                real.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        real
    }
}

fn softmax(v: &mut [f32]) {
    let max = v.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let exps: Vec<f64> = v.iter().map(|&x| math::exp(x as f64 - max)).collect();
    let total: f64 = exps.iter().sum();
    for (o, e) in v.iter_mut().zip(exps) {
        *o = (e / total) as f32;
    }
}

/// Concatenates the most recent `num_stacked_frames` feature frames, oldest first.
#[derive(Debug, Clone)]
pub struct FrameStacker {
    spec: InputSpec,
    frames: VecDeque<Vec<f32>>,
}

impl FrameStacker {
    pub fn new(spec: InputSpec) -> Self {
        Self {
            spec,
            frames: VecDeque::with_capacity(spec.num_stacked_frames),
        }
    }

    pub fn reset(&mut self) {
        self.frames.clear();
    }

    pub fn push(&mut self, frame: &FeatureFrame) -> Result<Option<Vec<f32>>> {
        if frame.channels.len() != self.spec.num_channels {
            return Err(Error::dimension(format!(
                "model expects {} channels, frame has {}",
                self.spec.num_channels,
                frame.channels.len()
            )));
        }
        if self.frames.len() == self.spec.num_stacked_frames {
            self.frames.pop_front();
        }
        self.frames.push_back(frame.channels.clone());
        if self.frames.len() < self.spec.num_stacked_frames {
            return Ok(None);
        }
        Ok(Some(self.frames.iter().flatten().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn requantizer_matches_ratio() {
        for ratio in [1.0, 0.5, 0.013, 3.7e-5, 123.0] {
            let rq = Requantizer::from_ratio(ratio).unwrap();
            for x in [0, 1, 17, 1000, 654_321, -5000] {
                let exact = x as f64 * ratio;
                assert!((rq.apply(x) as f64 - exact).abs() <= 0.5 + 1e-6 * exact.abs(), "{ratio} {x}");
            }
        }
        assert!(Requantizer::from_ratio(0.0).is_err());
    }

    #[test]
    fn chain_validation() {
        let spec = InputSpec { num_channels: 2, num_stacked_frames: 2 };
        let l1 = Layer::from_float(&[0.5; 12], &[0.0; 3], 4, 3, Activation::Softmax, (-1.0, 1.0)).unwrap();
        let l2 = Layer::from_float(&[0.5; 6], &[0.0; 2], 3, 2, Activation::Softmax, (0.0, 1.0)).unwrap();
        assert!(matches!(Network::new("x", spec, vec![l1.clone(), l2]), Err(Error::Config(_))));
        let bad = Layer::from_float(&[0.5; 15], &[0.0; 3], 5, 3, Activation::None, (-1.0, 1.0)).unwrap();
        assert!(matches!(Network::new("x", spec, vec![bad]), Err(Error::Dimension(_))));
        assert!(Network::new("x", spec, vec![l1]).is_ok());
    }

    #[test]
    fn stacker_concatenates_oldest_first() {
        let mut s = FrameStacker::new(InputSpec { num_channels: 2, num_stacked_frames: 2 });
        let f = |i: u64, v: f32| FeatureFrame { channels: vec![v, v + 0.5], frame_index: i, timestamp_ms: 0 };
        assert_eq!(s.push(&f(0, 1.0)).unwrap(), None);
        assert_eq!(s.push(&f(1, 2.0)).unwrap(), Some(vec![1.0, 1.5, 2.0, 2.5]));
        assert_eq!(s.push(&f(2, 3.0)).unwrap(), Some(vec![2.0, 2.5, 3.0, 3.5]));
        let wrong = FeatureFrame { channels: vec![0.0; 3], frame_index: 3, timestamp_ms: 0 };
        assert!(s.push(&wrong).is_err());
    }
}
