//! Plain-text float models, the input of `quantize-model`.
//!
//! ```text
//! # comment
//! kind encoder          # or embedding
//! name my-keyword
//! units 3               # encoder only: keyword units, filler is the last output
//! input 40 1            # channels, stacked frames
//! layer 40 4 softmax -28 28   # in, out, none|relu|softmax, input range
//! weights ...           # out x in values, row-major, may span lines
//! bias ...              # out values
//! ```

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context, Result};
use kws_core::inference::{Activation, EmbeddingModel, EncoderModel, InputSpec, Layer, Model, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct FloatLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub input_range: (f32, f32),
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub embedding: bool,
    pub name: String,
    pub units: usize,
    pub input: InputSpec,
    pub layers: Vec<FloatLayer>,
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::None => "none",
        Activation::Relu => "relu",
        Activation::Softmax => "softmax",
    }
}

impl FloatModel {
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split('#').next().unwrap_or("").split_whitespace().map(move |t| (i + 1, t)))
            .peekable();
        let mut next = |what: &str| tokens.next().with_context(|| format!("unexpected end of model text, expected {what}"));
        let mut m = FloatModel {
            embedding: false,
            name: String::new(),
            units: 0,
            input: InputSpec { num_channels: 0, num_stacked_frames: 1 },
            layers: Vec::new(),
        };
        fn num<T: std::str::FromStr>((line, t): (usize, &str)) -> Result<T> {
            t.parse().ok().with_context(|| format!("line {line}: bad number `{t}`"))
        }
        let mut pending: Option<FloatLayer> = None;
        loop {
            let Ok((line, word)) = next("a keyword") else {
                break;
            };
            match word {
                "kind" => {
                    m.embedding = match next("kind")?.1 {
                        "encoder" => false,
                        "embedding" => true,
                        other => bail!("line {line}: unknown kind `{other}`"),
                    }
                }
                "name" => m.name = next("name")?.1.to_string(),
                "units" => m.units = num(next("units")?)?,
                "input" => {
                    m.input.num_channels = num(next("channels")?)?;
                    m.input.num_stacked_frames = num(next("stacked frames")?)?;
                }
                "layer" => {
                    if let Some(l) = pending.take() {
                        m.layers.push(l);
                    }
                    let in_dim = num(next("in")?)?;
                    let out_dim = num(next("out")?)?;
                    let activation = match next("activation")?.1 {
                        "none" => Activation::None,
                        "relu" => Activation::Relu,
                        "softmax" => Activation::Softmax,
                        other => bail!("line {line}: unknown activation `{other}`"),
                    };
                    let input_range = (num(next("input min")?)?, num(next("input max")?)?);
                    pending = Some(FloatLayer { in_dim, out_dim, activation, input_range, weights: vec![], bias: vec![] });
                }
                "weights" | "bias" => {
                    let l = pending.as_mut().with_context(|| format!("line {line}: `{word}` before `layer`"))?;
                    let n = if word == "weights" { l.in_dim * l.out_dim } else { l.out_dim };
                    let values = (0..n).map(|_| num(next("value")?)).collect::<Result<Vec<f32>>>()?;
                    if word == "weights" {
                        l.weights = values;
                    } else {
                        l.bias = values;
                    }
                }
                other => bail!("line {line}: unknown keyword `{other}`"),
            }
        }
        m.layers.extend(pending);
        ensure!(!m.layers.is_empty(), "model has no layers");
        for (i, l) in m.layers.iter().enumerate() {
            ensure!(l.weights.len() == l.in_dim * l.out_dim, "layer {i} is missing its weights");
            ensure!(l.bias.len() == l.out_dim, "layer {i} is missing its bias");
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind {}", if self.embedding { "embedding" } else { "encoder" });
        let _ = writeln!(s, "name {}", if self.name.is_empty() { "model" } else { &self.name });
        if !self.embedding {
            let _ = writeln!(s, "units {}", self.units);
        }
        let _ = writeln!(s, "input {} {}", self.input.num_channels, self.input.num_stacked_frames);
        for l in &self.layers {
            let _ = writeln!(
                s,
                "layer {} {} {} {} {}",
                l.in_dim,
                l.out_dim,
                activation_name(l.activation),
                l.input_range.0,
                l.input_range.1
            );
            s.push_str("weights");
            for row in l.weights.chunks(l.in_dim.max(1)) {
                s.push('\n');
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&cells.join(" "));
            }
            s.push_str("\nbias ");
            let cells: Vec<String> = l.bias.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    /// Quantizes every layer to 8 bits.
    pub fn quantize(&self) -> Result<Model> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer::from_float(&l.weights, &l.bias, l.in_dim, l.out_dim, l.activation, l.input_range))
            .collect::<Result<Vec<_>, _>>()?;
        let network = Network::new(self.name.clone(), self.input, layers)?;
        Ok(if self.embedding {
            Model::Embedding(EmbeddingModel::new(network)?)
        } else {
            Model::Encoder(EncoderModel::new(network, self.units)?)
        })
    }
}
