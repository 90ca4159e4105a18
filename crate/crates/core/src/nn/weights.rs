//! Convolution parameters and the `LFW1` weight file.
//!
//! File layout: magic `LFW1`, then for every conv layer in network order
//! four little-endian `u32` dims (out, in, kh, kw), the `f32` weights,
//! a `u32` bias length and the `f32` biases. No trailing data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ops::ConvWeights;
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{read_f32s, read_u32};

pub const LFW_MAGIC: &[u8; 4] = b"LFW1";

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weights: ConvWeights,
    pub bias: Vec<f32>,
}

/// Parameters for each conv layer, in network order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightStore {
    convs: Vec<ConvParams>,
}

/// Input channel count seen by every conv layer of `net`.
fn conv_input_channels(net: &NetworkSpec) -> Vec<usize> {
    let mut channels = net.input_channels();
    let mut out = Vec::new();
    for layer in net.layers() {
        if let LayerSpec::Conv(c) = layer {
            out.push(channels);
            channels = c.out_channels;
        }
    }
    out
}

impl WeightStore {
    pub fn new(convs: Vec<ConvParams>) -> Self {
        WeightStore { convs }
    }

    pub fn convs(&self) -> &[ConvParams] {
        &self.convs
    }

    /// Uniform(-1, 1) / sqrt(fan-in) weights drawn in (layer, out, in, ky, kx)
    /// order from one SplitMix64 stream; zero biases.
    pub fn seeded(net: &NetworkSpec, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let convs = net
            .conv_layers()
            .zip(conv_input_channels(net))
            .map(|((_, spec), in_ch)| {
                let fan_in = in_ch * spec.kernel_h * spec.kernel_w;
                let scale = 1.0 / (fan_in as f64).sqrt();
                let n = spec.out_channels * fan_in;
                let data = (0..n)
                    .map(|_| (rng.next_symmetric() * scale) as f32)
                    .collect();
                ConvParams {
                    weights: ConvWeights::new(
                        spec.out_channels,
                        in_ch,
                        spec.kernel_h,
                        spec.kernel_w,
                        data,
                    )
                    .expect("sizes computed from the network"),
                    bias: vec![0.0; spec.out_channels],
                }
            })
            .collect();
        WeightStore { convs }
    }

    /// Checks every conv layer of `net` has parameters of the right shape.
    pub fn check_binding(&self, net: &NetworkSpec) -> Result<()> {
        let n_conv = net.conv_layers().count();
        if n_conv != self.convs.len() {
            return Err(Error::Binding(format!(
                "network has {n_conv} conv layers, store has {}",
                self.convs.len()
            )));
        }
        for (((layer, spec), in_ch), p) in net
            .conv_layers()
            .zip(conv_input_channels(net))
            .zip(&self.convs)
        {
            let w = &p.weights;
            let expected = (spec.out_channels, in_ch, spec.kernel_h, spec.kernel_w);
            let got = (w.out_channels, w.in_channels, w.kernel_h, w.kernel_w);
            if expected != got {
                return Err(Error::Binding(format!(
                    "layer {layer}: expected kernel {expected:?}, got {got:?}"
                )));
            }
            if p.bias.len() != spec.out_channels {
                return Err(Error::Binding(format!(
                    "layer {layer}: expected {} biases, got {}",
                    spec.out_channels,
                    p.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn write_lfw<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(LFW_MAGIC)?;
        for p in &self.convs {
            let k = &p.weights;
            for d in [k.out_channels, k.in_channels, k.kernel_h, k.kernel_w] {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in &k.data {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(p.bias.len() as u32).to_le_bytes())?;
            for v in &p.bias {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_lfw<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("truncated weight file: {e}")))?;
        if &magic != LFW_MAGIC {
            return Err(Error::Format(format!("bad weight magic {magic:?}")));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)
            .map_err(|e| Error::Format(format!("reading weights: {e}")))?;
        let mut cur = &rest[..];
        let mut convs = Vec::new();
        while !cur.is_empty() {
            let dims = [
                read_u32(&mut cur)?,
                read_u32(&mut cur)?,
                read_u32(&mut cur)?,
                read_u32(&mut cur)?,
            ]
            .map(|d| d as usize);
            let data = read_f32s(&mut cur, dims.iter().product())?;
            let blen = read_u32(&mut cur)? as usize;
            let bias = read_f32s(&mut cur, blen)?;
            if data.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "non-finite parameter in conv layer {}",
                    convs.len()
                )));
            }
            convs.push(ConvParams {
                weights: ConvWeights::new(dims[0], dims[1], dims[2], dims[3], data)?,
                bias,
            });
        }
        Ok(WeightStore { convs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_lfw(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_lfw(BufReader::new(file))
    }
}
