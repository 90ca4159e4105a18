//! Forward-only CNN engine: convolution, pointwise activations, max-pooling
//! and plain downsampling, driven by a [`NetworkSpec`].

pub mod ops;
pub mod spec;
pub mod weights;

pub use ops::{activation, conv2d, downsample, maxpool, Activation, ConvWeights};
pub use spec::{ConvSpec, LayerSpec, NetworkSpec, ReceptiveField};
pub use weights::{ConvParams, WeightStore};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Runs `net` on `input`. The returned list starts with the input itself,
/// followed by the output of every layer in order.
pub fn forward(net: &NetworkSpec, weights: &WeightStore, input: &Tensor) -> Result<Vec<Tensor>> {
    weights.check_binding(net)?;
    if input.channels() != net.input_channels() {
        return Err(Error::Binding(format!(
            "network expects {} input channels, got {}",
            net.input_channels(),
            input.channels()
        )));
    }
    let mut outputs = Vec::with_capacity(net.len() + 1);
    outputs.push(input.clone());
    let mut params = weights.convs().iter();
    for layer in net.layers() {
        let x = outputs.last().expect("list starts non-empty");
        let y = match *layer {
            LayerSpec::Conv(c) => {
                let p = params.next().expect("binding checked");
                conv2d(x, &p.weights, &p.bias, c.stride, c.padding)?
            }
            LayerSpec::Relu => activation(x, Activation::Relu),
            LayerSpec::Sigmoid => activation(x, Activation::Sigmoid),
            LayerSpec::MaxPool { window, stride } => maxpool(x, window, stride)?,
            LayerSpec::Downsample { factor } => downsample(x, factor)?,
        };
        outputs.push(y);
    }
    Ok(outputs)
}

/// Output of the first `layer` layers only (`layer == 0` is the input).
pub fn forward_to(
    net: &NetworkSpec,
    weights: &WeightStore,
    input: &Tensor,
    layer: usize,
) -> Result<Tensor> {
    if layer > net.len() {
        return Err(Error::Config(format!(
            "layer {layer} out of range for a {}-layer network",
            net.len()
        )));
    }
    let mut all = forward(net, weights, input)?;
    all.truncate(layer + 1);
    Ok(all.pop().expect("at least the input"))
}
