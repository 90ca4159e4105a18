//! Forward kernels. Each output element is accumulated in a fixed order so
//! results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rank-4 convolution kernel, `out x in x kh x kw`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub data: Vec<f32>,
}

impl ConvWeights {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {out_channels}x{in_channels}x{kernel_h}x{kernel_w} kernel",
                data.len()
            )));
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        })
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.data[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Zero-padded 2-D convolution (cross-correlation, as in DNN frameworks).
pub fn conv2d(
    input: &Tensor,
    weights: &ConvWeights,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = input.shape();
    if weights.in_channels != c {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {} input channels, tensor has {c}",
            weights.in_channels
        )));
    }
    if bias.len() != weights.out_channels {
        return Err(Error::ShapeMismatch(format!(
            "{} biases for {} output channels",
            bias.len(),
            weights.out_channels
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidLayer("conv stride must be >= 1".into()));
    }
    let (kh, kw) = (weights.kernel_h, weights.kernel_w);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Dimension(format!(
            "{kh}x{kw} kernel does not fit {h}x{w} input with padding {padding}"
        )));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let pad = padding as isize;
    let src = input.data();
    let mut out = Vec::with_capacity(weights.out_channels * oh * ow);
    for (o, &b) in bias.iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * stride) as isize - pad;
                let x0 = (ox * stride) as isize - pad;
                let mut acc = b as f64;
                for i in 0..c {
                    for ky in 0..kh {
                        let y = y0 + ky as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let row = (i * h + y as usize) * w;
                        for kx in 0..kw {
                            let x = x0 + kx as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            acc += weights.get(o, i, ky, kx) as f64 * src[row + x as usize] as f64;
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    Tensor::from_vec(weights.out_channels, oh, ow, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => (1.0 / (1.0 + (-(x as f64)).exp())) as f32,
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    input
        .map(|v| kind.apply(v))
        .expect("activations map finite values to finite values")
}

/// Max over `window x window` blocks placed every `stride` pixels, no padding.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = input.shape();
    if window == 0 || stride == 0 {
        return Err(Error::InvalidLayer("maxpool window and stride must be >= 1".into()));
    }
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "maxpool window {window} larger than {h}x{w} input"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    Tensor::from_fn(c, oh, ow, |ch, oy, ox| {
        let mut m = f32::NEG_INFINITY;
        for y in oy * stride..oy * stride + window {
            for x in ox * stride..ox * stride + window {
                m = m.max(input.get(ch, y, x));
            }
        }
        m
    })
}

/// Keeps the top-left sample of every `factor x factor` block: `out(y, x) = in(s*y, s*x)`.
pub fn downsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::InvalidLayer("downsample factor must be >= 2".into()));
    }
    let (c, h, w) = input.shape();
    Tensor::from_fn(c, h / factor, w / factor, |ch, y, x| {
        input.get(ch, y * factor, x * factor)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut g = SplitMix64::new(seed);
        Tensor::from_fn(c, h, w, |_, _, _| g.next_symmetric() as f32).unwrap()
    }

    /// Straightforward quadruple loop, sampling through an explicitly padded copy.
    #[allow(clippy::needless_range_loop)]
    fn naive_conv(input: &Tensor, k: &ConvWeights, bias: &[f32], stride: usize, pad: usize) -> Vec<f64> {
        let (c, h, w) = input.shape();
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut padded = vec![0.0f64; c * ph * pw];
        for i in 0..c {
            for y in 0..h {
                for x in 0..w {
                    padded[(i * ph + y + pad) * pw + x + pad] = input.get(i, y, x) as f64;
                }
            }
        }
        let oh = (ph - k.kernel_h) / stride + 1;
        let ow = (pw - k.kernel_w) / stride + 1;
        let mut out = Vec::new();
        for o in 0..k.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias[o] as f64;
                    for i in 0..c {
                        for ky in 0..k.kernel_h {
                            for kx in 0..k.kernel_w {
                                s += k.get(o, i, ky, kx) as f64
                                    * padded[(i * ph + oy * stride + ky) * pw + ox * stride + kx];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = random_tensor(1, 4, 5, 1);
        let k = ConvWeights::new(1, 1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &k, &[0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_twos() {
        let x = Tensor::new(1, 3, 3, 2.0).unwrap();
        let k = ConvWeights::new(1, 1, 3, 3, vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), (1, 1, 1));
        assert_eq!(y.data(), &[18.0]);
    }

    #[test]
    fn conv_matches_naive_loop() {
        for (seed, stride, pad, c, o) in [(3u64, 1, 0, 1, 1), (4, 1, 1, 2, 3), (5, 2, 1, 3, 2), (6, 2, 2, 1, 4)] {
            let x = random_tensor(c, 5, 5, seed);
            let mut g = SplitMix64::new(seed + 100);
            let k = ConvWeights::new(o, c, 3, 3, (0..o * c * 9).map(|_| g.next_symmetric() as f32).collect()).unwrap();
            let bias: Vec<f32> = (0..o).map(|_| g.next_symmetric() as f32).collect();
            let y = conv2d(&x, &k, &bias, stride, pad).unwrap();
            let expected = naive_conv(&x, &k, &bias, stride, pad);
            assert_eq!(y.len(), expected.len());
            assert_eq!(y.height(), (5 + 2 * pad - 3) / stride + 1);
            for (a, b) in y.data().iter().zip(&expected) {
                assert!((*a as f64 - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::new(2, 3, 3, 0.0).unwrap();
        let k = ConvWeights::new(1, 1, 3, 3, vec![0.0; 9]).unwrap();
        assert!(matches!(conv2d(&x, &k, &[0.0], 1, 0), Err(Error::ShapeMismatch(_))));
        let k = ConvWeights::new(1, 2, 5, 5, vec![0.0; 50]).unwrap();
        assert!(matches!(conv2d(&x, &k, &[0.0], 1, 0), Err(Error::Dimension(_))));
        assert!(ConvWeights::new(1, 2, 3, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn relu_and_sigmoid() {
        let x = Tensor::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.apply(-1000.0), 0.0);
        assert_eq!(Activation::Sigmoid.apply(1000.0), 1.0);
    }

    #[test]
    fn sigmoid_is_monotone() {
        let mut g = SplitMix64::new(9);
        let mut xs: Vec<f32> = (0..200).map(|_| (g.next_symmetric() * 8.0) as f32).collect();
        xs.sort_by(f32::total_cmp);
        let ys: Vec<f32> = xs.iter().map(|&x| Activation::Sigmoid.apply(x)).collect();
        assert!(ys.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool(&x, 2, 2).unwrap().data(), &[4.0]);
        let c = Tensor::new(2, 6, 6, 0.25).unwrap();
        let p = maxpool(&c, 3, 1).unwrap();
        assert_eq!(p.shape(), (2, 4, 4));
        assert!(p.data().iter().all(|&v| v == 0.25));
        assert!(matches!(maxpool(&x, 3, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_matches_naive_scan() {
        let x = random_tensor(2, 8, 8, 11);
        let p = maxpool(&x, 2, 2).unwrap();
        assert_eq!(p.shape(), (2, 4, 4));
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let window = [
                        x.get(c, 2 * oy, 2 * ox),
                        x.get(c, 2 * oy, 2 * ox + 1),
                        x.get(c, 2 * oy + 1, 2 * ox),
                        x.get(c, 2 * oy + 1, 2 * ox + 1),
                    ];
                    let m = window.iter().cloned().fold(f32::MIN, f32::max);
                    assert_eq!(p.get(c, oy, ox), m);
                }
            }
        }
    }

    #[test]
    fn downsample_basics() {
        let c = Tensor::new(1, 2, 2, 7.0).unwrap();
        assert_eq!(downsample(&c, 2).unwrap().data(), &[7.0]);
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(downsample(&x, 2).unwrap().data(), &[1.0]);
        assert!(downsample(&x, 1).is_err());
        let odd = random_tensor(1, 7, 9, 2);
        assert_eq!(downsample(&odd, 2).unwrap().shape(), (1, 3, 4));
    }

    #[test]
    fn downsample_composes() {
        let x = random_tensor(3, 16, 12, 21);
        let twice = downsample(&downsample(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, downsample(&x, 4).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conv_is_linear(seed in any::<u64>(), a in -3.0f32..3.0, b in -3.0f32..3.0) {
                let i = random_tensor(2, 7, 6, seed);
                let j = random_tensor(2, 7, 6, seed ^ 0xABCD);
                let mut g = SplitMix64::new(seed.wrapping_add(1));
                let k = ConvWeights::new(3, 2, 3, 3, (0..54).map(|_| g.next_symmetric() as f32).collect()).unwrap();
                let zero = [0.0; 3];
                let combo = Tensor::from_vec(2, 7, 6, i.data().iter().zip(j.data()).map(|(x, y)| a * x + b * y).collect()).unwrap();
                let lhs = conv2d(&combo, &k, &zero, 1, 1).unwrap();
                let ci = conv2d(&i, &k, &zero, 1, 1).unwrap();
                let cj = conv2d(&j, &k, &zero, 1, 1).unwrap();
                let scale = lhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
                for ((l, x), y) in lhs.data().iter().zip(ci.data()).zip(cj.data()) {
                    prop_assert!((l - (a * x + b * y)).abs() <= 1e-4 * scale);
                }
            }

            #[test]
            fn activations_commute_with_shifts(seed in any::<u64>(), dx in 0usize..4, dy in 0usize..4) {
                let x = random_tensor(2, 6, 7, seed);
                let shift = |t: &Tensor| Tensor::from_fn(2, 6, 7, |c, y, xx| t.get(c, (y + dy) % 6, (xx + dx) % 7)).unwrap();
                for kind in [Activation::Relu, Activation::Sigmoid] {
                    prop_assert_eq!(activation(&shift(&x), kind), shift(&activation(&x, kind)));
                }
            }
        }
    }
}
