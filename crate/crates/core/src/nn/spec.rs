//! Declarative layer lists and their plain-text file format.
//!
//! One layer per line; `#` starts a comment. An optional leading
//! `input c=<channels>` line fixes the expected input channel count (3 if absent).
//!
//! ```text
//! input c=3
//! conv out=16 k=3 stride=1 pad=1
//! relu
//! maxpool n=2 stride=2
//! downsample s=2
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Relu,
    Sigmoid,
    MaxPool { window: usize, stride: usize },
    Downsample { factor: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv(c) => {
                if c.out_channels == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                    return Err(Error::InvalidLayer(format!(
                        "conv needs positive out/kernel sizes, got {c:?}"
                    )));
                }
                if c.stride == 0 {
                    return Err(Error::InvalidLayer("conv stride must be >= 1".into()));
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                if window < 2 {
                    return Err(Error::InvalidLayer("maxpool window must be >= 2".into()));
                }
                if stride == 0 {
                    return Err(Error::InvalidLayer("maxpool stride must be >= 1".into()));
                }
            }
            LayerSpec::Downsample { factor } => {
                if factor < 2 {
                    return Err(Error::InvalidLayer("downsample factor must be >= 2".into()));
                }
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => {}
        }
        Ok(())
    }

    /// Spatial stride this layer applies to the grid.
    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::Conv(c) => c.stride,
            LayerSpec::MaxPool { stride, .. } => stride,
            LayerSpec::Downsample { factor } => factor,
            LayerSpec::Relu | LayerSpec::Sigmoid => 1,
        }
    }

    /// `(kernel, stride, padding)` along the vertical and horizontal axes.
    fn window(&self) -> [(usize, usize, usize); 2] {
        match *self {
            LayerSpec::Conv(c) => [
                (c.kernel_h, c.stride, c.padding),
                (c.kernel_w, c.stride, c.padding),
            ],
            LayerSpec::MaxPool { window, stride } => [(window, stride, 0); 2],
            LayerSpec::Downsample { factor } => [(1, factor, 0); 2],
            LayerSpec::Relu | LayerSpec::Sigmoid => [(1, 1, 0); 2],
        }
    }

    /// Output spatial size for a given input size, or `None` if the window does not fit.
    pub fn output_size(&self, size: usize, axis: usize) -> Option<usize> {
        let (k, s, p) = self.window()[axis];
        match self {
            LayerSpec::Downsample { factor } => Some(size / factor).filter(|&n| n > 0),
            _ => {
                let padded = size + 2 * p;
                (padded >= k).then(|| (padded - k) / s + 1)
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv(c) if c.kernel_h == c.kernel_w => write!(
                f,
                "conv out={} k={} stride={} pad={}",
                c.out_channels, c.kernel_h, c.stride, c.padding
            ),
            LayerSpec::Conv(c) => write!(
                f,
                "conv out={} kh={} kw={} stride={} pad={}",
                c.out_channels, c.kernel_h, c.kernel_w, c.stride, c.padding
            ),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Sigmoid => write!(f, "sigmoid"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool n={window} stride={stride}"),
            LayerSpec::Downsample { factor } => write!(f, "downsample s={factor}"),
        }
    }
}

/// Input index range `[jump * o + lo, jump * o + hi]` that output index `o` depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    pub jump: usize,
    pub lo: isize,
    pub hi: isize,
}

impl ReceptiveField {
    pub fn span(&self, o: usize) -> (isize, isize) {
        let base = (self.jump * o) as isize;
        (base + self.lo, base + self.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    input_channels: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_channels == 0 {
            return Err(Error::InvalidLayer("input channel count must be >= 1".into()));
        }
        for l in &layers {
            l.validate()?;
        }
        Ok(NetworkSpec {
            input_channels,
            layers,
        })
    }

    /// conv 3→16 → relu → maxpool → conv 16→32 → relu → maxpool → strided conv 32→32 → relu.
    /// Cumulative stride 8.
    pub fn toy() -> Self {
        let conv = |out, stride| {
            LayerSpec::Conv(ConvSpec {
                out_channels: out,
                kernel_h: 3,
                kernel_w: 3,
                stride,
                padding: 1,
            })
        };
        let pool = LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        };
        NetworkSpec::new(
            3,
            vec![
                conv(16, 1),
                LayerSpec::Relu,
                pool,
                conv(32, 1),
                LayerSpec::Relu,
                pool,
                conv(32, 2),
                LayerSpec::Relu,
            ],
        )
        .expect("toy network is valid")
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, &ConvSpec)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            LayerSpec::Conv(c) => Some((i, c)),
            _ => None,
        })
    }

    /// Product of all strides and downsample factors.
    pub fn cumulative_scale(&self) -> usize {
        self.scale_after(self.layers.len())
    }

    /// Product of strides over the first `n` layers.
    pub fn scale_after(&self, n: usize) -> usize {
        self.layers[..n.min(self.layers.len())]
            .iter()
            .map(LayerSpec::stride)
            .product()
    }

    /// Receptive field of the output of the first `n` layers, per axis `[vertical, horizontal]`.
    pub fn receptive_field(&self, n: usize) -> [ReceptiveField; 2] {
        let mut rf = [ReceptiveField {
            jump: 1,
            lo: 0,
            hi: 0,
        }; 2];
        for layer in self.layers[..n.min(self.layers.len())].iter().rev() {
            for (axis, (k, s, p)) in layer.window().into_iter().enumerate() {
                let r = &mut rf[axis];
                r.jump *= s;
                r.lo = s as isize * r.lo - p as isize;
                r.hi = s as isize * r.hi - p as isize + k as isize - 1;
            }
        }
        rf
    }

    /// Output spatial size after the first `n` layers.
    pub fn output_size(&self, height: usize, width: usize, n: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (height, width);
        for (i, layer) in self.layers[..n.min(self.layers.len())].iter().enumerate() {
            match (layer.output_size(h, 0), layer.output_size(w, 1)) {
                (Some(nh), Some(nw)) => (h, w) = (nh, nw),
                _ => {
                    return Err(Error::Dimension(format!(
                        "layer {i} ({layer}) does not fit a {h}x{w} input"
                    )))
                }
            }
        }
        Ok((h, w))
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut input_channels = None;
        let mut layers = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let kind = words.next().unwrap_or_default();
            let mut args = HashMap::new();
            for w in words {
                let (k, v) = w
                    .split_once('=')
                    .ok_or_else(|| err(lineno, format!("expected key=value, got `{w}`")))?;
                let v: usize = v
                    .parse()
                    .map_err(|_| err(lineno, format!("`{k}` needs a non-negative integer, got `{v}`")))?;
                if args.insert(k.to_string(), v).is_some() {
                    return Err(err(lineno, format!("duplicate key `{k}`")));
                }
            }
            let mut take = |key: &str| args.remove(key);
            let layer = match kind {
                "input" => {
                    if !layers.is_empty() || input_channels.is_some() {
                        return Err(err(lineno, "`input` must be the first line".into()));
                    }
                    input_channels = Some(take("c").ok_or_else(|| err(lineno, "input needs c=".into()))?);
                    None
                }
                "conv" => {
                    let out = take("out").ok_or_else(|| err(lineno, "conv needs out=".into()))?;
                    let k = take("k");
                    let kh = take("kh").or(k);
                    let kw = take("kw").or(k);
                    let (Some(kernel_h), Some(kernel_w)) = (kh, kw) else {
                        return Err(err(lineno, "conv needs k= or kh=/kw=".into()));
                    };
                    Some(LayerSpec::Conv(ConvSpec {
                        out_channels: out,
                        kernel_h,
                        kernel_w,
                        stride: take("stride").unwrap_or(1),
                        padding: take("pad").unwrap_or(0),
                    }))
                }
                "relu" => Some(LayerSpec::Relu),
                "sigmoid" => Some(LayerSpec::Sigmoid),
                "maxpool" => {
                    let window = take("n").ok_or_else(|| err(lineno, "maxpool needs n=".into()))?;
                    Some(LayerSpec::MaxPool {
                        window,
                        stride: take("stride").unwrap_or(window),
                    })
                }
                "downsample" => Some(LayerSpec::Downsample {
                    factor: take("s").ok_or_else(|| err(lineno, "downsample needs s=".into()))?,
                }),
                other => return Err(err(lineno, format!("unknown layer kind `{other}`"))),
            };
            if let Some(key) = args.keys().next() {
                return Err(err(lineno, format!("unexpected key `{key}` for {kind}")));
            }
            if let Some(layer) = layer {
                layer.validate().map_err(|e| err(lineno, e.to_string()))?;
                layers.push(layer);
            }
        }
        NetworkSpec::new(input_channels.unwrap_or(3), layers)
            .map_err(|e| err(0, e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("input c={}\n", self.input_channels);
        for l in &self.layers {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }
}

impl std::str::FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, &PathBuf::from("<string>"))
    }
}
