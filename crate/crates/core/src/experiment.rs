//! Experiment drivers behind the CLI: parameter sweeps, randomized affine
//! histograms and motion-field exports.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::block_match::{estimate_motion, estimate_motion_multichannel, BlockMatchConfig};
use crate::error::{Error, Result};
use crate::latent_mc::{adapt_channels, end_to_end_predict_with, PredictOptions};
use crate::metrics::{nrmse, MetricsReport};
use crate::motion::AffineParams;
use crate::nn::forward_to;
use crate::nn::spec::NetworkSpec;
use crate::nn::weights::WeightStore;
use crate::rng::SplitMix64;
use crate::tensor::{MotionField, Tensor};
use crate::texture::smooth_texture;

pub const DEFAULT_IMAGE_SIZE: usize = 64;
pub const HISTOGRAM_BINS: usize = 50;

pub const SWEEP_HEADER: [&str; 6] = ["value", "nrmse", "rmse", "range", "n_valid", "n_excluded"];
pub const SAMPLES_HEADER: [&str; 13] = [
    "index",
    "tx",
    "ty",
    "sx",
    "sy",
    "shx",
    "shy",
    "rot",
    "nrmse",
    "rmse",
    "range",
    "n_valid",
    "n_excluded",
];
pub const HISTOGRAM_HEADER: [&str; 4] = ["bin", "lo", "hi", "count"];
pub const LATENT_FIELDS_HEADER: [&str; 6] = ["channel", "x", "y", "vx", "vy", "valid"];

/// Network, weights, reference image and tap options shared by every run.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub net: NetworkSpec,
    pub weights: WeightStore,
    pub image: Tensor,
    pub options: PredictOptions,
}

impl Pipeline {
    pub fn new(net: NetworkSpec, weights: WeightStore, image: Tensor, options: PredictOptions) -> Result<Self> {
        weights.check_binding(&net)?;
        if let Some(layer) = options.layer {
            if layer > net.len() {
                return Err(Error::Config(format!(
                    "layer {layer} out of range for a {}-layer network",
                    net.len()
                )));
            }
        }
        Ok(Pipeline {
            net,
            weights,
            image,
            options,
        })
    }

    /// Toy network with seeded weights on the default 64x64 texture.
    pub fn toy(weight_seed: u64, texture_seed: u64) -> Result<Self> {
        let net = NetworkSpec::toy();
        let weights = WeightStore::seeded(&net, weight_seed);
        let image = default_image(net.input_channels(), texture_seed)?;
        Pipeline::new(net, weights, image, PredictOptions::default())
    }

    pub fn evaluate(&self, params: &AffineParams) -> Result<MetricsReport> {
        let out = end_to_end_predict_with(&self.net, &self.weights, &self.image, params, &self.options)?;
        nrmse(&out.prediction.predicted, &out.actual, &out.prediction.valid)
    }
}

pub fn default_image(channels: usize, seed: u64) -> Result<Tensor> {
    smooth_texture(channels, DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    TranslateX,
    TranslateY,
    Rotate,
    /// Isotropic: `sx = sy = value`.
    Scale,
    ShearX,
    ShearY,
}

impl TransformKind {
    pub const ALL: [TransformKind; 6] = [
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::Rotate,
        TransformKind::Scale,
        TransformKind::ShearX,
        TransformKind::ShearY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::TranslateX => "translate-x",
            TransformKind::TranslateY => "translate-y",
            TransformKind::Rotate => "rotate",
            TransformKind::Scale => "scale",
            TransformKind::ShearX => "shear-x",
            TransformKind::ShearY => "shear-y",
        }
    }

    pub fn params(self, value: f64) -> AffineParams {
        let id = AffineParams::IDENTITY;
        match self {
            TransformKind::TranslateX => AffineParams { tx: value, ..id },
            TransformKind::TranslateY => AffineParams { ty: value, ..id },
            TransformKind::Rotate => AffineParams { rot: value, ..id },
            TransformKind::Scale => AffineParams {
                sx: value,
                sy: value,
                ..id
            },
            TransformKind::ShearX => AffineParams { shx: value, ..id },
            TransformKind::ShearY => AffineParams { shy: value, ..id },
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = TransformKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown transform `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSpec {
    pub kind: TransformKind,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepSpec {
    pub fn new(kind: TransformKind, start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::Config("sweep bounds must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::Config(format!("sweep step must be positive, got {step}")));
        }
        if start > stop {
            return Err(Error::Config(format!("sweep start {start} exceeds stop {stop}")));
        }
        Ok(SweepSpec {
            kind,
            start,
            stop,
            step,
        })
    }

    /// `start + i * step` for every `i` that stays within `stop`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: MetricsReport,
}

pub fn run_sweep(pipeline: &Pipeline, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.values()
        .into_iter()
        .map(|value| {
            let params = spec.kind.params(value);
            params.validate()?;
            Ok(SweepRow {
                value,
                report: pipeline.evaluate(&params)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SWEEP_HEADER)?;
    for row in rows {
        let mut rec = vec![row.value.to_string()];
        rec.extend(row.report.csv_fields());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Inclusive-exclusive uniform range `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bounds { lo, hi }
    }

    pub fn symmetric(r: f64) -> Self {
        Bounds { lo: -r, hi: r }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSpec {
    pub count: usize,
    pub seed: u64,
    pub tx: Bounds,
    pub ty: Bounds,
    pub sx: Bounds,
    pub sy: Bounds,
    pub shx: Bounds,
    pub shy: Bounds,
    pub rot: Bounds,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            count: 100,
            seed: 0,
            tx: Bounds::symmetric(32.0),
            ty: Bounds::symmetric(32.0),
            sx: Bounds::new(0.95, 1.05),
            sy: Bounds::new(0.95, 1.05),
            shx: Bounds::symmetric(5.0),
            shy: Bounds::symmetric(5.0),
            rot: Bounds::symmetric(10.0),
        }
    }
}

impl HistogramSpec {
    pub fn bounds(&self) -> [Bounds; 7] {
        [self.tx, self.ty, self.sx, self.sy, self.shx, self.shy, self.rot]
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.bounds() {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo > b.hi {
                return Err(Error::Config(format!("invalid bounds [{}, {}]", b.lo, b.hi)));
            }
        }
        if self.sx.lo <= 0.0 || self.sy.lo <= 0.0 {
            return Err(Error::Config("scale bounds must be positive".into()));
        }
        Ok(())
    }

    /// Parameter tuples drawn in (tx, ty, sx, sy, shx, shy, rot) order from
    /// one stream.
    pub fn sample(&self) -> Vec<AffineParams> {
        let mut rng = SplitMix64::new(self.seed);
        (0..self.count)
            .map(|_| {
                let [tx, ty, sx, sy, shx, shy, rot] = self.bounds().map(|b| rng.uniform(b.lo, b.hi));
                AffineParams {
                    tx,
                    ty,
                    sx,
                    sy,
                    shx,
                    shy,
                    rot,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSample {
    pub index: usize,
    pub params: AffineParams,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// `nbins` uniform bins over `[0, max]`; the maximum lands in the last bin.
/// With no values there are no bins; with `max == 0` everything is in bin 0.
pub fn bin_values(values: &[f64], nbins: usize) -> Vec<Bin> {
    if values.is_empty() || nbins == 0 {
        return Vec::new();
    }
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let width = max / nbins as f64;
    let mut bins: Vec<Bin> = (0..nbins)
        .map(|i| Bin {
            lo: i as f64 * width,
            hi: if i + 1 == nbins { max } else { (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let i = if max > 0.0 {
            ((v / max * nbins as f64).floor() as usize).min(nbins - 1)
        } else {
            0
        };
        bins[i].count += 1;
    }
    bins
}

pub fn run_histogram(pipeline: &Pipeline, spec: &HistogramSpec) -> Result<(Vec<HistogramSample>, Vec<Bin>)> {
    spec.validate()?;
    let samples = spec
        .sample()
        .into_iter()
        .enumerate()
        .map(|(index, params)| {
            Ok(HistogramSample {
                index,
                params,
                report: pipeline.evaluate(&params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = samples.iter().map(|s| s.report.nrmse).collect();
    Ok((samples, bin_values(&values, HISTOGRAM_BINS)))
}

pub fn write_samples_csv<W: Write>(samples: &[HistogramSample], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SAMPLES_HEADER)?;
    for s in samples {
        let mut rec = vec![s.index.to_string()];
        rec.extend(s.params.as_array().iter().map(f64::to_string));
        rec.extend(s.report.csv_fields());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(bins: &[Bin], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(HISTOGRAM_HEADER)?;
    for (i, b) in bins.iter().enumerate() {
        wtr.write_record([i.to_string(), b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Block-matched motion between two frames, in input space and per channel
/// of a network tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldViz {
    pub input: MotionField,
    pub latent: Vec<MotionField>,
}

/// The input field is estimated on channel-mean images; latent fields on
/// the output of the first `layer` layers (all of them if `None`).
pub fn run_fieldviz(
    net: &NetworkSpec,
    weights: &WeightStore,
    reference: &Tensor,
    target: &Tensor,
    layer: Option<usize>,
    input_cfg: &BlockMatchConfig,
    latent_cfg: &BlockMatchConfig,
) -> Result<FieldViz> {
    if reference.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reference {:?} vs target {:?}",
            reference.shape(),
            target.shape()
        )));
    }
    let layer = layer.unwrap_or(net.len());
    let input = estimate_motion(&reference.mean_channel(), &target.mean_channel(), input_cfg)?;
    let c = net.input_channels();
    let ref_t = forward_to(net, weights, &adapt_channels(reference, c)?, layer)?;
    let tgt_t = forward_to(net, weights, &adapt_channels(target, c)?, layer)?;
    let latent = estimate_motion_multichannel(&ref_t, &tgt_t, latent_cfg)?;
    Ok(FieldViz { input, latent })
}

pub fn write_latent_fields_csv<W: Write>(fields: &[MotionField], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(LATENT_FIELDS_HEADER)?;
    for (c, f) in fields.iter().enumerate() {
        f.write_rows(&mut wtr, Some(c))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
