//! Motion compensation in feature space.
//!
//! Input-space motion is carried to a tensor grid with cumulative stride `s`
//! by sampling the field at the input position aligned with each tensor
//! cell's center and dividing by `s`. Every channel of the reference tensor
//! is then warped with that one field.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::save_mask;
use crate::motion::{bilinear, in_domain, warp_affine, AffineParams};
use crate::nn::{forward, NetworkSpec, WeightStore};
use crate::tensor::{Mask, MotionField, MotionVector, Tensor};

/// Input-grid coordinate of the center of latent cell `i` at stride `s`.
#[inline]
pub fn latent_center(i: usize, scale: usize) -> f64 {
    (i as f64 + 0.5) * scale as f64 - 0.5
}

/// Bilinear sample of the field at `(x, y)`; `None` if any contributing
/// neighbour is invalid.
fn sample_field(field: &MotionField, x: f64, y: f64) -> Option<MotionVector> {
    let (h, w) = (field.height(), field.width());
    let x0 = (x.floor().max(0.0) as usize).min(w - 1);
    let y0 = (y.floor().max(0.0) as usize).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = if fx > 0.0 { (x0 + 1).min(w - 1) } else { x0 };
    let y1 = if fy > 0.0 { (y0 + 1).min(h - 1) } else { y0 };
    let (a, b, c, d) = (
        field.get(y0, x0)?,
        field.get(y0, x1)?,
        field.get(y1, x0)?,
        field.get(y1, x1)?,
    );
    let lerp = |p: f32, q: f32, r: f32, s: f32| {
        let top = (1.0 - fx) * p as f64 + fx * q as f64;
        let bottom = (1.0 - fx) * r as f64 + fx * s as f64;
        (1.0 - fy) * top + fy * bottom
    };
    Some(MotionVector::new(
        lerp(a.vx, b.vx, c.vx, d.vx) as f32,
        lerp(a.vy, b.vy, c.vy, d.vy) as f32,
    ))
}

/// Resamples an input-grid field onto the `floor(H/s) x floor(W/s)` grid and
/// divides every vector by `s`. Validity is inherited from the sampled inputs.
pub fn scale_motion(field: &MotionField, scale: usize) -> Result<MotionField> {
    if scale == 0 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    let (lh, lw) = (field.height() / scale, field.width() / scale);
    if lh == 0 || lw == 0 {
        return Err(Error::Dimension(format!(
            "{}x{} field is smaller than scale {scale}",
            field.height(),
            field.width()
        )));
    }
    let inv = scale as f64;
    let mut vectors = Vec::with_capacity(lh * lw);
    let mut valid = Vec::with_capacity(lh * lw);
    for i in 0..lh {
        for j in 0..lw {
            match sample_field(field, latent_center(j, scale), latent_center(i, scale)) {
                Some(v) => {
                    vectors.push(MotionVector::new(
                        (v.vx as f64 / inv) as f32,
                        (v.vy as f64 / inv) as f32,
                    ));
                    valid.push(true);
                }
                None => {
                    vectors.push(MotionVector::ZERO);
                    valid.push(false);
                }
            }
        }
    }
    MotionField::new(lh, lw, vectors, valid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPrediction {
    pub predicted: Tensor,
    pub valid: Mask,
    pub scale: usize,
}

impl LatentPrediction {
    /// Writes `<stem>.lft` and `<stem>_mask.pgm` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        self.predicted.save(dir.join(format!("{stem}.lft")))?;
        save_mask(&self.valid, dir.join(format!("{stem}_mask.pgm")))
    }
}

/// Warps every channel of `reference` with `input_motion` scaled by `1/scale`.
///
/// A cell is invalid when its scaled field sample is invalid or its source
/// position falls outside the tensor grid; invalid cells are predicted as 0.
pub fn predict_tensor(reference: &Tensor, input_motion: &MotionField, scale: usize) -> Result<LatentPrediction> {
    let latent = scale_motion(input_motion, scale)?;
    let (c, h, w) = reference.shape();
    if (latent.height(), latent.width()) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} motion at scale {scale} gives a {}x{} grid, reference is {h}x{w}",
            input_motion.height(),
            input_motion.width(),
            latent.height(),
            latent.width()
        )));
    }
    let mut valid = vec![false; h * w];
    let mut sources = vec![(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            if let Some(v) = latent.get(i, j) {
                let sx = j as f64 - v.vx as f64;
                let sy = i as f64 - v.vy as f64;
                if in_domain(h, w, sx, sy) {
                    valid[i * w + j] = true;
                    sources[i * w + j] = (sx.clamp(0.0, w as f64 - 1.0), sy.clamp(0.0, h as f64 - 1.0));
                }
            }
        }
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = reference.plane(ch);
        for (k, &(sx, sy)) in sources.iter().enumerate() {
            data.push(if valid[k] { bilinear(plane, h, w, sx, sy) } else { 0.0 });
        }
    }
    Ok(LatentPrediction {
        predicted: Tensor::from_vec(c, h, w, data)?,
        valid: Mask::from_vec(h, w, valid)?,
        scale,
    })
}

/// Which latent cells count as unpredictable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exclusion {
    /// Only cells [`predict_tensor`] itself marks invalid.
    Source,
    /// Also cells whose receptive field in the transformed image contains a
    /// pixel that entered the frame.
    Entering,
    /// As `Entering`, and also cells whose receptive field reaches into zero
    /// padding. Only these cells are exactly predictable under integer shifts.
    #[default]
    Interior,
}

/// Cells of the output of the first `layer` layers whose receptive field
/// contains no invalid input pixel (and, if `allow_padding` is false, lies
/// fully inside the image).
pub fn receptive_field_mask(
    net: &NetworkSpec,
    layer: usize,
    input_valid: &Mask,
    latent_h: usize,
    latent_w: usize,
    allow_padding: bool,
) -> Mask {
    let (h, w) = (input_valid.height(), input_valid.width());
    // prefix sums of invalid pixels
    let mut integral = vec![0usize; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + x + 1] = usize::from(!input_valid.get(y, x))
                + integral[y * (w + 1) + x + 1]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x];
        }
    }
    let [rfy, rfx] = net.receptive_field(layer);
    let clip = |lo: isize, hi: isize, n: usize| -> Option<(usize, usize)> {
        if !allow_padding && (lo < 0 || hi >= n as isize) {
            return None;
        }
        let lo = lo.max(0) as usize;
        let hi = hi.min(n as isize - 1);
        (hi >= lo as isize).then_some((lo, hi as usize + 1))
    };
    let mut data = Vec::with_capacity(latent_h * latent_w);
    for i in 0..latent_h {
        let (ylo, yhi) = rfy.span(i);
        let rows = clip(ylo, yhi, h);
        for j in 0..latent_w {
            let (xlo, xhi) = rfx.span(j);
            let ok = match (rows, clip(xlo, xhi, w)) {
                (Some((y0, y1)), Some((x0, x1))) => {
                    let bad = integral[y1 * (w + 1) + x1] + integral[y0 * (w + 1) + x0]
                        - integral[y0 * (w + 1) + x1]
                        - integral[y1 * (w + 1) + x0];
                    bad == 0
                }
                _ => false,
            };
            data.push(ok);
        }
    }
    Mask::from_vec(latent_h, latent_w, data).expect("sizes match by construction")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PredictOptions {
    /// Number of layers to run; `None` taps the final layer.
    pub layer: Option<usize>,
    pub exclusion: Exclusion,
}

/// Replicates a grayscale image or averages a colour one to get `channels` planes.
pub fn adapt_channels(img: &Tensor, channels: usize) -> Result<Tensor> {
    match (img.channels(), channels) {
        (a, b) if a == b => Ok(img.clone()),
        (1, n) => Tensor::stack(&vec![img.clone(); n]),
        (_, 1) => Ok(img.mean_channel()),
        (a, b) => Err(Error::Binding(format!(
            "cannot adapt a {a}-channel image to a {b}-channel network"
        ))),
    }
}

/// Output of [`end_to_end_predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct EndToEnd {
    pub prediction: LatentPrediction,
    pub actual: Tensor,
    pub reference: Tensor,
    pub input_motion: MotionField,
}

/// Warps `image` by `params`, runs the network on both images and predicts
/// the transformed tensor from the reference tensor and the known motion.
pub fn end_to_end_predict(
    net: &NetworkSpec,
    weights: &WeightStore,
    image: &Tensor,
    params: &AffineParams,
) -> Result<(LatentPrediction, Tensor)> {
    let out = end_to_end_predict_with(net, weights, image, params, &PredictOptions::default())?;
    Ok((out.prediction, out.actual))
}

pub fn end_to_end_predict_with(
    net: &NetworkSpec,
    weights: &WeightStore,
    image: &Tensor,
    params: &AffineParams,
    opts: &PredictOptions,
) -> Result<EndToEnd> {
    let layer = opts.layer.unwrap_or(net.len());
    if layer > net.len() {
        return Err(Error::Config(format!(
            "layer {layer} out of range for a {}-layer network",
            net.len()
        )));
    }
    let image = adapt_channels(image, net.input_channels())?;
    let (warped, motion) = warp_affine(&image, params)?;
    let reference = forward(net, weights, &image)?.swap_remove(layer);
    let actual = forward(net, weights, &warped)?.swap_remove(layer);
    let scale = net.scale_after(layer);
    let mut prediction = predict_tensor(&reference, &motion, scale)?;
    let allow_padding = match opts.exclusion {
        Exclusion::Source => None,
        Exclusion::Entering => Some(true),
        Exclusion::Interior => Some(false),
    };
    if let Some(allow_padding) = allow_padding {
        let rf = receptive_field_mask(
            net,
            layer,
            &motion.mask(),
            reference.height(),
            reference.width(),
            allow_padding,
        );
        prediction.valid = prediction.valid.and(&rf)?;
    }
    Ok(EndToEnd {
        prediction,
        actual,
        reference,
        input_motion: motion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn field(h: usize, w: usize, v: MotionVector) -> MotionField {
        MotionField::constant(h, w, v).unwrap()
    }

    #[test]
    fn scale_examples() {
        let l = scale_motion(&field(64, 64, MotionVector::new(8.0, 0.0)), 8).unwrap();
        assert_eq!((l.height(), l.width()), (8, 8));
        assert!(l.iter_valid().all(|(_, _, v)| v == MotionVector::new(1.0, 0.0)));
        assert_eq!(l.count_valid(), 64);

        let f = field(6, 4, MotionVector::new(-4.0, 6.0));
        let l = scale_motion(&f, 2).unwrap();
        assert!(l.iter_valid().all(|(_, _, v)| v == MotionVector::new(-2.0, 3.0)));
    }

    #[test]
    fn scale_one_is_identity() {
        let mut g = SplitMix64::new(1);
        let vectors = (0..20)
            .map(|_| MotionVector::new(g.next_symmetric() as f32, g.next_symmetric() as f32))
            .collect();
        let valid = (0..20).map(|i| i % 3 != 0).collect();
        let f = MotionField::new(4, 5, vectors, valid).unwrap();
        let s = scale_motion(&f, 1).unwrap();
        assert_eq!(s.mask(), f.mask());
        for (y, x, v) in f.iter_valid() {
            assert_eq!(s.get(y, x), Some(v));
        }
    }

    #[test]
    fn scale_inherits_invalidity() {
        let valid: Vec<bool> = (0..16).map(|i| i % 4 >= 2).collect();
        let f = MotionField::new(4, 4, vec![MotionVector::new(2.0, 2.0); 16], valid).unwrap();
        let l = scale_motion(&f, 2).unwrap();
        assert_eq!(l.mask().data(), &[false, true, false, true]);
        assert!(scale_motion(&f, 0).is_err());
        assert!(scale_motion(&f, 5).is_err());
    }

    #[test]
    fn scale_is_linear() {
        let mut g = SplitMix64::new(2);
        let vectors: Vec<MotionVector> = (0..64)
            .map(|_| MotionVector::new(g.next_symmetric() as f32 * 5.0, g.next_symmetric() as f32 * 5.0))
            .collect();
        let f = MotionField::new(8, 8, vectors, vec![true; 64]).unwrap();
        for alpha in [0.25f32, 2.0, -4.0, 0.3, 1.7] {
            let a = scale_motion(&f.scaled(alpha), 2).unwrap();
            let b = scale_motion(&f, 2).unwrap().scaled(alpha);
            for (y, x, v) in b.iter_valid() {
                let u = a.get(y, x).unwrap();
                let tol = if alpha.log2().fract() == 0.0 { 0.0 } else { 1e-5 };
                assert!((u.vx - v.vx).abs() <= tol && (u.vy - v.vy).abs() <= tol);
            }
        }
    }

    #[test]
    fn zero_motion_is_identity() {
        let mut g = SplitMix64::new(3);
        let r = Tensor::from_fn(4, 8, 8, |_, _, _| g.next_symmetric() as f32).unwrap();
        let p = predict_tensor(&r, &field(64, 64, MotionVector::ZERO), 8).unwrap();
        assert_eq!(p.predicted, r);
        assert_eq!(p.valid.count_valid(), 64);
        assert_eq!(p.scale, 8);
    }

    #[test]
    fn integer_latent_shift() {
        let mut g = SplitMix64::new(4);
        let r = Tensor::from_fn(2, 8, 8, |_, _, _| g.next_symmetric() as f32).unwrap();
        let p = predict_tensor(&r, &field(64, 64, MotionVector::new(8.0, 0.0)), 8).unwrap();
        for c in 0..2 {
            for y in 0..8 {
                assert!(!p.valid.get(y, 0));
                for x in 1..8 {
                    assert!(p.valid.get(y, x));
                    assert_eq!(p.predicted.get(c, y, x), r.get(c, y, x - 1));
                }
            }
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let r = Tensor::new(1, 7, 8, 0.0).unwrap();
        assert!(matches!(
            predict_tensor(&r, &field(64, 64, MotionVector::ZERO), 8),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn receptive_field_mask_toy() {
        let net = NetworkSpec::toy();
        let all = Mask::filled(64, 64, true);
        let m = receptive_field_mask(&net, net.len(), &all, 8, 8, true);
        assert_eq!(m.count_valid(), 64);
        // receptive field of cell o is 8o-7 ..= 8o+10: only cells 1..=6 avoid padding
        let m = receptive_field_mask(&net, net.len(), &all, 8, 8, false);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(y, x), (1..=6).contains(&y) && (1..=6).contains(&x));
            }
        }
        // invalidate column 20: cells whose span covers it (x = 2 and 3) drop out
        let data = (0..64 * 64).map(|i| i % 64 != 20).collect();
        let m = receptive_field_mask(&net, net.len(), &Mask::from_vec(64, 64, data).unwrap(), 8, 8, true);
        for x in 0..8 {
            assert_eq!(m.get(0, x), !(x == 2 || x == 3), "{x}");
        }
    }

    #[test]
    fn channel_adaptation() {
        let g = Tensor::new(1, 2, 2, 5.0).unwrap();
        assert_eq!(adapt_channels(&g, 3).unwrap().shape(), (3, 2, 2));
        let c = Tensor::from_fn(3, 1, 1, |c, _, _| c as f32).unwrap();
        assert_eq!(adapt_channels(&c, 1).unwrap().data(), &[1.0]);
        assert!(adapt_channels(&c, 2).is_err());
    }
}
