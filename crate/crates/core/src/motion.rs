//! Ground-truth motion: affine image warps with the dense field they induce,
//! and 1-D translating signals.

use crate::error::{Error, Result};
use crate::flow_verify::Signal1Dt;
use crate::tensor::{MotionField, MotionVector, Tensor};

/// Seven-parameter affine motion. Angles in degrees, translations in pixels.
///
/// Applied about a center `c` as `dst = R * Sh * S * (src - c) + c + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub tx: f64,
    pub ty: f64,
    pub sx: f64,
    pub sy: f64,
    pub shx: f64,
    pub shy: f64,
    pub rot: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        tx: 0.0,
        ty: 0.0,
        sx: 1.0,
        sy: 1.0,
        shx: 0.0,
        shy: 0.0,
        rot: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineParams {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    pub fn rotation(deg: f64) -> Self {
        AffineParams {
            rot: deg,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.tx, self.ty, self.sx, self.sy, self.shx, self.shy, self.rot];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite affine parameter in {self:?}")));
        }
        if self.sx <= 0.0 || self.sy <= 0.0 {
            return Err(Error::Config(format!(
                "scales must be positive, got sx={} sy={}",
                self.sx, self.sy
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.tx, self.ty, self.sx, self.sy, self.shx, self.shy, self.rot]
    }
}

/// 2x3 matrix mapping source coordinates `(x, y)` to destination coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix(pub [[f64; 3]; 2]);

impl AffineMatrix {
    pub const IDENTITY: AffineMatrix = AffineMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    pub fn inverse(&self) -> Result<AffineMatrix> {
        let [[a, b, c], [d, e, f]] = self.0;
        let det = a * e - b * d;
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Ok(AffineMatrix([
            [ia, ib, -(ia * c + ib * f)],
            [id, ie, -(id * c + ie * f)],
        ]))
    }
}

/// Center of a `height x width` pixel grid in pixel-center coordinates.
pub fn image_center(height: usize, width: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Composes scale, then shear, then rotation about `center`, then translation.
pub fn affine_matrix(p: &AffineParams, center: (f64, f64)) -> AffineMatrix {
    let (shx, shy, rot) = (p.shx.to_radians(), p.shy.to_radians(), p.rot.to_radians());
    // shear * scale
    let (tx, ty) = (shx.tan(), shy.tan());
    let a = [[p.sx, tx * p.sy], [ty * p.sx, p.sy]];
    let (s, c) = rot.sin_cos();
    let lin = [
        [c * a[0][0] - s * a[1][0], c * a[0][1] - s * a[1][1]],
        [s * a[0][0] + c * a[1][0], s * a[0][1] + c * a[1][1]],
    ];
    let (cx, cy) = center;
    AffineMatrix([
        [lin[0][0], lin[0][1], cx + p.tx - (lin[0][0] * cx + lin[0][1] * cy)],
        [lin[1][0], lin[1][1], cy + p.ty - (lin[1][0] * cx + lin[1][1] * cy)],
    ])
}

/// Bilinear sample of one `height x width` plane at `(x, y)`, which must lie
/// inside `[0, width-1] x [0, height-1]`. Integer coordinates return the
/// stored sample exactly.
#[inline]
pub fn bilinear(plane: &[f32], height: usize, width: usize, x: f64, y: f64) -> f32 {
    let x0 = (x.floor().max(0.0) as usize).min(width - 1);
    let y0 = (y.floor().max(0.0) as usize).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let at = |yy: usize, xx: usize| plane[yy * width + xx] as f64;
    let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x1);
    let bottom = (1.0 - fx) * at(y1, x0) + fx * at(y1, x1);
    ((1.0 - fy) * top + fy * bottom) as f32
}

const EDGE_EPS: f64 = 1e-9;

/// Whether `(x, y)` lies on the sampling domain of a `height x width` grid.
#[inline]
pub fn in_domain(height: usize, width: usize, x: f64, y: f64) -> bool {
    x >= -EDGE_EPS
        && y >= -EDGE_EPS
        && x <= width as f64 - 1.0 + EDGE_EPS
        && y <= height as f64 - 1.0 + EDGE_EPS
}

/// Inverse-mapped bilinear warp. Each destination pixel samples the source at
/// `m^-1 (dst)`; where that falls outside the image the pixel is set to 0
/// and marked invalid. The returned field holds `dst - src` per pixel.
pub fn warp_image(img: &Tensor, m: &AffineMatrix) -> Result<(Tensor, MotionField)> {
    let inv = m.inverse()?;
    let (c, h, w) = img.shape();
    let mut vectors = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    let mut sources = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let ok = in_domain(h, w, sx, sy);
            vectors.push(MotionVector::new((x as f64 - sx) as f32, (y as f64 - sy) as f32));
            valid.push(ok);
            sources.push((
                sx.clamp(0.0, w as f64 - 1.0),
                sy.clamp(0.0, h as f64 - 1.0),
            ));
        }
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for (i, &(sx, sy)) in sources.iter().enumerate() {
            data.push(if valid[i] { bilinear(plane, h, w, sx, sy) } else { 0.0 });
        }
    }
    Ok((
        Tensor::from_vec(c, h, w, data)?,
        MotionField::new(h, w, vectors, valid)?,
    ))
}

/// Warps `img` with `p` applied about the image center.
pub fn warp_affine(img: &Tensor, p: &AffineParams) -> Result<(Tensor, MotionField)> {
    p.validate()?;
    let m = affine_matrix(p, image_center(img.height(), img.width()));
    warp_image(img, &m)
}

/// Smooth periodic profile: `offset + sum a_k * sin(2 pi k x / period + phi_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub offset: f64,
    /// `(amplitude, harmonic, phase)` triples.
    pub terms: Vec<(f64, u32, f64)>,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            offset: 0.0,
            terms: vec![(1.0, 1, 0.0), (0.5, 2, 0.7), (0.25, 3, 1.9)],
        }
    }
}

impl Profile {
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn eval(&self, x: f64, period: f64) -> f64 {
        let w = std::f64::consts::TAU / period;
        self.offset
            + self
                .terms
                .iter()
                .map(|&(a, k, phi)| a * (w * k as f64 * x + phi).sin())
                .sum::<f64>()
    }
}

/// `I(x, t) = profile(x - v t)` sampled at integer `x` and `t`, periodic in `x`
/// with period `length`.
pub fn translating_signal_1d(
    length: usize,
    frames: usize,
    velocity: f64,
    profile: &Profile,
) -> Result<Signal1Dt> {
    let period = length as f64;
    Signal1Dt::from_fn(length, frames, |x, t| {
        profile.eval(x as f64 - velocity * t as f64, period)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::smooth_texture;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn identity_params_identity_matrix() {
        let m = affine_matrix(&AffineParams::IDENTITY, (31.5, 31.5));
        assert_eq!(m, AffineMatrix::IDENTITY);
    }

    #[test]
    fn translation_column() {
        let m = affine_matrix(&AffineParams::translation(32.0, 0.0), (31.5, 31.5));
        assert_eq!(m.0, [[1.0, 0.0, 32.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn rotation_block_about_center() {
        let c = (20.0, 10.0);
        let m = affine_matrix(&AffineParams::rotation(10.0), c);
        let (s, co) = 10f64.to_radians().sin_cos();
        assert!(close(m.0[0][0], co) && close(m.0[0][1], -s));
        assert!(close(m.0[1][0], s) && close(m.0[1][1], co));
        let (x, y) = m.apply(c.0, c.1);
        assert!(close(x, c.0) && close(y, c.1));
    }

    #[test]
    fn composition_order() {
        // Scale first, then shear: a point on the y axis picks up x = tan(shx) * sy * y.
        let p = AffineParams {
            sx: 2.0,
            sy: 3.0,
            shx: 45.0,
            ..AffineParams::IDENTITY
        };
        let m = affine_matrix(&p, (0.0, 0.0));
        let (x, y) = m.apply(0.0, 1.0);
        assert!((x - 3.0).abs() < 1e-12 && close(y, 3.0));
        let (x, y) = m.apply(1.0, 0.0);
        assert!(close(x, 2.0) && close(y, 0.0));
    }

    #[test]
    fn singular_matrix_rejected() {
        let img = Tensor::new(1, 4, 4, 0.0).unwrap();
        let m = AffineMatrix([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]);
        assert!(matches!(warp_image(&img, &m), Err(Error::SingularMatrix)));
    }

    #[test]
    fn identity_warp() {
        let img = smooth_texture(3, 16, 20, 4).unwrap();
        let (out, field) = warp_image(&img, &AffineMatrix::IDENTITY).unwrap();
        assert_eq!(out, img);
        assert_eq!(field.count_valid(), 16 * 20);
        assert!(field.iter_valid().all(|(_, _, v)| v == MotionVector::ZERO));
    }

    #[test]
    fn integer_translation() {
        let img = smooth_texture(1, 12, 24, 5).unwrap();
        let (out, field) = warp_affine(&img, &AffineParams::translation(8.0, 0.0)).unwrap();
        for y in 0..12 {
            for x in 0..24 {
                assert_eq!(field.is_valid(y, x), x >= 8);
                if x >= 8 {
                    assert_eq!(out.get(0, y, x), img.get(0, y, x - 8));
                    assert_eq!(field.get(y, x), Some(MotionVector::new(8.0, 0.0)));
                }
            }
        }
    }

    #[test]
    fn rotation_matches_per_pixel_reference() {
        let img = smooth_texture(1, 24, 24, 6).unwrap().map(|v| v / 255.0).unwrap();
        let (out, field) = warp_affine(&img, &AffineParams::rotation(10.0)).unwrap();
        let (cx, cy) = (11.5, 11.5);
        let (s, c) = 10f64.to_radians().sin_cos();
        for y in 0..24 {
            for x in 0..24 {
                // inverse rotation is the transpose
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                let inside = (0.0..=23.0).contains(&sx) && (0.0..=23.0).contains(&sy);
                assert_eq!(field.is_valid(y, x), inside, "({x},{y})");
                if !inside {
                    continue;
                }
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(23), (y0 + 1).min(23));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let p = |yy, xx| img.get(0, yy, xx) as f64;
                let expected = p(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + p(y0, x1) * fx * (1.0 - fy)
                    + p(y1, x0) * (1.0 - fx) * fy
                    + p(y1, x1) * fx * fy;
                assert!((out.get(0, y, x) as f64 - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn params_and_matrix_agree() {
        let img = smooth_texture(1, 20, 20, 7).unwrap();
        let p = AffineParams {
            tx: 2.5,
            ty: -1.0,
            sx: 1.03,
            sy: 0.97,
            shx: 3.0,
            shy: -2.0,
            rot: 7.0,
        };
        let a = warp_affine(&img, &p).unwrap();
        let b = warp_image(&img, &affine_matrix(&p, image_center(20, 20))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warp_after_identity_equals_warp() {
        let img = smooth_texture(1, 20, 20, 8).unwrap();
        let p = AffineParams::rotation(-6.0);
        let (id, _) = warp_affine(&img, &AffineParams::IDENTITY).unwrap();
        let (a, fa) = warp_affine(&id, &p).unwrap();
        let (b, fb) = warp_affine(&img, &p).unwrap();
        assert_eq!(fa, fb);
        for (y, x, _) in fa.iter_valid() {
            assert_eq!(a.get(0, y, x), b.get(0, y, x));
        }
    }

    #[test]
    fn pure_translation_field_is_constant() {
        let img = Tensor::new(1, 10, 10, 1.0).unwrap();
        let (_, field) = warp_affine(&img, &AffineParams::translation(-2.25, 3.5)).unwrap();
        assert!(field.count_valid() > 0);
        assert!(field
            .iter_valid()
            .all(|(_, _, v)| v == MotionVector::new(-2.25, 3.5)));
    }

    #[test]
    fn bad_params_rejected() {
        let img = Tensor::new(1, 4, 4, 0.0).unwrap();
        let p = AffineParams { sx: 0.0, ..AffineParams::IDENTITY };
        assert!(warp_affine(&img, &p).is_err());
    }

    #[test]
    fn translating_signal_cases() {
        let prof = Profile::default();
        let still = translating_signal_1d(32, 4, 0.0, &prof).unwrap();
        for t in 1..4 {
            assert_eq!(still.frame(t), still.frame(0));
        }
        let unit = translating_signal_1d(32, 4, 1.0, &prof).unwrap();
        for t in 0..4 {
            for x in 0..32 {
                let expected = unit.get((x + 32 - t) % 32, 0);
                assert!((unit.get(x, t) - expected).abs() < 1e-12);
            }
        }
        let half = translating_signal_1d(32, 3, 0.5, &prof).unwrap();
        for x in 0..32 {
            assert!((half.get(x, 2) - half.get((x + 31) % 32, 0)).abs() < 1e-6);
        }
    }
}
