//! Dense channel-major tensors, validity masks and motion fields.
//!
//! Every container here is immutable once built. Layout is channel-major,
//! then row-major: element `(c, y, x)` lives at `(c * height + y) * width + x`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LFT_MAGIC: &[u8; 4] = b"LFT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "{channels}x{height}x{width} has a zero dimension"
        )));
    }
    Ok(())
}

impl Tensor {
    /// A tensor with every element set to `fill`.
    pub fn new(channels: usize, height: usize, width: usize, fill: f32) -> Result<Self> {
        check_dims(channels, height, width)?;
        if !fill.is_finite() {
            return Err(Error::Format(format!("non-finite fill value {fill}")));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data: vec![fill; channels * height * width],
        })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at element {i}")));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor whose element `(c, y, x)` is `f(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_vec(channels, height, width, data)
    }

    /// Stacks single-channel planes into one tensor.
    pub fn stack(planes: &[Tensor]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack zero planes".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.height != h || p.width != w {
                return Err(Error::ShapeMismatch(format!(
                    "plane {}x{} does not match {h}x{w}",
                    p.height, p.width
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let channels = data.len() / (h * w);
        Self::from_vec(channels, h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    /// The `height * width` values of channel `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies channel `c` out as a one-channel tensor.
    pub fn slice_channel(&self, c: usize) -> Result<Tensor> {
        if c >= self.channels {
            return Err(Error::ChannelOutOfRange {
                index: c,
                channels: self.channels,
            });
        }
        Ok(Tensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        })
    }

    /// Applies `f` to every element.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::from_vec(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Channel mean, used to turn colour images into a single luminance-like plane.
    pub fn mean_channel(&self) -> Tensor {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let mut data = vec![0.0f32; n];
        for (i, out) in data.iter_mut().enumerate() {
            let sum: f64 = (0..self.channels)
                .map(|c| self.data[c * n + i] as f64)
                .sum();
            *out = (sum / self.channels as f64) as f32;
        }
        Tensor {
            channels: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn write_lft<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(LFT_MAGIC)?;
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_lft<R: Read>(mut r: R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != LFT_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let c = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        check_dims(c, h, w)?;
        let data = read_f32s(&mut r, c * h * w)?;
        Tensor::from_vec(c, h, w, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_lft(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor::read_lft(BufReader::new(file))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Per-position boolean validity on a `height x width` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask entries for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Element-wise AND of two masks of equal size.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MotionVector {
    pub vx: f32,
    pub vy: f32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { vx: 0.0, vy: 0.0 };

    pub fn new(vx: f32, vy: f32) -> Self {
        MotionVector { vx, vy }
    }
}

/// Dense displacement field. A vector describes where content moved *to*:
/// the pixel at `p` in the later frame came from `p - v` in the earlier one.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    height: usize,
    width: usize,
    vectors: Vec<MotionVector>,
    valid: Vec<bool>,
}

impl MotionField {
    pub fn new(
        height: usize,
        width: usize,
        vectors: Vec<MotionVector>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "motion field {height}x{width} has a zero dimension"
            )));
        }
        if vectors.len() != height * width || valid.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} vectors / {} flags for a {height}x{width} field",
                vectors.len(),
                valid.len()
            )));
        }
        Ok(MotionField {
            height,
            width,
            vectors,
            valid,
        })
    }

    pub fn constant(height: usize, width: usize, v: MotionVector) -> Result<Self> {
        Self::new(
            height,
            width,
            vec![v; height * width],
            vec![true; height * width],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// The vector at `(y, x)`, or `None` where the field is invalid.
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Option<MotionVector> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.vectors[i])
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Raw vectors, including the meaningless ones at invalid positions.
    pub fn raw_vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    pub fn mask(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.valid.clone(),
        }
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Iterates `(y, x, vector)` over valid positions only.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, MotionVector)> + '_ {
        (0..self.height * self.width)
            .filter(|&i| self.valid[i])
            .map(|i| (i / self.width, i % self.width, self.vectors[i]))
    }

    /// Multiplies every valid vector by `alpha`.
    pub fn scaled(&self, alpha: f32) -> MotionField {
        let vectors = self
            .vectors
            .iter()
            .zip(&self.valid)
            .map(|(v, &ok)| {
                if ok {
                    MotionVector::new(v.vx * alpha, v.vy * alpha)
                } else {
                    MotionVector::ZERO
                }
            })
            .collect();
        MotionField {
            height: self.height,
            width: self.width,
            vectors,
            valid: self.valid.clone(),
        }
    }

    /// Component-wise median of the valid vectors (lower median for even counts).
    pub fn median(&self) -> Option<MotionVector> {
        median_vector(self.iter_valid().map(|(_, _, v)| v))
    }

    /// Writes `x,y,vx,vy,valid` rows. Invalid positions carry zero vectors.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "vx", "vy", "valid"])?;
        self.write_rows(&mut wtr, None)?;
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(
        &self,
        wtr: &mut csv::Writer<W>,
        prefix: Option<usize>,
    ) -> Result<()> {
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(y, x).unwrap_or_default();
                let mut row = Vec::with_capacity(6);
                if let Some(p) = prefix {
                    row.push(p.to_string());
                }
                row.extend([
                    x.to_string(),
                    y.to_string(),
                    v.vx.to_string(),
                    v.vy.to_string(),
                    u8::from(self.is_valid(y, x)).to_string(),
                ]);
                wtr.write_record(&row)?;
            }
        }
        Ok(())
    }
}

/// Component-wise lower median of a set of vectors.
pub fn median_vector(vectors: impl IntoIterator<Item = MotionVector>) -> Option<MotionVector> {
    let (mut xs, mut ys): (Vec<f32>, Vec<f32>) =
        vectors.into_iter().map(|v| (v.vx, v.vy)).unzip();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f32::total_cmp);
    ys.sort_by(f32::total_cmp);
    let mid = (xs.len() - 1) / 2;
    Some(MotionVector::new(xs[mid], ys[mid]))
}

/// Spatial extent of a tensor grid and its downscale relative to the input image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub scale: u32,
}

impl Grid {
    pub fn new(height: usize, width: usize, scale: u32) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Dimension("grid scale must be at least 1".into()));
        }
        Ok(Grid {
            height,
            width,
            scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills() {
        let t = Tensor::new(1, 2, 2, 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::new(3, 224, 224, 1.0).unwrap();
        assert_eq!(t.len(), 150528);
        assert!(t.data().iter().all(|&v| v == 1.0));
        let t = Tensor::new(2, 1, 1, -1.5).unwrap();
        assert_eq!(t.data(), &[-1.5, -1.5]);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Tensor::new(0, 2, 2, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(Tensor::new(1, 0, 2, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(Tensor::new(1, 2, 0, 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Tensor::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(Tensor::from_vec(1, 1, 2, vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn slice_channel_identity_and_idempotence() {
        let t = Tensor::from_fn(1, 3, 4, |_, y, x| (y * 4 + x) as f32).unwrap();
        assert_eq!(t.slice_channel(0).unwrap(), t);

        let t = Tensor::from_fn(3, 3, 4, |c, y, x| (c * 100 + y * 4 + x) as f32).unwrap();
        let once = t.slice_channel(2).unwrap();
        assert_eq!(once.slice_channel(0).unwrap(), once);
    }

    #[test]
    fn slice_recovers_stacked_planes() {
        let planes: Vec<Tensor> = (0..4)
            .map(|c| Tensor::from_fn(1, 5, 3, |_, y, x| (c as f32) * 0.5 - (y * 3 + x) as f32).unwrap())
            .collect();
        let stacked = Tensor::stack(&planes).unwrap();
        assert_eq!(stacked.shape(), (4, 5, 3));
        for (c, p) in planes.iter().enumerate() {
            assert_eq!(&stacked.slice_channel(c).unwrap(), p);
        }
    }

    #[test]
    fn slice_out_of_range() {
        let t = Tensor::new(2, 2, 2, 0.0).unwrap();
        assert!(matches!(
            t.slice_channel(2),
            Err(Error::ChannelOutOfRange { index: 2, channels: 2 })
        ));
    }

    #[test]
    fn lft_layout_is_little_endian() {
        let t = Tensor::from_vec(1, 1, 2, vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_lft(&mut buf).unwrap();
        let mut expected = b"LFT1".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn lft_rejects_bad_magic_and_truncation() {
        assert!(Tensor::read_lft(&b"LFT2\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(Tensor::read_lft(&b"LFT1\x01\0\0\0\x01\0\0\0\x02\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn invalid_vectors_are_hidden() {
        let f = MotionField::new(
            1,
            2,
            vec![MotionVector::new(1.0, 2.0), MotionVector::new(99.0, 99.0)],
            vec![true, false],
        )
        .unwrap();
        assert_eq!(f.get(0, 0), Some(MotionVector::new(1.0, 2.0)));
        assert_eq!(f.get(0, 1), None);
        assert_eq!(f.median(), Some(MotionVector::new(1.0, 2.0)));
        assert_eq!(f.scaled(2.0).get(0, 1), None);
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "x,y,vx,vy,valid\n0,0,1,2,1\n1,0,0,0,0\n"
        );
    }

    #[test]
    fn field_shape_checked() {
        assert!(MotionField::new(2, 2, vec![MotionVector::ZERO; 4], vec![true; 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lft_round_trip_is_bit_exact(
                (c, h, w, data) in (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
                    (Just(c), Just(h), Just(w), proptest::collection::vec(-1e6f32..1e6, c * h * w))
                })
            ) {
                let t = Tensor::from_vec(c, h, w, data).unwrap();
                let mut buf = Vec::new();
                t.write_lft(&mut buf).unwrap();
                let back = Tensor::read_lft(&buf[..]).unwrap();
                prop_assert_eq!(back.shape(), t.shape());
                for (a, b) in back.data().iter().zip(t.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
