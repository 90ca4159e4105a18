//! Exhaustive integer block matching by mean squared difference.
//!
//! For every target pixel `p` and candidate motion `v` in `[-r, r]^2`, the
//! `b x b` block around `p` in the target is compared with the block around
//! `p - v` in the reference. Only sample pairs where both sides are inside
//! the image count, and the SSD is divided by that count. The cheapest
//! candidate wins; ties go to the smallest `|v|^2`, then smallest `vy`,
//! then smallest `vx`.
//!
//! Returned vectors follow [`MotionField`]'s convention: `target(p) ~ reference(p - v)`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::{MotionField, MotionVector, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatchConfig {
    /// Odd block side in pixels.
    pub block: usize,
    /// Search range per axis in pixels.
    pub range: usize,
}

impl BlockMatchConfig {
    pub fn new(block: usize, range: usize) -> Result<Self> {
        if block == 0 || block.is_multiple_of(2) {
            return Err(Error::Config(format!("block size must be odd, got {block}")));
        }
        Ok(BlockMatchConfig { block, range })
    }

    /// 31x31 blocks, +-11 search: the configuration for input frames.
    pub fn input() -> Self {
        BlockMatchConfig {
            block: 31,
            range: 11,
        }
    }

    /// 3x3 blocks, +-5 search: the configuration for feature-tensor channels.
    pub fn latent() -> Self {
        BlockMatchConfig { block: 3, range: 5 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "input" => Ok(Self::input()),
            "latent" => Ok(Self::latent()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected `input` or `latent`)"
            ))),
        }
    }
}

/// A scored candidate; `Ord` encodes cost first, then the tie-break.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    dy: i32,
    dx: i32,
}

impl Candidate {
    fn rank(&self, other: &Candidate) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| (self.dy * self.dy + self.dx * self.dx).cmp(&(other.dy * other.dy + other.dx * other.dx)))
            .then_with(|| self.dy.cmp(&other.dy))
            .then_with(|| self.dx.cmp(&other.dx))
    }
}

/// Inclusive range of block offsets `u` where both `p + u` and `p + u - d`
/// fall inside `[0, n)`.
#[inline]
fn overlap(p: usize, d: i32, half: i32, n: usize) -> (i32, i32) {
    let p = p as i32;
    let n = n as i32;
    let lo = (-half).max(-p).max(d - p);
    let hi = half.min(n - 1 - p).min(n - 1 - p + d);
    (lo, hi)
}

fn check_inputs(reference: &Tensor, target: &Tensor, cfg: &BlockMatchConfig) -> Result<()> {
    if reference.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reference {:?} vs target {:?}",
            reference.shape(),
            target.shape()
        )));
    }
    if cfg.block == 0 || cfg.block.is_multiple_of(2) {
        return Err(Error::Config(format!("block size must be odd, got {}", cfg.block)));
    }
    if cfg.block > target.height() || cfg.block > target.width() {
        return Err(Error::Dimension(format!(
            "{0}x{0} block larger than {1}x{2} image",
            cfg.block,
            target.height(),
            target.width()
        )));
    }
    Ok(())
}

/// Dense motion from `reference` to `target`, both single-channel.
pub fn estimate_motion(reference: &Tensor, target: &Tensor, cfg: &BlockMatchConfig) -> Result<MotionField> {
    check_inputs(reference, target, cfg)?;
    if target.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "block matching needs single-channel input, got {} channels",
            target.channels()
        )));
    }
    Ok(match_plane(reference.plane(0), target.plane(0), target.height(), target.width(), cfg))
}

fn match_plane(rf: &[f32], tg: &[f32], h: usize, w: usize, cfg: &BlockMatchConfig) -> MotionField {
    let half = (cfg.block / 2) as i32;
    let r = cfg.range as i32;
    let mut vectors = Vec::with_capacity(h * w);
    let mut valid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<Candidate> = None;
            for dy in -r..=r {
                let (uy0, uy1) = overlap(y, dy, half, h);
                if uy0 > uy1 {
                    continue;
                }
                for dx in -r..=r {
                    let (ux0, ux1) = overlap(x, dx, half, w);
                    if ux0 > ux1 {
                        continue;
                    }
                    let mut ssd = 0.0f64;
                    for uy in uy0..=uy1 {
                        let ty = (y as i32 + uy) as usize;
                        let ry = (y as i32 + uy - dy) as usize;
                        let trow = &tg[ty * w..(ty + 1) * w];
                        let rrow = &rf[ry * w..(ry + 1) * w];
                        for ux in ux0..=ux1 {
                            let tx = (x as i32 + ux) as usize;
                            let rx = (x as i32 + ux - dx) as usize;
                            let d = trow[tx] as f64 - rrow[rx] as f64;
                            ssd += d * d;
                        }
                    }
                    let count = ((uy1 - uy0 + 1) * (ux1 - ux0 + 1)) as f64;
                    let cand = Candidate {
                        cost: ssd / count,
                        dy,
                        dx,
                    };
                    if best.is_none_or(|b| cand.rank(&b) == Ordering::Less) {
                        best = Some(cand);
                    }
                }
            }
            match best {
                Some(b) => {
                    vectors.push(MotionVector::new(b.dx as f32, b.dy as f32));
                    valid.push(true);
                }
                None => {
                    vectors.push(MotionVector::ZERO);
                    valid.push(false);
                }
            }
        }
    }
    MotionField::new(h, w, vectors, valid).expect("sizes match by construction")
}

/// Runs [`estimate_motion`] independently on every channel.
pub fn estimate_motion_multichannel(
    reference: &Tensor,
    target: &Tensor,
    cfg: &BlockMatchConfig,
) -> Result<Vec<MotionField>> {
    check_inputs(reference, target, cfg)?;
    let (h, w) = (target.height(), target.width());
    Ok((0..target.channels())
        .map(|c| match_plane(reference.plane(c), target.plane(c), h, w, cfg))
        .collect())
}
