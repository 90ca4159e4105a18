//! Procedural test images: seeded multi-octave value noise in `[0, 255]`.

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Lattice spacing and weight of each noise octave.
const OCTAVES: [(usize, f64); 3] = [(16, 1.0), (8, 0.5), (4, 0.25)];

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise with smoothstep interpolation, rescaled so every channel spans
/// exactly `[0, 255]`.
pub fn smooth_texture(channels: usize, height: usize, width: usize, seed: u64) -> Result<Tensor> {
    let mut rng = SplitMix64::new(seed);
    let mut data = Vec::with_capacity(channels * height * width);
    for _ in 0..channels {
        let mut plane = vec![0.0f64; height * width];
        for &(cell, weight) in &OCTAVES {
            let gh = height / cell + 2;
            let gw = width / cell + 2;
            let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.next_symmetric()).collect();
            for y in 0..height {
                let (gy, fy) = (y / cell, smoothstep((y % cell) as f64 / cell as f64));
                for x in 0..width {
                    let (gx, fx) = (x / cell, smoothstep((x % cell) as f64 / cell as f64));
                    let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
                    let top = at(gy, gx) * (1.0 - fx) + at(gy, gx + 1) * fx;
                    let bottom = at(gy + 1, gx) * (1.0 - fx) + at(gy + 1, gx + 1) * fx;
                    plane[y * width + x] += weight * (top * (1.0 - fy) + bottom * fy);
                }
            }
        }
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        data.extend(plane.iter().map(|v| (255.0 * (v - lo) / span) as f32));
    }
    Tensor::from_vec(channels, height, width, data)
}
