//! Masked NRMSE and the PSNR to NRMSE conversion.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub nrmse: f64,
    pub rmse: f64,
    /// `max - min` of the actual tensor over valid elements.
    pub range: f64,
    pub n_valid: usize,
    pub n_excluded: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 5] = ["nrmse", "rmse", "range", "n_valid", "n_excluded"];

    pub fn csv_fields(&self) -> [String; 5] {
        [
            self.nrmse.to_string(),
            self.rmse.to_string(),
            self.range.to_string(),
            self.n_valid.to_string(),
            self.n_excluded.to_string(),
        ]
    }

    /// Header plus one row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(Self::CSV_HEADER)?;
        wtr.write_record(self.csv_fields())?;
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// RMSE over the elements whose spatial position is valid in `mask` (all
/// channels), divided by the range of `actual` over those same elements.
pub fn nrmse(predicted: &Tensor, actual: &Tensor, mask: &Mask) -> Result<MetricsReport> {
    if predicted.shape() != actual.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predicted {:?} vs actual {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    let (c, h, w) = actual.shape();
    if mask.height() != h || mask.width() != w {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs tensor {h}x{w}",
            mask.height(),
            mask.width()
        )));
    }
    let n = h * w;
    let mut sum_sq = 0.0f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n_valid = 0usize;
    for ch in 0..c {
        let p = &predicted.plane(ch);
        let a = &actual.plane(ch);
        for (i, &ok) in mask.data().iter().enumerate() {
            if !ok {
                continue;
            }
            let av = a[i] as f64;
            let d = p[i] as f64 - av;
            sum_sq += d * d;
            lo = lo.min(av);
            hi = hi.max(av);
            n_valid += 1;
        }
    }
    if n_valid == 0 {
        return Err(Error::EmptyMask);
    }
    let rmse = (sum_sq / n_valid as f64).sqrt();
    let range = hi - lo;
    let nrmse = if range > 0.0 {
        rmse / range
    } else if rmse == 0.0 {
        0.0
    } else {
        return Err(Error::DegenerateRange { rmse });
    };
    Ok(MetricsReport {
        nrmse,
        rmse,
        range,
        n_valid,
        n_excluded: c * n - n_valid,
    })
}

/// NRMSE of an 8-bit frame with the given PSNR, normalised by 256 levels.
pub fn psnr_to_nrmse(psnr_db: f64) -> f64 {
    (255.0f64.powi(2) / 10f64.powf(psnr_db / 10.0)).sqrt() / 256.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f32]) -> Tensor {
        Tensor::from_vec(1, 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let a = row(&[1.0, 5.0, -2.0]);
        let r = nrmse(&a, &a, &Mask::filled(1, 3, true)).unwrap();
        assert_eq!(r.nrmse, 0.0);
        assert_eq!((r.n_valid, r.n_excluded), (3, 0));
    }

    #[test]
    fn hand_computed_half() {
        // errors are all +-1 so RMSE 1; range 2
        let r = nrmse(&row(&[1.0; 4]), &row(&[0.0, 2.0, 0.0, 2.0]), &Mask::filled(1, 4, true)).unwrap();
        assert_eq!(r.rmse, 1.0);
        assert_eq!(r.range, 2.0);
        assert_eq!(r.nrmse, 0.5);
    }

    #[test]
    fn constant_actual_rules() {
        let a = row(&[3.0; 4]);
        let m = Mask::filled(1, 4, true);
        assert_eq!(nrmse(&a, &a, &m).unwrap().nrmse, 0.0);
        assert!(matches!(nrmse(&row(&[3.0, 3.0, 3.0, 4.0]), &a, &m), Err(Error::DegenerateRange { .. })));
    }

    #[test]
    fn mask_excludes_and_counts() {
        let p = Tensor::from_vec(2, 1, 3, vec![0.0, 0.0, 100.0, 0.0, 0.0, -100.0]).unwrap();
        let a = Tensor::from_vec(2, 1, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let m = Mask::from_vec(1, 3, vec![true, true, false]).unwrap();
        let r = nrmse(&p, &a, &m).unwrap();
        assert_eq!((r.n_valid, r.n_excluded), (4, 2));
        assert_eq!(r.range, 1.0);
        assert_eq!(r.rmse, (2.0f64 / 4.0).sqrt());
        assert!(matches!(nrmse(&p, &a, &Mask::filled(1, 3, false)), Err(Error::EmptyMask)));
        assert!(nrmse(&p, &a, &Mask::filled(1, 2, true)).is_err());
        assert!(nrmse(&p, &row(&[0.0; 3]), &m).is_err());
    }

    #[test]
    fn psnr_conversion_endpoints() {
        let hi = psnr_to_nrmse(27.0);
        let lo = psnr_to_nrmse(41.0);
        assert!((hi - 0.0445).abs() < 5e-5, "{hi}");
        assert!((lo - 0.0089).abs() < 5e-5, "{lo}");
        assert!(psnr_to_nrmse(30.0) > psnr_to_nrmse(40.0));
        assert!((hi / lo - 10f64.powf(14.0 / 20.0)).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use crate::rng::SplitMix64;
        use proptest::prelude::*;

        fn brute_force(p: &[f32], a: &[f32], keep: &[bool]) -> f64 {
            let mut n = 0.0;
            let mut s = 0.0;
            let mut vals = Vec::new();
            for i in 0..p.len() {
                if keep[i] {
                    n += 1.0;
                    s += (p[i] as f64 - a[i] as f64).powi(2);
                    vals.push(a[i] as f64);
                }
            }
            let r = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
            (s / n).sqrt() / r
        }

        proptest! {
            #[test]
            fn matches_one_pass_formula(seed in any::<u64>(), len in 2usize..40) {
                let mut g = SplitMix64::new(seed);
                let p: Vec<f32> = (0..len).map(|_| g.next_symmetric() as f32).collect();
                let a: Vec<f32> = (0..len).map(|_| g.next_symmetric() as f32).collect();
                let mut keep: Vec<bool> = (0..len).map(|_| g.next_unit() < 0.7).collect();
                keep[0] = true;
                keep[1] = true;
                let r = nrmse(&row(&p), &row(&a), &Mask::from_vec(1, len, keep.clone()).unwrap()).unwrap();
                prop_assert!((r.nrmse - brute_force(&p, &a, &keep)).abs() < 1e-7);
            }

            #[test]
            fn permutation_invariant(seed in any::<u64>(), len in 2usize..30) {
                let mut g = SplitMix64::new(seed);
                let p: Vec<f32> = (0..len).map(|_| g.next_symmetric() as f32).collect();
                let a: Vec<f32> = (0..len).map(|_| g.next_symmetric() as f32).collect();
                let keep: Vec<bool> = (0..len).map(|i| i < 2 || g.next_unit() < 0.6).collect();
                let mut order: Vec<usize> = (0..len).collect();
                for i in (1..len).rev() {
                    let j = (g.next_u64() % (i as u64 + 1)) as usize;
                    order.swap(i, j);
                }
                let pp: Vec<f32> = order.iter().map(|&i| p[i]).collect();
                let aa: Vec<f32> = order.iter().map(|&i| a[i]).collect();
                let kk: Vec<bool> = order.iter().map(|&i| keep[i]).collect();
                let r1 = nrmse(&row(&p), &row(&a), &Mask::from_vec(1, len, keep).unwrap()).unwrap();
                let r2 = nrmse(&row(&pp), &row(&aa), &Mask::from_vec(1, len, kk).unwrap()).unwrap();
                prop_assert!((r1.nrmse - r2.nrmse).abs() < 1e-12);
                prop_assert_eq!(r1.n_valid, r2.n_valid);
            }
        }
    }
}
