//! Finite-difference checks that motion survives CNN operations in 1D+t.
//!
//! Derivatives are central differences: periodic in `x`, and in `t` only on
//! interior frames `1..T-1`. The residual of a signal `I` at velocity `v` is
//! `Dx(I) * v + Dt(I)`. Tolerances are relative to `max |Dt|` of the signal
//! being checked.

use std::fmt;

use crate::error::{Error, Result};
use crate::motion::{translating_signal_1d, Profile};
use crate::nn::Activation;
use crate::rng::SplitMix64;

/// Residual bound for a translating signal at its true velocity, relative to `max |Dt|`.
pub const TRUNCATION_REL_TOL: f64 = 0.01;
/// Absolute tolerance for the conv / derivative commutation.
pub const COMMUTATION_TOL: f64 = 1e-6;
/// Post-nonlinearity residual allowed, in multiples of the pre-nonlinearity bound.
pub const NONLIN_FACTOR: f64 = 10.0;
/// Post-max residual allowed, in multiples of the pre-max bound.
pub const LOCALMAX_FACTOR: f64 = 5.0;
/// First-order local-max approximation error allowed, relative to `h * max |Dx|`.
pub const TAYLOR_REL_TOL: f64 = 0.25;

/// Intensity `I(x, t)` on an `X x T` grid, periodic in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal1Dt {
    len: usize,
    frames: usize,
    data: Vec<f64>,
}

impl Signal1Dt {
    pub const MIN_LEN: usize = 8;
    pub const MIN_FRAMES: usize = 3;

    pub fn new(len: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if len < Self::MIN_LEN || frames < Self::MIN_FRAMES {
            return Err(Error::Dimension(format!(
                "signal grid {len}x{frames} is too small (need X >= {} and T >= {})",
                Self::MIN_LEN,
                Self::MIN_FRAMES
            )));
        }
        if data.len() != len * frames {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {len}x{frames} signal",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite signal value".into()));
        }
        Ok(Signal1Dt { len, frames, data })
    }

    pub fn from_fn(len: usize, frames: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(len * frames);
        for t in 0..frames {
            for x in 0..len {
                data.push(f(x, t));
            }
        }
        Self::new(len, frames, data)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn get(&self, x: usize, t: usize) -> f64 {
        self.data[t * self.len + x]
    }

    /// Periodic access.
    #[inline]
    pub fn at(&self, x: isize, t: usize) -> f64 {
        let n = self.len as isize;
        self.get(x.rem_euclid(n) as usize, t)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.len..(t + 1) * self.len]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Signal1Dt> {
        Signal1Dt::new(self.len, self.frames, self.data.iter().map(|&v| f(v)).collect())
    }

    #[inline]
    pub fn dx(&self, x: usize, t: usize) -> f64 {
        let x = x as isize;
        (self.at(x + 1, t) - self.at(x - 1, t)) / 2.0
    }

    /// Only defined for `1 <= t <= T-2`.
    #[inline]
    pub fn dt(&self, x: usize, t: usize) -> f64 {
        (self.get(x, t + 1) - self.get(x, t - 1)) / 2.0
    }

    /// `max |Dt|` over interior frames.
    pub fn max_abs_dt(&self) -> f64 {
        let mut m = 0.0f64;
        for t in 1..self.frames - 1 {
            for x in 0..self.len {
                m = m.max(self.dt(x, t).abs());
            }
        }
        m
    }

    /// `max |Dx|` over all frames.
    pub fn max_abs_dx(&self) -> f64 {
        let mut m = 0.0f64;
        for t in 0..self.frames {
            for x in 0..self.len {
                m = m.max(self.dx(x, t).abs());
            }
        }
        m
    }

    /// Circular convolution of every frame with an odd-length centered kernel.
    pub fn convolve(&self, kernel: &[f64]) -> Result<Signal1Dt> {
        check_kernel(kernel)?;
        let mut data = Vec::with_capacity(self.data.len());
        for t in 0..self.frames {
            data.extend(circular_convolve(self.frame(t), kernel));
        }
        Signal1Dt::new(self.len, self.frames, data)
    }

    /// Sliding maximum over `[x - h, x + h]`.
    pub fn local_max(&self, h: usize) -> Result<Signal1Dt> {
        let h = h as isize;
        Signal1Dt::from_fn(self.len, self.frames, |x, t| {
            (-h..=h)
                .map(|u| self.at(x as isize + u, t))
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// `I'(x, t) = I(s x, t)`; `X` must be divisible by `s` to stay periodic.
    pub fn downscale(&self, s: usize) -> Result<Signal1Dt> {
        if s == 0 || !self.len.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "scale {s} must divide the signal length {}",
                self.len
            )));
        }
        Signal1Dt::from_fn(self.len / s, self.frames, |x, t| self.get(s * x, t))
    }
}

/// `out(x) = sum_k kernel[k] * row(x - (k - half))`, periodic.
fn circular_convolve(row: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = row.len() as isize;
    let half = (kernel.len() / 2) as isize;
    (0..n)
        .map(|x| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, &w)| w * row[(x - (k as isize - half)).rem_euclid(n) as usize])
                .sum()
        })
        .collect()
}

fn check_kernel(kernel: &[f64]) -> Result<()> {
    if kernel.len().is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel length must be odd, got {}",
            kernel.len()
        )));
    }
    Ok(())
}

/// Residual values on interior frames; frame index `k` holds time `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub len: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl Residual {
    #[inline]
    pub fn get(&self, x: usize, t: usize) -> f64 {
        self.values[(t - 1) * self.len + x]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// `Dx(I) * v + Dt(I)` at every interior `(x, t)`.
pub fn flow_residual(sig: &Signal1Dt, v: f64) -> Residual {
    let frames = sig.frames() - 2;
    let mut values = Vec::with_capacity(sig.len() * frames);
    for t in 1..sig.frames() - 1 {
        for x in 0..sig.len() {
            values.push(sig.dx(x, t) * v + sig.dt(x, t));
        }
    }
    Residual {
        len: sig.len(),
        frames,
        values,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvReport {
    /// `max |R(f * I) - f * R(I)|`.
    pub commutation_error: f64,
    pub residual_before: f64,
    pub residual_after: f64,
    /// `max |Dt(f * I)|`, the scale for `residual_after`.
    pub dt_scale_after: f64,
}

/// Compares the residual of the filtered signal with the filtered residual.
pub fn check_conv_preservation(sig: &Signal1Dt, kernel: &[f64], v: f64) -> Result<ConvReport> {
    let filtered = sig.convolve(kernel)?;
    let before = flow_residual(sig, v);
    let after = flow_residual(&filtered, v);
    let commutation_error = (0..before.frames)
        .flat_map(|k| {
            let row = &before.values[k * before.len..(k + 1) * before.len];
            let lhs = &after.values[k * after.len..(k + 1) * after.len];
            circular_convolve(row, kernel)
                .into_iter()
                .zip(lhs)
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f64, f64::max);
    Ok(ConvReport {
        commutation_error,
        residual_before: before.max_abs(),
        residual_after: after.max_abs(),
        dt_scale_after: filtered.max_abs_dt(),
    })
}

impl ConvReport {
    pub fn commutes(&self) -> bool {
        self.commutation_error <= COMMUTATION_TOL
    }

    pub fn preserved(&self) -> bool {
        self.residual_after <= TRUNCATION_REL_TOL * self.dt_scale_after
    }
}

#[inline]
fn activation_derivative(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 - s)
        }
    }
}

fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinReport {
    /// `max |R(sigma(I)) - sigma'(I) R(I)|` over smooth positions.
    pub chain_rule_error: f64,
    /// `max |R(sigma(I))|` over smooth positions.
    pub residual_after: f64,
    pub residual_before: f64,
    /// `max |Dt(I)|` of the input signal.
    pub dt_scale_before: f64,
    /// Positions where `sigma' = 0` across the whole stencil: any velocity solves there.
    pub dead_zone: Vec<(usize, usize)>,
    /// Positions whose stencil straddles a ReLU kink; excluded from the two maxima above.
    pub kinks: Vec<(usize, usize)>,
}

impl NonlinReport {
    pub fn preserved(&self) -> bool {
        self.residual_after <= NONLIN_FACTOR * TRUNCATION_REL_TOL * self.dt_scale_before
    }
}

pub fn check_nonlin_preservation(sig: &Signal1Dt, kind: Activation, v: f64) -> Result<NonlinReport> {
    let activated = sig.map(|x| activate(kind, x))?;
    let before = flow_residual(sig, v);
    let after = flow_residual(&activated, v);
    let mut report = NonlinReport {
        chain_rule_error: 0.0,
        residual_after: 0.0,
        residual_before: before.max_abs(),
        dt_scale_before: sig.max_abs_dt(),
        dead_zone: Vec::new(),
        kinks: Vec::new(),
    };
    for t in 1..sig.frames() - 1 {
        for x in 0..sig.len() {
            let xi = x as isize;
            let stencil = [
                sig.at(xi - 1, t),
                sig.at(xi + 1, t),
                sig.get(x, t - 1),
                sig.get(x, t + 1),
                sig.get(x, t),
            ];
            if kind == Activation::Relu {
                let positive = stencil.iter().filter(|&&s| s > 0.0).count();
                if positive == 0 {
                    report.dead_zone.push((x, t));
                } else if positive < stencil.len() {
                    report.kinks.push((x, t));
                    continue;
                }
            }
            let lhs = after.get(x, t);
            let rhs = activation_derivative(kind, sig.get(x, t)) * before.get(x, t);
            report.chain_rule_error = report.chain_rule_error.max((lhs - rhs).abs());
            report.residual_after = report.residual_after.max(lhs.abs());
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalMaxReport {
    /// Positions where `I` is strictly monotone across the stencil-dilated window.
    pub monotone: Vec<(usize, usize)>,
    /// `max |R(M)|` over monotone positions.
    pub residual_after: f64,
    /// `max |R(M)|` everywhere.
    pub residual_after_all: f64,
    pub residual_before: f64,
    pub dt_scale_before: f64,
    /// `max |M - (I + |Dx| h)|` over monotone positions.
    pub taylor_error: f64,
    /// `h * max |Dx(I)|`, the scale of the first-order term.
    pub taylor_scale: f64,
}

impl LocalMaxReport {
    pub fn preserved(&self) -> bool {
        self.residual_after <= LOCALMAX_FACTOR * TRUNCATION_REL_TOL * self.dt_scale_before
    }

    pub fn taylor_ok(&self) -> bool {
        self.taylor_error <= TAYLOR_REL_TOL * self.taylor_scale
    }
}

fn strictly_monotone(values: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = values.collect();
    v.windows(2).all(|p| p[1] > p[0]) || v.windows(2).all(|p| p[1] < p[0])
}

pub fn check_localmax_preservation(sig: &Signal1Dt, h: usize, v: f64) -> Result<LocalMaxReport> {
    let m = sig.local_max(h)?;
    let before = flow_residual(sig, v);
    let after = flow_residual(&m, v);
    let hi = h as isize + 1;
    let mut monotone = Vec::new();
    let mut taylor_error = 0.0f64;
    for t in 1..sig.frames() - 1 {
        for x in 0..sig.len() {
            let xi = x as isize;
            let ok = (t - 1..=t + 1)
                .all(|tt| strictly_monotone((-hi..=hi).map(|u| sig.at(xi + u, tt))));
            if ok {
                monotone.push((x, t));
                let approx = sig.get(x, t) + sig.dx(x, t).abs() * h as f64;
                taylor_error = taylor_error.max((m.get(x, t) - approx).abs());
            }
        }
    }
    let residual_after = monotone
        .iter()
        .fold(0.0f64, |acc, &(x, t)| acc.max(after.get(x, t).abs()));
    Ok(LocalMaxReport {
        monotone,
        residual_after,
        residual_after_all: after.max_abs(),
        residual_before: before.max_abs(),
        dt_scale_before: sig.max_abs_dt(),
        taylor_error,
        taylor_scale: h as f64 * sig.max_abs_dx(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleReport {
    /// Candidate with the smallest sum of squared residuals on the downscaled signal.
    pub minimizer: f64,
    pub expected: f64,
    /// `max |R(I', v/s)|`.
    pub residual_at_expected: f64,
    /// `max |Dt(I')|`.
    pub dt_scale: f64,
}

impl ScaleReport {
    pub fn preserved(&self) -> bool {
        self.minimizer == self.expected
            && self.residual_at_expected <= TRUNCATION_REL_TOL * self.dt_scale
    }
}

/// Candidate velocity whose residual has the least energy; ties go to the
/// smaller magnitude, then the smaller value.
pub fn residual_minimizer(sig: &Signal1Dt, candidates: &[f64]) -> Result<f64> {
    candidates
        .iter()
        .map(|&c| (flow_residual(sig, c).sum_sq(), c))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.abs().total_cmp(&b.1.abs()))
                .then(a.1.total_cmp(&b.1))
        })
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Config("empty candidate velocity grid".into()))
}

pub fn check_scale_change(sig: &Signal1Dt, s: usize, v: f64, candidates: &[f64]) -> Result<ScaleReport> {
    let scaled = if s == 1 { sig.clone() } else { sig.downscale(s)? };
    let expected = v / s as f64;
    Ok(ScaleReport {
        minimizer: residual_minimizer(&scaled, candidates)?,
        expected,
        residual_at_expected: flow_residual(&scaled, expected).max_abs(),
        dt_scale: scaled.max_abs_dt(),
    })
}

/// conv, then ReLU, then local max, then downscale: the 1-D analogue of one CNN stage.
pub fn composite_chain(sig: &Signal1Dt, kernel: &[f64], h: usize, s: usize) -> Result<Signal1Dt> {
    sig.convolve(kernel)?
        .map(|x| x.max(0.0))?
        .local_max(h)?
        .downscale(s)
}

/// `start, start + step, ..., stop` (inclusive, within rounding).
pub fn velocity_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// One row of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    fn exact(name: impl Into<String>, value: f64, expected: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            value,
            bound: expected,
            passed: value == expected,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<48} {:>14.6e} {:>14.6e}  {}",
            self.name,
            self.value,
            self.bound,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub const SUITE_LEN: usize = 128;
pub const SUITE_FRAMES: usize = 8;

fn random_profile(seed: u64) -> Profile {
    let mut g = SplitMix64::new(seed);
    Profile {
        offset: 0.0,
        terms: (1..=4)
            .map(|k| (g.next_symmetric(), k, g.next_unit() * std::f64::consts::TAU))
            .collect(),
    }
}

/// Every operation check, on the fixed smooth translating profile.
pub fn run_suite() -> Result<Vec<CheckOutcome>> {
    let prof = Profile::default();
    let sig = |v: f64| translating_signal_1d(SUITE_LEN, SUITE_FRAMES, v, &prof);
    let bound = |s: &Signal1Dt| TRUNCATION_REL_TOL * s.max_abs_dt();
    let mut out = Vec::new();

    // plain residual
    for v in [0.5, 1.0, 2.0] {
        let s = sig(v)?;
        let at_v = flow_residual(&s, v).max_abs();
        out.push(CheckOutcome::at_most(format!("residual at true v={v}"), at_v, bound(&s)));
        let off = flow_residual(&s, v + 1.0).max_abs();
        out.push(CheckOutcome {
            name: format!("residual at v+1 exceeds residual at v={v}"),
            value: off,
            bound: at_v,
            passed: off > at_v,
        });
    }
    let flat = Signal1Dt::new(SUITE_LEN, SUITE_FRAMES, vec![1.5; SUITE_LEN * SUITE_FRAMES])?;
    out.push(CheckOutcome::exact("residual of constant signal", flow_residual(&flat, 3.0).max_abs(), 0.0));

    // convolution
    let s = sig(0.5)?;
    let delta = check_conv_preservation(&s, &[0.0, 1.0, 0.0], 0.5)?;
    out.push(CheckOutcome::exact("conv delta: commutation", delta.commutation_error, 0.0));
    let boxed = check_conv_preservation(&s, &[1.0 / 3.0; 3], 0.5)?;
    out.push(CheckOutcome::at_most("conv box3: commutation", boxed.commutation_error, COMMUTATION_TOL));
    out.push(CheckOutcome::at_most(
        "conv box3: residual at true v",
        boxed.residual_after,
        TRUNCATION_REL_TOL * boxed.dt_scale_after,
    ));
    let mut g = SplitMix64::new(17);
    let kernel: Vec<f64> = (0..5).map(|_| g.next_symmetric()).collect();
    let rnd = translating_signal_1d(SUITE_LEN, SUITE_FRAMES, 0.7, &random_profile(5))?;
    let r = check_conv_preservation(&rnd, &kernel, 2.3)?;
    out.push(CheckOutcome::at_most("conv random: commutation at wrong v", r.commutation_error, COMMUTATION_TOL));

    // nonlinearities
    let sg = check_nonlin_preservation(&s, Activation::Sigmoid, 0.5)?;
    out.push(CheckOutcome::at_most(
        "sigmoid: residual at true v",
        sg.residual_after,
        NONLIN_FACTOR * bound(&s),
    ));
    out.push(CheckOutcome::at_most("sigmoid: chain rule", sg.chain_rule_error, bound(&s)));
    let pos = translating_signal_1d(SUITE_LEN, SUITE_FRAMES, 0.5, &prof.clone().with_offset(3.0))?;
    let relu_pos = flow_residual(&pos.map(|x| x.max(0.0))?, 0.5);
    let diff = relu_pos
        .values
        .iter()
        .zip(&flow_residual(&pos, 0.5).values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    out.push(CheckOutcome::exact("relu on positive signal: unchanged residual", diff, 0.0));
    let neg = translating_signal_1d(SUITE_LEN, SUITE_FRAMES, 0.5, &prof.clone().with_offset(-3.0))?;
    let neg_relu = neg.map(|x| x.max(0.0))?;
    let dead = [0.0, 0.5, 3.0]
        .iter()
        .map(|&v| flow_residual(&neg_relu, v).max_abs())
        .fold(0.0f64, f64::max);
    out.push(CheckOutcome::exact("relu on negative signal: zero for any v", dead, 0.0));
    let rl = check_nonlin_preservation(&s, Activation::Relu, 0.5)?;
    out.push(CheckOutcome::at_most(
        "relu mixed: residual at true v (off kinks)",
        rl.residual_after,
        NONLIN_FACTOR * bound(&s),
    ));
    out.push(CheckOutcome {
        name: "relu mixed: dead-zone positions found".into(),
        value: rl.dead_zone.len() as f64,
        bound: 1.0,
        passed: !rl.dead_zone.is_empty(),
    });

    // local maximum
    let lm0 = flow_residual(&s.local_max(0)?, 0.5);
    out.push(CheckOutcome::exact(
        "local max h=0: residual unchanged",
        lm0.values
            .iter()
            .zip(&flow_residual(&s, 0.5).values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
        0.0,
    ));
    for h in [1usize, 2] {
        let lm = check_localmax_preservation(&s, h, 0.5)?;
        out.push(CheckOutcome::at_most(
            format!("local max h={h}: residual at true v (monotone)"),
            lm.residual_after,
            LOCALMAX_FACTOR * bound(&s),
        ));
        out.push(CheckOutcome::at_most(
            format!("local max h={h}: first-order approximation"),
            lm.taylor_error,
            TAYLOR_REL_TOL * lm.taylor_scale,
        ));
    }
    out.push(CheckOutcome::exact(
        "local max of constant signal",
        flow_residual(&flat.local_max(2)?, 0.7).max_abs(),
        0.0,
    ));

    // scale change
    let grid = velocity_grid(0.0, 2.0, 0.5);
    for (v, s_factor) in [(2.0, 2usize), (2.0, 1), (0.0, 2), (1.0, 2)] {
        let sc = check_scale_change(&sig(v)?, s_factor, v, &grid)?;
        out.push(CheckOutcome::exact(
            format!("scale s={s_factor}, v={v}: residual minimizer"),
            sc.minimizer,
            sc.expected,
        ));
        out.push(CheckOutcome::at_most(
            format!("scale s={s_factor}, v={v}: residual at v/s"),
            sc.residual_at_expected,
            TRUNCATION_REL_TOL * sc.dt_scale,
        ));
    }

    // composite
    let fine = velocity_grid(0.0, 2.0, 0.25);
    for v in [2.0, 1.0] {
        let chain = composite_chain(&sig(v)?, &[0.25, 0.5, 0.25], 1, 2)?;
        out.push(CheckOutcome::exact(
            format!("conv>relu>max>scale2, v={v}: minimizer"),
            residual_minimizer(&chain, &fine)?,
            v / 2.0,
        ));
    }
    Ok(out)
}
