//! Objective terms and their waveform-side cotangents.
//!
//! Every term here is a pure function of the waveform arrays and the total
//! traversal time; the pipeline's backward pass owns the chain from those
//! arrays back to the speed parameters. Terms report cotangents with
//! respect to `g`, `slew`, and `T` as independent quantities — the
//! coupling between them is the pipeline's business, not ours.

use crate::error::Error;
use crate::pipeline::{LossCotangents, Waveform};
use crate::pns::{pns_barrier_grad, PnsModel};
use crate::spectral::{bin_freq, fft_len, masked_power, masked_power_grad, spectrum};
use crate::Result;

/// Suggested weight magnitudes per objective, tuned for the scales the
/// terms take in SI units. They are starting points, not laws.
pub const DEFAULT_LAMBDA_TIME: f64 = 1e4;
pub const DEFAULT_LAMBDA_BOUND_TIME: f64 = 1e0;
pub const DEFAULT_LAMBDA_SLEW: f64 = 1e2;
pub const DEFAULT_LAMBDA_PNS: f64 = 1e1;
pub const DEFAULT_LAMBDA_BAND: f64 = 1e3;
pub const DEFAULT_LAMBDA_ACOUSTIC: f64 = 1e5;

/// Default slew-barrier relaxation.
pub const DEFAULT_DELTA_SLEW: f64 = 2e-4;
/// Default PNS-barrier relaxation.
pub const DEFAULT_DELTA_PNS: f64 = 5e-5;
/// Bound-time relaxation as a fraction of `t_max`.
pub const DEFAULT_DELTA_TIME_FRAC: f64 = 1e-4;

/// A relaxed log-barrier: `x_max` is the limit, `delta` how far inside it
/// the barrier goes linear.
#[derive(Debug, Clone, Copy)]
pub struct BarrierConfig {
    pub x_max: f64,
    pub delta: f64,
}

impl BarrierConfig {
    pub fn new(x_max: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "barrier delta must be positive, got {delta}"
            )));
        }
        if !x_max.is_finite() {
            return Err(Error::InvalidParams(format!("barrier limit not finite: {x_max}")));
        }
        if x_max > 0.0 && delta >= x_max {
            return Err(Error::InvalidParams(format!(
                "barrier delta {delta} must stay below the limit {x_max}"
            )));
        }
        Ok(BarrierConfig { x_max, delta })
    }

    /// The switch point `x_delta = x_max - delta` beyond which the barrier
    /// continues linearly.
    pub fn x_delta(&self) -> f64 {
        self.x_max - self.delta
    }
}

/// One element of the leaky log-barrier:
/// `-ln(x_max - x)` up to `x_delta`, then the tangent line
/// `(x - x_delta)/delta - ln(delta)`. Matching value and slope at the
/// switch makes the whole thing C1 and total: large violations cost
/// linearly instead of blowing up to infinity mid-descent.
pub(crate) fn llb_scalar(x: f64, cfg: &BarrierConfig) -> f64 {
    if x <= cfg.x_delta() {
        -(cfg.x_max - x).ln()
    } else {
        (x - cfg.x_delta()) / cfg.delta - cfg.delta.ln()
    }
}

/// Derivative of [`llb_scalar`]: `1/(x_max - x)` on the log branch,
/// `1/delta` on the linear branch.
pub(crate) fn llb_scalar_grad(x: f64, cfg: &BarrierConfig) -> f64 {
    if x <= cfg.x_delta() {
        1.0 / (cfg.x_max - x)
    } else {
        1.0 / cfg.delta
    }
}

/// Sum of the relaxed barrier over all elements.
pub fn leaky_log_barrier(x: &[f64], cfg: &BarrierConfig) -> f64 {
    x.iter().map(|&xi| llb_scalar(xi, cfg)).sum()
}

/// Barrier sum plus its elementwise derivative.
pub fn leaky_log_barrier_grad(x: &[f64], cfg: &BarrierConfig) -> (f64, Vec<f64>) {
    let value = leaky_log_barrier(x, cfg);
    let grad = x.iter().map(|&xi| llb_scalar_grad(xi, cfg)).collect();
    (value, grad)
}

/// Per-term weights. Zero disables a term.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossWeights {
    pub lambda_time: f64,
    pub lambda_bound_time: f64,
    pub lambda_slew: f64,
    pub lambda_pns: f64,
    pub lambda_band: f64,
    pub lambda_acoustic: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("time", self.lambda_time),
            ("bound_time", self.lambda_bound_time),
            ("slew", self.lambda_slew),
            ("pns", self.lambda_pns),
            ("band", self.lambda_band),
            ("acoustic", self.lambda_acoustic),
        ];
        for (name, w) in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "weight lambda_{name} must be finite and nonnegative, got {w}"
                )));
            }
        }
        if all.iter().all(|&(_, w)| w == 0.0) {
            return Err(Error::NoActiveTerms);
        }
        // Without a slew barrier the time terms would push the speed into
        // the amplitude limit everywhere, ignoring slew feasibility.
        if (self.lambda_time > 0.0 || self.lambda_bound_time > 0.0) && self.lambda_slew == 0.0 {
            return Err(Error::InvalidParams(
                "time objectives require an active slew barrier (lambda_slew > 0)".into(),
            ));
        }
        Ok(())
    }
}

/// A union of frequency intervals, kept sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: Vec<(f64, f64)>,
}

impl BandSet {
    /// Normalizes on construction: sorts by lower edge and merges bands
    /// that overlap or touch.
    pub fn new(mut bands: Vec<(f64, f64)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::EmptyBandSet);
        }
        for &(lo, hi) in &bands {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                return Err(Error::InvalidParams(format!(
                    "band [{lo}, {hi}] must satisfy 0 <= f_lo < f_hi"
                )));
            }
        }
        bands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(bands.len());
        for (lo, hi) in bands {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(BandSet { bands: merged })
    }

    pub fn bands(&self) -> &[(f64, f64)] {
        &self.bands
    }

    /// Bands must sit below the raster's Nyquist frequency.
    pub fn validate_nyquist(&self, dt: f64) -> Result<()> {
        let nyquist = 1.0 / (2.0 * dt);
        let top = self.bands.last().unwrap().1;
        if top > nyquist {
            return Err(Error::InvalidParams(format!(
                "band edge {top} Hz above Nyquist {nyquist} Hz at dt={dt}"
            )));
        }
        Ok(())
    }

    /// Inclusive membership test.
    pub fn contains(&self, f: f64) -> bool {
        self.bands.iter().any(|&(lo, hi)| lo <= f && f <= hi)
    }

    /// 0/1 mask over all `len` DFT bins by folded physical frequency, so a
    /// band automatically covers both conjugate halves.
    pub(crate) fn mask(&self, len: usize, dt: f64) -> Vec<f64> {
        (0..len)
            .map(|k| if self.contains(bin_freq(k, len, dt)) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Per-axis acoustic transfer magnitudes on a shared frequency grid.
/// `NaN` marks a bin with no usable measurement; those are bridged by
/// interpolation when the loss is evaluated but stay missing in the
/// stored table.
#[derive(Debug, Clone)]
pub struct Atf {
    freqs: Vec<f64>,
    axes: Vec<Vec<f64>>,
    ref_hz: f64,
    ref_scale: f64,
}

impl Atf {
    pub fn new(freqs: Vec<f64>, axes: Vec<Vec<f64>>, ref_hz: f64, ref_scale: f64) -> Result<Self> {
        if freqs.len() < 2 {
            return Err(Error::InvalidParams("ATF needs at least 2 frequency samples".into()));
        }
        for w in freqs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParams("ATF frequency grid must increase".into()));
            }
        }
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::InvalidParams(format!("ATF needs 1..=3 axes, got {}", axes.len())));
        }
        for axis in &axes {
            if axis.len() != freqs.len() {
                return Err(Error::ShapeMismatch("ATF axis length differs from grid".into()));
            }
            if axis.iter().any(|&a| !a.is_nan() && !(a >= 0.0 && a.is_finite())) {
                return Err(Error::InvalidParams("ATF magnitudes must be nonnegative".into()));
            }
        }
        if !(ref_hz > 0.0 && ref_hz.is_finite() && ref_scale.is_finite() && ref_scale > 0.0) {
            return Err(Error::InvalidParams("ATF reference must be positive".into()));
        }
        Ok(Atf { freqs, axes, ref_hz, ref_scale })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    pub fn ref_hz(&self) -> f64 {
        self.ref_hz
    }

    pub fn ref_scale(&self) -> f64 {
        self.ref_scale
    }

    /// The usable (non-missing) samples of one axis.
    fn valid_pairs(&self, a: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut fs = Vec::new();
        let mut vs = Vec::new();
        for (&f, &v) in self.freqs.iter().zip(&self.axes[a]) {
            if !v.is_nan() {
                fs.push(f);
                vs.push(v);
            }
        }
        if fs.is_empty() {
            return Err(Error::InvalidParams(format!("ATF axis {a} has no usable bins")));
        }
        Ok((fs, vs))
    }

    /// Magnitude at `f`: linear between usable samples (missing bins are
    /// bridged), held constant beyond the grid edges.
    pub fn sample(&self, a: usize, f: f64) -> Result<f64> {
        let (fs, vs) = self.valid_pairs(a)?;
        Ok(sample_held(&fs, &vs, f))
    }

    /// Squared-magnitude mask over `len` DFT bins for one axis.
    fn mask_sq(&self, a: usize, len: usize, dt: f64) -> Result<Vec<f64>> {
        let (fs, vs) = self.valid_pairs(a)?;
        Ok((0..len)
            .map(|k| {
                let v = sample_held(&fs, &vs, bin_freq(k, len, dt));
                v * v
            })
            .collect())
    }
}

fn sample_held(fs: &[f64], vs: &[f64], f: f64) -> f64 {
    if f <= fs[0] {
        return vs[0];
    }
    if f >= *fs.last().unwrap() {
        return *vs.last().unwrap();
    }
    let j = fs.partition_point(|&x| x <= f) - 1;
    let w = (f - fs[j]) / (fs[j + 1] - fs[j]);
    vs[j] + w * (vs[j + 1] - vs[j])
}

/// Weighted duration objective: `lambda_time * T` plus, when a bound is
/// set, the relaxed barrier on `T` against `t_max`. Returns the value and
/// its derivative in `T`.
pub fn duration_terms(
    t_total: f64,
    t_max: Option<f64>,
    delta_t: Option<f64>,
    w: &LossWeights,
) -> Result<(f64, f64)> {
    if !(t_total > 0.0 && t_total.is_finite()) {
        return Err(Error::InvalidParams(format!("duration must be positive, got {t_total}")));
    }
    let mut value = w.lambda_time * t_total;
    let mut slope = w.lambda_time;
    if w.lambda_bound_time > 0.0 {
        let t_max = t_max.ok_or_else(|| {
            Error::InvalidParams("bound-time objective requires t_max".into())
        })?;
        let delta = delta_t.unwrap_or(DEFAULT_DELTA_TIME_FRAC * t_max);
        let cfg = BarrierConfig::new(t_max, delta)?;
        value += w.lambda_bound_time * llb_scalar(t_total, &cfg);
        slope += w.lambda_bound_time * llb_scalar_grad(t_total, &cfg);
    }
    Ok((value, slope))
}

/// Barrier on the across-axis slew magnitude at every raster sample.
pub fn slew_barrier(w: &Waveform, cfg: &BarrierConfig) -> f64 {
    leaky_log_barrier(&w.slew_norms(), cfg)
}

/// [`slew_barrier`] plus cotangents with respect to the per-axis slew
/// arrays. At a zero-norm sample the norm has no direction, so the
/// cotangent there is taken as zero.
pub(crate) fn slew_barrier_grad(slew: &[Vec<f64>], cfg: &BarrierConfig) -> (f64, Vec<Vec<f64>>) {
    let norms = crate::pipeline::norms_across_axes(slew);
    let value = leaky_log_barrier(&norms, cfg);
    let mut cot = vec![vec![0.0; norms.len()]; slew.len()];
    for (k, &nk) in norms.iter().enumerate() {
        if nk == 0.0 {
            continue;
        }
        let d = llb_scalar_grad(nk, cfg);
        for (a, axis) in slew.iter().enumerate() {
            cot[a][k] = d * axis[k] / nk;
        }
    }
    (value, cot)
}

/// Total spectral power of all axes inside the band set: the squared
/// Frobenius norm of the padded DFT restricted to in-band bins.
pub fn band_power_loss(w: &Waveform, bands: &BandSet) -> Result<f64> {
    bands.validate_nyquist(w.dt())?;
    let len = fft_len(w.n_t(), w.dt());
    let mask = bands.mask(len, w.dt());
    Ok(w.gradients()
        .iter()
        .map(|axis| masked_power(&spectrum(axis, len), &mask))
        .sum())
}

pub(crate) fn band_power_grad(
    g: &[Vec<f64>],
    dt: f64,
    bands: &BandSet,
) -> Result<(f64, Vec<Vec<f64>>)> {
    bands.validate_nyquist(dt)?;
    let n_t = g[0].len();
    let len = fft_len(n_t, dt);
    let mask = bands.mask(len, dt);
    let mut value = 0.0;
    let mut cot = Vec::with_capacity(g.len());
    for axis in g {
        let spec = spectrum(axis, len);
        value += masked_power(&spec, &mask);
        cot.push(masked_power_grad(&spec, &mask, n_t));
    }
    Ok((value, cot))
}

/// Predicted acoustic power: per-axis spectra weighted by the axis
/// transfer magnitude, squared Frobenius norm over axes and bins.
pub fn acoustic_loss(w: &Waveform, atf: &Atf) -> Result<f64> {
    Ok(acoustic_grad(w.gradients(), w.dt(), atf)?.0)
}

pub(crate) fn acoustic_grad(
    g: &[Vec<f64>],
    dt: f64,
    atf: &Atf,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if atf.dims() != g.len() {
        return Err(Error::AxisCountMismatch {
            waveform: g.len(),
            data: atf.dims(),
        });
    }
    let n_t = g[0].len();
    let len = fft_len(n_t, dt);
    let mut value = 0.0;
    let mut cot = Vec::with_capacity(g.len());
    for (a, axis) in g.iter().enumerate() {
        let mask = atf.mask_sq(a, len, dt)?;
        let spec = spectrum(axis, len);
        value += masked_power(&spec, &mask);
        cot.push(masked_power_grad(&spec, &mask, n_t));
    }
    Ok((value, cot))
}

/// Everything needed to evaluate the composite objective.
#[derive(Debug, Clone, Default)]
pub struct LossContext {
    pub weights: LossWeights,
    pub t_max: Option<f64>,
    pub delta_t: Option<f64>,
    pub delta_s: f64,
    pub delta_p: f64,
    pub s_max: f64,
    pub p_max: Option<f64>,
    pub bands: Option<BandSet>,
    pub atf: Option<Atf>,
    pub pns: Option<PnsModel>,
}

impl LossContext {
    /// Check that every active term has the data it needs. The error
    /// message names the missing piece.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let w = &self.weights;
        if w.lambda_slew > 0.0 {
            BarrierConfig::new(self.s_max, self.delta_s)?;
            if self.s_max <= 0.0 {
                return Err(Error::InvalidParams("slew barrier requires s_max > 0".into()));
            }
        }
        if w.lambda_bound_time > 0.0 && self.t_max.is_none() {
            return Err(Error::InvalidParams(
                "lambda_bound_time > 0 but t_max is not set".into(),
            ));
        }
        if w.lambda_pns > 0.0 {
            if self.pns.is_none() {
                return Err(Error::InvalidParams(
                    "lambda_pns > 0 but no pns model is set".into(),
                ));
            }
            let p_max = self.p_max.ok_or_else(|| {
                Error::InvalidParams("lambda_pns > 0 but p_max is not set".into())
            })?;
            BarrierConfig::new(p_max, self.delta_p)?;
        }
        if w.lambda_band > 0.0 && self.bands.is_none() {
            return Err(Error::InvalidParams(
                "lambda_band > 0 but no band set is set".into(),
            ));
        }
        if w.lambda_acoustic > 0.0 && self.atf.is_none() {
            return Err(Error::InvalidParams(
                "lambda_acoustic > 0 but no atf is set".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted contribution of each term, in the total's units.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub time: f64,
    pub bound_time: f64,
    pub slew: f64,
    pub pns: f64,
    pub band: f64,
    pub acoustic: f64,
}

impl LossBreakdown {
    pub fn summary(&self) -> String {
        format!(
            "total {:.6e} (time {:.3e}, bound {:.3e}, slew {:.3e}, pns {:.3e}, band {:.3e}, acoustic {:.3e})",
            self.total, self.time, self.bound_time, self.slew, self.pns, self.band, self.acoustic
        )
    }
}

/// Evaluate the full weighted objective and its cotangents with respect to
/// the waveform arrays and the total time.
pub fn assemble_loss(
    w: &Waveform,
    t_total: f64,
    ctx: &LossContext,
) -> Result<(LossBreakdown, LossCotangents)> {
    ctx.validate()?;
    let weights = &ctx.weights;
    let mut bd = LossBreakdown::default();
    let mut cot = LossCotangents::zeros(w.dims(), w.n_t());

    if weights.lambda_time > 0.0 || weights.lambda_bound_time > 0.0 {
        let (value, slope) = duration_terms(t_total, ctx.t_max, ctx.delta_t, weights)?;
        bd.time = weights.lambda_time * t_total;
        bd.bound_time = value - bd.time;
        cot.t_total += slope;
    }

    if weights.lambda_slew > 0.0 {
        let cfg = BarrierConfig::new(ctx.s_max, ctx.delta_s)?;
        let (value, grads) = slew_barrier_grad(w.slew(), &cfg);
        bd.slew = weights.lambda_slew * value;
        for (acc, g) in cot.slew.iter_mut().zip(&grads) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += weights.lambda_slew * y;
            }
        }
    }

    if weights.lambda_pns > 0.0 {
        let model = ctx.pns.as_ref().unwrap();
        let cfg = BarrierConfig::new(ctx.p_max.unwrap(), ctx.delta_p)?;
        let (value, grads) = pns_barrier_grad(w.slew(), w.dt(), model, &cfg);
        bd.pns = weights.lambda_pns * value;
        for (acc, g) in cot.slew.iter_mut().zip(&grads) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += weights.lambda_pns * y;
            }
        }
    }

    if weights.lambda_band > 0.0 {
        let bands = ctx.bands.as_ref().unwrap();
        let (value, grads) = band_power_grad(w.gradients(), w.dt(), bands)?;
        bd.band = weights.lambda_band * value;
        for (acc, g) in cot.g.iter_mut().zip(&grads) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += weights.lambda_band * y;
            }
        }
    }

    if weights.lambda_acoustic > 0.0 {
        let atf = ctx.atf.as_ref().unwrap();
        let (value, grads) = acoustic_grad(w.gradients(), w.dt(), atf)?;
        bd.acoustic = weights.lambda_acoustic * value;
        for (acc, g) in cot.g.iter_mut().zip(&grads) {
            for (x, y) in acc.iter_mut().zip(g) {
                *x += weights.lambda_acoustic * y;
            }
        }
    }

    bd.total = bd.time + bd.bound_time + bd.slew + bd.pns + bd.band + bd.acoustic;
    Ok((bd, cot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone_waveform(f0: f64, amp: f64, dt: f64, n: usize, dims: usize) -> Waveform {
        let g: Vec<Vec<f64>> = (0..dims)
            .map(|a| {
                (0..n)
                    .map(|i| {
                        if a == 0 {
                            amp * (2.0 * std::f64::consts::PI * f0 * i as f64 * dt).sin()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Waveform::from_gradients(g, dt).unwrap()
    }

    #[test]
    fn barrier_branch_values() {
        let cfg = BarrierConfig::new(5.0, 1e-3).unwrap();
        // One unit inside the limit: -ln(1) = 0.
        assert_eq!(llb_scalar(4.0, &cfg), 0.0);
        // At the switch point both branches give -ln(delta).
        let at_switch = llb_scalar(cfg.x_delta(), &cfg);
        assert!((at_switch - -(1e-3f64).ln()).abs() < 1e-12);
        // One delta past the switch: 1 - ln(delta).
        let past = llb_scalar(cfg.x_delta() + cfg.delta, &cfg);
        assert!((past - (1.0 - (1e-3f64).ln())).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn barrier_is_c1_at_switch(x_max in 0.5f64..1e4, frac in 1e-6f64..0.4) {
            let delta = frac * x_max;
            let cfg = BarrierConfig::new(x_max, delta).unwrap();
            let xd = cfg.x_delta();
            // Evaluate both branch formulas at the switch directly.
            let log_val = -(x_max - xd).ln();
            let lin_val = (xd - xd) / delta - delta.ln();
            prop_assert!((log_val - lin_val).abs() <= 1e-12 * log_val.abs().max(1.0));
            let log_slope = 1.0 / (x_max - xd);
            let lin_slope = 1.0 / delta;
            prop_assert!((log_slope - lin_slope).abs() <= 1e-12 * lin_slope);
        }
    }

    #[test]
    fn barrier_converges_to_log_barrier() {
        let x_max = 2.0;
        let x = 1.9;
        let exact = -(x_max - x as f64).ln();
        let mut last_gap = f64::INFINITY;
        for delta in [1e-2, 1e-4, 1e-6] {
            let cfg = BarrierConfig::new(x_max, delta).unwrap();
            let gap = (llb_scalar(x, &cfg) - exact).abs();
            assert!(gap <= last_gap);
            last_gap = gap;
        }
        // Once delta is below the headroom the branches coincide exactly.
        let cfg = BarrierConfig::new(x_max, 1e-6).unwrap();
        assert_eq!(llb_scalar(x, &cfg), exact);
    }

    #[test]
    fn duration_term_examples() {
        let w = LossWeights { lambda_time: 1e4, lambda_slew: 1.0, ..Default::default() };
        let (v, s) = duration_terms(0.010, None, None, &w).unwrap();
        assert!((v - 100.0).abs() < 1e-12);
        assert_eq!(s, 1e4);

        let wb = LossWeights { lambda_bound_time: 1.0, lambda_slew: 1.0, ..Default::default() };
        // One second inside the bound: barrier contributes -ln(1) = 0.
        let (v, _) = duration_terms(9.0, Some(10.0), None, &wb).unwrap();
        assert!(v.abs() < 1e-12);
        // Past the bound the linear branch takes over and stays positive.
        let (v, s) = duration_terms(0.0085, Some(0.008), None, &wb).unwrap();
        assert!(v > 0.0);
        assert!((s - 1.0 / (1e-4 * 0.008)).abs() < 1e-9 * s);
    }

    #[test]
    fn weights_validation() {
        assert!(matches!(
            LossWeights::default().validate(),
            Err(Error::NoActiveTerms)
        ));
        let no_slew = LossWeights { lambda_time: 1.0, ..Default::default() };
        assert!(no_slew.validate().is_err());
        let ok = LossWeights { lambda_time: 1.0, lambda_slew: 1.0, ..Default::default() };
        assert!(ok.validate().is_ok());
        let band_only = LossWeights { lambda_band: 1.0, ..Default::default() };
        assert!(band_only.validate().is_ok());
    }

    #[test]
    fn band_set_normalizes() {
        let b = BandSet::new(vec![(900.0, 1000.0), (100.0, 300.0), (250.0, 400.0)]).unwrap();
        assert_eq!(b.bands(), &[(100.0, 400.0), (900.0, 1000.0)]);
        assert!(b.contains(400.0)); // inclusive edges
        assert!(b.contains(100.0));
        assert!(!b.contains(401.0));
        assert!(BandSet::new(vec![]).is_err());
        assert!(BandSet::new(vec![(5.0, 5.0)]).is_err());
        assert!(BandSet::new(vec![(-1.0, 5.0)]).is_err());
        let high = BandSet::new(vec![(100.0, 6000.0)]).unwrap();
        assert!(high.validate_nyquist(1e-4).is_err()); // Nyquist 5 kHz
        assert!(high.validate_nyquist(4e-6).is_ok());
    }

    #[test]
    fn slew_barrier_reference_values() {
        let s_max = 180.0;
        let cfg = BarrierConfig::new(s_max, DEFAULT_DELTA_SLEW).unwrap();
        let n = 65;
        let w = Waveform::from_gradients(vec![vec![0.0; n], vec![0.0; n]], 1e-5).unwrap();
        let v = slew_barrier(&w, &cfg);
        assert!((v - (n - 1) as f64 * -(s_max.ln())).abs() < 1e-9 * v.abs());

        // A single sample at s_max - 1 contributes exactly -ln(1) = 0.
        let mut g = vec![vec![0.0; 3]];
        g[0][1] = (s_max - 1.0) * 1e-5;
        let w1 = Waveform::from_gradients(g, 1e-5).unwrap();
        let v1 = slew_barrier(&w1, &cfg);
        // Sample 0 rises to s_max - 1, sample 1 falls back: both at the limit.
        let expect = 0.0 + 0.0;
        assert!((v1 - expect).abs() < 1e-9);

        // Uniform violation at 1.01 * s_max lands on the linear branch.
        let norms = vec![s_max * 1.01; 8];
        let hand: f64 = norms
            .iter()
            .map(|&x| (x - (s_max - DEFAULT_DELTA_SLEW)) / DEFAULT_DELTA_SLEW
                - DEFAULT_DELTA_SLEW.ln())
            .sum();
        assert!((leaky_log_barrier(&norms, &cfg) - hand).abs() < 1e-9 * hand);
    }

    #[test]
    fn band_power_captures_tone() {
        // 1 kHz tone, 100 ms: the band around it must hold all but the
        // truncation leakage, and a distant band almost nothing.
        let dt = 1e-4;
        let n = 1000;
        let w = tone_waveform(1000.0, 0.02, dt, n, 1);
        let len = fft_len(n, dt);
        let total: f64 = spectrum(&w.gradients()[0], len)
            .iter()
            .map(|x| x.norm_sqr())
            .sum();
        let near = BandSet::new(vec![(500.0, 1500.0)]).unwrap();
        let in_band = band_power_loss(&w, &near).unwrap();
        assert!(in_band > 0.99 * total, "in-band {in_band} vs total {total}");
        assert!(in_band <= total * (1.0 + 1e-12));
        let far = BandSet::new(vec![(3000.0, 4000.0)]).unwrap();
        let out_band = band_power_loss(&w, &far).unwrap();
        assert!(out_band <= 0.01 * in_band, "out {out_band} vs in {in_band}");
        // Zero waveform: no power anywhere.
        let z = Waveform::from_gradients(vec![vec![0.0; 64]], dt).unwrap();
        assert_eq!(band_power_loss(&z, &near).unwrap(), 0.0);
    }

    #[test]
    fn band_and_acoustic_scale_quadratically_and_ignore_time_reversal() {
        let dt = 1e-4;
        let n = 512;
        let g: Vec<f64> = (0..n).map(|i| ((i * 13 % 41) as f64 - 20.0) * 1e-4).collect();
        let w = Waveform::from_gradients(vec![g.clone()], dt).unwrap();
        let bands = BandSet::new(vec![(200.0, 1200.0)]).unwrap();
        let atf = Atf::new(
            vec![0.0, 2500.0, 5000.0],
            vec![vec![1.0, 2.0, 0.5]],
            1000.0,
            1.0,
        )
        .unwrap();

        let b1 = band_power_loss(&w, &bands).unwrap();
        let a1 = acoustic_loss(&w, &atf).unwrap();

        let scaled: Vec<f64> = g.iter().map(|x| 3.0 * x).collect();
        let ws = Waveform::from_gradients(vec![scaled], dt).unwrap();
        assert!((band_power_loss(&ws, &bands).unwrap() - 9.0 * b1).abs() <= 1e-10 * 9.0 * b1);
        assert!((acoustic_loss(&ws, &atf).unwrap() - 9.0 * a1).abs() <= 1e-10 * 9.0 * a1);

        let reversed: Vec<f64> = g.iter().rev().copied().collect();
        let wr = Waveform::from_gradients(vec![reversed], dt).unwrap();
        assert!((band_power_loss(&wr, &bands).unwrap() - b1).abs() <= 1e-10 * b1);
        assert!((acoustic_loss(&wr, &atf).unwrap() - a1).abs() <= 1e-10 * a1);
    }

    #[test]
    fn acoustic_loss_reference_cases() {
        let dt = 1e-4;
        let n = 1000;
        let w = tone_waveform(800.0, 0.01, dt, n, 1);
        // A == 0 kills everything.
        let zero = Atf::new(vec![0.0, 5000.0], vec![vec![0.0, 0.0]], 1000.0, 1.0).unwrap();
        assert_eq!(acoustic_loss(&w, &zero).unwrap(), 0.0);
        // A == 1 reproduces total spectral power.
        let unit = Atf::new(vec![0.0, 5000.0], vec![vec![1.0, 1.0]], 1000.0, 1.0).unwrap();
        let len = fft_len(n, dt);
        let total: f64 = spectrum(&w.gradients()[0], len)
            .iter()
            .map(|x| x.norm_sqr())
            .sum();
        let got = acoustic_loss(&w, &unit).unwrap();
        assert!((got - total).abs() <= 1e-10 * total);

        // Tones at a peak (A=2) and a trough (A=0.5) of a plateaued ATF:
        // loss ratio = (2 / 0.5)^2 = 16 up to truncation leakage into the
        // other plateau, which the 0.4 s duration keeps well under 2%.
        let shaped = Atf::new(
            vec![0.0, 500.0, 1100.0, 1300.0, 1900.0, 5000.0],
            vec![vec![2.0, 2.0, 2.0, 0.5, 0.5, 0.5]],
            1000.0,
            1.0,
        )
        .unwrap();
        let long = 4000;
        let peak = acoustic_loss(&tone_waveform(800.0, 0.01, dt, long, 1), &shaped).unwrap();
        let trough = acoustic_loss(&tone_waveform(1600.0, 0.01, dt, long, 1), &shaped).unwrap();
        let ratio = peak / trough;
        assert!((ratio - 16.0).abs() <= 0.02 * 16.0, "ratio {ratio}");
    }

    #[test]
    fn acoustic_axis_mismatch_is_rejected() {
        let w = tone_waveform(800.0, 0.01, 1e-4, 64, 2);
        let one_axis = Atf::new(vec![0.0, 5000.0], vec![vec![1.0, 1.0]], 1000.0, 1.0).unwrap();
        assert!(matches!(
            acoustic_loss(&w, &one_axis),
            Err(Error::AxisCountMismatch { waveform: 2, data: 1 })
        ));
    }

    #[test]
    fn atf_bridges_missing_bins_at_sample_time() {
        let atf = Atf::new(
            vec![100.0, 200.0, 300.0, 400.0],
            vec![vec![1.0, f64::NAN, f64::NAN, 4.0]],
            1000.0,
            1.0,
        )
        .unwrap();
        // Linear bridge across the NaN gap…
        assert!((atf.sample(0, 250.0).unwrap() - 2.5).abs() < 1e-12);
        // …hold beyond the edges…
        assert_eq!(atf.sample(0, 10.0).unwrap(), 1.0);
        assert_eq!(atf.sample(0, 900.0).unwrap(), 4.0);
        // …and the stored table still marks the bins missing.
        assert!(atf.axis(0)[1].is_nan());
        let dead = Atf::new(
            vec![100.0, 200.0],
            vec![vec![f64::NAN, f64::NAN]],
            1000.0,
            1.0,
        )
        .unwrap();
        assert!(dead.sample(0, 150.0).is_err());
    }

    #[test]
    fn assemble_loss_single_term_passthrough_and_validation() {
        let w = tone_waveform(700.0, 0.01, 1e-4, 256, 1);
        let bands = BandSet::new(vec![(400.0, 1000.0)]).unwrap();
        let ctx = LossContext {
            weights: LossWeights { lambda_band: 1.0, ..Default::default() },
            bands: Some(bands.clone()),
            ..Default::default()
        };
        let (bd, _) = assemble_loss(&w, 256.0 * 1e-4, &ctx).unwrap();
        assert_eq!(bd.total, bd.band);
        assert!((bd.band - band_power_loss(&w, &bands).unwrap()).abs() <= 1e-12 * bd.band);

        // Missing data for an active term is named in the error.
        let bad = LossContext {
            weights: LossWeights { lambda_pns: 1.0, ..Default::default() },
            ..Default::default()
        };
        let err = assemble_loss(&w, 0.01, &bad).unwrap_err();
        assert!(err.to_string().contains("pns"));
    }

    #[test]
    fn assemble_loss_cotangents_match_finite_differences() {
        // 32-sample waveform, every term active; g, slew, and T are
        // treated as independent inputs, matching the cotangent contract.
        let dt = 1e-4;
        let n = 32;
        let g: Vec<Vec<f64>> = vec![
            (0..n).map(|i| 0.02 * ((i as f64) * 0.7).sin()).collect(),
            (0..n).map(|i| 0.015 * ((i as f64) * 1.3).cos()).collect(),
        ];
        let w = Waveform::from_gradients(g.clone(), dt).unwrap();
        // Unit weights keep every term on a comparable scale so the
        // central differences stay above their roundoff floor.
        let ctx = LossContext {
            weights: LossWeights {
                lambda_time: 1.0,
                lambda_bound_time: 1.0,
                lambda_slew: 1.0,
                lambda_pns: 1.0,
                lambda_band: 1.0,
                lambda_acoustic: 1.0,
            },
            t_max: Some(4e-3),
            delta_t: None,
            delta_s: DEFAULT_DELTA_SLEW,
            delta_p: DEFAULT_DELTA_PNS,
            // Limits sit above the waveform's actual norms: the log branch
            // keeps term magnitudes moderate, which the finite differences
            // need to stay above their cancellation floor.
            s_max: 400.0,
            p_max: Some(250.0),
            bands: Some(BandSet::new(vec![(300.0, 900.0)]).unwrap()),
            atf: Some(
                Atf::new(vec![0.0, 5000.0], vec![vec![1.5, 0.5], vec![0.8, 1.2]], 1000.0, 1.0)
                    .unwrap(),
            ),
            pns: Some(PnsModel::placeholder()),
        };
        let t_total = (n - 1) as f64 * dt;
        let (bd, cot) = assemble_loss(&w, t_total, &ctx).unwrap();
        assert!(bd.total.is_finite());

        // Raw re-evaluation treating (g, slew, T) as free variables.
        let eval = |g: &[Vec<f64>], slew: &[Vec<f64>], t: f64| -> f64 {
            let (d, _) = duration_terms(t, ctx.t_max, ctx.delta_t, &ctx.weights).unwrap();
            let cfg_s = BarrierConfig::new(ctx.s_max, ctx.delta_s).unwrap();
            let s = ctx.weights.lambda_slew * slew_barrier_grad(slew, &cfg_s).0;
            let cfg_p = BarrierConfig::new(ctx.p_max.unwrap(), ctx.delta_p).unwrap();
            let p = ctx.weights.lambda_pns
                * pns_barrier_grad(slew, dt, ctx.pns.as_ref().unwrap(), &cfg_p).0;
            let b = ctx.weights.lambda_band
                * band_power_grad(g, dt, ctx.bands.as_ref().unwrap()).unwrap().0;
            let ac = ctx.weights.lambda_acoustic
                * acoustic_grad(g, dt, ctx.atf.as_ref().unwrap()).unwrap().0;
            d + s + p + b + ac
        };

        let slew0: Vec<Vec<f64>> = w.slew().to_vec();
        let scale_g = cot.g.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()));
        let scale_s = cot.slew.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs()));
        // The spectral terms are exactly quadratic in g, so a generous eps
        // costs no truncation and buys roundoff headroom.
        let eps_g = 1e-3;
        let eps_s = 1e-3;
        for a in 0..2 {
            for i in (0..n).step_by(7) {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp[a][i] += eps_g;
                gm[a][i] -= eps_g;
                let fd = (eval(&gp, &slew0, t_total) - eval(&gm, &slew0, t_total)) / (2.0 * eps_g);
                let an = cot.g[a][i];
                assert!(
                    (fd - an).abs() <= 1e-7 * fd.abs().max(an.abs()) + 1e-9 * scale_g,
                    "g[{a}][{i}]: fd {fd} vs analytic {an}"
                );
            }
            for i in (0..n - 1).step_by(5) {
                let mut sp = slew0.clone();
                let mut sm = slew0.clone();
                sp[a][i] += eps_s;
                sm[a][i] -= eps_s;
                let fd = (eval(&g, &sp, t_total) - eval(&g, &sm, t_total)) / (2.0 * eps_s);
                let an = cot.slew[a][i];
                assert!(
                    (fd - an).abs() <= 1e-7 * fd.abs().max(an.abs()) + 1e-8 * scale_s,
                    "slew[{a}][{i}]: fd {fd} vs analytic {an}"
                );
            }
        }
        let eps_t = 1e-9;
        let fd_t = (eval(&g, &slew0, t_total + eps_t) - eval(&g, &slew0, t_total - eps_t))
            / (2.0 * eps_t);
        assert!(
            (fd_t - cot.t_total).abs() <= 1e-6 * fd_t.abs(),
            "T: fd {fd_t} vs analytic {}",
            cot.t_total
        );
    }
}
