//! Waveform verification and reporting: hardware-limit checks, power
//! spectra, k-space fidelity, acoustic transfer-function fitting, probe
//! waveform generation, and point-spread-function simulation.

use num_complex::Complex64;

use crate::geometry::{ArcCurve, HardwareLimits};
use crate::losses::BandSet;
use crate::pipeline::Waveform;
use crate::pns::{pns_response, PnsModel};
use crate::{losses, spectral, util, Error, Result, LIMIT_TOLERANCE};

/// Hardware-limit audit of a waveform.
///
/// All maxima are computed from the same primitives the loss terms use, so a
/// design the optimizer reports feasible passes here by construction.
#[derive(Debug, Clone)]
pub struct LimitReport {
    /// Peak gradient vector norm (T/m).
    pub max_grad: f64,
    /// Gradient amplitude limit (T/m).
    pub grad_limit: f64,
    /// Peak slew vector norm (T/m/s).
    pub max_slew: f64,
    /// Slew-rate limit (T/m/s).
    pub slew_limit: f64,
    /// Peak nerve-stimulation response (percent), when a model was supplied.
    pub max_pns: Option<f64>,
    /// Stimulation limit (percent), when supplied.
    pub pns_limit: Option<f64>,
    /// Waveform duration (s).
    pub duration: f64,
}

impl LimitReport {
    // A limit passes iff value <= limit * (1 + LIMIT_TOLERANCE).
    fn within(value: f64, limit: f64) -> bool {
        value <= limit * (1.0 + LIMIT_TOLERANCE)
    }

    pub fn grad_pass(&self) -> bool {
        Self::within(self.max_grad, self.grad_limit)
    }

    pub fn slew_pass(&self) -> bool {
        Self::within(self.max_slew, self.slew_limit)
    }

    /// Passes vacuously when no stimulation model was supplied.
    pub fn pns_pass(&self) -> bool {
        match (self.max_pns, self.pns_limit) {
            (Some(p), Some(lim)) => Self::within(p, lim),
            _ => true,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.grad_pass() && self.slew_pass() && self.pns_pass()
    }

    /// Names of the limits that failed, for diagnostics.
    pub fn failed(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.grad_pass() {
            out.push("gradient");
        }
        if !self.slew_pass() {
            out.push("slew");
        }
        if !self.pns_pass() {
            out.push("pns");
        }
        out
    }

    /// Human-readable table for logs and command output.
    pub fn summary(&self) -> String {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        let mut s = format!(
            "gradient  {:>12.6e} / {:>12.6e} T/m    [{}]\nslew      {:>12.6e} / {:>12.6e} T/m/s  [{}]\n",
            self.max_grad,
            self.grad_limit,
            mark(self.grad_pass()),
            self.max_slew,
            self.slew_limit,
            mark(self.slew_pass()),
        );
        if let (Some(p), Some(lim)) = (self.max_pns, self.pns_limit) {
            s.push_str(&format!(
                "pns       {:>12.6} / {:>12.6} %      [{}]\n",
                p,
                lim,
                mark(self.pns_pass())
            ));
        }
        s.push_str(&format!("duration  {:>12.6e} s", self.duration));
        s
    }
}

/// Audit a waveform against amplitude, slew, and (optionally) stimulation
/// limits. `pns` pairs a nerve model with the allowed peak percentage.
pub fn verify_limits(
    w: &Waveform,
    hw: &HardwareLimits,
    pns: Option<(&PnsModel, f64)>,
) -> LimitReport {
    let max_grad = w.grad_norms().into_iter().fold(0.0f64, f64::max);
    let max_slew = w.slew_norms().into_iter().fold(0.0f64, f64::max);
    let (max_pns, pns_limit) = match pns {
        Some((model, p_max)) => {
            let peak = pns_response(w, model).into_iter().fold(0.0f64, f64::max);
            (Some(peak), Some(p_max))
        }
        None => (None, None),
    };
    LimitReport {
        max_grad,
        grad_limit: hw.g_max,
        max_slew,
        slew_limit: hw.s_max,
        max_pns,
        pns_limit,
        duration: w.duration(),
    }
}

/// Gradient spectra of a waveform plus integrated power per frequency band.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// One-sided bin frequencies (Hz), `0..=len/2`.
    pub freqs: Vec<f64>,
    /// Per-axis one-sided spectral magnitudes `|G_k|`.
    pub magnitudes: Vec<Vec<f64>>,
    /// `(f_lo, f_hi, power)` per requested band, summed over axes and both
    /// spectral halves.
    pub band_power: Vec<(f64, f64, f64)>,
    /// Total spectral power over the full (two-sided) transform, all axes.
    pub total_power: f64,
    /// Transform length used (zero-padded).
    pub fft_len: usize,
    /// Raster step of the analyzed waveform (s).
    pub dt: f64,
}

impl SpectrumReport {
    /// Total in-band power summed across all reported bands.
    pub fn in_band_power(&self) -> f64 {
        self.band_power.iter().map(|&(_, _, p)| p).sum()
    }
}

/// Compute padded gradient spectra per axis and, when `bands` is given, the
/// integrated power falling inside each band.
pub fn power_spectrum(w: &Waveform, bands: Option<&BandSet>) -> SpectrumReport {
    let dt = w.dt();
    let len = spectral::fft_len(w.n_t(), dt);
    let half = len / 2;

    let mut magnitudes = Vec::with_capacity(w.dims());
    let mut total_power = 0.0;
    let mut band_power: Vec<(f64, f64, f64)> = bands
        .map(|b| b.bands().iter().map(|&(lo, hi)| (lo, hi, 0.0)).collect())
        .unwrap_or_default();

    for axis in w.gradients() {
        let spec = spectral::spectrum(axis, len);
        for (k, x) in spec.iter().enumerate() {
            let p = x.norm_sqr();
            total_power += p;
            if !band_power.is_empty() {
                let f = spectral::bin_freq(k, len, dt);
                for entry in band_power.iter_mut() {
                    if f >= entry.0 && f <= entry.1 {
                        entry.2 += p;
                    }
                }
            }
        }
        magnitudes.push(spec[..=half].iter().map(|x| x.norm()).collect());
    }

    let freqs = (0..=half).map(|k| spectral::bin_freq(k, len, dt)).collect();
    SpectrumReport {
        freqs,
        magnitudes,
        band_power,
        total_power,
        fft_len: len,
        dt,
    }
}

/// Compare a waveform's integrated k-space path against the curve it is
/// supposed to traverse.
///
/// The gradient is integrated cumulatively (`ɣ̄·Σg·dt`, starting from the
/// curve's first point) and each integrated sample is measured against the
/// nearest point of the curve polyline, with the match only ever advancing
/// along the curve so that tightly wound trajectories cannot borrow a match
/// from an earlier or later pass. Timing plays no role — only geometry.
/// (Estimating progress from the integrated path's own chord length instead
/// systematically lags the true arc position on curved paths and misreports
/// the resulting tangential slip as deviation.)
/// Returns `(max deviation, rms deviation)` in cycles/m.
pub fn kspace_fidelity(w: &Waveform, arc: &ArcCurve, gamma_bar: f64) -> Result<(f64, f64)> {
    if w.dims() != arc.dims() {
        return Err(Error::ShapeMismatch(format!(
            "waveform has {} axes but curve has {}",
            w.dims(),
            arc.dims()
        )));
    }
    let dims = w.dims();
    let k0: Vec<f64> = (0..dims).map(|a| arc.positions()[0][a]).collect();
    let k = w.integrate_kspace(gamma_bar, &k0);
    let n_t = w.n_t();

    // Row-major copies so each point and segment is a contiguous slice.
    let mut path = vec![0.0; n_t * dims];
    for (a, axis) in k.iter().enumerate() {
        for (n, &x) in axis.iter().enumerate() {
            path[n * dims + a] = x;
        }
    }
    let curve: Vec<f64> = arc
        .positions()
        .iter()
        .flat_map(|p| p[..dims].iter().copied())
        .collect();

    let segs = arc.n() - 1;
    let mut j = 0;
    let mut max_sq = 0.0f64;
    let mut sum_sq = 0.0f64;
    for n in 0..n_t {
        let p = &path[n * dims..(n + 1) * dims];
        let mut d_sq = point_segment_dist_sq(p, &curve[j * dims..(j + 2) * dims]);
        while j + 1 < segs {
            let next = point_segment_dist_sq(p, &curve[(j + 1) * dims..(j + 3) * dims]);
            if next <= d_sq {
                j += 1;
                d_sq = next;
            } else {
                break;
            }
        }
        max_sq = max_sq.max(d_sq);
        sum_sq += d_sq;
    }
    Ok((max_sq.sqrt(), (sum_sq / n_t as f64).sqrt()))
}

/// Squared distance from point `p` to the segment whose two endpoints are
/// packed back-to-back in `seg` (`p.len()` coordinates each).
fn point_segment_dist_sq(p: &[f64], seg: &[f64]) -> f64 {
    let dims = p.len();
    let (a, b) = seg.split_at(dims);
    let mut dot = 0.0;
    let mut len_sq = 0.0;
    for i in 0..dims {
        let e = b[i] - a[i];
        dot += (p[i] - a[i]) * e;
        len_sq += e * e;
    }
    let t = if len_sq > 0.0 { (dot / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    let mut d_sq = 0.0;
    for i in 0..dims {
        let d = p[i] - (a[i] + t * (b[i] - a[i]));
        d_sq += d * d;
    }
    d_sq
}

/// One input/output spectrum pair from a frequency-sweep measurement, both
/// sampled on a shared bin grid.
#[derive(Debug, Clone)]
pub struct SpectrumPair {
    /// Input (gradient) spectrum at each bin.
    pub input: Vec<Complex64>,
    /// Observed (acoustic) spectrum at each bin.
    pub output: Vec<Complex64>,
}

/// Merge two observation spectra bin-wise, keeping the larger magnitude.
/// Useful when several microphones recorded the same sweep.
pub fn merge_spectra_max(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if y.norm_sqr() > x.norm_sqr() { y } else { x })
        .collect()
}

// A bin is fitted only when its summed input power clears this fraction of
// the axis's strongest bin; weaker bins are marked missing, never fabricated.
const ATF_INPUT_POWER_REL: f64 = 1e-18;

/// Fit a per-axis acoustic transfer function magnitude from measured
/// input/output spectrum pairs: per bin, the least-squares ratio
/// `|Σ conj(I)·O| / Σ|I|²` over all pairs on that axis.
///
/// Bins whose total input power is negligible are stored as NaN (missing).
/// When `reference` is `(f_ref, measured)`, the fitted magnitudes are
/// rescaled so their axis-mean at the bin nearest `f_ref` equals `measured`.
pub fn fit_atf(
    freqs: &[f64],
    pairs_per_axis: &[Vec<SpectrumPair>],
    reference: Option<(f64, f64)>,
) -> Result<losses::Atf> {
    if pairs_per_axis.is_empty() || pairs_per_axis.len() > 3 {
        return Err(Error::InvalidParams(format!(
            "need 1..=3 axes of spectrum pairs, got {}",
            pairs_per_axis.len()
        )));
    }
    let n_bins = freqs.len();
    for (a, pairs) in pairs_per_axis.iter().enumerate() {
        if pairs.is_empty() {
            return Err(Error::InvalidParams(format!("axis {a} has no pairs")));
        }
        for pair in pairs {
            if pair.input.len() != n_bins || pair.output.len() != n_bins {
                return Err(Error::ShapeMismatch(format!(
                    "axis {a}: spectrum length does not match {n_bins} bins"
                )));
            }
        }
    }

    let mut axes = Vec::with_capacity(pairs_per_axis.len());
    for pairs in pairs_per_axis {
        let mut fitted = Vec::with_capacity(n_bins);
        let mut dens = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for pair in pairs {
                num += pair.input[k].conj() * pair.output[k];
                den += pair.input[k].norm_sqr();
            }
            dens.push(den);
            fitted.push(if den > 0.0 { num.norm() / den } else { f64::NAN });
        }
        let den_peak = dens.iter().fold(0.0f64, |m, &d| m.max(d));
        let floor = ATF_INPUT_POWER_REL * den_peak;
        for (value, den) in fitted.iter_mut().zip(&dens) {
            if *den <= floor {
                *value = f64::NAN;
            }
        }
        axes.push(fitted);
    }

    let (ref_hz, ref_scale) = match reference {
        Some((f_ref, measured)) => {
            if !(f_ref.is_finite() && measured.is_finite() && measured > 0.0) {
                return Err(Error::InvalidParams(
                    "reference must be finite with a positive measured scale".into(),
                ));
            }
            let bin = freqs
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - f_ref).abs().total_cmp(&(*b - f_ref).abs())
                })
                .map(|(i, _)| i)
                .ok_or_else(|| Error::InvalidParams("empty frequency grid".into()))?;
            let at_ref: Vec<f64> = axes
                .iter()
                .map(|ax| ax[bin])
                .filter(|v| v.is_finite())
                .collect();
            if at_ref.is_empty() {
                return Err(Error::InvalidParams(format!(
                    "no axis has a fitted value at the reference bin ({} Hz)",
                    freqs[bin]
                )));
            }
            let mean = at_ref.iter().sum::<f64>() / at_ref.len() as f64;
            if mean <= 0.0 {
                return Err(Error::InvalidParams(
                    "fitted response vanishes at the reference bin".into(),
                ));
            }
            let scale = measured / mean;
            for ax in axes.iter_mut() {
                for v in ax.iter_mut() {
                    *v *= scale;
                }
            }
            (f_ref, measured)
        }
        None => (1000.0, 1.0),
    };

    losses::Atf::new(freqs.to_vec(), axes, ref_hz, ref_scale)
}

/// Parameters for a single-axis sinusoidal frequency sweep.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    /// Driven axis index.
    pub axis: usize,
    /// Total axis count of the emitted waveforms.
    pub dims: usize,
    /// Sinusoid amplitude (T/m); zero yields silent baselines.
    pub amplitude: f64,
    /// First probe frequency (Hz).
    pub f_lo: f64,
    /// Last probe frequency (Hz), inclusive.
    pub f_hi: f64,
    /// Frequency step (Hz).
    pub f_step: f64,
    /// Driven duration (s).
    pub duration: f64,
    /// Silent tail appended for ring-down observation (s).
    pub tail: f64,
    /// Raster step (s).
    pub dt: f64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            axis: 0,
            dims: 3,
            amplitude: 0.01,
            f_lo: 50.0,
            f_hi: 2000.0,
            f_step: 10.0,
            duration: 0.12,
            tail: 0.03,
            dt: crate::geometry::DEFAULT_DT,
        }
    }
}

/// Generate one sinusoidal probe waveform per sweep frequency, as
/// `(frequency, waveform)` pairs.
pub fn gen_probe_waveforms(p: &ProbeParams) -> Result<Vec<(f64, Waveform)>> {
    if p.dims == 0 || p.dims > 3 || p.axis >= p.dims {
        return Err(Error::InvalidParams(format!(
            "axis {} out of range for {} dims",
            p.axis, p.dims
        )));
    }
    if !(p.amplitude.is_finite() && p.amplitude >= 0.0) {
        return Err(Error::InvalidParams("amplitude must be finite and >= 0".into()));
    }
    if !(p.f_lo > 0.0 && p.f_hi >= p.f_lo && p.f_step > 0.0) {
        return Err(Error::InvalidParams("need 0 < f_lo <= f_hi and f_step > 0".into()));
    }
    if !(p.dt > 0.0 && p.duration > 0.0 && p.tail >= 0.0) {
        return Err(Error::InvalidParams("need dt > 0, duration > 0, tail >= 0".into()));
    }
    let nyquist = 0.5 / p.dt;
    if p.f_hi >= nyquist {
        return Err(Error::InvalidParams(format!(
            "probe frequency {} Hz is at or above the raster Nyquist {} Hz",
            p.f_hi, nyquist
        )));
    }

    let n_play = (p.duration / p.dt).round() as usize;
    let n_tail = (p.tail / p.dt).round() as usize;
    let n_total = (n_play + n_tail).max(2);

    let count = ((p.f_hi - p.f_lo) / p.f_step).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let f = p.f_lo + i as f64 * p.f_step;
        let mut g = vec![vec![0.0; n_total]; p.dims];
        let omega = 2.0 * std::f64::consts::PI * f;
        for (n, sample) in g[p.axis][..n_play].iter_mut().enumerate() {
            *sample = p.amplitude * (omega * (n as f64 * p.dt)).sin();
        }
        out.push((f, Waveform::from_gradients(g, p.dt)?));
    }
    Ok(out)
}

/// Point-spread-function image and resolution estimate.
#[derive(Debug, Clone)]
pub struct PsfReport {
    /// Normalized PSF magnitude, row-major `[grid][grid]`; row index is the
    /// second axis (y), column index the first (x).
    pub image: Vec<Vec<f64>>,
    /// Pixel spacing of `image` (m).
    pub pixel: f64,
    /// Full width at half maximum of the squared-magnitude central profile
    /// along each axis (m); NaN when no half crossing lies in the window.
    pub fwhm: [f64; 2],
    /// Nominal resolution `1/(2·k_max)` implied by the trajectory (m).
    pub nominal_res: f64,
}

/// Simulate the point-spread function of a 2-D waveform by direct
/// conjugate-phase summation over its integrated k-space samples.
///
/// Each sample is weighted by a radial `|k|` density compensation (an
/// approximation suited to spiral-like coverage), `exp(-t/t2star)` decay, and
/// an `exp(-i·2π·off_res_hz·t)` bulk off-resonance phase. Pass
/// `t2star = f64::INFINITY` and `off_res_hz = 0.0` for pure geometry. FWHM is
/// read from the squared-magnitude central profile by linear interpolation.
pub fn psf_simulate(
    w: &Waveform,
    arc: &ArcCurve,
    gamma_bar: f64,
    t2star: f64,
    off_res_hz: f64,
    grid: usize,
) -> Result<PsfReport> {
    if arc.dims() != 2 || w.dims() != 2 {
        return Err(Error::UnsupportedKind(
            "psf simulation requires a 2-D trajectory".into(),
        ));
    }
    if !(2..=256).contains(&grid) {
        return Err(Error::InvalidParams(format!(
            "grid must lie in 2..=256, got {grid}"
        )));
    }
    if !(t2star > 0.0) || !off_res_hz.is_finite() {
        return Err(Error::InvalidParams(
            "t2star must be positive (may be infinite) and off_res_hz finite".into(),
        ));
    }
    let k_max = arc.max_radius();
    if !(k_max > 0.0) {
        return Err(Error::DegenerateCurve("curve never leaves the origin".into()));
    }
    let nominal_res = 1.0 / (2.0 * k_max);

    let k0: Vec<f64> = (0..2).map(|a| arc.positions()[0][a]).collect();
    let k = w.integrate_kspace(gamma_bar, &k0);
    let n_t = w.n_t();
    let dt = w.dt();

    // Per-sample weight: density compensation times decay; the off-resonance
    // phase is folded in as a complex factor.
    let mut weights = Vec::with_capacity(n_t);
    let mut norm = 0.0;
    for n in 0..n_t {
        let t = n as f64 * dt;
        let radius = (k[0][n] * k[0][n] + k[1][n] * k[1][n]).sqrt();
        let mag = radius * (-t / t2star).exp();
        let phase = -2.0 * std::f64::consts::PI * off_res_hz * t;
        weights.push(Complex64::from_polar(mag, phase));
        norm += mag;
    }
    if norm <= 0.0 {
        return Err(Error::DegenerateCurve(
            "all samples carry zero weight; psf undefined".into(),
        ));
    }

    let eval = |x: f64, y: f64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..n_t {
            let phase = 2.0 * std::f64::consts::PI * (k[0][n] * x + k[1][n] * y);
            acc += weights[n] * Complex64::from_polar(1.0, phase);
        }
        acc / norm
    };

    // Image: grid x grid at half-resolution pixels, centered on the origin.
    let pixel = nominal_res / 2.0;
    let coord = |i: usize| (i as f64 - (grid as f64 - 1.0) / 2.0) * pixel;
    let mut image = vec![vec![0.0f64; grid]; grid];
    let workers = util::thread_count().min(grid).max(1);
    let rows_per = grid.div_ceil(workers);
    std::thread::scope(|scope| {
        for (chunk_idx, rows) in image.chunks_mut(rows_per).enumerate() {
            let eval = &eval;
            scope.spawn(move || {
                for (r, row) in rows.iter_mut().enumerate() {
                    let y = coord(chunk_idx * rows_per + r);
                    for (c, px) in row.iter_mut().enumerate() {
                        *px = eval(coord(c), y).norm();
                    }
                }
            });
        }
    });

    // Central intensity profiles, sampled finely enough that linear
    // interpolation of the half crossing is far below the 10% checks.
    let half_window = 2.0 * nominal_res;
    let n_prof = 801usize;
    let step = 2.0 * half_window / (n_prof - 1) as f64;
    let mut fwhm = [f64::NAN; 2];
    for axis in 0..2 {
        let intensity: Vec<f64> = (0..n_prof)
            .map(|i| {
                let u = -half_window + i as f64 * step;
                let v = if axis == 0 { eval(u, 0.0) } else { eval(0.0, u) };
                v.norm_sqr()
            })
            .collect();
        fwhm[axis] = profile_fwhm(&intensity, step);
    }

    Ok(PsfReport {
        image,
        pixel,
        fwhm,
        nominal_res,
    })
}

// Width between the half-maximum crossings nearest the profile center, by
// linear interpolation; NaN when a side never drops below half in-window.
fn profile_fwhm(intensity: &[f64], step: f64) -> f64 {
    let center = intensity.len() / 2;
    let peak = intensity[center];
    if !(peak > 0.0) {
        return f64::NAN;
    }
    let half = 0.5 * peak;
    let cross = |mut i: usize, dir: isize| -> f64 {
        loop {
            let j = i as isize + dir;
            if j < 0 || j as usize >= intensity.len() {
                return f64::NAN;
            }
            let j = j as usize;
            if intensity[j] < half {
                let frac = (intensity[i] - half) / (intensity[i] - intensity[j]);
                return (i as f64 + dir as f64 * frac - center as f64) * step;
            }
            i = j;
        }
    };
    let right = cross(center, 1);
    let left = cross(center, -1);
    right - left
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ParamCurve, GAMMA_BAR_PROTON};
    use crate::pipeline::forward_design_pass;

    fn hw() -> HardwareLimits {
        HardwareLimits::new(0.05, 200.0)
    }

    fn line_arc(length: f64, n: usize) -> ArcCurve {
        let curve = crate::geometry::tests::straight_line(length, n.max(16));
        crate::geometry::arclength_reparam(&curve, n.max(16), &hw()).unwrap()
    }

    #[test]
    fn zero_waveform_passes_all_limits() {
        let w = Waveform::from_gradients(vec![vec![0.0; 16], vec![0.0; 16]], 4e-6).unwrap();
        let model = PnsModel::placeholder();
        let report = verify_limits(&w, &hw(), Some((&model, 80.0)));
        assert!(report.all_pass());
        assert_eq!(report.max_grad, 0.0);
        assert_eq!(report.max_slew, 0.0);
        assert_eq!(report.max_pns, Some(0.0));
        assert!(report.failed().is_empty());
    }

    #[test]
    fn gradient_at_limit_sits_on_margin_boundary() {
        let hw = hw();
        let w = Waveform::from_gradients(vec![vec![hw.g_max; 32]], 4e-6).unwrap();
        let report = verify_limits(&w, &hw, None);
        assert_eq!(report.max_grad, hw.g_max);
        assert!(report.grad_pass());
        // Anything past the shared tolerance fails.
        let w = Waveform::from_gradients(vec![vec![hw.g_max * 1.002; 32]], 4e-6).unwrap();
        assert!(!verify_limits(&w, &hw, None).grad_pass());
        assert_eq!(verify_limits(&w, &hw, None).failed(), vec!["gradient"]);
    }

    #[test]
    fn limit_maxima_match_loss_primitives() {
        let n = 64;
        let g: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                (0..n)
                    .map(|i| 0.01 * ((i as f64 * 0.37 + a as f64).sin()))
                    .collect()
            })
            .collect();
        let w = Waveform::from_gradients(g, 4e-6).unwrap();
        let report = verify_limits(&w, &hw(), None);
        let max_slew = w.slew_norms().into_iter().fold(0.0f64, f64::max);
        let max_grad = w.grad_norms().into_iter().fold(0.0f64, f64::max);
        assert!((report.max_slew - max_slew).abs() <= 1e-12 * max_slew.max(1.0));
        assert!((report.max_grad - max_grad).abs() <= 1e-12 * max_grad.max(1.0));
    }

    #[test]
    fn spectrum_peak_lands_on_tone_bin() {
        let dt = 4e-6;
        let f0 = 800.0;
        let n = 20_000;
        let g: Vec<f64> = (0..n)
            .map(|i| 0.01 * (2.0 * std::f64::consts::PI * f0 * i as f64 * dt).sin())
            .collect();
        let w = Waveform::from_gradients(vec![g], dt).unwrap();
        let report = power_spectrum(&w, None);
        let peak_bin = report.magnitudes[0]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let bin_hz = 1.0 / (report.fft_len as f64 * dt);
        assert!((report.freqs[peak_bin] - f0).abs() <= bin_hz + 1e-9);
    }

    #[test]
    fn spectrum_satisfies_parseval() {
        let dt = 4e-6;
        let n = 5000;
        let g: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                (0..n)
                    .map(|i| 0.02 * ((i as f64 * 0.013 + 1.7 * a as f64).sin() + 0.3))
                    .collect()
            })
            .collect();
        let w = Waveform::from_gradients(g.clone(), dt).unwrap();
        let report = power_spectrum(&w, None);
        let time_power: f64 = g.iter().flatten().map(|&x| x * x).sum();
        let rel = (report.total_power / report.fft_len as f64 - time_power).abs() / time_power;
        assert!(rel <= 1e-9, "Parseval violated: rel {rel}");
    }

    #[test]
    fn band_power_matches_loss_term() {
        let dt = 4e-6;
        let n = 4000;
        let g: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                0.01 * (2.0 * std::f64::consts::PI * 600.0 * t).sin()
                    + 0.004 * (2.0 * std::f64::consts::PI * 1200.0 * t).sin()
            })
            .collect();
        let w = Waveform::from_gradients(vec![g], dt).unwrap();
        let bands = BandSet::new(vec![(550.0, 650.0), (1100.0, 1300.0)]).unwrap();
        let report = power_spectrum(&w, Some(&bands));
        let loss = losses::band_power_loss(&w, &bands).unwrap();
        let total: f64 = report.in_band_power();
        assert!((total - loss).abs() <= 1e-12 * loss.max(1.0));
        assert!(report.band_power[0].2 > report.band_power[1].2);
        assert!(total <= report.total_power * (1.0 + 1e-9));
    }

    #[test]
    fn fidelity_of_forward_pass_waveform_is_tight() {
        let curve = crate::geometry::tests::circle(250.0, 4096);
        let hw = hw();
        let arc = crate::geometry::arclength_reparam(&curve, 4096, &hw).unwrap();
        let v_max = crate::geometry::speed_limit(&arc, &hw).unwrap();
        let fwd = forward_design_pass(&arc, &hw, &v_max, &vec![0.0; arc.n()]).unwrap();
        let (max_dev, rms) = kspace_fidelity(&fwd.waveform, &arc, hw.gamma_bar).unwrap();
        let k_max = arc.max_radius();
        assert!(max_dev <= 1e-3 * k_max, "max dev {max_dev} vs k_max {k_max}");
        assert!(rms <= max_dev);
    }

    // The metric matches arc-length progress, so the corruption must push the
    // path off the curve (a tangential kick on a straight line is invisible).
    #[test]
    fn fidelity_flags_a_corrupted_sample() {
        let curve = crate::geometry::tests::circle(250.0, 2048);
        let hw = hw();
        let arc = crate::geometry::arclength_reparam(&curve, 2048, &hw).unwrap();
        let v_max = crate::geometry::speed_limit(&arc, &hw).unwrap();
        let fwd = forward_design_pass(&arc, &hw, &v_max, &vec![0.0; arc.n()]).unwrap();
        let (clean, _) = kspace_fidelity(&fwd.waveform, &arc, hw.gamma_bar).unwrap();

        let mut g = fwd.waveform.gradients().to_vec();
        let mid = g[0].len() / 2;
        g[0][mid] += 0.005;
        let bad = Waveform::from_gradients(g, fwd.waveform.dt()).unwrap();
        let (corrupt, _) = kspace_fidelity(&bad, &arc, hw.gamma_bar).unwrap();
        assert!(corrupt > 10.0 * clean.max(1e-12), "corruption not visible");
    }

    #[test]
    fn zero_waveform_against_origin_start_has_zero_deviation() {
        let arc = line_arc(100.0, 64);
        let w = Waveform::from_gradients(vec![vec![0.0; 16]], 4e-6).unwrap();
        let (max_dev, rms) = kspace_fidelity(&w, &arc, GAMMA_BAR_PROTON).unwrap();
        assert_eq!(max_dev, 0.0);
        assert_eq!(rms, 0.0);
    }

    #[test]
    fn single_pair_fit_is_elementwise_ratio() {
        let freqs = vec![100.0, 200.0, 300.0];
        let input = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 4.0),
            Complex64::new(1.0, 1.0),
        ];
        let output = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 3.0),
        ];
        let pairs = vec![vec![SpectrumPair {
            input: input.clone(),
            output: output.clone(),
        }]];
        let atf = fit_atf(&freqs, &pairs, None).unwrap();
        for k in 0..3 {
            let expect = (output[k] / input[k]).norm();
            assert!((atf.axis(0)[k] - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn noiseless_fit_recovers_known_response() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n_bins = 40;
        let freqs: Vec<f64> = (0..n_bins).map(|k| 50.0 + 10.0 * k as f64).collect();
        let truth: Vec<f64> = freqs.iter().map(|f| 1.0 + (f / 700.0).sin().abs()).collect();

        let make_pair = |rng: &mut rand_chacha::ChaCha8Rng| {
            let input: Vec<Complex64> = (0..n_bins)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let output: Vec<Complex64> = input
                .iter()
                .zip(&truth)
                .map(|(i, &a)| i * a)
                .collect();
            SpectrumPair { input, output }
        };
        let two = vec![vec![make_pair(&mut rng), make_pair(&mut rng)]];
        let atf2 = fit_atf(&freqs, &two, None).unwrap();
        let err = |atf: &losses::Atf| {
            atf.axis(0)
                .iter()
                .zip(&truth)
                .map(|(v, t)| ((v - t) / t).abs())
                .fold(0.0f64, f64::max)
        };
        assert!(err(&atf2) <= 1e-6, "two-pair recovery err {}", err(&atf2));

        // More data never hurts a noiseless fit.
        let mut three = two.clone();
        three[0].push(make_pair(&mut rng));
        let atf3 = fit_atf(&freqs, &three, None).unwrap();
        assert!(err(&atf3) <= err(&atf2) + 1e-12);
    }

    #[test]
    fn noisy_fit_matches_normal_equation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        let n_bins = 25;
        let freqs: Vec<f64> = (0..n_bins).map(|k| 100.0 + 20.0 * k as f64).collect();
        let mut pairs = Vec::new();
        for _ in 0..4 {
            let input: Vec<Complex64> = (0..n_bins)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let output: Vec<Complex64> = input
                .iter()
                .map(|i| i * 2.5 + Complex64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
                .collect();
            pairs.push(SpectrumPair { input, output });
        }
        let atf = fit_atf(&freqs, &[pairs.clone()], None).unwrap();
        for k in 0..n_bins {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for p in &pairs {
                num += p.input[k].conj() * p.output[k];
                den += p.input[k].norm_sqr();
            }
            let oracle = num.norm() / den;
            assert!(
                (atf.axis(0)[k] - oracle).abs() <= 1e-10 * oracle,
                "bin {k}: {} vs oracle {}",
                atf.axis(0)[k],
                oracle
            );
        }
    }

    #[test]
    fn silent_bins_are_marked_missing() {
        let freqs = vec![100.0, 200.0, 300.0];
        let pair = SpectrumPair {
            input: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
            output: vec![
                Complex64::new(0.5, 0.0),
                Complex64::new(9.0, 9.0),
                Complex64::new(2.0, 0.0),
            ],
        };
        let atf = fit_atf(&freqs, &[vec![pair]], None).unwrap();
        assert!(atf.axis(0)[1].is_nan(), "silent bin must be missing");
        assert!(atf.axis(0)[0].is_finite() && atf.axis(0)[2].is_finite());
    }

    #[test]
    fn reference_scaling_pins_value_at_reference_bin() {
        let freqs = vec![500.0, 1000.0, 1500.0];
        let pair = SpectrumPair {
            input: vec![Complex64::new(1.0, 0.0); 3],
            output: vec![
                Complex64::new(2.0, 0.0),
                Complex64::new(4.0, 0.0),
                Complex64::new(6.0, 0.0),
            ],
        };
        let atf = fit_atf(&freqs, &[vec![pair]], Some((1000.0, 10.0))).unwrap();
        assert!((atf.axis(0)[1] - 10.0).abs() <= 1e-12 * 10.0);
        assert!((atf.axis(0)[0] - 5.0).abs() <= 1e-12 * 5.0);
        assert_eq!(atf.ref_hz(), 1000.0);
        assert_eq!(atf.ref_scale(), 10.0);
    }

    #[test]
    fn probe_defaults_yield_full_sweep() {
        let p = ProbeParams {
            tail: 0.0,
            ..ProbeParams::default()
        };
        let probes = gen_probe_waveforms(&p).unwrap();
        assert_eq!(probes.len(), 196);
        assert_eq!(probes[0].0, 50.0);
        assert_eq!(probes.last().unwrap().0, 2000.0);
        assert_eq!(probes[0].1.n_t(), 30_000);
        assert_eq!(probes[0].1.dims(), 3);
        // Only the driven axis carries signal.
        assert!(probes[7].1.gradients()[0].iter().any(|&x| x != 0.0));
        assert!(probes[7].1.gradients()[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn probe_rejects_nyquist_violation_and_allows_silence() {
        let bad = ProbeParams {
            f_hi: 130_000.0,
            ..ProbeParams::default()
        };
        assert!(gen_probe_waveforms(&bad).is_err());

        let silent = ProbeParams {
            amplitude: 0.0,
            f_lo: 100.0,
            f_hi: 120.0,
            duration: 0.001,
            tail: 0.0,
            ..ProbeParams::default()
        };
        let probes = gen_probe_waveforms(&silent).unwrap();
        assert_eq!(probes.len(), 3);
        assert!(probes[0].1.gradients()[0].iter().all(|&x| x == 0.0));
    }

    // Constant-angular-velocity Archimedean spiral: sample density falls off
    // as 1/|k|, which the radial density compensation cancels exactly, so the
    // PSF approaches the ideal disk response.
    fn cav_spiral(n_t: usize, turns: f64, k_max: f64, dt: f64) -> (Waveform, ArcCurve) {
        let theta_max = turns * 2.0 * std::f64::consts::PI;
        let b = k_max / theta_max;
        let k: Vec<[f64; 3]> = (0..n_t)
            .map(|n| {
                let th = theta_max * n as f64 / (n_t - 1) as f64;
                [b * th * th.cos(), b * th * th.sin(), 0.0]
            })
            .collect();
        let mut g = vec![Vec::with_capacity(n_t - 1); 2];
        for n in 0..n_t - 1 {
            for (a, axis) in g.iter_mut().enumerate() {
                axis.push((k[n + 1][a] - k[n][a]) / (GAMMA_BAR_PROTON * dt));
            }
        }
        let w = Waveform::from_gradients(g, dt).unwrap();
        let params: Vec<f64> = (0..n_t).map(|n| n as f64).collect();
        let curve = ParamCurve::new(k, params, 2, "cav-spiral").unwrap();
        let arc = crate::geometry::arclength_reparam(&curve, 2048, &hw()).unwrap();
        (w, arc)
    }

    #[test]
    fn fully_sampled_spiral_psf_matches_nominal_resolution() {
        let (w, arc) = cav_spiral(24_000, 50.0, 250.0, 4e-6);
        let report =
            psf_simulate(&w, &arc, GAMMA_BAR_PROTON, f64::INFINITY, 0.0, 16).unwrap();
        let res = report.nominal_res;
        assert!((res - 0.002).abs() <= 1e-9);
        for axis in 0..2 {
            let ratio = report.fwhm[axis] / res;
            assert!(
                (0.95..=1.10).contains(&ratio),
                "axis {axis}: fwhm ratio {ratio}"
            );
        }
        // Peak sits at the center of the image.
        let grid = report.image.len();
        let center = report.image[grid / 2][grid / 2];
        for row in &report.image {
            for &px in row {
                assert!(px <= center * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn unit_weight_psf_matches_direct_oracle() {
        let (w, arc) = cav_spiral(3000, 12.0, 250.0, 4e-6);
        let report =
            psf_simulate(&w, &arc, GAMMA_BAR_PROTON, f64::INFINITY, 0.0, 5).unwrap();

        let k0 = [arc.positions()[0][0], arc.positions()[0][1]];
        let k = w.integrate_kspace(GAMMA_BAR_PROTON, &k0);
        let mut norm = 0.0;
        for n in 0..w.n_t() {
            norm += (k[0][n] * k[0][n] + k[1][n] * k[1][n]).sqrt();
        }
        let pixel = report.pixel;
        let coord = |i: usize| (i as f64 - 2.0) * pixel;
        for (r, row) in report.image.iter().enumerate() {
            for (c, &px) in row.iter().enumerate() {
                let (x, y) = (coord(c), coord(r));
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..w.n_t() {
                    let radius = (k[0][n] * k[0][n] + k[1][n] * k[1][n]).sqrt();
                    let phase = 2.0 * std::f64::consts::PI * (k[0][n] * x + k[1][n] * y);
                    acc += radius * Complex64::from_polar(1.0, phase);
                }
                let oracle = (acc / norm).norm();
                assert!(
                    (px - oracle).abs() <= 1e-12 * oracle.max(1e-6),
                    "pixel ({r},{c}): {px} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn decay_broadens_the_psf() {
        let (w, arc) = cav_spiral(24_000, 50.0, 250.0, 4e-6);
        let sharp = psf_simulate(&w, &arc, GAMMA_BAR_PROTON, f64::INFINITY, 0.0, 4).unwrap();
        // Pure decay keeps the weights positive, so the mainlobe stays centered
        // and the width comparison is clean.
        let blurred = psf_simulate(&w, &arc, GAMMA_BAR_PROTON, 0.05, 0.0, 4).unwrap();
        for axis in 0..2 {
            assert!(blurred.fwhm[axis].is_finite(), "axis {axis} lost its mainlobe");
            assert!(blurred.fwhm[axis] > sharp.fwhm[axis]);
        }
        // Off-resonance only redistributes energy; the image stays finite.
        let off = psf_simulate(&w, &arc, GAMMA_BAR_PROTON, 0.05, 10.0, 4).unwrap();
        assert!(off.image.iter().flatten().all(|p| p.is_finite()));
    }

    #[test]
    fn psf_rejects_non_2d() {
        let arc = line_arc(100.0, 64);
        let w = Waveform::from_gradients(vec![vec![0.001; 64]], 4e-6).unwrap();
        assert!(matches!(
            psf_simulate(&w, &arc, GAMMA_BAR_PROTON, f64::INFINITY, 0.0, 8),
            Err(Error::UnsupportedKind(_))
        ));
    }
}
