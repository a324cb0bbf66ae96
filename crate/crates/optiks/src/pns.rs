//! Peripheral nerve stimulation response model and its barrier term.
//!
//! The nerve response to a slew waveform is modeled as a causal
//! convolution with the kernel `h(t) = alpha*c / (r*(c + t)^2)` and
//! reported as a percentage of the stimulation threshold:
//! `P(t) = 100 * ||(h * S)(t)||_2` across axes. The L2 norm across axes
//! makes the response — like every other limit in this crate — invariant
//! under rotation of the gradient axes.

use num_complex::Complex64;

use crate::error::Error;
use crate::losses::{llb_scalar, llb_scalar_grad, BarrierConfig};
use crate::pipeline::Waveform;
use crate::spectral::{inverse, spectrum};
use crate::util::next_pow2;
use crate::Result;

/// Nerve-model constants. These are gradient-coil specific and normally
/// come from the system vendor; [`PnsModel::placeholder`] provides a
/// documented stand-in for tests and examples only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnsModel {
    /// Rheobase `r`, T/m/s: minimum effective stimulating slew rate.
    pub rheobase: f64,
    /// Chronaxie `c`, s: duration constant of the response kernel.
    pub chronaxie: f64,
    /// Effective coil length `alpha`, m.
    pub coil_length: f64,
}

impl PnsModel {
    pub fn new(rheobase: f64, chronaxie: f64, coil_length: f64) -> Result<Self> {
        for (name, v) in [
            ("rheobase", rheobase),
            ("chronaxie", chronaxie),
            ("coil_length", coil_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "pns {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(PnsModel { rheobase, chronaxie, coil_length })
    }

    /// Stand-in constants (r = 20 T/m/s, c = 360 us, alpha = 0.333 m) in
    /// the range of published gradient systems. Not manufacturer data —
    /// real designs must load the system's own model file.
    pub fn placeholder() -> Self {
        PnsModel { rheobase: 20.0, chronaxie: 360e-6, coil_length: 0.333 }
    }
}

/// Sampled response kernel `h[k] = alpha*c / (r*(c + k*dt)^2)`, strictly
/// decreasing from `h[0] = alpha/(r*c)`.
pub fn nerve_kernel(m: &PnsModel, dt: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            m.coil_length * m.chronaxie / (m.rheobase * (m.chronaxie + t).powi(2))
        })
        .collect()
}

/// Causal convolution `dt * (h * s)` quadrature, trapezoid-weighted:
/// the integrand's endpoint samples carry half weight, which keeps the
/// discrete sum within a fraction of a percent of the continuous
/// convolution even at raster steps two orders of magnitude below the
/// chronaxie. Plain rectangle weighting leaves a constant `dt/(2c)`
/// relative bias (about 0.56% at 4 us) that never converges away.
fn conv_trapezoid(h: &[f64], s: &[f64], dt: f64) -> Vec<f64> {
    let raw = causal_conv_fft(h, s);
    let mut out: Vec<f64> = (0..s.len())
        .map(|k| dt * (raw[k] - 0.5 * h[0] * s[k] - 0.5 * h[k] * s[0]))
        .collect();
    // The k = 0 row is identically zero (a zero-length integral); writing
    // it as such spares the FFT roundoff that would otherwise leak in.
    out[0] = 0.0;
    out
}

/// Plain causal convolution sums via FFT with zero padding (no circular
/// wrap); only the first `s.len()` outputs are kept.
fn causal_conv_fft(h: &[f64], s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let len = next_pow2(2 * n - 1);
    let hf = spectrum(h, len);
    let sf = spectrum(s, len);
    let prod: Vec<Complex64> = hf.iter().zip(&sf).map(|(a, b)| a * b).collect();
    let back = inverse(&prod);
    back.iter().take(n).map(|x| x.re / len as f64).collect()
}

/// Direct-form counterpart of [`conv_trapezoid`], kept as the oracle the
/// FFT path is tested against.
#[cfg(test)]
pub(crate) fn conv_trapezoid_direct(h: &[f64], s: &[f64], dt: f64) -> Vec<f64> {
    (0..s.len())
        .map(|k| {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += h[j] * s[k - j];
            }
            acc -= 0.5 * h[0] * s[k] + 0.5 * h[k] * s[0];
            acc * dt
        })
        .collect()
}

/// Per-axis nerve responses, before the norm. Shared by the response and
/// its adjoint so both see identical values.
fn axis_responses(slew: &[Vec<f64>], dt: f64, m: &PnsModel) -> Vec<Vec<f64>> {
    let n = slew[0].len();
    let h = nerve_kernel(m, dt, n);
    slew.iter().map(|axis| conv_trapezoid(&h, axis, dt)).collect()
}

/// Stimulation percentage over time: `P[k] = 100 * ||conv_axes[k]||_2`,
/// one sample per slew sample.
pub fn pns_response(w: &Waveform, m: &PnsModel) -> Vec<f64> {
    pns_response_from_slew(w.slew(), w.dt(), m)
}

pub(crate) fn pns_response_from_slew(slew: &[Vec<f64>], dt: f64, m: &PnsModel) -> Vec<f64> {
    let conv = axis_responses(slew, dt, m);
    let mut p = vec![0.0; slew[0].len()];
    for axis in &conv {
        for (o, &x) in p.iter_mut().zip(axis) {
            *o += x * x;
        }
    }
    for o in p.iter_mut() {
        *o = 100.0 * o.sqrt();
    }
    p
}

/// Relaxed barrier on the stimulation percentage.
pub fn pns_barrier(w: &Waveform, m: &PnsModel, cfg: &BarrierConfig) -> f64 {
    pns_barrier_grad(w.slew(), w.dt(), m, cfg).0
}

/// Barrier value plus cotangents with respect to the per-axis slew
/// arrays. The adjoint of the causal convolution is a correlation with
/// the same kernel plus the two boundary half-weight corrections.
pub(crate) fn pns_barrier_grad(
    slew: &[Vec<f64>],
    dt: f64,
    m: &PnsModel,
    cfg: &BarrierConfig,
) -> (f64, Vec<Vec<f64>>) {
    let n = slew[0].len();
    let h = nerve_kernel(m, dt, n);
    let conv: Vec<Vec<f64>> = slew.iter().map(|axis| conv_trapezoid(&h, axis, dt)).collect();
    let mut norms = vec![0.0; n];
    for axis in &conv {
        for (o, &x) in norms.iter_mut().zip(axis) {
            *o += x * x;
        }
    }
    let mut value = 0.0;
    let mut cot_p = vec![0.0; n];
    for k in 0..n {
        norms[k] = norms[k].sqrt();
        let p = 100.0 * norms[k];
        value += llb_scalar(p, cfg);
        cot_p[k] = llb_scalar_grad(p, cfg);
    }

    let mut cot_slew = Vec::with_capacity(slew.len());
    for axis_conv in &conv {
        // Through the norm: dP[k]/dconv[k] = 100 * conv[k] / ||conv[k]||.
        // A zero norm has no direction; its cotangent is dropped.
        let u: Vec<f64> = (0..n)
            .map(|k| {
                if norms[k] == 0.0 {
                    0.0
                } else {
                    cot_p[k] * 100.0 * axis_conv[k] / norms[k]
                }
            })
            .collect();
        cot_slew.push(conv_transpose(&h, &u, dt));
    }
    (value, cot_slew)
}

/// Transpose of [`conv_trapezoid`] as a linear map in `s`:
/// `cot_s[j] = dt * (corr[j] - 0.5 h[0] u[j] - [j=0] 0.5 corr[0])`
/// with `corr[j] = sum_{k >= j} u[k] h[k-j]`.
fn conv_transpose(h: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let n = u.len();
    let rev: Vec<f64> = u.iter().rev().copied().collect();
    let y = causal_conv_fft_full(&rev, h, 2 * n - 1);
    let corr: Vec<f64> = (0..n).map(|j| y[n - 1 - j]).collect();
    (0..n)
        .map(|j| {
            let mut v = corr[j] - 0.5 * h[0] * u[j];
            if j == 0 {
                v -= 0.5 * corr[0];
            }
            v * dt
        })
        .collect()
}

fn causal_conv_fft_full(a: &[f64], b: &[f64], keep: usize) -> Vec<f64> {
    let len = next_pow2(a.len() + b.len() - 1);
    let af = spectrum(a, len);
    let bf = spectrum(b, len);
    let prod: Vec<Complex64> = af.iter().zip(&bf).map(|(x, y)| x * y).collect();
    let back = inverse(&prod);
    back.iter().take(keep).map(|x| x.re / len as f64).collect()
}
