//! Shared FFT plumbing for the spectral loss terms and the analyzer.
//!
//! Conventions, used consistently everywhere:
//!
//! * forward DFT is unnormalized: `X[k] = sum_n x[n] exp(-2*pi*i*k*n/N)`;
//! * signals are zero-padded (never windowed) to a power of two chosen so
//!   bins are at most 5 Hz apart — fine enough that a 10 Hz-spaced band
//!   edge cannot alias into or out of a band;
//! * bin `k` of an N-point transform carries physical frequency
//!   `min(k, N-k) / (N*dt)`, so masks over all N bins automatically pick
//!   up the conjugate half.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::sync::{Mutex, OnceLock};

use crate::util::next_pow2;

/// Widest acceptable spacing between DFT bins, Hz.
pub const MAX_BIN_HZ: f64 = 5.0;

static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();

fn with_planner<R>(f: impl FnOnce(&mut FftPlanner<f64>) -> R) -> R {
    let m = PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()));
    let mut guard = m.lock().unwrap_or_else(|p| p.into_inner());
    f(&mut guard)
}

/// Transform length for `n` samples at raster `dt`: next power of two that
/// both fits the signal and keeps bin spacing `1/(len*dt)` at or below
/// [`MAX_BIN_HZ`].
pub fn fft_len(n: usize, dt: f64) -> usize {
    let min_for_bins = (1.0 / (MAX_BIN_HZ * dt)).ceil() as usize;
    next_pow2(n.max(min_for_bins).max(2))
}

/// Unnormalized forward DFT of a real signal zero-padded to `len`.
pub fn spectrum(signal: &[f64], len: usize) -> Vec<Complex64> {
    assert!(len >= signal.len(), "transform shorter than signal");
    let mut buf: Vec<Complex64> = signal
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    with_planner(|p| p.plan_fft_forward(len)).process(&mut buf);
    buf
}

/// Unnormalized inverse DFT: `y[n] = sum_k X[k] exp(+2*pi*i*k*n/N)`.
/// Composing with [`spectrum`] scales by `N`.
pub fn inverse(spec: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spec.to_vec();
    with_planner(|p| p.plan_fft_inverse(buf.len())).process(&mut buf);
    buf
}

/// Physical (folded) frequency of bin `k` in an `len`-point transform.
pub fn bin_freq(k: usize, len: usize, dt: f64) -> f64 {
    let folded = k.min(len - k) as f64;
    folded / (len as f64 * dt)
}

/// `sum_k mask[k] * |spec[k]|^2`.
pub fn masked_power(spec: &[Complex64], mask: &[f64]) -> f64 {
    spec.iter()
        .zip(mask)
        .map(|(x, &m)| m * x.norm_sqr())
        .sum()
}

/// Gradient of [`masked_power`] with respect to the first `n_keep` real
/// input samples: `2 * Re(IDFT(mask .* spec))[n]`. Samples in the zero
/// padding are not free variables, so their components are dropped.
pub fn masked_power_grad(spec: &[Complex64], mask: &[f64], n_keep: usize) -> Vec<f64> {
    let weighted: Vec<Complex64> = spec.iter().zip(mask).map(|(x, &m)| x * m).collect();
    let back = inverse(&weighted);
    back.iter().take(n_keep).map(|x| 2.0 * x.re).collect()
}
