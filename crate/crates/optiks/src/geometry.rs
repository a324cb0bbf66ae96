//! Trajectory geometry: parametric curves, arc-length reparameterization,
//! and the pointwise hardware speed limit.
//!
//! A [`ParamCurve`] is a densely sampled curve `C(p)` in k-space (cycles/m)
//! with an arbitrary strictly increasing parameter. [`arclength_reparam`]
//! resamples it onto a uniform arc-length grid, carrying tangents and
//! curvature so later stages never have to differentiate positions twice.
//! [`speed_limit`] converts curvature plus gradient hardware limits into the
//! maximum admissible traversal speed at every arc position.

use crate::error::Error;
use crate::util::{linspace, norm3};
use crate::Result;

/// Gradient hardware description.
///
/// `gamma_bar` is the reduced gyromagnetic ratio in Hz/T, so that a gradient
/// amplitude `g` (T/m) moves through k-space at `gamma_bar * g` cycles/m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareLimits {
    /// Peak gradient amplitude per axis norm, T/m. Strictly positive.
    pub g_max: f64,
    /// Peak slew rate norm, T/m/s. Strictly positive.
    pub s_max: f64,
    /// Reduced gyromagnetic ratio, Hz/T.
    pub gamma_bar: f64,
    /// Gradient raster time, seconds.
    pub dt: f64,
}

/// Default reduced gyromagnetic ratio for protons, Hz/T.
pub const GAMMA_BAR_PROTON: f64 = 42_577_478.518;

/// Default gradient raster time, seconds.
pub const DEFAULT_DT: f64 = 4e-6;

impl HardwareLimits {
    /// Limits with the proton gyromagnetic ratio and 4 us raster.
    pub fn new(g_max: f64, s_max: f64) -> Self {
        HardwareLimits {
            g_max,
            s_max,
            gamma_bar: GAMMA_BAR_PROTON,
            dt: DEFAULT_DT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::InvalidParams("g_max must be positive".into()));
        }
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return Err(Error::InvalidParams("s_max must be positive".into()));
        }
        if !(self.gamma_bar > 0.0 && self.gamma_bar.is_finite()) {
            return Err(Error::InvalidParams("gamma_bar must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParams("dt must be positive".into()));
        }
        Ok(())
    }

    /// Top speed through k-space at full gradient amplitude, cycles/m/s.
    pub fn k_speed_max(&self) -> f64 {
        self.gamma_bar * self.g_max
    }
}

/// A sampled parametric curve in k-space.
///
/// Positions are stored as `[f64; 3]` with only the first `dims` components
/// meaningful. Parameters are strictly increasing but otherwise arbitrary
/// (generator angle, time, chord length, ...).
#[derive(Debug, Clone)]
pub struct ParamCurve {
    points: Vec<[f64; 3]>,
    params: Vec<f64>,
    dims: usize,
    label: String,
}

impl ParamCurve {
    /// Build a curve from samples. Requires `points.len() == params.len() >= 4`,
    /// strictly increasing params, `dims` in 1..=3, finite coordinates.
    pub fn new(
        points: Vec<[f64; 3]>,
        params: Vec<f64>,
        dims: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(Error::InvalidParams(format!("dims must be 1..=3, got {dims}")));
        }
        if points.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} params",
                points.len(),
                params.len()
            )));
        }
        if points.len() < 4 {
            return Err(Error::DegenerateCurve(format!(
                "need at least 4 samples, got {}",
                points.len()
            )));
        }
        for (i, w) in params.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotonicParams(i + 1));
            }
        }
        for p in &points {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::DegenerateCurve("non-finite coordinate".into()));
            }
        }
        Ok(ParamCurve {
            points,
            params,
            dims,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Largest distance of any sample from the k-space origin.
    pub fn max_radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| norm3(p, self.dims))
            .fold(0.0, f64::max)
    }
}

/// A curve resampled on a uniform arc-length grid.
///
/// Holds everything downstream stages need: positions, unit tangents,
/// curvature magnitude, total length, and the grid itself.
#[derive(Debug, Clone)]
pub struct ArcCurve {
    s_grid: Vec<f64>,
    positions: Vec<[f64; 3]>,
    tangent: Vec<[f64; 3]>,
    curvature: Vec<f64>,
    length: f64,
    dims: usize,
    label: String,
}

impl ArcCurve {
    pub fn n(&self) -> usize {
        self.s_grid.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform arc-length grid, `s_grid[0] == 0`, `s_grid[n-1] == length`.
    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Unit tangents (`|T| == 1` within 1e-6).
    pub fn tangent(&self) -> &[[f64; 3]] {
        &self.tangent
    }

    /// Curvature magnitude, 1/(cycles/m); nonnegative.
    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Arc-length spacing `length / (n - 1)`.
    pub fn ds(&self) -> f64 {
        self.length / (self.n() - 1) as f64
    }

    /// Positions of one axis as a contiguous vector.
    pub fn axis_positions(&self, axis: usize) -> Vec<f64> {
        self.positions.iter().map(|p| p[axis]).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| norm3(p, self.dims))
            .fold(0.0, f64::max)
    }
}

/// First and second derivatives of `f` sampled on a (possibly nonuniform)
/// strictly increasing grid. Three-point stencils: central in the interior,
/// one-sided at the ends; exact for quadratics.
fn derivatives_nonuniform(xs: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        let hl = xs[i] - xs[i - 1];
        let hr = xs[i + 1] - xs[i];
        let denom = hl * hr * (hl + hr);
        d1[i] = (f[i + 1] * hl * hl - f[i - 1] * hr * hr + f[i] * (hr * hr - hl * hl)) / denom;
        d2[i] = 2.0 * (f[i - 1] * hr - f[i] * (hl + hr) + f[i + 1] * hl) / denom;
    }
    // One-sided 3-point stencils at the ends, also exact for quadratics.
    {
        let h0 = xs[1] - xs[0];
        let h1 = xs[2] - xs[1];
        d1[0] = -(2.0 * h0 + h1) / (h0 * (h0 + h1)) * f[0] + (h0 + h1) / (h0 * h1) * f[1]
            - h0 / (h1 * (h0 + h1)) * f[2];
        d2[0] = 2.0 * (f[0] * h1 - f[1] * (h0 + h1) + f[2] * h0) / (h0 * h1 * (h0 + h1));
        let hm = xs[n - 2] - xs[n - 3];
        let he = xs[n - 1] - xs[n - 2];
        d1[n - 1] = he / (hm * (hm + he)) * f[n - 3] - (hm + he) / (hm * he) * f[n - 2]
            + (2.0 * he + hm) / (he * (hm + he)) * f[n - 1];
        d2[n - 1] =
            2.0 * (f[n - 3] * he - f[n - 2] * (hm + he) + f[n - 1] * hm) / (hm * he * (hm + he));
    }
    (d1, d2)
}

/// Linear interpolation of tabulated `(xs, ys)` at sorted query positions.
/// Internal helper for resampling; the differentiable primitive used by the
/// design pipeline lives in [`crate::interp`].
fn resample_linear(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = Vec::with_capacity(queries.len());
    let mut j = 0usize;
    for &q in queries {
        while j + 2 < n && xs[j + 1] < q {
            j += 1;
        }
        let w = (q - xs[j]) / (xs[j + 1] - xs[j]);
        let w = w.clamp(0.0, 1.0);
        out.push(ys[j] * (1.0 - w) + ys[j + 1] * w);
    }
    out
}

/// Resample a curve onto `n` uniform arc-length samples.
///
/// Arc length accumulates the trapezoid integral of `|C'(p)|`; curvature is
/// `|C''(s)|` obtained from parameter-space derivatives via the chain rule,
/// so it stays accurate even when the output grid is coarser than the input.
/// Pass `n = 0` to size the grid automatically: the smallest `n` whose
/// spacing satisfies `ds <= gamma_bar * g_max * dt / 4`.
pub fn arclength_reparam(curve: &ParamCurve, n: usize, hw: &HardwareLimits) -> Result<ArcCurve> {
    hw.validate()?;
    let m = curve.len();
    if m < 16 {
        return Err(Error::DegenerateCurve(format!(
            "need at least 16 samples to reparameterize, got {m}"
        )));
    }
    let dims = curve.dims();
    let params = curve.params();

    // Per-axis derivatives with respect to the native parameter.
    let mut d1_axes = Vec::with_capacity(dims);
    let mut d2_axes = Vec::with_capacity(dims);
    for a in 0..dims {
        let f: Vec<f64> = curve.points().iter().map(|p| p[a]).collect();
        let (d1, d2) = derivatives_nonuniform(params, &f);
        d1_axes.push(d1);
        d2_axes.push(d2);
    }

    // Speed |C'(p)| and cumulative arc length (trapezoid).
    let mut speed = vec![0.0; m];
    for i in 0..m {
        let mut acc = 0.0;
        for a in 0..dims {
            acc += d1_axes[a][i] * d1_axes[a][i];
        }
        speed[i] = acc.sqrt();
    }
    let mut s_of_p = vec![0.0; m];
    for i in 1..m {
        s_of_p[i] = s_of_p[i - 1] + 0.5 * (speed[i] + speed[i - 1]) * (params[i] - params[i - 1]);
    }
    let length = s_of_p[m - 1];
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::DegenerateCurve("zero or non-finite length".into()));
    }
    for (i, w) in s_of_p.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateCurve(format!(
                "stalled arc length near sample {}",
                i + 1
            )));
        }
    }

    // Curvature at input samples: C''(s) = (C''(p) s' - C'(p) s'') / s'^3
    // with s' = |C'(p)| and s'' = (C' . C'') / |C'|.
    let mut kappa_in = vec![0.0; m];
    for i in 0..m {
        let sp = speed[i];
        if sp <= 0.0 {
            return Err(Error::DegenerateCurve(format!(
                "vanishing derivative at sample {i}"
            )));
        }
        let mut dot = 0.0;
        for a in 0..dims {
            dot += d1_axes[a][i] * d2_axes[a][i];
        }
        let spp = dot / sp;
        let mut acc = 0.0;
        for a in 0..dims {
            let c2s = (d2_axes[a][i] * sp - d1_axes[a][i] * spp) / (sp * sp * sp);
            acc += c2s * c2s;
        }
        kappa_in[i] = acc.sqrt();
    }

    let n = if n == 0 {
        let ds_target = hw.k_speed_max() * hw.dt / 4.0;
        ((length / ds_target).ceil() as usize + 1).max(16)
    } else {
        n
    };
    if n < 16 {
        return Err(Error::InvalidParams(format!(
            "arc grid needs at least 16 samples, got {n}"
        )));
    }

    let s_grid = linspace(0.0, length, n);
    let mut positions = vec![[0.0; 3]; n];
    let mut tangent = vec![[0.0; 3]; n];
    for a in 0..dims {
        let pos_a: Vec<f64> = curve.points().iter().map(|p| p[a]).collect();
        let res = resample_linear(&s_of_p, &pos_a, &s_grid);
        let tan_a: Vec<f64> = (0..m).map(|i| d1_axes[a][i] / speed[i]).collect();
        let tres = resample_linear(&s_of_p, &tan_a, &s_grid);
        for i in 0..n {
            positions[i][a] = res[i];
            tangent[i][a] = tres[i];
        }
    }
    // Interpolated tangents lose unit norm between knots; renormalize.
    for t in tangent.iter_mut() {
        let nrm = norm3(t, dims);
        if nrm > 0.0 {
            for x in t.iter_mut().take(dims) {
                *x /= nrm;
            }
        }
    }
    let curvature = resample_linear(&s_of_p, &kappa_in, &s_grid);

    Ok(ArcCurve {
        s_grid,
        positions,
        tangent,
        curvature,
        length,
        dims,
        label: curve.label().to_string(),
    })
}

/// Pointwise speed limit on the arc grid, cycles/m/s:
/// `v_max(s) = min(gamma_bar * g_max, sqrt(gamma_bar * s_max / kappa(s)))`.
/// Straight sections (`kappa == 0`) take the amplitude branch exactly.
pub fn speed_limit(arc: &ArcCurve, hw: &HardwareLimits) -> Result<Vec<f64>> {
    hw.validate()?;
    let v_amp = hw.k_speed_max();
    let out = arc
        .curvature()
        .iter()
        .map(|&k| {
            if k <= 0.0 {
                v_amp
            } else {
                v_amp.min((hw.gamma_bar * hw.s_max / k).sqrt())
            }
        })
        .collect();
    Ok(out)
}
