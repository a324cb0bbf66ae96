//! Built-in k-space trajectory generators: variable-density spirals,
//! rosettes, and circular echo-planar rasters.
//!
//! Generators emit geometry only (a densely sampled [`ParamCurve`]); timing
//! is the solver's job. Every curve starts at the k-space origin, reaches a
//! maximum radius of `1/(2 * resolution)` cycles/m, and is sampled at least
//! eight times per expected gradient raster step so downstream finite
//! differences stay well conditioned.

use std::fmt;
use std::sync::Arc;

use crate::error::Error;
use crate::geometry::{HardwareLimits, ParamCurve};
use crate::Result;

/// Radial undersampling law `R(u)` for spirals, with `u = r / k_max` in
/// [0, 1]. `R = 1` is fully sampled; larger values space turns further
/// apart. The radial density of the spiral is left to the caller; there is
/// no built-in "preferred" law.
#[derive(Clone)]
pub enum Density {
    /// Constant undersampling factor.
    Uniform(f64),
    /// Linear ramp from `center` at the origin to `edge` at `k_max`.
    Linear { center: f64, edge: f64 },
    /// Arbitrary user law; must return values >= 1 for all `u` in [0, 1].
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Density {
    fn at(&self, u: f64) -> f64 {
        match self {
            Density::Uniform(r) => *r,
            Density::Linear { center, edge } => center + (edge - center) * u,
            Density::Custom(f) => f(u),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Density::Uniform(r) => {
                if !(r.is_finite() && *r >= 1.0) {
                    return Err(Error::InvalidParams(format!(
                        "undersampling must be >= 1, got {r}"
                    )));
                }
            }
            Density::Linear { center, edge } => {
                if !(center.is_finite() && edge.is_finite() && *center >= 1.0 && *edge >= 1.0) {
                    return Err(Error::InvalidParams(format!(
                        "undersampling must be >= 1, got {center}..{edge}"
                    )));
                }
            }
            Density::Custom(f) => {
                for i in 0..=64 {
                    let u = i as f64 / 64.0;
                    let r = f(u);
                    if !(r.is_finite() && r >= 1.0) {
                        return Err(Error::InvalidParams(format!(
                            "custom density law returned {r} at u = {u}; must be >= 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform(r) => write!(f, "Uniform({r})"),
            Density::Linear { center, edge } => write!(f, "Linear({center}..{edge})"),
            Density::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpiralParams {
    /// Field of view, meters.
    pub fov: f64,
    /// Nominal resolution, meters; `k_max = 1 / (2 * res)`.
    pub res: f64,
    /// Radial undersampling law.
    pub density: Density,
    /// Append a smooth rewinder back to the k-space origin.
    pub rewind: bool,
}

#[derive(Debug, Clone)]
pub struct RosetteParams {
    pub res: f64,
    /// Number of petals, >= 2.
    pub petals: u32,
}

#[derive(Debug, Clone)]
pub struct CepiParams {
    pub fov: f64,
    pub res: f64,
    /// Phase-encode undersampling: line spacing is `r_y / fov`.
    pub r_y: f64,
}

#[derive(Debug, Clone)]
pub enum TrajectoryKind {
    Spiral(SpiralParams),
    Rosette(RosetteParams),
    Cepi(CepiParams),
}

/// Generate a densely sampled trajectory. `hw` sets the sampling density
/// (eight points per raster step at the local speed limit); it does not
/// otherwise shape the curve.
pub fn gen_trajectory(kind: &TrajectoryKind, hw: &HardwareLimits) -> Result<ParamCurve> {
    hw.validate()?;
    match kind {
        TrajectoryKind::Spiral(p) => gen_spiral(p, hw),
        TrajectoryKind::Rosette(p) => gen_rosette(p, hw),
        TrajectoryKind::Cepi(p) => gen_cepi(p, hw),
    }
}

/// Local chord target: eight knots per raster step at the speed the slew
/// limit allows through curvature `kappa`. A knot spanning a sizable
/// fraction of a raster step turns the corner it approximates into a slew
/// spike once rasterized, so high-curvature stretches — where any feasible
/// design must crawl — need proportionally finer sampling.
fn chord_target(hw: &HardwareLimits, kappa: f64) -> f64 {
    let v_lim = hw
        .k_speed_max()
        .min((hw.gamma_bar * hw.s_max / kappa.max(1e-12)).sqrt());
    v_lim * hw.dt / 8.0
}

fn check_fov_res(fov: f64, res: f64) -> Result<f64> {
    if !(fov.is_finite() && fov > 0.0) {
        return Err(Error::InvalidParams(format!("fov must be positive, got {fov}")));
    }
    if !(res.is_finite() && res > 0.0) {
        return Err(Error::InvalidParams(format!(
            "resolution must be positive, got {res}"
        )));
    }
    if res > fov {
        return Err(Error::InvalidParams(format!(
            "resolution {res} exceeds fov {fov}"
        )));
    }
    Ok(1.0 / (2.0 * res))
}

/// Assemble 2D samples into a curve parameterized by cumulative chord
/// length, dropping sliver chords (piece boundaries can emit near-duplicate
/// points) that would vanish inside the running sum's rounding.
fn curve_from_xy(samples: &[[f64; 2]], label: &str) -> Result<ParamCurve> {
    let total: f64 = samples
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum();
    let eps = (1e-12 * total).max(1e-14);
    let mut points: Vec<[f64; 3]> = Vec::with_capacity(samples.len());
    let mut params: Vec<f64> = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    for &[x, y] in samples {
        if let Some(last) = points.last() {
            let d = ((x - last[0]).powi(2) + (y - last[1]).powi(2)).sqrt();
            if d < eps {
                continue;
            }
            acc += d;
        }
        points.push([x, y, 0.0]);
        params.push(acc);
    }
    ParamCurve::new(points, params, 2, label)
}

// Angular step cap: at least 64 samples per turn regardless of arc step, so
// tight center turns stay resolved.
const DTHETA_CAP: f64 = std::f64::consts::PI / 32.0;

fn gen_spiral(p: &SpiralParams, hw: &HardwareLimits) -> Result<ParamCurve> {
    let k_max = check_fov_res(p.fov, p.res)?;
    p.density.validate()?;

    // dr/dtheta = R(r/k_max) / (2 pi fov): adjacent turns sit R/fov apart.
    let rprime = |r: f64| p.density.at((r / k_max).clamp(0.0, 1.0)) / (2.0 * std::f64::consts::PI * p.fov);

    let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut r = 0.0f64;
    let mut th = 0.0f64;
    loop {
        let rp = rprime(r);
        // Archimedean curvature is ~1/r away from the center and ~2/r' at it.
        let ds = chord_target(hw, 2.0 / r.max(rp));
        let speed = (r * r + rp * rp).sqrt();
        // Midpoint refinement keeps the actual chord at or below `ds` even
        // though the speed grows along the step.
        let guess = (ds / speed).min(DTHETA_CAP);
        let r_probe = r + rp * 0.5 * guess;
        let rp_probe = rprime(r_probe);
        let speed_mid = (r_probe * r_probe + rp_probe * rp_probe).sqrt();
        let dth = (ds / speed_mid).min(DTHETA_CAP);
        let r_mid = r + rp * 0.5 * dth;
        let mut r_next = r + rprime(r_mid) * dth;
        let mut th_next = th + dth;
        if r_next >= k_max {
            let frac = (k_max - r) / (r_next - r);
            th_next = th + dth * frac;
            r_next = k_max;
            pts.push([r_next * th_next.cos(), r_next * th_next.sin()]);
            break;
        }
        pts.push([r_next * th_next.cos(), r_next * th_next.sin()]);
        r = r_next;
        th = th_next;
    }

    if p.rewind {
        append_rewinder(&mut pts, k_max, th, hw);
    }
    curve_from_xy(&pts, "spiral")
}

/// Smooth return to the origin: a short arc along the `k_max` circle
/// (keeping the exact maximum radius on the curve), then a cubic Hermite
/// blend that leaves the circle tangentially and arrives at the origin
/// radially. Tangent magnitudes are shrunk until the blend stays inside the
/// footprint.
fn append_rewinder(pts: &mut Vec<[f64; 2]>, k_max: f64, th_end: f64, hw: &HardwareLimits) {
    let arc_span = 0.2f64; // radians along the footprint circle
    let ds = chord_target(hw, 1.0 / k_max);
    let n_arc = ((k_max * arc_span / ds).ceil() as usize).max(8);
    for i in 1..=n_arc {
        let a = th_end + arc_span * i as f64 / n_arc as f64;
        pts.push([k_max * a.cos(), k_max * a.sin()]);
    }
    let a1 = th_end + arc_span;
    let p0 = [k_max * a1.cos(), k_max * a1.sin()];
    let radial = [a1.cos(), a1.sin()];
    let azim = [-a1.sin(), a1.cos()];

    let hermite = |l0: f64, l1: f64, u: f64| -> [f64; 2] {
        let h00 = 2.0 * u.powi(3) - 3.0 * u.powi(2) + 1.0;
        let h10 = u.powi(3) - 2.0 * u.powi(2) + u;
        let h11 = u.powi(3) - u.powi(2);
        [
            h00 * p0[0] + h10 * l0 * azim[0] - h11 * l1 * radial[0],
            h00 * p0[1] + h10 * l0 * azim[1] - h11 * l1 * radial[1],
        ]
    };

    // The blend bends tighter than the footprint circle; budget 4x its
    // curvature.
    let ds_blend = chord_target(hw, 4.0 / k_max);
    let n_blend = ((2.0 * k_max / ds_blend).ceil() as usize).max(32);
    let mut l0 = 0.6 * k_max;
    let l1 = k_max;
    for _ in 0..60 {
        let bulge = (1..=n_blend)
            .map(|i| {
                let b = hermite(l0, l1, i as f64 / n_blend as f64);
                (b[0] * b[0] + b[1] * b[1]).sqrt()
            })
            .fold(0.0, f64::max);
        if bulge <= k_max {
            break;
        }
        l0 *= 0.75;
    }
    for i in 1..=n_blend {
        pts.push(hermite(l0, l1, i as f64 / n_blend as f64));
    }
    // Hermite lands exactly on the origin at u = 1 up to rounding; pin it.
    if let Some(last) = pts.last_mut() {
        *last = [0.0, 0.0];
    }
}

fn gen_rosette(p: &RosetteParams, hw: &HardwareLimits) -> Result<ParamCurve> {
    if !(p.res.is_finite() && p.res > 0.0) {
        return Err(Error::InvalidParams(format!(
            "resolution must be positive, got {}",
            p.res
        )));
    }
    let k_max = 1.0 / (2.0 * p.res);
    if p.petals < 2 {
        return Err(Error::InvalidParams(format!(
            "rosette needs at least 2 petals, got {}",
            p.petals
        )));
    }
    let petals = p.petals as u64;

    // k(t) = k_max sin(w1 t) e^(i w2 t). One half period of the sine is one
    // petal; the petal-to-petal rotation is pi (1 + w2/w1). Picking
    // w2/w1 = 2m/p - 1 with gcd(m, p) = 1 spreads p petals evenly over the
    // circle and closes the curve at the origin after p petals.
    let mut m = petals / 2 + 1;
    while gcd(m, petals) != 1 {
        m += 1;
    }
    let w1 = 1.0f64;
    let w2 = 2.0 * m as f64 / petals as f64 - 1.0;

    let t_end = petals as f64 * std::f64::consts::PI / w1;
    let pos = |t: f64| -> [f64; 2] {
        let rad = k_max * (w1 * t).sin();
        [rad * (w2 * t).cos(), rad * (w2 * t).sin()]
    };
    let speed = |t: f64| -> f64 {
        let (s1, c1) = (w1 * t).sin_cos();
        k_max * ((w1 * c1).powi(2) + (w2 * s1).powi(2)).sqrt()
    };
    // kappa = |k' x k''| / |k'|^3 from the closed form; the cross product
    // collapses to 2 w1^2 w2 cos^2 + w2 (w1^2 + w2^2) sin^2 times k_max^2.
    let kappa = |t: f64| -> f64 {
        let (s1, c1) = (w1 * t).sin_cos();
        let cross = k_max * k_max
            * (2.0 * w1 * w1 * w2 * c1 * c1 + w2 * (w1 * w1 + w2 * w2) * s1 * s1);
        cross.abs() / speed(t).max(1e-12).powi(3)
    };

    let t_cap = std::f64::consts::PI / (w1.max(w2) * 64.0);
    let mut pts: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut t = 0.0f64;
    let mut next_peak = 0.5 * std::f64::consts::PI / w1;
    while t < t_end {
        // Trial step, then re-check curvature at its midpoint so the chord
        // budget does not lag behind a tightening petal tip.
        let trial = (chord_target(hw, kappa(t)) / speed(t).max(1e-12)).min(t_cap);
        let ds = chord_target(hw, kappa(t + 0.5 * trial));
        let mut t_next = t + (ds / speed(t).max(1e-12)).min(t_cap);
        // Land exactly on petal peaks so the maximum radius is attained.
        if t < next_peak && t_next >= next_peak {
            t_next = next_peak;
            next_peak += std::f64::consts::PI / w1;
        }
        if t_next >= t_end {
            t_next = t_end;
        }
        pts.push(pos(t_next));
        t = t_next;
    }
    if let Some(last) = pts.last_mut() {
        *last = [0.0, 0.0]; // sin(p * pi) up to rounding
    }
    curve_from_xy(&pts, "rosette")
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn gen_cepi(p: &CepiParams, hw: &HardwareLimits) -> Result<ParamCurve> {
    let k_max = check_fov_res(p.fov, p.res)?;
    if !(p.r_y.is_finite() && p.r_y >= 1.0) {
        return Err(Error::InvalidParams(format!(
            "phase undersampling must be >= 1, got {}",
            p.r_y
        )));
    }
    let dky = p.r_y / p.fov;
    // Straight readouts are amplitude-limited; turnarounds ride the
    // footprint circle.
    let ds = chord_target(hw, 0.0);
    let ds_turn = chord_target(hw, 1.0 / k_max);

    // Readout lines clipped to the circular footprint, symmetric around
    // ky = 0 so the equator line touches the footprint at exactly k_max.
    let n_half = ((k_max * (1.0 - 1e-9)) / dky).floor() as i64;
    let mut lines: Vec<(f64, f64)> = Vec::new(); // (ky, half width)
    for j in -n_half..=n_half {
        let ky = j as f64 * dky;
        let w = (k_max * k_max - ky * ky).sqrt();
        if w >= dky / 8.0 {
            lines.push((ky, w));
        }
    }
    if lines.len() < 2 {
        return Err(Error::InvalidParams(
            "fov/res/r_y give fewer than two readout lines".into(),
        ));
    }

    let sample_seg = |a: [f64; 2], b: [f64; 2]| -> Vec<[f64; 2]> {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = ((len / ds).ceil() as usize).max(4);
        (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                [a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u]
            })
            .collect()
    };

    let mut pieces: Vec<Vec<[f64; 2]>> = Vec::new();
    let first_start = [-lines[0].1, lines[0].0];
    pieces.push(sample_seg([0.0, 0.0], first_start));
    for (m, &(ky, w)) in lines.iter().enumerate() {
        let dir = if m % 2 == 0 { 1.0 } else { -1.0 };
        pieces.push(sample_seg([-dir * w, ky], [dir * w, ky]));
        if m + 1 < lines.len() {
            // Turnaround along the footprint circle, same side as travel.
            let (ky2, w2) = lines[m + 1];
            let a0 = f64::atan2(ky, dir * w);
            let a1 = f64::atan2(ky2, dir * w2);
            let mut delta = a1 - a0;
            while delta > std::f64::consts::PI {
                delta -= 2.0 * std::f64::consts::PI;
            }
            while delta < -std::f64::consts::PI {
                delta += 2.0 * std::f64::consts::PI;
            }
            let arc_len = (k_max * delta).abs();
            let n = ((arc_len / ds_turn).ceil() as usize).max(8);
            let arc: Vec<[f64; 2]> = (0..=n)
                .map(|i| {
                    let a = a0 + delta * i as f64 / n as f64;
                    [k_max * a.cos(), k_max * a.sin()]
                })
                .collect();
            pieces.push(arc);
        }
    }

    // A quadratic blend over legs of length lf bends at roughly 4/lf.
    let lf = dky / 2.0;
    let joined = join_with_fillets(&pieces, lf, chord_target(hw, 4.0 / lf));
    curve_from_xy(&joined, "cepi")
}

fn poly_len(p: &[[f64; 2]]) -> f64 {
    p.windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

/// Drop `cut` of arc length from the end (`from_end`) or start of a
/// polyline, interpolating the exact trim point.
fn trim(poly: &[[f64; 2]], cut: f64, from_end: bool) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = if from_end {
        poly.to_vec()
    } else {
        poly.iter().rev().cloned().collect()
    };
    let mut remaining = cut;
    while pts.len() >= 2 {
        let n = pts.len();
        let seg = (
            pts[n - 1][0] - pts[n - 2][0],
            pts[n - 1][1] - pts[n - 2][1],
        );
        let len = (seg.0 * seg.0 + seg.1 * seg.1).sqrt();
        if len >= remaining {
            let u = (len - remaining) / len;
            pts[n - 1] = [pts[n - 2][0] + seg.0 * u, pts[n - 2][1] + seg.1 * u];
            break;
        }
        remaining -= len;
        pts.pop();
    }
    if !from_end {
        pts.reverse();
    }
    pts
}

/// Join consecutive pieces (which share their junction point) by trimming a
/// fillet length off each side and bridging with a quadratic Bezier through
/// the original corner. The Bezier stays inside the convex hull of the
/// corner triangle, so joins never leave a convex footprint.
fn join_with_fillets(pieces: &[Vec<[f64; 2]>], fillet: f64, ds: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = pieces[0].clone();
    for next in &pieces[1..] {
        let corner = *next.first().unwrap();
        let lf = fillet
            .min(poly_len(&out) / 3.0)
            .min(poly_len(next) / 3.0)
            .max(0.0);
        let head = trim(&out, lf, true);
        let tail = trim(next, lf, false);
        let a = *head.last().unwrap();
        let b = *tail.first().unwrap();
        out = head;
        let ctrl_len = ((corner[0] - a[0]).powi(2) + (corner[1] - a[1]).powi(2)).sqrt()
            + ((b[0] - corner[0]).powi(2) + (b[1] - corner[1]).powi(2)).sqrt();
        let n = ((ctrl_len / ds).ceil() as usize).max(8);
        for i in 1..=n {
            let u = i as f64 / n as f64;
            let w0 = (1.0 - u) * (1.0 - u);
            let w1 = 2.0 * u * (1.0 - u);
            let w2 = u * u;
            out.push([
                w0 * a[0] + w1 * corner[0] + w2 * b[0],
                w0 * a[1] + w1 * corner[1] + w2 * b[1],
            ]);
        }
        out.extend_from_slice(&tail[1..]);
    }
    out
}
