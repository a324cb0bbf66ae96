//! The differentiable design pipeline.
//!
//! Forward direction, per iteration:
//!
//! 1. `v(s) = v_max(s) * sigmoid(xi(s))` — speeds bounded by hardware.
//! 2. `t(s)` — trapezoid integral of `1/v` on the arc grid.
//! 3. `s(t)` — invert by interpolating `(t(s), s)` at raster times.
//! 4. `C(t)` — interpolate arc positions at the resampled progress.
//! 5. `g, S` — forward differences on the raster.
//!
//! The backward pass replays that chain in reverse through exact
//! vector-Jacobian products, with both interpolation plans frozen to the
//! bins recorded on the forward pass. Freezing makes the map piecewise
//! affine, so the adjoint is cheap and matches finite differences of the
//! frozen forward map to rounding error.

use crate::error::Error;
use crate::geometry::{ArcCurve, HardwareLimits};
use crate::interp::{interp_apply_plan, interp_linear, interp_vjp, InterpPlan};
use crate::util::sigmoid;
use crate::Result;

pub use crate::interp::InterpCotangents;

/// Unconstrained speed parameters on the arc grid. The sigmoid squash in
/// [`speed_from_xi`] maps any real value into `(0, v_max)`, so feasibility
/// of the amplitude limit is structural, not enforced by penalties.
#[derive(Debug, Clone)]
pub struct SpeedVar {
    pub xi: Vec<f64>,
}

impl SpeedVar {
    pub fn new(xi: Vec<f64>) -> Self {
        SpeedVar { xi }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// A gradient waveform on a uniform raster.
///
/// `slew` is always the exact forward difference of `g` divided by `dt`;
/// the constructor computes it so the two can never drift apart.
#[derive(Debug, Clone)]
pub struct Waveform {
    g: Vec<Vec<f64>>,
    slew: Vec<Vec<f64>>,
    dt: f64,
}

impl Waveform {
    /// Build from per-axis gradient samples (T/m). All axes must share a
    /// length of at least 2.
    pub fn from_gradients(g: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        if g.is_empty() || !(1..=3).contains(&g.len()) {
            return Err(Error::ShapeMismatch(format!(
                "waveform needs 1..=3 axes, got {}",
                g.len()
            )));
        }
        let n_t = g[0].len();
        if n_t < 2 {
            return Err(Error::ShapeMismatch("waveform needs at least 2 samples".into()));
        }
        if g.iter().any(|a| a.len() != n_t) {
            return Err(Error::ShapeMismatch("waveform axes differ in length".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let slew = g
            .iter()
            .map(|axis| {
                axis.windows(2)
                    .map(|w| (w[1] - w[0]) / dt)
                    .collect::<Vec<f64>>()
            })
            .collect();
        Ok(Waveform { g, slew, dt })
    }

    pub fn dims(&self) -> usize {
        self.g.len()
    }

    pub fn n_t(&self) -> usize {
        self.g[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Raster duration `(n_t - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.n_t() - 1) as f64 * self.dt
    }

    /// Per-axis gradient samples, T/m.
    pub fn gradients(&self) -> &[Vec<f64>] {
        &self.g
    }

    /// Per-axis slew samples (length `n_t - 1`), T/m/s.
    pub fn slew(&self) -> &[Vec<f64>] {
        &self.slew
    }

    /// Across-axis Euclidean norm of the gradient at each sample.
    pub fn grad_norms(&self) -> Vec<f64> {
        norms_across_axes(&self.g)
    }

    /// Across-axis Euclidean norm of the slew at each sample.
    pub fn slew_norms(&self) -> Vec<f64> {
        norms_across_axes(&self.slew)
    }

    /// Cumulative integral `k[n] = k0 + gamma_bar * dt * sum(g[..n])` per
    /// axis: the k-space path this waveform traverses.
    pub fn integrate_kspace(&self, gamma_bar: f64, k0: &[f64]) -> Vec<Vec<f64>> {
        self.g
            .iter()
            .enumerate()
            .map(|(a, axis)| {
                let mut k = Vec::with_capacity(axis.len());
                let mut acc = if a < k0.len() { k0[a] } else { 0.0 };
                k.push(acc);
                for &gi in &axis[..axis.len() - 1] {
                    acc += gamma_bar * gi * self.dt;
                    k.push(acc);
                }
                k
            })
            .collect()
    }
}

pub(crate) fn norms_across_axes(axes: &[Vec<f64>]) -> Vec<f64> {
    let n = axes[0].len();
    let mut out = vec![0.0; n];
    for axis in axes {
        for (o, &x) in out.iter_mut().zip(axis) {
            *o += x * x;
        }
    }
    for o in out.iter_mut() {
        *o = o.sqrt();
    }
    out
}

/// Map unconstrained `xi` to speeds: `v = v_max * sigmoid(xi)`, strictly
/// inside `(0, v_max)` until the sigmoid saturates in floating point.
pub fn speed_from_xi(xi: &[f64], v_max: &[f64]) -> Result<Vec<f64>> {
    if xi.len() != v_max.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} xi values vs {} speed limits",
            xi.len(),
            v_max.len()
        )));
    }
    Ok(xi
        .iter()
        .zip(v_max)
        .map(|(&x, &vm)| vm * sigmoid(x))
        .collect())
}

/// Trapezoid integral of `1/v` over a uniform arc grid with spacing `ds`:
/// `t[0] = 0`, `t[i] = t[i-1] + ds * (1/v[i-1] + 1/v[i]) / 2`.
pub fn timing_from_speed(v: &[f64], ds: f64) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::ShapeMismatch("need at least 2 speed samples".into()));
    }
    for (i, &vi) in v.iter().enumerate() {
        if !(vi > 0.0 && vi.is_finite()) {
            return Err(Error::NonpositiveSpeed(i));
        }
    }
    let mut t = Vec::with_capacity(v.len());
    t.push(0.0);
    let mut acc = 0.0;
    for i in 1..v.len() {
        acc += ds * 0.5 * (1.0 / v[i - 1] + 1.0 / v[i]);
        t.push(acc);
    }
    Ok(t)
}

/// Positions resampled onto the gradient raster.
#[derive(Debug, Clone)]
pub struct TimeResample {
    /// Arc progress at each raster time.
    pub s_of_t: Vec<f64>,
    /// Per-axis positions at each raster time.
    pub c_t: Vec<Vec<f64>>,
    /// Bins of the `t(s) -> s` inversion.
    pub plan_time: InterpPlan,
    /// Bins of the position lookup (shared by all axes).
    pub plan_pos: InterpPlan,
}

/// Resample the curve onto raster times `0, dt, ..., floor(T/dt) * dt`.
/// The `t(s)` inversion is itself a linear interpolation with the roles of
/// knots and values swapped, which is what makes the whole chain
/// differentiable with one primitive.
pub fn resample_to_time(arc: &ArcCurve, t_of_s: &[f64], dt: f64) -> Result<TimeResample> {
    if t_of_s.len() != arc.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} times vs {} arc samples",
            t_of_s.len(),
            arc.n()
        )));
    }
    let t_total = *t_of_s.last().unwrap();
    let n_t = ((t_total / dt) * (1.0 + 1e-12) + 1e-9).floor() as usize + 1;
    if n_t < 4 {
        return Err(Error::RasterTooCoarse(format!(
            "duration {t_total} s spans fewer than 4 raster steps of {dt} s"
        )));
    }
    let times: Vec<f64> = (0..n_t).map(|i| i as f64 * dt).collect();
    let (s_of_t, plan_time) = interp_linear(t_of_s, arc.s_grid(), &times)?;

    let mut c_t = Vec::with_capacity(arc.dims());
    let first_axis = arc.axis_positions(0);
    let (c0, plan_pos) = interp_linear(arc.s_grid(), &first_axis, &s_of_t)?;
    c_t.push(c0);
    for a in 1..arc.dims() {
        let axis = arc.axis_positions(a);
        c_t.push(interp_apply_plan(&plan_pos, arc.s_grid(), &axis, &s_of_t)?);
    }
    Ok(TimeResample {
        s_of_t,
        c_t,
        plan_time,
        plan_pos,
    })
}

/// Differentiate raster positions into a gradient waveform:
/// `g[n] = (C[n+1] - C[n]) / (gamma_bar * dt)`, last sample held so the
/// waveform has as many samples as the position raster.
pub fn gradient_and_slew(c_t: &[Vec<f64>], hw: &HardwareLimits) -> Result<Waveform> {
    hw.validate()?;
    let n_t = c_t[0].len();
    if n_t < 2 {
        return Err(Error::ShapeMismatch("need at least 2 raster samples".into()));
    }
    let g = c_t
        .iter()
        .map(|axis| {
            let mut ga: Vec<f64> = axis
                .windows(2)
                .map(|w| (w[1] - w[0]) / (hw.gamma_bar * hw.dt))
                .collect();
            ga.push(*ga.last().unwrap());
            ga
        })
        .collect();
    Waveform::from_gradients(g, hw.dt)
}

/// Everything the forward pass computed, kept for the backward replay.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub waveform: Waveform,
    /// Total traversal time `t(L)`, seconds. The raster duration is this
    /// rounded down to a whole number of steps.
    pub t_total: f64,
    pub(crate) sigma: Vec<f64>,
    v: Vec<f64>,
    t_of_s: Vec<f64>,
    s_of_t: Vec<f64>,
    plan_time: InterpPlan,
    plan_pos: InterpPlan,
}

impl ForwardPass {
    /// Speed profile on the arc grid, cycles/m/s.
    pub fn speed(&self) -> &[f64] {
        &self.v
    }

    /// Arc traversal schedule `t(s)` on the arc grid.
    pub fn t_of_s(&self) -> &[f64] {
        &self.t_of_s
    }

    pub fn s_of_t(&self) -> &[f64] {
        &self.s_of_t
    }
}

/// Run the full forward chain for one iterate.
pub fn forward_design_pass(
    arc: &ArcCurve,
    hw: &HardwareLimits,
    v_max: &[f64],
    xi: &[f64],
) -> Result<ForwardPass> {
    if v_max.len() != arc.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} speed limits vs {} arc samples",
            v_max.len(),
            arc.n()
        )));
    }
    let sigma: Vec<f64> = xi.iter().map(|&x| sigmoid(x)).collect();
    let v = speed_from_xi(xi, v_max)?;
    let t_of_s = timing_from_speed(&v, arc.ds())?;
    let t_total = *t_of_s.last().unwrap();
    let rs = resample_to_time(arc, &t_of_s, hw.dt)?;
    let waveform = gradient_and_slew(&rs.c_t, hw)?;
    Ok(ForwardPass {
        waveform,
        t_total,
        sigma,
        v,
        t_of_s,
        s_of_t: rs.s_of_t,
        plan_time: rs.plan_time,
        plan_pos: rs.plan_pos,
    })
}

/// Re-run the forward chain for a new `xi` with the raster length and both
/// interpolation plans frozen to an earlier pass.
///
/// This is the map whose finite differences the adjoint matches exactly: a
/// free re-run lets a perturbation shift a sample into a neighbouring
/// interpolation bin (or change the raster length outright), and the
/// resulting kink has no analytic counterpart in [`backward_design_pass`].
pub fn forward_design_pass_frozen(
    arc: &ArcCurve,
    hw: &HardwareLimits,
    v_max: &[f64],
    xi: &[f64],
    base: &ForwardPass,
) -> Result<(Waveform, f64)> {
    let v = speed_from_xi(xi, v_max)?;
    let t_of_s = timing_from_speed(&v, arc.ds())?;
    let t_total = *t_of_s.last().unwrap();
    let n_t = base.waveform.n_t();
    let times: Vec<f64> = (0..n_t).map(|i| i as f64 * hw.dt).collect();
    let s_of_t = interp_apply_plan(&base.plan_time, &t_of_s, arc.s_grid(), &times)?;
    let mut c_t = Vec::with_capacity(arc.dims());
    for a in 0..arc.dims() {
        let axis = arc.axis_positions(a);
        c_t.push(interp_apply_plan(&base.plan_pos, arc.s_grid(), &axis, &s_of_t)?);
    }
    let waveform = gradient_and_slew(&c_t, hw)?;
    Ok((waveform, t_total))
}

/// Loss cotangents with respect to the waveform arrays and total time.
#[derive(Debug, Clone)]
pub struct LossCotangents {
    /// d loss / d g, per axis, length `n_t`.
    pub g: Vec<Vec<f64>>,
    /// d loss / d slew, per axis, length `n_t - 1`.
    pub slew: Vec<Vec<f64>>,
    /// d loss / d t_total.
    pub t_total: f64,
}

impl LossCotangents {
    pub fn zeros(dims: usize, n_t: usize) -> Self {
        LossCotangents {
            g: vec![vec![0.0; n_t]; dims],
            slew: vec![vec![0.0; n_t - 1]; dims],
            t_total: 0.0,
        }
    }

    pub fn add(&mut self, other: &LossCotangents) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.slew.iter_mut().zip(&other.slew) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.t_total += other.t_total;
    }
}

/// Replay the forward chain in reverse: cotangents on the waveform arrays
/// and total time become a cotangent on `xi`, with both interpolation plans
/// frozen to the forward pass's bins.
pub fn backward_design_pass(
    arc: &ArcCurve,
    hw: &HardwareLimits,
    fwd: &ForwardPass,
    cot: &LossCotangents,
) -> Result<Vec<f64>> {
    let n_t = fwd.waveform.n_t();
    let dims = fwd.waveform.dims();
    let n_s = arc.n();
    if fwd.v.len() != n_s || fwd.t_of_s.len() != n_s {
        return Err(Error::StaleCache(format!(
            "forward pass holds {} arc samples, curve has {}",
            fwd.v.len(),
            n_s
        )));
    }
    if cot.g.len() != dims || cot.slew.len() != dims {
        return Err(Error::StaleCache(format!(
            "cotangents for {} axes, waveform has {}",
            cot.g.len(),
            dims
        )));
    }
    if cot.g.iter().any(|a| a.len() != n_t) || cot.slew.iter().any(|a| a.len() != n_t - 1) {
        return Err(Error::StaleCache("cotangent lengths disagree with waveform".into()));
    }

    let gdt = hw.gamma_bar * hw.dt;
    let times: Vec<f64> = (0..n_t).map(|i| i as f64 * hw.dt).collect();
    let mut cot_s_of_t = vec![0.0; n_t];

    for a in 0..dims {
        // Slew into gradient: slew[n] = (g[n+1] - g[n]) / dt.
        let mut cot_g: Vec<f64> = cot.g[a].clone();
        for n in 0..n_t - 1 {
            let c = cot.slew[a][n] / hw.dt;
            cot_g[n + 1] += c;
            cot_g[n] -= c;
        }
        // Held last sample: g[n_t-1] is an alias of g[n_t-2].
        cot_g[n_t - 2] += cot_g[n_t - 1];
        // Gradient into positions: g[n] = (C[n+1] - C[n]) / (gamma_bar dt).
        let mut cot_c = vec![0.0; n_t];
        for n in 0..n_t - 1 {
            let c = cot_g[n] / gdt;
            cot_c[n + 1] += c;
            cot_c[n] -= c;
        }
        // Positions into arc progress (knots and values are constants).
        let axis = arc.axis_positions(a);
        let vjp = interp_vjp(&fwd.plan_pos, arc.s_grid(), &axis, &fwd.s_of_t, &cot_c)?;
        for (o, x) in cot_s_of_t.iter_mut().zip(&vjp.p) {
            *o += x;
        }
    }

    // Arc progress into the traversal schedule. Raster times are constants;
    // the schedule is the knot vector of the inversion.
    let vjp = interp_vjp(
        &fwd.plan_time,
        &fwd.t_of_s,
        arc.s_grid(),
        &times,
        &cot_s_of_t,
    )?;
    let mut cot_t = vjp.x;
    *cot_t.last_mut().unwrap() += cot.t_total;

    // Trapezoid timing adjoint: t[i] = sum of increments; a suffix sum turns
    // per-time cotangents into per-increment ones.
    let ds = arc.ds();
    let mut cot_w = vec![0.0; n_s]; // w = 1/v
    let mut suffix = 0.0;
    for k in (1..n_s).rev() {
        suffix += cot_t[k];
        cot_w[k - 1] += suffix * ds * 0.5;
        cot_w[k] += suffix * ds * 0.5;
    }

    // Through w = 1/v and v = v_max * sigmoid(xi).
    let mut cot_xi = vec![0.0; n_s];
    for k in 0..n_s {
        let cot_v = -cot_w[k] / (fwd.v[k] * fwd.v[k]);
        cot_xi[k] = cot_v * fwd.v[k] * (1.0 - fwd.sigma[k]);
    }
    Ok(cot_xi)
}
