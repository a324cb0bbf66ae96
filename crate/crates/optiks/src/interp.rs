//! Differentiable linear interpolation.
//!
//! The design pipeline resamples twice per iteration: arc time onto the
//! gradient raster, then arc positions at the resampled arc progress. Both
//! are linear interpolations whose bin assignments are recorded in an
//! [`InterpPlan`]. The backward pass treats the plan as frozen, which turns
//! the gather into a fixed sparse affine map with exact, cheap cotangents:
//! reverse-mode differentiation without a tape.

use crate::error::Error;
use crate::Result;

/// Relative slack (of the knot span) allowed for queries just outside the
/// knot range before they are rejected; such queries clamp to the endpoint.
const CLAMP_GUARD_REL: f64 = 1e-9;

/// Frozen bin assignments of one interpolation call: query `i` fell into
/// `[x[bin[i]], x[bin[i] + 1]]`.
#[derive(Debug, Clone)]
pub struct InterpPlan {
    bins: Vec<usize>,
    n_knots: usize,
}

impl InterpPlan {
    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn n_knots(&self) -> usize {
        self.n_knots
    }

    pub fn n_queries(&self) -> usize {
        self.bins.len()
    }
}

fn validate_knots(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "need at least 2 knots, got {}",
            x.len()
        )));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} knots vs {} values",
            x.len(),
            y.len()
        )));
    }
    for (i, w) in x.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotonicKnots(i + 1));
        }
    }
    Ok(())
}

/// Interpolate `y(x)` at query positions `p`, returning values and the bin
/// plan. Knots must be strictly increasing. Queries may exceed the knot
/// range by at most a tiny guard (then clamp); anything further is an error.
/// No extrapolation ever happens.
pub fn interp_linear(x: &[f64], y: &[f64], p: &[f64]) -> Result<(Vec<f64>, InterpPlan)> {
    validate_knots(x, y)?;
    let n = x.len();
    let lo = x[0];
    let hi = x[n - 1];
    let guard = CLAMP_GUARD_REL * (hi - lo);

    let mut q = Vec::with_capacity(p.len());
    let mut bins = Vec::with_capacity(p.len());
    // Queries are usually sorted (raster times, arc progress); a marching
    // lower bound makes that case O(n + m) while staying correct for any
    // order via restart.
    let mut march = 0usize;
    for &pi in p {
        if !pi.is_finite() || pi < lo - guard || pi > hi + guard {
            return Err(Error::QueryOutOfRange {
                query: pi,
                lo,
                hi,
            });
        }
        let pc = pi.clamp(lo, hi);
        if march > 0 && pc < x[march] {
            march = 0;
        }
        while march + 2 < n && x[march + 1] <= pc {
            march += 1;
        }
        let j = march;
        let dx = x[j + 1] - x[j];
        let w2 = (pc - x[j]) / dx;
        let w1 = (x[j + 1] - pc) / dx;
        q.push(y[j] * w1 + y[j + 1] * w2);
        bins.push(j);
    }
    Ok((q, InterpPlan { bins, n_knots: n }))
}

/// Evaluate the interpolation with a frozen plan: same affine formula, bins
/// taken from `plan` instead of re-searched. This is the map the backward
/// pass differentiates; exposed so oracles can difference it directly.
pub fn interp_apply_plan(plan: &InterpPlan, x: &[f64], y: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    if x.len() != plan.n_knots || y.len() != plan.n_knots {
        return Err(Error::StaleCache(format!(
            "plan built for {} knots, given {}/{}",
            plan.n_knots,
            x.len(),
            y.len()
        )));
    }
    if p.len() != plan.bins.len() {
        return Err(Error::StaleCache(format!(
            "plan built for {} queries, given {}",
            plan.bins.len(),
            p.len()
        )));
    }
    let mut q = Vec::with_capacity(p.len());
    for (i, &j) in plan.bins.iter().enumerate() {
        // Same arithmetic as interp_linear, term for term, so replaying a
        // plan on its own inputs is bit-identical. Queries are not clamped:
        // extrapolating within the frozen end bin is the affine continuation
        // the adjoint differentiates.
        let dx = x[j + 1] - x[j];
        let w2 = (p[i] - x[j]) / dx;
        let w1 = (x[j + 1] - p[i]) / dx;
        q.push(y[j] * w1 + y[j + 1] * w2);
    }
    Ok(q)
}

/// Cotangents of one interpolation call with respect to knots, values, and
/// queries, holding the plan fixed.
#[derive(Debug, Clone)]
pub struct InterpCotangents {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
}

/// Vector-Jacobian product of [`interp_linear`] under a frozen plan.
///
/// With `j = bin[i]`, `w1 = (x[j+1] - p) / dx`, `w2 = (p - x[j]) / dx` and
/// `slope = (y[j+1] - y[j]) / dx`:
///
/// * `d q / d p      =  slope`
/// * `d q / d y[j]   =  w1`,  `d q / d y[j+1] = w2`
/// * `d q / d x[j]   = -w1 * slope`,  `d q / d x[j+1] = -w2 * slope`
///
/// The x-derivatives follow from differentiating the affine form directly;
/// together with the p-derivative they satisfy the translation identity
/// `dq/dp + dq/dx[j] + dq/dx[j+1] = 0`.
pub fn interp_vjp(
    plan: &InterpPlan,
    x: &[f64],
    y: &[f64],
    p: &[f64],
    cot_q: &[f64],
) -> Result<InterpCotangents> {
    if x.len() != plan.n_knots || y.len() != plan.n_knots {
        return Err(Error::StaleCache(format!(
            "plan built for {} knots, given {}/{}",
            plan.n_knots,
            x.len(),
            y.len()
        )));
    }
    if p.len() != plan.bins.len() || cot_q.len() != plan.bins.len() {
        return Err(Error::StaleCache(format!(
            "plan built for {} queries, given {} queries / {} cotangents",
            plan.bins.len(),
            p.len(),
            cot_q.len()
        )));
    }
    let mut cot_x = vec![0.0; x.len()];
    let mut cot_y = vec![0.0; y.len()];
    let mut cot_p = vec![0.0; p.len()];
    for i in 0..p.len() {
        let j = plan.bins[i];
        let dx = x[j + 1] - x[j];
        let w1 = (x[j + 1] - p[i]) / dx;
        let w2 = (p[i] - x[j]) / dx;
        let slope = (y[j + 1] - y[j]) / dx;
        let c = cot_q[i];
        cot_p[i] = slope * c;
        cot_y[j] += w1 * c;
        cot_y[j + 1] += w2 * c;
        cot_x[j] -= w1 * slope * c;
        cot_x[j + 1] -= w2 * slope * c;
    }
    Ok(InterpCotangents {
        x: cot_x,
        y: cot_y,
        p: cot_p,
    })
}
