//! Design orchestration: time-optimal speed profiles used as baselines and
//! initializers, the Adam descent loop over the speed variable, and the
//! slew-derating search that produces duration- or stimulation-matched
//! reference waveforms.

use crate::analysis::{verify_limits, LimitReport};
use crate::geometry::{arclength_reparam, speed_limit, ArcCurve, HardwareLimits, ParamCurve};
use crate::losses::{assemble_loss, Atf, BandSet, LossBreakdown, LossContext, LossWeights};
use crate::pipeline::{
    backward_design_pass, forward_design_pass, gradient_and_slew, resample_to_time,
    speed_from_xi, timing_from_speed, SpeedVar, Waveform,
};
use crate::pns::{pns_response, PnsModel};
use crate::util::logit;
use crate::{Error, Result, LIMIT_TOLERANCE};

/// What the time-optimal baseline assumes about the final sample's speed.
///
/// `Zero` suits rewound or closed trajectories that must end at rest; `Free`
/// leaves the exit speed to the forward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalSpeed {
    Zero,
    #[default]
    Free,
}

/// Descent hyperparameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Initialization derate factor applied to the time-optimal profile.
    pub init_derate: f64,
    /// Adam step size on the unconstrained speed variable.
    pub step_size: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator fuzz.
    pub epsilon: f64,
    /// Hard iteration cap.
    pub max_iters: usize,
    /// Terminal-speed policy for baselines and the initializer.
    pub terminal: TerminalSpeed,
    /// Recorded for provenance; the descent itself is deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            init_derate: 0.9,
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 3000,
            terminal: TerminalSpeed::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_derate >= 0.8 && self.init_derate < 1.0) {
            return Err(Error::InvalidParams(format!(
                "init_derate must lie in [0.8, 1), got {}",
                self.init_derate
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParams("step_size must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParams(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams("epsilon must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParams("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Full description of one design problem.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub hw: HardwareLimits,
    pub weights: LossWeights,
    /// Slew barrier softness (units of s_max).
    pub delta_slew: f64,
    /// Stimulation barrier softness (percent).
    pub delta_pns: f64,
    /// Duration barrier softness as a fraction of `t_max`.
    pub delta_time_frac: f64,
    pub t_max: Option<f64>,
    pub p_max: Option<f64>,
    pub bands: Option<BandSet>,
    pub atf: Option<Atf>,
    pub pns_model: Option<PnsModel>,
    pub solver: SolverConfig,
}

impl DesignSpec {
    /// A minimal time-minimization problem under the given limits.
    pub fn time_min(hw: HardwareLimits) -> Self {
        DesignSpec {
            hw,
            weights: LossWeights {
                lambda_time: crate::losses::DEFAULT_LAMBDA_TIME,
                lambda_slew: crate::losses::DEFAULT_LAMBDA_SLEW,
                ..LossWeights::default()
            },
            delta_slew: crate::losses::DEFAULT_DELTA_SLEW,
            delta_pns: crate::losses::DEFAULT_DELTA_PNS,
            delta_time_frac: crate::losses::DEFAULT_DELTA_TIME_FRAC,
            t_max: None,
            p_max: None,
            bands: None,
            atf: None,
            pns_model: None,
            solver: SolverConfig::default(),
        }
    }

    /// A bound-duration problem: keep the waveform under `t_max` seconds
    /// instead of minimizing outright.
    pub fn time_bound(hw: HardwareLimits, t_max: f64) -> Self {
        let mut spec = DesignSpec::time_min(hw);
        spec.weights.lambda_time = 0.0;
        spec.weights.lambda_bound_time = crate::losses::DEFAULT_LAMBDA_BOUND_TIME;
        spec.t_max = Some(t_max);
        spec
    }

    /// Loss-evaluation context shared by every iteration.
    pub fn loss_context(&self) -> LossContext {
        LossContext {
            weights: self.weights,
            t_max: self.t_max,
            delta_t: self.t_max.map(|t| self.delta_time_frac * t),
            delta_s: self.delta_slew,
            delta_p: self.delta_pns,
            s_max: self.hw.s_max,
            p_max: self.p_max,
            bands: self.bands.clone(),
            atf: self.atf.clone(),
            pns: self.pns_model.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hw.validate()?;
        self.solver.validate()?;
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParams("t_max must be positive".into()));
            }
        }
        if !(self.delta_time_frac > 0.0 && self.delta_time_frac.is_finite()) {
            return Err(Error::InvalidParams("delta_time_frac must be positive".into()));
        }
        self.loss_context().validate()
    }
}

/// Outcome of a design run.
#[derive(Debug, Clone)]
pub struct DesignResult {
    /// Rasterized waveform of the returned iterate.
    pub waveform: Waveform,
    /// Traversal speed of the returned iterate on the arc grid.
    pub speed: Vec<f64>,
    /// Unconstrained speed variable of the returned iterate.
    pub xi: Vec<f64>,
    /// Raw total loss per iteration; length equals `iterations`.
    pub loss_trace: Vec<f64>,
    /// Weighted per-term values at the returned iterate.
    pub breakdown: LossBreakdown,
    /// Hardware audit of the returned iterate.
    pub report: LimitReport,
    /// Continuous duration of the returned iterate (s).
    pub duration: f64,
    /// True when the returned iterate satisfies every limit (and `t_max`,
    /// when one was set) within the shared tolerance.
    pub feasible: bool,
    /// True when the smoothed-loss stop fired before the iteration cap.
    pub converged: bool,
    /// Iterations actually run.
    pub iterations: usize,
}

// Stop when the smoothed loss moves less than this (relative) across the
// window below, and the current iterate is feasible.
const CONVERGENCE_REL: f64 = 1e-5;
const CONVERGENCE_WINDOW: usize = 200;
// Moving-average width for the smoothed loss.
const SMOOTH_WINDOW: usize = 50;
// The initializer floors the seed speed at this fraction of the local speed
// limit; without it, samples where the time-optimal profile vanishes (the
// curve ends) would give the first iterate a quasi-infinite duration.
const SEED_RATIO_FLOOR: f64 = 0.05;
// Clamp bound for the logit in init_xi.
const XI_CLAMP_EPS: f64 = 1e-9;
// Abort the descent rather than rasterize an absurdly long iterate.
const MAX_RASTER_SAMPLES: f64 = 2e7;
// Relative tolerance on derating targets.
const DERATE_REL: f64 = 5e-3;
// Arc knots may span at most this fraction of a raster step at the speed
// limit's lowest point (see `design_grid`).
const GRID_RASTER_FRACTION: f64 = 0.5;
// Memory guard for design_grid: ~250 MB of working set at f64 triples.
const MAX_GRID_KNOTS: usize = 4_000_000;

/// Reparameterize a trajectory on a grid fine enough to optimize on.
///
/// The default reparameterization keeps knots sub-raster at full gradient
/// amplitude, but slew- and curvature-limited stretches travel slower, and a
/// knot that spans several raster steps turns the rasterized gradient into a
/// staircase there: its jumps read as slew spikes no speed profile can
/// remove. Size the grid from the lowest point of the speed-limit envelope
/// instead, so every knot stays inside a raster step along the whole design.
pub fn design_grid(curve: &ParamCurve, hw: &HardwareLimits) -> Result<ArcCurve> {
    let coarse = arclength_reparam(curve, 0, hw)?;
    let v_ref = speed_limit(&coarse, hw)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let ds_target = GRID_RASTER_FRACTION * v_ref * hw.dt;
    if coarse.ds() <= ds_target {
        return Ok(coarse);
    }
    let n = (coarse.length() / ds_target).ceil() as usize + 1;
    arclength_reparam(curve, n.clamp(16, MAX_GRID_KNOTS), hw)
}

/// Solve the time-optimal traversal speed on the arc grid: forward and
/// backward sweeps of the max-acceleration bound on v², intersected
/// pointwise with the hardware speed limit. Starts from rest; ends at rest
/// when `terminal` is `Zero`.
pub fn time_optimal_speed(
    arc: &ArcCurve,
    hw: &HardwareLimits,
    terminal: TerminalSpeed,
) -> Result<Vec<f64>> {
    let v_lim = speed_limit(arc, hw)?;
    let kappa = arc.curvature();
    let ds = arc.ds();
    let n = arc.n();
    let a_full = hw.gamma_bar * hw.s_max;
    let a2_full = a_full * a_full;

    // With spacing this coarse a single max-acceleration step would leap past
    // the global speed ceiling, so the sweeps could not resolve anything.
    let v2_peak = v_lim.iter().fold(0.0f64, |m, &v| m.max(v * v));
    if 2.0 * ds * a_full > v2_peak {
        return Err(Error::InfeasibleGrid(format!(
            "arc spacing {ds} cycles/m too coarse for the acceleration bound; \
             one step spans the entire speed range"
        )));
    }

    let mut v2: Vec<f64> = v_lim.iter().map(|&v| v * v).collect();
    v2[0] = 0.0;
    if terminal == TerminalSpeed::Zero {
        v2[n - 1] = 0.0;
    }
    for i in 0..n - 1 {
        let bound = (a2_full - kappa[i] * kappa[i] * v2[i] * v2[i]).max(0.0);
        v2[i + 1] = v2[i + 1].min(v2[i] + 2.0 * ds * bound.sqrt());
    }
    for i in (0..n - 1).rev() {
        let bound = (a2_full - kappa[i + 1] * kappa[i + 1] * v2[i + 1] * v2[i + 1]).max(0.0);
        v2[i] = v2[i].min(v2[i + 1] + 2.0 * ds * bound.sqrt());
    }
    Ok(v2.into_iter().map(f64::sqrt).collect())
}

/// Cumulative traversal time of a speed profile that may rest at either end:
/// each interval contributes `2Δs/(v_i + v_{i+1})`, the exact segment time
/// when v² varies linearly — which is the sweeps' own local model.
pub fn baseline_timing(v: &[f64], ds: f64) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidParams("need at least 2 speed samples".into()));
    }
    let mut t = Vec::with_capacity(v.len());
    t.push(0.0);
    for i in 0..v.len() - 1 {
        let pair = v[i] + v[i + 1];
        if !(pair > 0.0) {
            return Err(Error::NonpositiveSpeed(i + 1));
        }
        t.push(t[i] + 2.0 * ds / pair);
    }
    Ok(t)
}

/// Total traversal time of a (possibly end-resting) speed profile.
pub fn baseline_duration(v: &[f64], ds: f64) -> Result<f64> {
    Ok(*baseline_timing(v, ds)?.last().unwrap())
}

/// Rasterize the waveform that traverses `arc` at the given speed profile.
pub fn baseline_waveform(arc: &ArcCurve, hw: &HardwareLimits, v: &[f64]) -> Result<Waveform> {
    if v.len() != arc.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} speed samples vs {} arc samples",
            v.len(),
            arc.n()
        )));
    }
    let t_of_s = baseline_timing(v, arc.ds())?;
    let rs = resample_to_time(arc, &t_of_s, hw.dt)?;
    gradient_and_slew(&rs.c_t, hw)
}

/// Invert the speed squash on a derated profile:
/// `ξ₀ = logit(clamp(α·v*/v_max, ε, 1−ε))` with ε = 1e-9.
pub fn init_xi(v_star: &[f64], v_max: &[f64], alpha: f64) -> Result<SpeedVar> {
    if v_star.len() != v_max.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} speeds vs {} limits",
            v_star.len(),
            v_max.len()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let xi = v_star
        .iter()
        .zip(v_max)
        .map(|(&vs, &vm)| {
            let ratio = (alpha * vs / vm).clamp(XI_CLAMP_EPS, 1.0 - XI_CLAMP_EPS);
            logit(ratio)
        })
        .collect();
    Ok(SpeedVar::new(xi))
}

/// First and second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `xi` in place.
pub fn adam_step(
    state: &mut AdamState,
    xi: &mut [f64],
    grad: &[f64],
    cfg: &SolverConfig,
) -> Result<()> {
    if xi.len() != state.m.len() || grad.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam state holds {} components, got xi {} / grad {}",
            state.m.len(),
            xi.len(),
            grad.len()
        )));
    }
    for (i, &g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                iter: state.t + 1,
                component: i,
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..xi.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        xi[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Run the full design loop on a trajectory.
///
/// Seeds from the derated time-optimal profile, then repeats
/// forward pass → loss assembly → adjoint → Adam until the smoothed loss
/// stalls while feasible, or the iteration cap. Returns the best feasible
/// iterate seen; when no iterate was ever feasible, returns the lowest-loss
/// iterate with `feasible = false` so the caller can report which limits
/// failed.
///
/// Feasible iterates are ranked by duration when the duration-minimizing
/// term is active, and by total loss otherwise. The barrier terms reward
/// widening the margin below each limit, so on long runs the raw loss keeps
/// improving while the waveform slows down; duration is the honest score
/// for a duration objective.
pub fn run_design(arc: &ArcCurve, spec: &DesignSpec) -> Result<DesignResult> {
    spec.validate()?;
    let hw = &spec.hw;
    let ctx = spec.loss_context();
    let v_max = speed_limit(arc, hw)?;
    let v_star = time_optimal_speed(arc, hw, spec.solver.terminal)?;
    let v_seed: Vec<f64> = v_star
        .iter()
        .zip(&v_max)
        .map(|(&vs, &vm)| vs.max(SEED_RATIO_FLOOR * vm))
        .collect();
    let mut xi = init_xi(&v_seed, &v_max, spec.solver.init_derate)?.xi;

    let mut adam = AdamState::new(xi.len());
    let mut loss_trace = Vec::with_capacity(spec.solver.max_iters);
    let mut smoothed = Vec::with_capacity(spec.solver.max_iters);
    let mut rolling_sum = 0.0;

    let mut best_feasible: Option<(f64, Vec<f64>)> = None;
    let mut best_any: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;

    for iter in 0..spec.solver.max_iters {
        guard_duration(&xi, &v_max, arc.ds(), hw.dt)?;
        let fwd = forward_design_pass(arc, hw, &v_max, &xi)?;
        let (bd, cot) = assemble_loss(&fwd.waveform, fwd.t_total, &ctx)?;
        let feasible = iterate_feasible(&fwd.waveform, fwd.t_total, spec);

        loss_trace.push(bd.total);
        rolling_sum += bd.total;
        if loss_trace.len() > SMOOTH_WINDOW {
            rolling_sum -= loss_trace[loss_trace.len() - 1 - SMOOTH_WINDOW];
        }
        smoothed.push(rolling_sum / loss_trace.len().min(SMOOTH_WINDOW) as f64);

        let score = if spec.weights.lambda_time > 0.0 { fwd.t_total } else { bd.total };
        if feasible && best_feasible.as_ref().is_none_or(|(s, _)| score < *s) {
            best_feasible = Some((score, xi.clone()));
        }
        if best_any.as_ref().is_none_or(|(l, _)| bd.total < *l) {
            best_any = Some((bd.total, xi.clone()));
        }

        if feasible && iter + 1 > CONVERGENCE_WINDOW {
            let now = smoothed[iter];
            let then = smoothed[iter - CONVERGENCE_WINDOW];
            if (now - then).abs() < CONVERGENCE_REL * then.abs() {
                converged = true;
                break;
            }
        }

        let grad = backward_design_pass(arc, hw, &fwd, &cot)?;
        adam_step(&mut adam, &mut xi, &grad, &spec.solver)?;
    }

    let (feasible, final_xi) = match (best_feasible, best_any) {
        (Some((_, xi)), _) => (true, xi),
        (None, Some((_, xi))) => (false, xi),
        (None, None) => unreachable!("loop ran at least once"),
    };

    let fwd = forward_design_pass(arc, hw, &v_max, &final_xi)?;
    let (breakdown, _) = assemble_loss(&fwd.waveform, fwd.t_total, &ctx)?;
    let report = verify_limits(
        &fwd.waveform,
        hw,
        spec.pns_model.as_ref().map(|m| (m, spec.p_max.unwrap_or(f64::INFINITY))),
    );
    let iterations = loss_trace.len();
    Ok(DesignResult {
        speed: fwd.speed().to_vec(),
        duration: fwd.t_total,
        waveform: fwd.waveform,
        xi: final_xi,
        loss_trace,
        breakdown,
        report,
        feasible,
        converged,
        iterations,
    })
}

// Refuse to rasterize an iterate whose duration exploded; with the seed
// floor in place this only fires if the descent itself diverged.
fn guard_duration(xi: &[f64], v_max: &[f64], ds: f64, dt: f64) -> Result<()> {
    let v = speed_from_xi(xi, v_max)?;
    let t = timing_from_speed(&v, ds)?;
    let t_total = *t.last().unwrap();
    if !(t_total / dt <= MAX_RASTER_SAMPLES) {
        return Err(Error::InfeasibleGrid(format!(
            "iterate duration {t_total} s would need more than {MAX_RASTER_SAMPLES} raster samples"
        )));
    }
    Ok(())
}

// Feasible = hardware limits pass at the shared tolerance, and the duration
// bound (when requested) holds at the same tolerance.
fn iterate_feasible(w: &Waveform, t_total: f64, spec: &DesignSpec) -> bool {
    let report = verify_limits(
        w,
        &spec.hw,
        spec.pns_model
            .as_ref()
            .and_then(|m| spec.p_max.map(|p| (m, p))),
    );
    let t_ok = spec
        .t_max
        .is_none_or(|t_max| t_total <= t_max * (1.0 + LIMIT_TOLERANCE));
    report.all_pass() && t_ok
}

/// What the derating search should match.
#[derive(Debug, Clone, Copy)]
pub enum DerateTarget {
    /// Find the s_max whose time-optimal baseline peaks at this stimulation
    /// percentage.
    PnsMax(f64),
    /// Find the s_max whose time-optimal baseline lasts this long (s).
    Duration(f64),
}

/// A derated time-optimal reference.
#[derive(Debug, Clone)]
pub struct DeratedBaseline {
    /// Slew limit that met the target (T/m/s).
    pub s_max: f64,
    /// Time-optimal waveform under that limit.
    pub waveform: Waveform,
    /// Its continuous duration (s).
    pub duration: f64,
    /// Its speed profile on the arc grid.
    pub v_star: Vec<f64>,
}

/// Bisect a global slew derate until the time-optimal baseline meets the
/// target within 0.5% relative. Both metrics are monotone in s_max: duration
/// falls as slew rises, peak stimulation climbs with it.
pub fn derate_baseline(
    arc: &ArcCurve,
    hw: &HardwareLimits,
    target: DerateTarget,
    terminal: TerminalSpeed,
    pns_model: Option<&PnsModel>,
) -> Result<DeratedBaseline> {
    hw.validate()?;
    let build = |s_max: f64| -> Result<DeratedBaseline> {
        let probe_hw = HardwareLimits { s_max, ..*hw };
        let v_star = time_optimal_speed(arc, &probe_hw, terminal)?;
        let duration = baseline_duration(&v_star, arc.ds())?;
        let waveform = baseline_waveform(arc, &probe_hw, &v_star)?;
        Ok(DeratedBaseline {
            s_max,
            waveform,
            duration,
            v_star,
        })
    };
    let metric = |b: &DeratedBaseline| -> Result<f64> {
        match target {
            DerateTarget::Duration(_) => Ok(b.duration),
            DerateTarget::PnsMax(_) => {
                let model = pns_model.ok_or_else(|| {
                    Error::InvalidParams("stimulation target needs a pns model".into())
                })?;
                Ok(pns_response(&b.waveform, model)
                    .into_iter()
                    .fold(0.0f64, f64::max))
            }
        }
    };
    let goal = match target {
        DerateTarget::Duration(t) => t,
        DerateTarget::PnsMax(p) => p,
    };
    if !(goal > 0.0 && goal.is_finite()) {
        return Err(Error::InvalidParams("derate target must be positive".into()));
    }

    let full = build(hw.s_max)?;
    let full_metric = metric(&full)?;
    match target {
        DerateTarget::Duration(t) => {
            // Even the undertated baseline is too slow: no derate can help.
            if t < full_metric * (1.0 - DERATE_REL) {
                return Err(Error::TargetUnreachable(format!(
                    "requested duration {t} s but the full-slew baseline needs {full_metric} s"
                )));
            }
            if (full_metric - t).abs() <= DERATE_REL * t {
                return Ok(full);
            }
        }
        DerateTarget::PnsMax(p) => {
            // Already under the stimulation ceiling: nothing to derate.
            if full_metric <= p * (1.0 + DERATE_REL) {
                return Ok(full);
            }
        }
    }

    // Bracket from below: metric(duration) grows and metric(pns) shrinks as
    // s_max falls, so halving always crosses the goal eventually.
    let mut hi = hw.s_max;
    let mut lo = hw.s_max / 2.0;
    let mut lo_probe = build(lo)?;
    for _ in 0..200 {
        let m = metric(&lo_probe)?;
        let bracketed = match target {
            DerateTarget::Duration(t) => m >= t,
            DerateTarget::PnsMax(p) => m <= p,
        };
        if bracketed {
            break;
        }
        hi = lo;
        lo /= 2.0;
        if lo <= 0.0 || !lo.is_finite() {
            return Err(Error::TargetUnreachable(
                "derating search collapsed to zero slew".into(),
            ));
        }
        lo_probe = build(lo)?;
    }

    let mut best = lo_probe;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let probe = build(mid)?;
        let m = metric(&probe)?;
        if (m - goal).abs() <= DERATE_REL * goal {
            return Ok(probe);
        }
        let go_up = match target {
            // Too slow: allow more slew.
            DerateTarget::Duration(t) => m > t,
            // Still too stimulating: allow less.
            DerateTarget::PnsMax(p) => m < p,
        };
        if go_up {
            lo = mid;
        } else {
            hi = mid;
        }
        best = probe;
    }
    let m = metric(&best)?;
    if (m - goal).abs() <= DERATE_REL * goal {
        Ok(best)
    } else {
        Err(Error::TargetUnreachable(format!(
            "bisection stalled at metric {m} vs goal {goal}"
        )))
    }
}
