//! Command-line entry points: `design`, `analyze`, `fit-atf`, and `gen`.
//!
//! Every command is a pure function from parsed arguments to a
//! [`CommandOutcome`]; the binary prints the summary and exits with the
//! embedded code (0 success, 1 infeasible design or failed check, 2 bad
//! input). Outputs depend only on the input files and flags, so identical
//! invocations produce bitwise-identical artifacts.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{self, LimitReport};
use crate::error::Error;
use crate::generators::{
    self, CepiParams, Density, RosetteParams, SpiralParams, TrajectoryKind,
};
use crate::geometry::{ArcCurve, HardwareLimits, DEFAULT_DT, GAMMA_BAR_PROTON};
use crate::solver;
use crate::{io, Result};

/// Gradient-waveform design and audit tool.
#[derive(Debug, Parser)]
#[command(name = "optiks", version, disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Optimize the traversal speed of a k-space trajectory.
    Design(DesignArgs),
    /// Audit an existing waveform file.
    Analyze(AnalyzeArgs),
    /// Fit an acoustic transfer function from sweep measurements.
    FitAtf(FitAtfArgs),
    /// Write a trajectory file from a parametric family.
    Gen(GenArgs),
}

/// What a command did: the process exit code, the artifacts it wrote, and a
/// printable summary. Exit code 0 implies every requested artifact exists.
#[derive(Debug)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// INI design config.
    #[arg(long)]
    pub config: PathBuf,
    /// Trajectory file; overrides the config's `files.trajectory`.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Generate the trajectory in-process instead of reading one.
    #[arg(long, value_enum, conflicts_with = "trajectory")]
    pub gen: Option<GenKind>,
    #[command(flatten)]
    pub gen_params: GenParamFlags,
    /// Output directory for the design artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's solver seed (recorded in the run, not sampled).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Waveform file, text or packed binary.
    pub waveform: PathBuf,
    /// Check to run; repeatable. Defaults to `limits`.
    #[arg(long = "check", value_enum)]
    pub checks: Vec<CheckKind>,
    /// Directory for plot-data files; reports go to the summary regardless.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gradient amplitude limit (T/m); required by limits/fidelity/psf.
    #[arg(long)]
    pub g_max: Option<f64>,
    /// Slew-rate limit (T/m/s); required by limits/fidelity/psf.
    #[arg(long)]
    pub s_max: Option<f64>,
    /// Stimulation model file; adds a nerve-response row to the limits check.
    #[arg(long, requires = "p_max")]
    pub pns: Option<PathBuf>,
    /// Allowed peak stimulation (percent).
    #[arg(long, requires = "pns")]
    pub p_max: Option<f64>,
    /// Stop-band file for the spectrum check.
    #[arg(long)]
    pub bands: Option<PathBuf>,
    /// Prescribed trajectory; required by fidelity/psf.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Reduced gyromagnetic ratio (Hz/T).
    #[arg(long, default_value_t = GAMMA_BAR_PROTON)]
    pub gamma_bar: f64,
    /// PSF image size in pixels per side.
    #[arg(long, default_value_t = 64)]
    pub psf_grid: usize,
}

#[derive(Debug, Args)]
pub struct FitAtfArgs {
    /// Measurement manifest (`pair` and `reference` lines).
    pub manifest: PathBuf,
    /// Path of the transfer-function file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Trajectory family.
    #[arg(value_enum)]
    pub kind: GenKind,
    #[command(flatten)]
    pub params: GenParamFlags,
    /// Gradient amplitude limit (T/m); sets the sampling density.
    #[arg(long)]
    pub g_max: f64,
    /// Slew-rate limit (T/m/s); sets the sampling density.
    #[arg(long)]
    pub s_max: f64,
    /// Raster time (s).
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Reduced gyromagnetic ratio (Hz/T).
    #[arg(long, default_value_t = GAMMA_BAR_PROTON)]
    pub gamma_bar: f64,
    /// Path of the trajectory file to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Family-specific generator knobs; which ones apply depends on the family.
#[derive(Debug, Default, Args)]
pub struct GenParamFlags {
    /// Field of view (m); spiral and cepi.
    #[arg(long)]
    pub fov: Option<f64>,
    /// Nominal resolution (m); all families.
    #[arg(long)]
    pub res: Option<f64>,
    /// Petal count; rosette only.
    #[arg(long)]
    pub petals: Option<u32>,
    /// Phase-encode undersampling factor; cepi only.
    #[arg(long)]
    pub ry: Option<f64>,
    /// Spiral density law: `uniform[:r]` or `linear:<center>:<edge>`.
    #[arg(long)]
    pub density: Option<String>,
    /// Skip the spiral rewinder.
    #[arg(long)]
    pub no_rewind: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Spiral,
    Rosette,
    Cepi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Limits,
    Spectrum,
    Fidelity,
    Psf,
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> CommandOutcome {
    match &cli.cmd {
        Cmd::Design(a) => cmd_design(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::FitAtf(a) => cmd_fit_atf(a),
        Cmd::Gen(a) => cmd_gen(a),
    }
}

fn failure(e: &Error) -> CommandOutcome {
    // Solver dead-ends mean the problem, not the input, was bad.
    let exit_code = match e {
        Error::InfeasibleGrid(_) | Error::NonFiniteGradient { .. } | Error::TargetUnreachable(_) => 1,
        _ => 2,
    };
    CommandOutcome {
        exit_code,
        artifacts: Vec::new(),
        summary: format!("error: {e}\n"),
    }
}

fn sci(x: f64) -> String {
    format!("{x:.4e}")
}

pub fn cmd_design(args: &DesignArgs) -> CommandOutcome {
    design_inner(args).unwrap_or_else(|e| failure(&e))
}

fn design_inner(args: &DesignArgs) -> Result<CommandOutcome> {
    let mut cfg = io::read_design_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.spec.solver.seed = seed;
    }
    let curve = if let Some(p) = &args.trajectory {
        io::read_trajectory(p)?
    } else if let Some(kind) = args.gen {
        let kind = build_kind(kind, &args.gen_params)?;
        generators::gen_trajectory(&kind, &cfg.spec.hw)?
    } else if let Some(p) = &cfg.trajectory {
        io::read_trajectory(p)?
    } else {
        return Err(Error::InvalidParams(
            "no trajectory: pass --trajectory or --gen, or set `files.trajectory`".into(),
        ));
    };

    let arc = solver::design_grid(&curve, &cfg.spec.hw)?;
    let result = solver::run_design(&arc, &cfg.spec)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut artifacts = Vec::new();
    let mut emit = |name: &str| -> PathBuf {
        let p = args.out.join(name);
        artifacts.push(p.clone());
        p
    };

    io::write_waveform_text(emit("waveform.grad"), &result.waveform)?;
    io::write_waveform_binary(emit("waveform.bin"), &result.waveform)?;
    let speed_rows: Vec<Vec<f64>> = arc
        .s_grid()
        .iter()
        .zip(&result.speed)
        .map(|(&s, &v)| vec![s, v])
        .collect();
    io::write_columns(emit("speed.txt"), "traversal speed", &["s", "v"], &speed_rows)?;
    let trace_rows: Vec<Vec<f64>> = result
        .loss_trace
        .iter()
        .enumerate()
        .map(|(i, &l)| vec![i as f64, l])
        .collect();
    io::write_columns(emit("loss_trace.txt"), "total loss per iteration", &["iter", "loss"], &trace_rows)?;
    io::write_report(emit("report.txt"), "limit report", &report_rows(&result.report, result.feasible))?;

    let summary = format!(
        "design `{}`: {} samples over {} s\n{}\nfeasible: {}   iterations: {}   converged: {}\nwrote {} files under {}\n",
        curve.label(),
        result.waveform.n_t(),
        sci(result.duration),
        result.report.summary(),
        if result.feasible { "yes" } else { "NO" },
        result.iterations,
        if result.converged { "yes" } else { "no" },
        artifacts.len(),
        args.out.display(),
    );
    Ok(CommandOutcome {
        exit_code: if result.feasible { 0 } else { 1 },
        artifacts,
        summary,
    })
}

fn report_rows(r: &LimitReport, feasible: bool) -> Vec<(&'static str, f64)> {
    let mut rows = vec![
        ("max_grad", r.max_grad),
        ("grad_limit", r.grad_limit),
        ("max_slew", r.max_slew),
        ("slew_limit", r.slew_limit),
    ];
    if let (Some(p), Some(lim)) = (r.max_pns, r.pns_limit) {
        rows.push(("max_pns", p));
        rows.push(("pns_limit", lim));
    }
    rows.push(("duration", r.duration));
    rows.push(("feasible", if feasible { 1.0 } else { 0.0 }));
    rows
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CommandOutcome {
    analyze_inner(args).unwrap_or_else(|e| failure(&e))
}

fn analyze_inner(args: &AnalyzeArgs) -> Result<CommandOutcome> {
    let w = io::read_waveform(&args.waveform)?;
    let checks: &[CheckKind] = if args.checks.is_empty() {
        &[CheckKind::Limits]
    } else {
        &args.checks
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut artifacts = Vec::new();
    let mut emit = |name: &str| -> Option<PathBuf> {
        args.out.as_ref().map(|dir| {
            let p = dir.join(name);
            artifacts.push(p.clone());
            p
        })
    };

    let mut summary = String::new();
    let mut all_ok = true;
    for check in checks {
        match check {
            CheckKind::Limits => {
                let hw = hardware_flags(args, w.dt())?;
                let pns = match &args.pns {
                    Some(p) => Some((io::read_pns_model(p)?, args.p_max.unwrap())),
                    None => None,
                };
                let report = analysis::verify_limits(&w, &hw, pns.as_ref().map(|(m, p)| (m, *p)));
                let ok = report.all_pass();
                all_ok &= ok;
                if let Some(p) = emit("limits.txt") {
                    io::write_report(p, "limit report", &report_rows(&report, ok))?;
                }
                summary.push_str(&format!("== limits [{}]\n{}\n", pass_mark(ok), report.summary()));
            }
            CheckKind::Spectrum => {
                let bands = args.bands.as_ref().map(io::read_bands).transpose()?;
                let rep = analysis::power_spectrum(&w, bands.as_ref());
                if let Some(p) = emit("spectrum.txt") {
                    let mut names = vec!["f".to_string()];
                    names.extend((0..w.dims()).map(|a| format!("mag_{}", ["x", "y", "z"][a])));
                    let names: Vec<&str> = names.iter().map(String::as_str).collect();
                    let rows: Vec<Vec<f64>> = (0..rep.freqs.len())
                        .map(|i| {
                            let mut row = vec![rep.freqs[i]];
                            row.extend(rep.magnitudes.iter().map(|m| m[i]));
                            row
                        })
                        .collect();
                    io::write_columns(p, "one-sided gradient spectrum", &names, &rows)?;
                }
                summary.push_str(&format!(
                    "== spectrum\nfft length {}   total power {}\n",
                    rep.fft_len,
                    sci(rep.total_power)
                ));
                if !rep.band_power.is_empty() {
                    if let Some(p) = emit("band_power.txt") {
                        let rows: Vec<Vec<f64>> = rep
                            .band_power
                            .iter()
                            .map(|&(lo, hi, pw)| vec![lo, hi, pw])
                            .collect();
                        io::write_columns(p, "in-band power", &["f_lo", "f_hi", "power"], &rows)?;
                    }
                    for &(lo, hi, pw) in &rep.band_power {
                        summary.push_str(&format!("band {:>8} - {:>8} Hz   power {}\n", lo, hi, sci(pw)));
                    }
                }
            }
            CheckKind::Fidelity => {
                let arc = trajectory_arc(args, w.dt())?;
                let (max_dev, rms) = analysis::kspace_fidelity(&w, &arc, args.gamma_bar)?;
                let k_max = arc
                    .positions()
                    .iter()
                    .map(|p| crate::util::norm3(p, arc.dims()))
                    .fold(0.0f64, f64::max);
                let threshold = 1e-3 * k_max;
                let ok = max_dev <= threshold;
                all_ok &= ok;
                if let Some(p) = emit("fidelity.txt") {
                    io::write_report(
                        p,
                        "k-space fidelity",
                        &[
                            ("max_dev", max_dev),
                            ("rms_dev", rms),
                            ("k_max", k_max),
                            ("threshold", threshold),
                            ("pass", if ok { 1.0 } else { 0.0 }),
                        ],
                    )?;
                }
                summary.push_str(&format!(
                    "== fidelity [{}]\nmax deviation {} / {} allowed (rms {})\n",
                    pass_mark(ok),
                    sci(max_dev),
                    sci(threshold),
                    sci(rms)
                ));
            }
            CheckKind::Psf => {
                let arc = trajectory_arc(args, w.dt())?;
                let rep = analysis::psf_simulate(&w, &arc, args.gamma_bar, f64::INFINITY, 0.0, args.psf_grid)?;
                if let Some(p) = emit("psf.txt") {
                    io::write_report(
                        p,
                        "point-spread function",
                        &[
                            ("fwhm_x", rep.fwhm[0]),
                            ("fwhm_y", rep.fwhm[1]),
                            ("nominal_res", rep.nominal_res),
                            ("pixel", rep.pixel),
                        ],
                    )?;
                }
                if let Some(p) = emit("psf_profile.txt") {
                    let c = args.psf_grid / 2;
                    let rows: Vec<Vec<f64>> = (0..args.psf_grid)
                        .map(|i| {
                            vec![(i as f64 - c as f64) * rep.pixel, rep.image[c][i], rep.image[i][c]]
                        })
                        .collect();
                    io::write_columns(p, "central psf profiles", &["x", "psf_x", "psf_y"], &rows)?;
                }
                summary.push_str(&format!(
                    "== psf\nfwhm {} x {} m   nominal resolution {} m\n",
                    sci(rep.fwhm[0]),
                    sci(rep.fwhm[1]),
                    sci(rep.nominal_res)
                ));
            }
        }
    }

    Ok(CommandOutcome {
        exit_code: if all_ok { 0 } else { 1 },
        artifacts,
        summary,
    })
}

fn pass_mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// Hardware limits from analyze flags; `dt` comes from the waveform itself.
fn hardware_flags(args: &AnalyzeArgs, dt: f64) -> Result<HardwareLimits> {
    match (args.g_max, args.s_max) {
        (Some(g), Some(s)) => {
            let hw = HardwareLimits { g_max: g, s_max: s, gamma_bar: args.gamma_bar, dt };
            hw.validate()?;
            Ok(hw)
        }
        _ => Err(Error::InvalidParams(
            "this check requires --g-max and --s-max".into(),
        )),
    }
}

/// The prescribed curve, resampled exactly as `design` would resample it, so
/// geometric comparisons see the grid the waveform was built against rather
/// than chord error from a coarser one.
fn trajectory_arc(args: &AnalyzeArgs, dt: f64) -> Result<ArcCurve> {
    let path = args.trajectory.as_ref().ok_or_else(|| {
        Error::InvalidParams("this check requires --trajectory".into())
    })?;
    let curve = io::read_trajectory(path)?;
    let hw = hardware_flags(args, dt)?;
    solver::design_grid(&curve, &hw)
}

pub fn cmd_fit_atf(args: &FitAtfArgs) -> CommandOutcome {
    fit_atf_inner(args).unwrap_or_else(|e| failure(&e))
}

fn fit_atf_inner(args: &FitAtfArgs) -> Result<CommandOutcome> {
    let m = io::read_fit_manifest(&args.manifest)?;
    let atf = analysis::fit_atf(&m.freqs, &m.pairs_per_axis, m.reference)?;

    let usable: Vec<usize> = (0..atf.dims())
        .map(|a| atf.axis(a).iter().filter(|v| v.is_finite()).count())
        .collect();
    let mut summary = String::new();
    for (a, &n) in usable.iter().enumerate() {
        summary.push_str(&format!(
            "axis {}: {} / {} usable bins\n",
            ["x", "y", "z"][a],
            n,
            atf.freqs().len()
        ));
    }
    if let Some(axis) = usable.iter().position(|&n| n == 0) {
        summary.push_str(&format!("axis {} has zero usable bins; nothing written\n", ["x", "y", "z"][axis]));
        return Ok(CommandOutcome { exit_code: 1, artifacts: Vec::new(), summary });
    }

    io::write_atf(&args.out, &atf)?;
    if let Some((f_ref, measured)) = m.reference {
        summary.push_str(&format!("reference {} applied at {} Hz\n", measured, f_ref));
    }
    summary.push_str(&format!("wrote {}\n", args.out.display()));
    Ok(CommandOutcome {
        exit_code: 0,
        artifacts: vec![args.out.clone()],
        summary,
    })
}

pub fn cmd_gen(args: &GenArgs) -> CommandOutcome {
    gen_inner(args).unwrap_or_else(|e| failure(&e))
}

fn gen_inner(args: &GenArgs) -> Result<CommandOutcome> {
    let hw = HardwareLimits {
        g_max: args.g_max,
        s_max: args.s_max,
        gamma_bar: args.gamma_bar,
        dt: args.dt,
    };
    let kind = build_kind(args.kind, &args.params)?;
    let curve = generators::gen_trajectory(&kind, &hw)?;
    io::write_trajectory(&args.out, &curve)?;
    let k_max = curve
        .points()
        .iter()
        .map(|p| crate::util::norm3(p, curve.dims()))
        .fold(0.0f64, f64::max);
    let summary = format!(
        "generated `{}`: {} points, peak |k| {} cycles/m\nwrote {}\n",
        curve.label(),
        curve.len(),
        sci(k_max),
        args.out.display(),
    );
    Ok(CommandOutcome {
        exit_code: 0,
        artifacts: vec![args.out.clone()],
        summary,
    })
}

/// Assemble the family parameters, rejecting knobs that do not apply.
fn build_kind(kind: GenKind, p: &GenParamFlags) -> Result<TrajectoryKind> {
    fn need(v: Option<f64>, name: &str) -> Result<f64> {
        v.ok_or_else(|| Error::InvalidParams(format!("{name} is required for this family")))
    }
    fn reject(given: bool, name: &str) -> Result<()> {
        if given {
            Err(Error::InvalidParams(format!("{name} does not apply to this family")))
        } else {
            Ok(())
        }
    }
    match kind {
        GenKind::Spiral => {
            reject(p.petals.is_some(), "--petals")?;
            reject(p.ry.is_some(), "--ry")?;
            Ok(TrajectoryKind::Spiral(SpiralParams {
                fov: need(p.fov, "--fov")?,
                res: need(p.res, "--res")?,
                density: parse_density(p.density.as_deref())?,
                rewind: !p.no_rewind,
            }))
        }
        GenKind::Rosette => {
            reject(p.fov.is_some(), "--fov")?;
            reject(p.ry.is_some(), "--ry")?;
            reject(p.density.is_some(), "--density")?;
            reject(p.no_rewind, "--no-rewind")?;
            let petals = p
                .petals
                .ok_or_else(|| Error::InvalidParams("--petals is required for this family".into()))?;
            Ok(TrajectoryKind::Rosette(RosetteParams {
                res: need(p.res, "--res")?,
                petals,
            }))
        }
        GenKind::Cepi => {
            reject(p.petals.is_some(), "--petals")?;
            reject(p.density.is_some(), "--density")?;
            reject(p.no_rewind, "--no-rewind")?;
            Ok(TrajectoryKind::Cepi(CepiParams {
                fov: need(p.fov, "--fov")?,
                res: need(p.res, "--res")?,
                r_y: p.ry.unwrap_or(1.0),
            }))
        }
    }
}

fn parse_density(s: Option<&str>) -> Result<Density> {
    let Some(s) = s else {
        return Ok(Density::Uniform(1.0));
    };
    if s == "uniform" {
        return Ok(Density::Uniform(1.0));
    }
    if let Some(r) = s.strip_prefix("uniform:") {
        if let Ok(r) = r.parse() {
            return Ok(Density::Uniform(r));
        }
    } else if let Some(rest) = s.strip_prefix("linear:") {
        if let Some((c, e)) = rest.split_once(':') {
            if let (Ok(center), Ok(edge)) = (c.parse(), e.parse()) {
                return Ok(Density::Linear { center, edge });
            }
        }
    }
    Err(Error::InvalidParams(format!(
        "bad density `{s}`: use `uniform[:r]` or `linear:<center>:<edge>`"
    )))
}
