//! File formats for every artifact the tool reads or writes: trajectories,
//! waveforms (text and packed binary), stop bands, acoustic transfer
//! functions, stimulation models, spectra, measurement manifests, plot-data
//! tables, and the INI design config.
//!
//! Text formats print floats in Rust's shortest-round-trip form, so
//! write -> read -> write is byte-identical. Readers are strict: unknown
//! keys, malformed rows, and wrong field counts are errors carrying the
//! offending line number.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::analysis::SpectrumPair;
use crate::error::Error;
use crate::geometry::{HardwareLimits, ParamCurve, DEFAULT_DT, GAMMA_BAR_PROTON};
use crate::losses::{
    Atf, BandSet, DEFAULT_LAMBDA_ACOUSTIC, DEFAULT_LAMBDA_BAND, DEFAULT_LAMBDA_PNS,
};
use crate::pipeline::Waveform;
use crate::pns::PnsModel;
use crate::solver::{DesignSpec, TerminalSpeed};
use crate::Result;

/// Shortest decimal form that parses back to the same bits; NaN prints as
/// `nan` so files stay lowercase-stable.
fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Content rows of a text artifact: (1-based line number, trimmed text),
/// with blank lines and `#` comments — whole-line (including the header) or
/// trailing — removed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            None
        } else {
            Some((i + 1, t))
        }
    })
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("bad number `{field}`")))
}

fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v = parse_f64(path, line, field)?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value `{field}`")));
    }
    Ok(v)
}

/// Validate a `# <kind> v1 key=value ...` header (line 1, fixed key order)
/// and return the raw values.
fn parse_header<'a>(
    path: &Path,
    text: &'a str,
    kind: &str,
    keys: &[&str],
) -> Result<Vec<&'a str>> {
    let first = text.lines().next().unwrap_or("");
    let mut toks = first.split_whitespace();
    if !(toks.next() == Some("#") && toks.next() == Some(kind) && toks.next() == Some("v1")) {
        return Err(Error::parse(path, 1, format!("expected `# {kind} v1` header")));
    }
    let mut vals = Vec::with_capacity(keys.len());
    for key in keys {
        let tok = toks
            .next()
            .ok_or_else(|| Error::parse(path, 1, format!("header missing `{key}=`")))?;
        match tok.split_once('=') {
            Some((k, v)) if k == *key && !v.is_empty() => vals.push(v),
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected `{key}=<value>` in header, found `{tok}`"),
                ))
            }
        }
    }
    if let Some(extra) = toks.next() {
        return Err(Error::parse(path, 1, format!("unexpected header token `{extra}`")));
    }
    Ok(vals)
}

/// Write a trajectory as `# optiks-trajectory v1 dims=<D>` plus one
/// `p kx ky [kz]` row per sample.
pub fn write_trajectory(path: impl AsRef<Path>, curve: &ParamCurve) -> Result<()> {
    let path = path.as_ref();
    let dims = curve.dims();
    let mut out = format!("# optiks-trajectory v1 dims={dims}\n");
    for (p, pt) in curve.params().iter().zip(curve.points()) {
        out.push_str(&fmt_f64(*p));
        for &x in &pt[..dims] {
            out.push(' ');
            out.push_str(&fmt_f64(x));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read a trajectory file. The curve label is the file stem.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<ParamCurve> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let dims_s = parse_header(path, &text, "optiks-trajectory", &["dims"])?[0];
    let dims: usize = dims_s
        .parse()
        .ok()
        .filter(|d| (1..=3).contains(d))
        .ok_or_else(|| Error::parse(path, 1, format!("dims must be 1..=3, got `{dims_s}`")))?;
    let mut params = Vec::new();
    let mut points = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != dims + 1 {
            return Err(Error::parse(
                path,
                ln,
                format!("expected {} fields, got {}", dims + 1, fields.len()),
            ));
        }
        params.push(parse_finite(path, ln, fields[0])?);
        let mut pt = [0.0; 3];
        for (d, f) in fields[1..].iter().enumerate() {
            pt[d] = parse_finite(path, ln, f)?;
        }
        points.push(pt);
    }
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    ParamCurve::new(points, params, dims, label)
}

/// Write gradients as `# optiks-waveform v1 dt=<s> axes=<D>` plus one
/// `gx gy [gz]` row (T/m) per raster step.
pub fn write_waveform_text(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let g = w.gradients();
    let mut out = format!("# optiks-waveform v1 dt={} axes={}\n", fmt_f64(w.dt()), w.dims());
    for i in 0..w.n_t() {
        for (a, axis) in g.iter().enumerate() {
            if a > 0 {
                out.push(' ');
            }
            out.push_str(&fmt_f64(axis[i]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read a text waveform file.
pub fn read_waveform_text(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let vals = parse_header(path, &text, "optiks-waveform", &["dt", "axes"])?;
    let dt = parse_finite(path, 1, vals[0])?;
    let axes: usize = vals[1]
        .parse()
        .ok()
        .filter(|a| (1..=3).contains(a))
        .ok_or_else(|| Error::parse(path, 1, format!("axes must be 1..=3, got `{}`", vals[1])))?;
    let mut g = vec![Vec::new(); axes];
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != axes {
            return Err(Error::parse(
                path,
                ln,
                format!("expected {axes} fields, got {}", fields.len()),
            ));
        }
        for (a, f) in fields.iter().enumerate() {
            g[a].push(parse_finite(path, ln, f)?);
        }
    }
    Waveform::from_gradients(g, dt)
}

const WF_MAGIC: &[u8; 8] = b"OPTIKSWF";
const WF_VERSION: u32 = 1;

/// Write the packed little-endian waveform: an 8-byte magic, u32 version,
/// u32 axis count, u64 sample count, f64 raster step (32 bytes in all),
/// then `n_t x axes` f64 samples in the text format's row order.
pub fn write_waveform_binary(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let g = w.gradients();
    let mut buf = Vec::with_capacity(32 + 8 * w.n_t() * w.dims());
    buf.extend_from_slice(WF_MAGIC);
    buf.extend_from_slice(&WF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(w.dims() as u32).to_le_bytes());
    buf.extend_from_slice(&(w.n_t() as u64).to_le_bytes());
    buf.extend_from_slice(&w.dt().to_le_bytes());
    for i in 0..w.n_t() {
        for axis in g {
            buf.extend_from_slice(&axis[i].to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a packed binary waveform.
pub fn read_waveform_binary(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 {
        return Err(Error::parse(path, 0, "truncated header"));
    }
    if &bytes[..8] != WF_MAGIC {
        return Err(Error::parse(path, 0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != WF_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported version {version}")));
    }
    let axes = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if !(1..=3).contains(&axes) {
        return Err(Error::parse(path, 0, format!("axes must be 1..=3, got {axes}")));
    }
    let n_t = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dt = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let n_t = usize::try_from(n_t).map_err(|_| Error::parse(path, 0, "sample count overflow"))?;
    let need = n_t
        .checked_mul(axes)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| Error::parse(path, 0, "sample count overflow"))?;
    if bytes.len() - 32 != need {
        return Err(Error::parse(
            path,
            0,
            format!("payload is {} bytes, expected {need}", bytes.len() - 32),
        ));
    }
    let mut g = vec![Vec::with_capacity(n_t); axes];
    for i in 0..n_t {
        for (a, axis) in g.iter_mut().enumerate() {
            let off = 32 + 8 * (i * axes + a);
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::parse(path, 0, format!("non-finite sample at row {i}")));
            }
            axis.push(v);
        }
    }
    Waveform::from_gradients(g, dt)
}

/// Read a waveform file of either format, sniffing the binary magic.
pub fn read_waveform(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut head = [0u8; 8];
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = std::io::Read::read(&mut f, &mut head).map_err(|e| Error::io(path, e))?;
    drop(f);
    if n == 8 && &head == WF_MAGIC {
        read_waveform_binary(path)
    } else {
        read_waveform_text(path)
    }
}

/// Write a report of `key value` rows under a `#` title line.
pub fn write_report(path: impl AsRef<Path>, title: &str, rows: &[(&str, f64)]) -> Result<()> {
    let mut out = format!("# {title}\n");
    for (k, v) in rows {
        out.push_str(&format!("{k} {}\n", fmt_f64(*v)));
    }
    write_text(path.as_ref(), &out)
}

/// Read a `key value` report back as ordered pairs.
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, ln, format!("expected 2 fields, got {}", fields.len())));
        }
        rows.push((fields[0].to_string(), parse_f64(path, ln, fields[1])?));
    }
    Ok(rows)
}

/// Write stop bands as `f_lo f_hi` rows (Hz).
pub fn write_bands(path: impl AsRef<Path>, bands: &BandSet) -> Result<()> {
    let mut out = String::from("# stop bands (Hz): f_lo f_hi\n");
    for &(lo, hi) in bands.bands() {
        out.push_str(&format!("{} {}\n", fmt_f64(lo), fmt_f64(hi)));
    }
    write_text(path.as_ref(), &out)
}

/// Read stop bands; rows normalize (sort/merge) on construction.
pub fn read_bands(path: impl AsRef<Path>) -> Result<BandSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::parse(path, ln, format!("expected 2 fields, got {}", fields.len())));
        }
        rows.push((parse_finite(path, ln, fields[0])?, parse_finite(path, ln, fields[1])?));
    }
    BandSet::new(rows)
}

/// Write an acoustic transfer function as `# optiks-atf v1 ref_hz=<f>` plus
/// one `f A_x [A_y [A_z]]` row per bin; missing bins print as `nan`.
pub fn write_atf(path: impl AsRef<Path>, atf: &Atf) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# optiks-atf v1 ref_hz={}\n", fmt_f64(atf.ref_hz()));
    for (i, &f) in atf.freqs().iter().enumerate() {
        out.push_str(&fmt_f64(f));
        for a in 0..atf.dims() {
            out.push(' ');
            out.push_str(&fmt_f64(atf.axis(a)[i]));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Read an acoustic transfer function. The axis count comes from the first
/// row; the stored reference scale is not persisted and reads back as 1.
pub fn read_atf(path: impl AsRef<Path>) -> Result<Atf> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let ref_hz = parse_finite(path, 1, parse_header(path, &text, "optiks-atf", &["ref_hz"])?[0])?;
    let mut freqs = Vec::new();
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if axes.is_empty() {
            if !(2..=4).contains(&fields.len()) {
                return Err(Error::parse(path, ln, "rows need a frequency plus 1..=3 magnitudes"));
            }
            axes = vec![Vec::new(); fields.len() - 1];
        }
        if fields.len() != axes.len() + 1 {
            return Err(Error::parse(
                path,
                ln,
                format!("expected {} fields, got {}", axes.len() + 1, fields.len()),
            ));
        }
        freqs.push(parse_finite(path, ln, fields[0])?);
        for (a, f) in fields[1..].iter().enumerate() {
            let v = parse_f64(path, ln, f)?;
            if v.is_infinite() {
                return Err(Error::parse(path, ln, format!("non-finite value `{f}`")));
            }
            axes[a].push(v);
        }
    }
    Atf::new(freqs, axes, ref_hz, 1.0)
}

/// Write a stimulation model as `r=` / `c=` / `alpha=` lines.
pub fn write_pns_model(path: impl AsRef<Path>, m: &PnsModel) -> Result<()> {
    let out = format!(
        "# chronaxie stimulation model: r (T/m/s), c (s), alpha (m)\nr={}\nc={}\nalpha={}\n",
        fmt_f64(m.rheobase),
        fmt_f64(m.chronaxie),
        fmt_f64(m.coil_length)
    );
    write_text(path.as_ref(), &out)
}

/// Read a stimulation model; each of `r`, `c`, `alpha` must appear exactly
/// once.
pub fn read_pns_model(path: impl AsRef<Path>) -> Result<PnsModel> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let (mut r, mut c, mut alpha) = (None, None, None);
    for (ln, row) in content_lines(&text) {
        let (key, val) = row
            .split_once('=')
            .ok_or_else(|| Error::parse(path, ln, "expected `key=value`"))?;
        let slot = match key.trim() {
            "r" => &mut r,
            "c" => &mut c,
            "alpha" => &mut alpha,
            other => return Err(Error::parse(path, ln, format!("unknown key `{other}`"))),
        };
        if slot.is_some() {
            return Err(Error::parse(path, ln, format!("duplicate key `{}`", key.trim())));
        }
        *slot = Some(parse_finite(path, ln, val.trim())?);
    }
    match (r, c, alpha) {
        (Some(r), Some(c), Some(alpha)) => PnsModel::new(r, c, alpha),
        (None, _, _) => Err(Error::parse(path, 0, "missing key `r`")),
        (_, None, _) => Err(Error::parse(path, 0, "missing key `c`")),
        _ => Err(Error::parse(path, 0, "missing key `alpha`")),
    }
}

/// Write a complex spectrum as `# optiks-spectrum v1` plus `f re im` rows.
pub fn write_spectrum(
    path: impl AsRef<Path>,
    freqs: &[f64],
    values: &[Complex64],
) -> Result<()> {
    if freqs.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frequencies vs {} values",
            freqs.len(),
            values.len()
        )));
    }
    let mut out = String::from("# optiks-spectrum v1\n");
    for (&f, v) in freqs.iter().zip(values) {
        out.push_str(&format!("{} {} {}\n", fmt_f64(f), fmt_f64(v.re), fmt_f64(v.im)));
    }
    write_text(path.as_ref(), &out)
}

/// Read a complex spectrum.
pub fn read_spectrum(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_header(path, &text, "optiks-spectrum", &[])?;
    let mut freqs = Vec::new();
    let mut values = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, ln, format!("expected 3 fields, got {}", fields.len())));
        }
        freqs.push(parse_finite(path, ln, fields[0])?);
        values.push(Complex64::new(
            parse_finite(path, ln, fields[1])?,
            parse_finite(path, ln, fields[2])?,
        ));
    }
    if freqs.is_empty() {
        return Err(Error::parse(path, 0, "empty spectrum"));
    }
    Ok((freqs, values))
}

/// Write a plot-data table: a `# <title>` line, a `#` column-name line, then
/// one whitespace-separated row per entry.
pub fn write_columns(
    path: impl AsRef<Path>,
    title: &str,
    names: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut out = format!("# {title}\n# {}\n", names.join(" "));
    for row in rows {
        if row.len() != names.len() {
            return Err(Error::ShapeMismatch(format!(
                "row has {} fields, expected {}",
                row.len(),
                names.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

/// Read a plot-data table back as uniform-width rows.
pub fn read_columns(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, row) in content_lines(&text) {
        let mut parsed = Vec::new();
        for f in row.split_whitespace() {
            parsed.push(parse_f64(path, ln, f)?);
        }
        if let Some(first) = rows.first() {
            if parsed.len() != first.len() {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected {} fields, got {}", first.len(), parsed.len()),
                ));
            }
        }
        rows.push(parsed);
    }
    Ok(rows)
}

/// A parsed acoustic-measurement manifest: the shared frequency grid, the
/// input/output spectrum pairs grouped per axis, and the optional
/// `(f_ref, measured)` calibration entry.
#[derive(Debug, Clone)]
pub struct FitManifest {
    pub freqs: Vec<f64>,
    pub pairs_per_axis: Vec<Vec<SpectrumPair>>,
    pub reference: Option<(f64, f64)>,
}

/// Read a `# optiks-fit v1` manifest of `pair <axis> <input> <output>` lines
/// plus at most one `reference <f_hz> <measured>` line. Spectrum paths
/// resolve relative to the manifest's directory and every file must carry
/// the identical frequency grid.
pub fn read_fit_manifest(path: impl AsRef<Path>) -> Result<FitManifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_header(path, &text, "optiks-fit", &[])?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reference = None;
    let mut freqs: Option<Vec<f64>> = None;
    let mut pairs: Vec<Vec<SpectrumPair>> = Vec::new();
    for (ln, row) in content_lines(&text) {
        let fields: Vec<&str> = row.split_whitespace().collect();
        match fields[0] {
            "reference" => {
                if fields.len() != 3 {
                    return Err(Error::parse(path, ln, "expected `reference <f_hz> <measured>`"));
                }
                if reference.is_some() {
                    return Err(Error::parse(path, ln, "duplicate reference line"));
                }
                reference = Some((
                    parse_finite(path, ln, fields[1])?,
                    parse_finite(path, ln, fields[2])?,
                ));
            }
            "pair" => {
                if fields.len() != 4 {
                    return Err(Error::parse(path, ln, "expected `pair <axis> <input> <output>`"));
                }
                let axis: usize = fields[1]
                    .parse()
                    .ok()
                    .filter(|&a| a < 3)
                    .ok_or_else(|| {
                        Error::parse(path, ln, format!("axis must be 0..=2, got `{}`", fields[1]))
                    })?;
                let (fi, input) = read_spectrum(base.join(fields[2]))?;
                let (fo, output) = read_spectrum(base.join(fields[3]))?;
                for grid in [&fi, &fo] {
                    match &freqs {
                        None => freqs = Some(grid.clone()),
                        Some(f0) if f0 == grid => {}
                        _ => {
                            return Err(Error::parse(
                                path,
                                ln,
                                "spectrum frequency grid differs from earlier pairs",
                            ))
                        }
                    }
                }
                if pairs.len() <= axis {
                    pairs.resize_with(axis + 1, Vec::new);
                }
                pairs[axis].push(SpectrumPair { input, output });
            }
            other => {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected `pair` or `reference`, got `{other}`"),
                ))
            }
        }
    }
    let freqs = freqs.ok_or_else(|| Error::parse(path, 0, "manifest lists no pairs"))?;
    for (a, p) in pairs.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::parse(path, 0, format!("axis {a} has no pairs")));
        }
    }
    Ok(FitManifest { freqs, pairs_per_axis: pairs, reference })
}

/// A parsed design config: the assembled problem plus the trajectory path,
/// when one was given under `[files]`.
#[derive(Debug, Clone)]
pub struct DesignConfig {
    pub spec: DesignSpec,
    pub trajectory: Option<PathBuf>,
}

struct IniEntry<'a> {
    section: &'a str,
    key: &'a str,
    value: &'a str,
    line: usize,
}

fn parse_ini<'a>(path: &Path, text: &'a str) -> Result<Vec<IniEntry<'a>>> {
    let mut section = "";
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with(';') {
            continue;
        }
        if let Some(rest) = t.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::parse(path, line, "malformed section header"))?;
            section = name;
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, v)| !k.is_empty() && !v.is_empty())
            .ok_or_else(|| Error::parse(path, line, "expected `key = value`"))?;
        if section.is_empty() {
            return Err(Error::parse(path, line, format!("key `{k}` before any [section]")));
        }
        if !seen.insert((section, k)) {
            return Err(Error::parse(path, line, format!("duplicate key `{section}.{k}`")));
        }
        out.push(IniEntry { section, key: k, value: v, line });
    }
    Ok(out)
}

/// Read an INI design config.
///
/// Sections: `[hardware]` (`g_max`, `s_max` required; `dt`, `gamma_bar`
/// optional), `[objective]` (`mode = time_min|time_bound`, `t_max`, `p_max`,
/// per-term `lambda_*` overrides), `[barriers]` (`delta_slew`, `delta_pns`,
/// `delta_time_frac`), `[solver]` (`init_derate`, `step_size`, `beta1`,
/// `beta2`, `epsilon`, `max_iters`, `terminal = free|zero`, `seed`), and
/// `[files]` (`trajectory`, `pns_model`, `bands`, `atf`; paths relative to
/// the config's directory). Unknown or duplicate keys are errors. An
/// auxiliary file switches its loss term on at the documented default
/// weight unless the matching `lambda_*` was set explicitly.
pub fn read_design_config(path: impl AsRef<Path>) -> Result<DesignConfig> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let entries = parse_ini(path, &text)?;

    let num = |e: &IniEntry| parse_finite(path, e.line, e.value);
    let (mut g_max, mut s_max, mut dt, mut gamma_bar) = (None, None, None, None);
    let mut mode: Option<&str> = None;
    let mut t_max: Option<(f64, usize)> = None;
    let mut p_max = None;
    let (mut l_time, mut l_bound, mut l_slew, mut l_pns, mut l_band, mut l_acoustic) =
        (None, None, None, None, None, None);
    let (mut d_slew, mut d_pns, mut d_time_frac) = (None, None, None);
    let (mut derate, mut step, mut beta1, mut beta2, mut eps) = (None, None, None, None, None);
    let (mut max_iters, mut terminal, mut seed) = (None, None, None);
    let (mut f_traj, mut f_pns, mut f_bands, mut f_atf) = (None, None, None, None);

    for e in &entries {
        match (e.section, e.key) {
            ("hardware", "g_max") => g_max = Some(num(e)?),
            ("hardware", "s_max") => s_max = Some(num(e)?),
            ("hardware", "dt") => dt = Some(num(e)?),
            ("hardware", "gamma_bar") => gamma_bar = Some(num(e)?),
            ("objective", "mode") => match e.value {
                "time_min" | "time_bound" => mode = Some(e.value),
                other => {
                    return Err(Error::parse(
                        path,
                        e.line,
                        format!("mode must be `time_min` or `time_bound`, got `{other}`"),
                    ))
                }
            },
            ("objective", "t_max") => t_max = Some((num(e)?, e.line)),
            ("objective", "p_max") => p_max = Some(num(e)?),
            ("objective", "lambda_time") => l_time = Some(num(e)?),
            ("objective", "lambda_bound_time") => l_bound = Some(num(e)?),
            ("objective", "lambda_slew") => l_slew = Some(num(e)?),
            ("objective", "lambda_pns") => l_pns = Some(num(e)?),
            ("objective", "lambda_band") => l_band = Some(num(e)?),
            ("objective", "lambda_acoustic") => l_acoustic = Some(num(e)?),
            ("barriers", "delta_slew") => d_slew = Some(num(e)?),
            ("barriers", "delta_pns") => d_pns = Some(num(e)?),
            ("barriers", "delta_time_frac") => d_time_frac = Some(num(e)?),
            ("solver", "init_derate") => derate = Some(num(e)?),
            ("solver", "step_size") => step = Some(num(e)?),
            ("solver", "beta1") => beta1 = Some(num(e)?),
            ("solver", "beta2") => beta2 = Some(num(e)?),
            ("solver", "epsilon") => eps = Some(num(e)?),
            ("solver", "max_iters") => {
                max_iters = Some(e.value.parse::<usize>().map_err(|_| {
                    Error::parse(path, e.line, format!("bad count `{}`", e.value))
                })?)
            }
            ("solver", "terminal") => match e.value {
                "free" => terminal = Some(TerminalSpeed::Free),
                "zero" => terminal = Some(TerminalSpeed::Zero),
                other => {
                    return Err(Error::parse(
                        path,
                        e.line,
                        format!("terminal must be `free` or `zero`, got `{other}`"),
                    ))
                }
            },
            ("solver", "seed") => {
                seed = Some(e.value.parse::<u64>().map_err(|_| {
                    Error::parse(path, e.line, format!("bad seed `{}`", e.value))
                })?)
            }
            ("files", "trajectory") => f_traj = Some(e.value),
            ("files", "pns_model") => f_pns = Some(e.value),
            ("files", "bands") => f_bands = Some(e.value),
            ("files", "atf") => f_atf = Some(e.value),
            _ => {
                return Err(Error::parse(
                    path,
                    e.line,
                    format!("unknown key `{}.{}`", e.section, e.key),
                ))
            }
        }
    }

    let g_max =
        g_max.ok_or_else(|| Error::parse(path, 0, "missing required key `hardware.g_max`"))?;
    let s_max =
        s_max.ok_or_else(|| Error::parse(path, 0, "missing required key `hardware.s_max`"))?;
    let hw = HardwareLimits {
        g_max,
        s_max,
        gamma_bar: gamma_bar.unwrap_or(GAMMA_BAR_PROTON),
        dt: dt.unwrap_or(DEFAULT_DT),
    };

    let mut spec = match mode.unwrap_or("time_min") {
        "time_bound" => {
            let (t, _) = t_max.ok_or_else(|| {
                Error::parse(path, 0, "missing required key `objective.t_max` (mode = time_bound)")
            })?;
            DesignSpec::time_bound(hw, t)
        }
        _ => {
            if let Some((_, line)) = t_max {
                return Err(Error::parse(path, line, "t_max requires `mode = time_bound`"));
            }
            DesignSpec::time_min(hw)
        }
    };
    spec.p_max = p_max;

    let w = &mut spec.weights;
    if let Some(v) = l_time {
        w.lambda_time = v;
    }
    if let Some(v) = l_bound {
        w.lambda_bound_time = v;
    }
    if let Some(v) = l_slew {
        w.lambda_slew = v;
    }
    w.lambda_pns = l_pns.unwrap_or(if f_pns.is_some() { DEFAULT_LAMBDA_PNS } else { 0.0 });
    w.lambda_band = l_band.unwrap_or(if f_bands.is_some() { DEFAULT_LAMBDA_BAND } else { 0.0 });
    w.lambda_acoustic =
        l_acoustic.unwrap_or(if f_atf.is_some() { DEFAULT_LAMBDA_ACOUSTIC } else { 0.0 });

    if let Some(v) = d_slew {
        spec.delta_slew = v;
    }
    if let Some(v) = d_pns {
        spec.delta_pns = v;
    }
    if let Some(v) = d_time_frac {
        spec.delta_time_frac = v;
    }

    let sc = &mut spec.solver;
    if let Some(v) = derate {
        sc.init_derate = v;
    }
    if let Some(v) = step {
        sc.step_size = v;
    }
    if let Some(v) = beta1 {
        sc.beta1 = v;
    }
    if let Some(v) = beta2 {
        sc.beta2 = v;
    }
    if let Some(v) = eps {
        sc.epsilon = v;
    }
    if let Some(v) = max_iters {
        sc.max_iters = v;
    }
    if let Some(v) = terminal {
        sc.terminal = v;
    }
    if let Some(v) = seed {
        sc.seed = v;
    }

    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(p) = f_bands {
        spec.bands = Some(read_bands(base.join(p))?);
    }
    if let Some(p) = f_atf {
        spec.atf = Some(read_atf(base.join(p))?);
    }
    if let Some(p) = f_pns {
        spec.pns_model = Some(read_pns_model(base.join(p))?);
    }

    if spec.weights.lambda_pns > 0.0 && spec.pns_model.is_none() {
        return Err(Error::parse(path, 0, "lambda_pns > 0 requires `files.pns_model`"));
    }
    if spec.weights.lambda_band > 0.0 && spec.bands.is_none() {
        return Err(Error::parse(path, 0, "lambda_band > 0 requires `files.bands`"));
    }
    if spec.weights.lambda_acoustic > 0.0 && spec.atf.is_none() {
        return Err(Error::parse(path, 0, "lambda_acoustic > 0 requires `files.atf`"));
    }
    spec.validate()?;

    Ok(DesignConfig { spec, trajectory: f_traj.map(|p| base.join(p)) })
}
