//! Plain-text file formats: spectrum CSV/JSON, PGM images with a JSON scale
//! sidecar, CSV image grids, emission tables, fit results and calibrations.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! format that stores floats as text reads back bit-identically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{TwoPeakFit, PARAM_NAMES};
use crate::lindblad::{OdmrSpectrum, SpectrumMeta};
use crate::sensing::LinearCalibration;
use crate::signal::{ContrastImage, EmissionTable};

pub const SPECTRUM_HEADER: &str = "freq_mhz,contrast_pct";
pub const EMISSION_HEADER: &str = "wavelength_nm,intensity";
pub const PGM_MAXVAL: u32 = 65535;

/// Calibration bundle shipped with the toolkit.
pub const DEFAULT_CALIBRATIONS_JSON: &str = include_str!("../data/paper_defaults.json");
pub const DEFAULT_CALIBRATIONS_NAME: &str = "paper_defaults.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
}

impl IoError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, IoError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: display(path), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: display(dir), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: display(path), source })
}

pub fn to_json_pretty<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), IoError> {
    write_text(path, &to_json_pretty(value))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    let text = read_text(path)?;
    parse_json(&text, &display(path))
}

pub fn parse_json<D: DeserializeOwned>(text: &str, name: &str) -> Result<D, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse { path: name.into(), line: e.line(), msg: e.to_string() })
}

/// Data lines of a CSV-like text: `(line_number, trimmed)`, skipping blanks
/// and `#` comments.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_pair(line: &str, lineno: usize, name: &str) -> Result<(f64, f64), IoError> {
    let err = |msg: String| IoError::Parse { path: name.into(), line: lineno, msg };
    let mut fields = line.split(',').map(str::trim);
    let a = fields.next().unwrap_or("");
    let b = fields.next().ok_or_else(|| err(format!("expected 2 columns, got 1 in {line:?}")))?;
    if fields.next().is_some() {
        return Err(err(format!("expected 2 columns in {line:?}")));
    }
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    match (num(a), num(b)) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(err(format!("malformed row {line:?}"))),
    }
}

fn parse_two_column(text: &str, header: &str, name: &str) -> Result<(Vec<f64>, Vec<f64>), IoError> {
    let mut lines = data_lines(text);
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == header => {}
        Some((n, h)) => {
            return Err(IoError::Parse { path: name.into(), line: n, msg: format!("expected header {header:?}, got {h:?}") })
        }
        None => return Err(IoError::Invalid { path: name.into(), msg: format!("empty file, expected header {header:?}") }),
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, l) in lines {
        let (x, y) = parse_pair(l, n, name)?;
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

pub fn spectrum_to_csv(spec: &OdmrSpectrum<f64>) -> String {
    let mut out = String::with_capacity(spec.len() * 24 + 32);
    out.push_str(SPECTRUM_HEADER);
    out.push('\n');
    for (f, c) in spec.freqs.iter().zip(&spec.contrast) {
        let _ = writeln!(out, "{f},{c}");
    }
    out
}

pub fn parse_spectrum_csv(text: &str, name: &str) -> Result<OdmrSpectrum<f64>, IoError> {
    let (freqs, contrast) = parse_two_column(text, SPECTRUM_HEADER, name)?;
    let meta = SpectrumMeta { kind: "measured".into(), ..SpectrumMeta::default() };
    OdmrSpectrum::new(freqs, contrast, meta).map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })
}

pub fn write_spectrum_csv(spec: &OdmrSpectrum<f64>, path: &Path) -> Result<(), IoError> {
    write_text(path, &spectrum_to_csv(spec))
}

pub fn read_spectrum_csv(path: &Path) -> Result<OdmrSpectrum<f64>, IoError> {
    parse_spectrum_csv(&read_text(path)?, &display(path))
}

pub fn write_spectrum_json(spec: &OdmrSpectrum<f64>, path: &Path) -> Result<(), IoError> {
    write_json(path, spec)
}

pub fn read_spectrum_json(path: &Path) -> Result<OdmrSpectrum<f64>, IoError> {
    let raw: OdmrSpectrum<f64> = read_json(path)?;
    OdmrSpectrum::new(raw.freqs, raw.contrast, raw.meta).map_err(|e| IoError::Invalid { path: display(path), msg: e.to_string() })
}

/// Reads a spectrum by extension: `.json` as JSON, anything else as CSV.
pub fn read_spectrum(path: &Path) -> Result<OdmrSpectrum<f64>, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_spectrum_json(path)
    } else {
        read_spectrum_csv(path)
    }
}

/// Linear map from PGM integers to physical values: `value = offset + scale·q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScale {
    pub offset: f64,
    pub scale: f64,
    pub width: usize,
    pub height: usize,
    /// μm.
    pub px_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRead {
    pub image: ContrastImage<f64>,
    /// Set when no sidecar was found; pixels are raw PGM integers and
    /// `px_size` is 1.
    pub raw_units: bool,
}

pub fn pgm_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn pgm_scale_for(img: &ContrastImage<f64>) -> PgmScale {
    let (lo, hi) = (img.min_value(), img.max_value());
    let span = hi - lo;
    let scale = if span > 0.0 { span / PGM_MAXVAL as f64 } else { 1.0 };
    PgmScale { offset: lo, scale, width: img.width, height: img.height, px_size: img.px_size }
}

/// Plain PGM with values quantized on the scale recorded by [`pgm_scale_for`].
pub fn image_to_pgm(img: &ContrastImage<f64>, scale: &PgmScale) -> String {
    let mut out = format!("P2\n# nvkit contrast image\n{} {}\n{}\n", img.width, img.height, PGM_MAXVAL);
    for row in img.pixels.chunks(img.width.max(1)) {
        let mut first = true;
        for (k, &v) in row.iter().enumerate() {
            let q = ((v - scale.offset) / scale.scale).round().clamp(0.0, PGM_MAXVAL as f64) as u32;
            if !first {
                out.push(if k % 12 == 0 { '\n' } else { ' ' });
            }
            let _ = write!(out, "{q}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Writes `path` and its sidecar `path.json`.
pub fn write_image_pgm(img: &ContrastImage<f64>, path: &Path) -> Result<(), IoError> {
    let scale = pgm_scale_for(img);
    write_text(path, &image_to_pgm(img, &scale))?;
    write_json(&pgm_sidecar_path(path), &scale)
}

pub fn parse_pgm(text: &str, name: &str, scale: Option<&PgmScale>) -> Result<ImageRead, IoError> {
    // Tokenize with line numbers, dropping comments.
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (i + 1, t)));
    }
    let bad = |line: usize, msg: String| IoError::Parse { path: name.into(), line, msg };
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "P2")) => {}
        Some((l, t)) => return Err(bad(l, format!("expected magic P2, got {t:?}"))),
        None => return Err(IoError::Invalid { path: name.into(), msg: "empty PGM".into() }),
    }
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        let (l, t) = it.next().ok_or_else(|| IoError::Invalid { path: name.into(), msg: "truncated header".into() })?;
        *h = t.parse().map_err(|_| bad(l, format!("bad header value {t:?}")))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > PGM_MAXVAL as usize {
        return Err(IoError::Invalid { path: name.into(), msg: format!("maxval {maxval} outside 1..=65535") });
    }
    let mut raw = Vec::with_capacity(w * h);
    for (l, t) in it {
        let q: usize = t.parse().map_err(|_| bad(l, format!("bad pixel value {t:?}")))?;
        if q > maxval {
            return Err(bad(l, format!("pixel {q} exceeds maxval {maxval}")));
        }
        raw.push(q as f64);
    }
    if raw.len() != w * h {
        return Err(IoError::Invalid { path: name.into(), msg: format!("header says {w}x{h} but found {} pixels", raw.len()) });
    }
    let (pixels, px_size, raw_units) = match scale {
        Some(s) => {
            if (s.width, s.height) != (w, h) {
                return Err(IoError::Invalid {
                    path: name.into(),
                    msg: format!("sidecar dimensions {}x{} differ from PGM {w}x{h}", s.width, s.height),
                });
            }
            (raw.iter().map(|q| s.offset + s.scale * q).collect(), s.px_size, false)
        }
        None => (raw, 1.0, true),
    };
    let image = ContrastImage::new(w, h, px_size, pixels).map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })?;
    Ok(ImageRead { image, raw_units })
}

pub fn read_image_pgm(path: &Path) -> Result<ImageRead, IoError> {
    let text = read_text(path)?;
    let side = pgm_sidecar_path(path);
    let scale: Option<PgmScale> = if side.exists() { Some(read_json(&side)?) } else { None };
    parse_pgm(&text, &display(path), scale.as_ref())
}

pub fn image_to_csv(img: &ContrastImage<f64>) -> String {
    let mut out = format!("# px_size_um={}\n", img.px_size);
    for row in img.pixels.chunks(img.width.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_image_csv(text: &str, name: &str) -> Result<ContrastImage<f64>, IoError> {
    let mut px_size = 1.0;
    for l in text.lines() {
        if let Some(v) = l.trim().strip_prefix("# px_size_um=") {
            px_size = v.trim().parse().map_err(|_| IoError::Invalid { path: name.into(), msg: format!("bad px_size {v:?}") })?;
        }
    }
    let mut pixels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (n, l) in data_lines(text) {
        let row: Result<Vec<f64>, _> = l.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| IoError::Parse { path: name.into(), line: n, msg: format!("malformed row {l:?}") })?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(IoError::Parse { path: name.into(), line: n, msg: format!("row has {} cells, expected {w}", row.len()) })
            }
            _ => {}
        }
        pixels.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| IoError::Invalid { path: name.into(), msg: "no pixel rows".into() })?;
    ContrastImage::new(width, height, px_size, pixels).map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })
}

pub fn write_image_csv(img: &ContrastImage<f64>, path: &Path) -> Result<(), IoError> {
    write_text(path, &image_to_csv(img))
}

pub fn read_image_csv(path: &Path) -> Result<ContrastImage<f64>, IoError> {
    parse_image_csv(&read_text(path)?, &display(path))
}

/// Reads `.pgm` through [`read_image_pgm`] and anything else as a CSV grid.
pub fn read_image(path: &Path) -> Result<ImageRead, IoError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        read_image_pgm(path)
    } else {
        Ok(ImageRead { image: read_image_csv(path)?, raw_units: false })
    }
}

pub fn emission_to_csv(t: &EmissionTable<f64>) -> String {
    let mut out = format!("{EMISSION_HEADER}\n");
    for (w, i) in t.wavelengths.iter().zip(&t.intensity) {
        let _ = writeln!(out, "{w},{i}");
    }
    out
}

pub fn parse_emission_csv(text: &str, name: &str) -> Result<EmissionTable<f64>, IoError> {
    let (w, i) = parse_two_column(text, EMISSION_HEADER, name)?;
    EmissionTable::new(w, i).map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })
}

pub fn read_emission_csv(path: &Path) -> Result<EmissionTable<f64>, IoError> {
    parse_emission_csv(&read_text(path)?, &display(path))
}

pub fn write_emission_csv(t: &EmissionTable<f64>, path: &Path) -> Result<(), IoError> {
    write_text(path, &emission_to_csv(t))
}

pub fn fit_csv_header() -> String {
    let mut cols: Vec<String> =
        ["zfs_mhz", "zfs_ci95", "splitting_mhz", "splitting_ci95", "mode1_mhz", "mode2_mhz", "residual_rms", "iterations"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    cols.extend(PARAM_NAMES.iter().map(|s| s.to_string()));
    cols.extend(PARAM_NAMES.iter().map(|s| format!("{s}_ci95")));
    cols.join(",")
}

pub fn fit_csv_row(fit: &TwoPeakFit<f64>) -> String {
    let mut cells = vec![
        fit.zfs.to_string(),
        fit.zfs_ci95.to_string(),
        fit.splitting.to_string(),
        fit.splitting_ci95.to_string(),
        fit.peak_modes.0.to_string(),
        fit.peak_modes.1.to_string(),
        fit.residual_rms.to_string(),
        fit.iterations.to_string(),
    ];
    cells.extend(fit.params().iter().map(|v| v.to_string()));
    cells.extend(fit.ci95_vec().iter().map(|v| v.to_string()));
    cells.join(",")
}

pub fn write_fit_csv(fit: &TwoPeakFit<f64>, path: &Path) -> Result<(), IoError> {
    write_text(path, &format!("{}\n{}\n", fit_csv_header(), fit_csv_row(fit)))
}

pub fn write_fit_json(fit: &TwoPeakFit<f64>, path: &Path) -> Result<(), IoError> {
    write_json(path, fit)
}

pub fn read_fit_json(path: &Path) -> Result<TwoPeakFit<f64>, IoError> {
    read_json(path)
}

/// Temperature and/or field calibrations stored together.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<LinearCalibration<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<LinearCalibration<f64>>,
}

/// Accepts a [`CalibrationSet`] or a single calibration, which is filed as
/// temperature or field by the sign of its slope.
pub fn parse_calibrations(text: &str, name: &str) -> Result<CalibrationSet, IoError> {
    let value: serde_json::Value = parse_json(text, name)?;
    let is_single = value.get("slope").is_some();
    if is_single {
        let c: LinearCalibration<f64> = serde_json::from_value(value)
            .map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })?;
        c.validate().map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })?;
        return Ok(if c.slope < 0.0 {
            CalibrationSet { temperature: Some(c), field: None }
        } else {
            CalibrationSet { temperature: None, field: Some(c) }
        });
    }
    let set: CalibrationSet =
        serde_json::from_value(value).map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })?;
    if set.temperature.is_none() && set.field.is_none() {
        return Err(IoError::Invalid { path: name.into(), msg: "no temperature or field calibration found".into() });
    }
    for c in set.temperature.iter().chain(&set.field) {
        c.validate().map_err(|e| IoError::Invalid { path: name.into(), msg: e.to_string() })?;
    }
    Ok(set)
}

/// Reads a calibration file. A missing `paper_defaults.json` resolves to
/// the bundled copy.
pub fn read_calibrations(path: &Path) -> Result<CalibrationSet, IoError> {
    match read_text(path) {
        Ok(text) => parse_calibrations(&text, &display(path)),
        Err(e) if e.is_not_found() && path.file_name().is_some_and(|n| n == DEFAULT_CALIBRATIONS_NAME) => {
            default_calibrations()
        }
        Err(e) => Err(e),
    }
}

pub fn default_calibrations() -> Result<CalibrationSet, IoError> {
    parse_calibrations(DEFAULT_CALIBRATIONS_JSON, DEFAULT_CALIBRATIONS_NAME)
}

pub fn write_calibration(c: &LinearCalibration<f64>, path: &Path) -> Result<(), IoError> {
    write_json(path, c)
}
