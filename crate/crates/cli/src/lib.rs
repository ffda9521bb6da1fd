//! Command-line front end. [`run_cli`] parses arguments, runs one
//! subcommand inside a thread pool capped by `NVKIT_THREADS`, and maps the
//! outcome to an exit code: 0 on success, 1 for validation errors, 2 for
//! numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nvkit::config::{unix_now, ExperimentConfig, RunManifest};
use nvkit::fit::{fit_two_peak_with, initial_guess, FitError};
use nvkit::io::{self, CalibrationSet, IoError};
use nvkit::lindblad::{simulate_ensemble_spectrum, simulate_single_spectrum, SimError};
use nvkit::sensing::{
    fit_linear_calibration, invert_field, invert_temperature, particle_census, sensitivity, wire_field,
    CalibrationPoint, SensingError, SensitivityInput,
};
use nvkit::signal::{
    contrast_image, localize_emitters, lockin_demodulate, percent_contrast_image, synthesize_detector_signal,
    synthesize_widefield_pair, Emitter, ImageGeometry, SignalError,
};
use nvkit::spin::{Orientation, SpinError};

pub const THREADS_ENV: &str = "NVKIT_THREADS";
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "nvkit", version, about = "NV-center ODMR simulation, fitting and sensing toolkit")]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectrum of a single NV at a fixed orientation.
    SimulateSpectrum(SingleArgs),
    /// Orientation-averaged ensemble spectrum.
    SimulateEnsemble(EnsembleArgs),
    /// Two-peak EMG fit of a spectrum file (CSV or JSON).
    FitSpectrum(FitArgs),
    /// Weighted linear calibration from a CSV of `x,y,y_err`.
    Calibrate(CalibrateArgs),
    /// Temperature from a ZFS reading.
    InvertTemp(InvertTempArgs),
    /// Magnetic field from a splitting reading.
    InvertField(InvertFieldArgs),
    /// Sensitivity sigma_P·sqrt(dt)/|slope|.
    Sensitivity(SensitivityArgs),
    /// Infinite-wire field estimate.
    WireField(WireArgs),
    /// Synthetic widefield on/off frames and contrast images.
    SimulateImage(ImageArgs),
    /// Emitter localization in a contrast image (PGM or CSV grid).
    Localize(LocalizeArgs),
    /// Lock-in demodulation of a synthetic detector trace.
    LockinDemo(LockinArgs),
    /// Particle count and NV number for a nanodiamond loading.
    Census(CensusArgs),
}

#[derive(Debug, Args, Default)]
pub struct FieldOverrides {
    /// Field magnitude, mT.
    #[arg(long)]
    pub b0: Option<f64>,
    /// Temperature, K.
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SingleArgs {
    #[command(flatten)]
    pub field: FieldOverrides,
    /// Polar angle of the field in the NV frame, rad.
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    /// Azimuth of the field in the NV frame, rad.
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub field: FieldOverrides,
    #[arg(long)]
    pub n_orient: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub spectrum: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationKind {
    Temperature,
    Field,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV with header `x,y,y_err`.
    pub points: PathBuf,
    #[arg(long, value_enum, default_value_t = CalibrationKind::Temperature)]
    pub kind: CalibrationKind,
}

#[derive(Debug, Args)]
pub struct InvertTempArgs {
    /// Calibration JSON; `paper_defaults.json` resolves to the bundled set.
    #[arg(long, default_value = io::DEFAULT_CALIBRATIONS_NAME)]
    pub calib: PathBuf,
    /// MHz.
    #[arg(long, allow_negative_numbers = true)]
    pub zfs: f64,
    /// MHz.
    #[arg(long, default_value_t = 0.0)]
    pub zfs_err: f64,
}

#[derive(Debug, Args)]
pub struct InvertFieldArgs {
    #[arg(long, default_value = io::DEFAULT_CALIBRATIONS_NAME)]
    pub calib: PathBuf,
    /// MHz.
    #[arg(long, allow_negative_numbers = true)]
    pub splitting: f64,
    /// MHz.
    #[arg(long, default_value_t = 0.0)]
    pub err: f64,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Point standard error, MHz.
    #[arg(long)]
    pub sigma_p: f64,
    /// Integration time, s.
    #[arg(long)]
    pub dt: f64,
    /// Calibration slope, MHz per unit.
    #[arg(long, allow_negative_numbers = true)]
    pub slope: f64,
}

#[derive(Debug, Args)]
pub struct WireArgs {
    /// A.
    #[arg(long, allow_negative_numbers = true)]
    pub current: f64,
    /// m.
    #[arg(long)]
    pub distance: f64,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long, default_value_t = 30)]
    pub n_emitters: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// μm.
    #[arg(long, default_value_t = 0.5)]
    pub px_size: f64,
    /// PSF standard deviation, px.
    #[arg(long, default_value_t = 1.5)]
    pub psf_px: f64,
    /// Peak |on − off| over its noise standard deviation.
    #[arg(long, default_value_t = 10.0)]
    pub snr: f64,
    /// %.
    #[arg(long, default_value_t = 2.0)]
    pub contrast: f64,
    #[arg(long, default_value_t = 100.0)]
    pub background: f64,
    /// Spot peak amplitude in the off frame.
    #[arg(long, default_value_t = 50.0)]
    pub brightness: f64,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    pub image: PathBuf,
    #[arg(long)]
    pub threshold: f64,
    /// Suppression radius, px. About 3 PSF sigmas.
    #[arg(long, default_value_t = 4.5)]
    pub min_sep: f64,
}

#[derive(Debug, Args)]
pub struct LockinArgs {
    #[arg(long, default_value_t = 100.0)]
    pub background: f64,
    #[arg(long, default_value_t = 0.98)]
    pub nv_on: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nv_off: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Hz.
    #[arg(long, default_value_t = 100_000.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct CensusArgs {
    #[arg(long, default_value_t = 100.0)]
    pub diameter_nm: f64,
    #[arg(long, default_value_t = 3.0)]
    pub ppm: f64,
    #[arg(long, default_value_t = 0.002)]
    pub fraction: f64,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Unstable { .. } => Self::numerical(e.to_string()),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<SpinError> for CliError {
    fn from(e: SpinError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NotConverged { .. } | FitError::Singular => Self::numerical(e.to_string()),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<SensingError> for CliError {
    fn from(e: SensingError) -> Self {
        match e {
            SensingError::Degenerate => Self::numerical(e.to_string()),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        Self::validation(e.to_string())
    }
}

/// Thread count from `NVKIT_THREADS`; unset or invalid means rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Entry point used by the binary. `argv[0]` is the program name.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_NUMERICAL;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

struct Context<'a> {
    cli: &'a Cli,
    config: ExperimentConfig,
    started: f64,
    command: &'static str,
    outputs: Vec<String>,
}

impl<'a> Context<'a> {
    fn new(cli: &'a Cli, command: &'static str) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::with_seed(0),
        };
        if let Some(s) = cli.seed {
            config.seed = s;
        }
        Ok(Self { cli, config, started: unix_now(), command, outputs: Vec::new() })
    }

    fn out_dir(&self) -> PathBuf {
        self.cli
            .out
            .clone()
            .or_else(|| self.config.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("nvkit_out"))
    }

    /// Only commands that make files write to an output directory by default;
    /// pure calculations write only when `--out` is given.
    fn explicit_out(&self) -> Option<PathBuf> {
        self.cli.out.clone()
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir().join(name)
    }

    fn finish(self, args: Vec<String>) -> Result<(), CliError> {
        let dir = self.out_dir();
        let mut m = RunManifest::new(
            self.command,
            args,
            serde_json::to_value(&self.config).expect("serializable config"),
            self.started,
        );
        m.outputs = self.outputs;
        m.finished_unix_s = unix_now();
        io::write_json(&dir.join("manifest.json"), &m)?;
        Ok(())
    }
}

fn print_value<T: Serialize>(format: Format, value: &T) {
    match format {
        Format::Json => print!("{}", io::to_json_pretty(value)),
        Format::Csv => {
            let v = serde_json::to_value(value).expect("serializable");
            if let serde_json::Value::Object(m) = v {
                let keys: Vec<&str> = m.keys().map(String::as_str).collect();
                let vals: Vec<String> = m.values().map(|v| v.to_string()).collect();
                println!("{}", keys.join(","));
                println!("{}", vals.join(","));
            } else {
                println!("{v}");
            }
        }
    }
}

fn write_result<T: Serialize>(ctx: &mut Context, value: &T) -> Result<(), CliError> {
    let fmt = ctx.cli.format;
    print_value(fmt, value);
    if ctx.explicit_out().is_some() {
        let p = ctx.path("result.json");
        io::write_json(&p, value)?;
    }
    Ok(())
}

fn finish_if_out(ctx: Context, args: Vec<String>) -> Result<(), CliError> {
    if ctx.explicit_out().is_some() {
        ctx.finish(args)
    } else {
        Ok(())
    }
}

fn apply_field(cfg: &mut ExperimentConfig, f: &FieldOverrides) -> Result<(), CliError> {
    if let Some(b) = f.b0 {
        cfg.environment.b0 = b;
    }
    if let Some(t) = f.temperature {
        cfg.environment.temperature = t;
    }
    cfg.validate().map_err(CliError::validation)
}

fn write_spectrum(ctx: &mut Context, spec: &nvkit::OdmrSpectrum) -> Result<(), CliError> {
    match ctx.cli.format {
        Format::Csv => {
            let p = ctx.path("spectrum.csv");
            io::write_spectrum_csv(spec, &p)?;
        }
        Format::Json => {
            let p = ctx.path("spectrum.json");
            io::write_spectrum_json(spec, &p)?;
        }
    }
    Ok(())
}

fn check_file(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::validation(format!("file not found: {}", path.display())));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::SimulateSpectrum(a) => {
            let mut ctx = Context::new(cli, "simulate-spectrum")?;
            apply_field(&mut ctx.config, &a.field)?;
            let orient = Orientation::new(a.theta, a.phi)?;
            let c = &ctx.config;
            let mut spec =
                simulate_single_spectrum(&c.nv_params, &c.environment, &orient, &c.dissipators, &c.sweep_config())?;
            spec.meta.parameters = serde_json::json!({ "theta": a.theta, "phi": a.phi });
            write_spectrum(&mut ctx, &spec)?;
            ctx.finish(vec![format!("--theta={}", a.theta), format!("--phi={}", a.phi)])
        }
        Command::SimulateEnsemble(a) => {
            let mut ctx = Context::new(cli, "simulate-ensemble")?;
            if let Some(n) = a.n_orient {
                ctx.config.n_orient = n;
            }
            apply_field(&mut ctx.config, &a.field)?;
            let c = &ctx.config;
            let spec = simulate_ensemble_spectrum(&c.nv_params, &c.environment, &c.dissipators, &c.sweep_config(), c.n_orient)?;
            write_spectrum(&mut ctx, &spec)?;
            ctx.finish(vec![])
        }
        Command::FitSpectrum(a) => {
            check_file(&a.spectrum)?;
            let mut ctx = Context::new(cli, "fit-spectrum")?;
            let spec = io::read_spectrum(&a.spectrum)?.normalize_polarity();
            let init = initial_guess(&spec)?;
            let fit = fit_two_peak_with(&spec, &init, &ctx.config.fit.lm_config())?;
            let pj = ctx.path("fit.json");
            io::write_fit_json(&fit, &pj)?;
            let pc = ctx.path("fit.csv");
            io::write_fit_csv(&fit, &pc)?;
            let model = nvkit::OdmrSpectrum::new(
                spec.freqs.clone(),
                nvkit::fit::model_curve(&fit, &spec.freqs),
                spec.meta.clone(),
            )?;
            let pm = ctx.path("model.csv");
            io::write_spectrum_csv(&model, &pm)?;
            println!(
                "modes {:.4} {:.4} MHz, zfs {:.4} ± {:.4} MHz, splitting {:.4} ± {:.4} MHz",
                fit.peak_modes.0, fit.peak_modes.1, fit.zfs, fit.zfs_ci95, fit.splitting, fit.splitting_ci95
            );
            ctx.finish(vec![a.spectrum.display().to_string()])
        }
        Command::Calibrate(a) => {
            check_file(&a.points)?;
            let mut ctx = Context::new(cli, "calibrate")?;
            let points = read_points(&a.points)?;
            let mut calib = fit_linear_calibration(&points)?;
            calib.unit = match a.kind {
                CalibrationKind::Temperature => "K".into(),
                CalibrationKind::Field => "uT".into(),
            };
            calib.source = format!("fit of {}", a.points.display());
            let set = match a.kind {
                CalibrationKind::Temperature => CalibrationSet { temperature: Some(calib.clone()), field: None },
                CalibrationKind::Field => CalibrationSet { temperature: None, field: Some(calib.clone()) },
            };
            let p = ctx.path("calibration.json");
            io::write_json(&p, &set)?;
            print_value(cli.format, &calib);
            ctx.finish(vec![a.points.display().to_string()])
        }
        Command::InvertTemp(a) => {
            let mut ctx = Context::new(cli, "invert-temp")?;
            let set = io::read_calibrations(&a.calib)?;
            let c = set.temperature.ok_or_else(|| CliError::validation("calibration has no temperature entry"))?;
            let est = invert_temperature(&c, a.zfs, a.zfs_err)?;
            #[derive(Serialize)]
            struct Out {
                temperature_k: f64,
                temperature_err_k: f64,
            }
            write_result(&mut ctx, &Out { temperature_k: est.value, temperature_err_k: est.err })?;
            finish_if_out(ctx, vec![format!("--zfs={}", a.zfs)])
        }
        Command::InvertField(a) => {
            let mut ctx = Context::new(cli, "invert-field")?;
            let set = io::read_calibrations(&a.calib)?;
            let c = set.field.ok_or_else(|| CliError::validation("calibration has no field entry"))?;
            let est = invert_field(&c, a.splitting, a.err)?;
            #[derive(Serialize)]
            struct Out {
                field_ut: f64,
                field_err_ut: f64,
            }
            write_result(&mut ctx, &Out { field_ut: est.value, field_err_ut: est.err })?;
            finish_if_out(ctx, vec![format!("--splitting={}", a.splitting)])
        }
        Command::Sensitivity(a) => {
            let mut ctx = Context::new(cli, "sensitivity")?;
            let eta = sensitivity(&SensitivityInput { sigma_p: a.sigma_p, dt_int: a.dt, slope: a.slope })?;
            #[derive(Serialize)]
            struct Out {
                eta_per_sqrt_hz: f64,
            }
            write_result(&mut ctx, &Out { eta_per_sqrt_hz: eta })?;
            finish_if_out(ctx, vec![])
        }
        Command::WireField(a) => {
            let mut ctx = Context::new(cli, "wire-field")?;
            let b = wire_field(a.current, a.distance)?;
            #[derive(Serialize)]
            struct Out {
                field_t: f64,
                field_mt: f64,
            }
            write_result(&mut ctx, &Out { field_t: b, field_mt: b * 1e3 })?;
            finish_if_out(ctx, vec![])
        }
        Command::SimulateImage(a) => simulate_image(cli, a),
        Command::Localize(a) => {
            check_file(&a.image)?;
            let mut ctx = Context::new(cli, "localize")?;
            let read = io::read_image(&a.image)?;
            if read.raw_units {
                eprintln!("warning: no scale sidecar for {}; using raw integer units", a.image.display());
            }
            let det = localize_emitters(&read.image, a.threshold, a.min_sep)?;
            let p = match cli.format {
                Format::Csv => {
                    let p = ctx.path("detections.csv");
                    let mut text = String::from("x_px,y_px,peak\n");
                    for d in &det {
                        text.push_str(&format!("{},{},{}\n", d.x, d.y, d.peak));
                    }
                    io::write_text(&p, &text)?;
                    p
                }
                Format::Json => {
                    let p = ctx.path("detections.json");
                    io::write_json(&p, &det)?;
                    p
                }
            };
            println!("{} detections written to {}", det.len(), p.display());
            ctx.finish(vec![a.image.display().to_string()])
        }
        Command::LockinDemo(a) => {
            let mut ctx = Context::new(cli, "lockin-demo")?;
            let m = ctx.config.modulation;
            let seed = ctx.config.seed;
            let with_bg = synthesize_detector_signal(a.background, a.nv_on, a.nv_off, &m, a.samples, a.fs, a.noise, seed)?;
            let without = synthesize_detector_signal(0.0, a.nv_on, a.nv_off, &m, a.samples, a.fs, a.noise, seed)?;
            let r_bg = lockin_demodulate(&with_bg, m.f_mod)?;
            let r0 = lockin_demodulate(&without, m.f_mod)?;
            if ctx.explicit_out().is_some() {
                let p = ctx.path("trace.csv");
                let mut text = String::from("t_s,value\n");
                for (k, v) in with_bg.values.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", k as f64 / a.fs, v));
                }
                io::write_text(&p, &text)?;
            }
            #[derive(Serialize)]
            struct Out {
                amplitude: f64,
                amplitude_no_background: f64,
                relative_change: f64,
                expected: f64,
            }
            let out = Out {
                amplitude: r_bg,
                amplitude_no_background: r0,
                relative_change: if r0 != 0.0 { (r_bg - r0).abs() / r0 } else { 0.0 },
                expected: m.depth * (a.nv_off - a.nv_on) / 2.0,
            };
            write_result(&mut ctx, &out)?;
            finish_if_out(ctx, vec![])
        }
        Command::Census(a) => {
            let mut ctx = Context::new(cli, "census")?;
            let c = particle_census(a.diameter_nm, a.ppm, a.fraction)?;
            write_result(&mut ctx, &c)?;
            finish_if_out(ctx, vec![])
        }
    }
}

fn read_points(path: &Path) -> Result<Vec<CalibrationPoint<f64>>, CliError> {
    let text = io::read_text(path)?;
    let mut rows = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match rows.next() {
        Some((_, h)) if h.replace(' ', "") == "x,y,y_err" => {}
        _ => return Err(CliError::validation(format!("{}: expected header x,y,y_err", path.display()))),
    }
    rows.map(|(n, l)| {
        let v: Result<Vec<f64>, _> = l.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match v {
            Ok(v) if v.len() == 3 => Ok(CalibrationPoint { x: v[0], y: v[1], y_err: v[2] }),
            _ => Err(CliError::validation(format!("{}:{n}: malformed row {l:?}", path.display()))),
        }
    })
    .collect()
}

/// Places emitters uniformly at random, at least `min_sep` px apart and
/// `margin` px from the border.
pub fn place_emitters(
    n: usize,
    width: usize,
    height: usize,
    min_sep: f64,
    margin: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, CliError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64 - 1.0 - 2.0 * margin, height as f64 - 1.0 - 2.0 * margin);
    if w <= 0.0 || h <= 0.0 {
        return Err(CliError::validation("image too small for the emitter margin"));
    }
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut tries = 0usize;
    while pts.len() < n {
        tries += 1;
        if tries > 1_000_000 {
            return Err(CliError::validation(format!("cannot place {n} emitters {min_sep} px apart")));
        }
        let p = (margin + rng.random::<f64>() * w, margin + rng.random::<f64>() * h);
        if pts.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= min_sep) {
            pts.push(p);
        }
    }
    Ok(pts)
}

fn simulate_image(cli: &Cli, a: &ImageArgs) -> Result<(), CliError> {
    let mut ctx = Context::new(cli, "simulate-image")?;
    if !(a.snr > 0.0 && a.contrast > 0.0 && a.brightness > 0.0 && a.psf_px > 0.0 && a.px_size > 0.0) {
        return Err(CliError::validation("snr, contrast, brightness, psf_px and px_size must be positive"));
    }
    let seed = ctx.config.seed;
    let pts = place_emitters(a.n_emitters, a.width, a.height, 4.0 * a.psf_px, 3.0 * a.psf_px, seed)?;
    let emitters: Vec<Emitter<f64>> = pts
        .iter()
        .map(|&(x, y)| Emitter { x: x * a.px_size, y: y * a.px_size, contrast: a.contrast, brightness: a.brightness })
        .collect();
    // |on − off| noise is √2 times the per-frame noise.
    let signal = a.brightness * a.contrast / 100.0;
    let noise = signal / (a.snr * std::f64::consts::SQRT_2);
    let geo = ImageGeometry { width: a.width, height: a.height, px_size: a.px_size };
    let (on, off) = synthesize_widefield_pair(&emitters, a.psf_px * a.px_size, a.background, noise, &geo, seed)?;
    let eq1 = contrast_image(&on, &off)?;
    let eq2 = percent_contrast_image(&on, &off)?;
    for (name, img) in [("on", &on), ("off", &off), ("contrast", &eq1), ("percent_contrast", &eq2)] {
        let p = ctx.path(&format!("{name}.pgm"));
        io::write_image_pgm(img, &p)?;
        ctx.outputs.push(format!("{name}.pgm.json"));
        let p = ctx.path(&format!("{name}.csv"));
        io::write_image_csv(img, &p)?;
    }
    let p = ctx.path("emitters.csv");
    let mut text = String::from("x_px,y_px,x_um,y_um,contrast_pct\n");
    for (e, (x, y)) in emitters.iter().zip(&pts) {
        text.push_str(&format!("{x},{y},{},{},{}\n", e.x, e.y, e.contrast));
    }
    io::write_text(&p, &text)?;
    println!(
        "{} emitters; contrast noise sigma {:.6}; suggested localize threshold {:.6}",
        emitters.len(),
        noise * std::f64::consts::SQRT_2,
        5.5 * noise * std::f64::consts::SQRT_2
    );
    ctx.finish(vec![format!("--n-emitters={}", a.n_emitters), format!("--snr={}", a.snr)])
}
