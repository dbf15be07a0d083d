//! The `qdstat` command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use qdstat_core::correlator::{
    background_apply, background_correct, correlate, decay_histogram, normalize, BackgroundRates, ChannelRates, Window,
};
use qdstat_core::fit::{fit_biexponential, fit_g2_overlay, fit_g2_overlay_with_pump, fit_saturation, OverlayReport};
use qdstat_core::irf::{quadrature_share, simulate_resolution_measurement, Irf, ResolutionSetup};
use qdstat_core::pipeline::{binned_model, model_curve, Correlation};
use qdstat_core::sim::{PhotonRecord, Warning};
use qdstat_core::Error as CoreError;

use crate::config::{ModeName, RunConfig};
use crate::io::{self as qio, TimestampFormat};
use crate::run::simulate_sharded;

#[derive(Debug, Parser)]
#[command(name = "qdstat", version, about = "Photon statistics of a quantum-dot multiexciton ladder")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "QDSTAT_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Model g2 curve: raw, IRF-convolved and background-diluted columns.
    ModelG2(ModelG2Args),
    /// Monte Carlo photon streams for detectors A and B.
    Simulate(SimulateArgs),
    /// Coincidence histogram of two timestamp files.
    Correlate(CorrelateArgs),
    /// Delay-after-pulse histogram of pulsed timestamp files.
    Decay(DecayArgs),
    /// Fit decays, saturation curves or g2 histograms.
    Fit(FitArgs),
    /// Simulated resolution measurement with a pulse train.
    IrfCheck(IrfCheckArgs),
}

#[derive(Debug, Args)]
pub struct Kind {
    /// Autocorrelation of line K.
    #[arg(long, value_name = "K", conflicts_with = "cross")]
    pub line: Option<usize>,
    /// Cross-correlation START,STOP (start line on channel A).
    #[arg(long, value_name = "START,STOP", value_delimiter = ',')]
    pub cross: Option<Vec<usize>>,
}

impl Kind {
    fn correlation(&self) -> Result<Correlation> {
        match (&self.line, &self.cross) {
            (Some(k), None) => Ok(Correlation::Auto { line: *k }),
            (None, Some(c)) if c.len() == 2 => Ok(Correlation::Cross { start_line: c[0], stop_line: c[1] }),
            _ => Err(usage("give --line K or --cross START,STOP")),
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelG2Args {
    #[command(flatten)]
    pub kind: Kind,
    /// Delay range MIN:MAX in ps; defaults to the correlation window.
    #[arg(long, value_name = "MIN:MAX", allow_hyphen_values = true)]
    pub tau_range: Option<String>,
    /// Grid step, ps.
    #[arg(long, default_value_t = 1.0)]
    pub step_ps: f64,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatName {
    Binary,
    Csv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Timestamp file for channel A.
    #[arg(long)]
    pub out_a: PathBuf,
    /// Timestamp file for channel B.
    #[arg(long)]
    pub out_b: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatName,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the truth summary here as well as to standard output.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub start: PathBuf,
    #[arg(long)]
    pub stop: PathBuf,
    #[arg(long)]
    pub bin_ps: Option<f64>,
    /// Half width of the delay window, ns.
    #[arg(long)]
    pub window_ns: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Add g2 and its error, normalized by the measured rates.
    #[arg(long)]
    pub normalize: bool,
    /// Background rates A,B in cps; corrects g2 with the measured totals.
    #[arg(long, value_name = "A_CPS,B_CPS", value_delimiter = ',', requires = "normalize")]
    pub background: Option<Vec<f64>>,
    /// Acquisition time; defaults to the config, then the span of the data.
    #[arg(long)]
    pub acquisition_s: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    /// Timestamp files to fold (both channels may be given).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub period_ps: Option<f64>,
    #[arg(long)]
    pub bin_ps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum FitType {
    Biexp,
    Saturation,
    G2Overlay,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "type", value_enum)]
    pub fit_type: FitType,
    /// Input CSV: decay (`t_ps`, `counts_line<K>` or `counts`), saturation
    /// (`power`, `intensity`, optional `sigma`) or a normalized histogram.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub kind: Kind,
    /// Text report; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parameters as CSV.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IrfCheckArgs {
    #[arg(long, default_value_t = 12_500.0)]
    pub period_ps: f64,
    /// Total resolution FWHM, shared equally between the two channels.
    #[arg(long, default_value_t = 140.0)]
    pub jitter_ps: f64,
    #[arg(long, default_value_t = 100_000)]
    pub pulses: u64,
    #[arg(long, default_value_t = 4.0)]
    pub bin_ps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

/// Marker for usage and configuration mistakes (exit code 2).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

/// 2 for bad input (config, flags, unreadable files), 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    for cause in e.chain() {
        if cause.is::<Usage>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            if matches!(io.kind(), io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied) {
                return 2;
            }
        }
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return match c {
                CoreError::Config(_)
                | CoreError::Window(_)
                | CoreError::Resolution { .. }
                | CoreError::NonUniformGrid
                | CoreError::UndefinedCorrelation { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let wrap = |error: anyhow::Error| CliError { code: exit_code(&error), error };
    let config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError { code: 2, error: e })?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::ModelG2(a) => model_g2(&config, a),
        Command::Simulate(a) => simulate(&config, a),
        Command::Correlate(a) => correlate_cmd(&config, cli.config.is_some(), a),
        Command::Decay(a) => decay(&config, a),
        Command::Fit(a) => fit(&config, a),
        Command::IrfCheck(a) => irf_check(a),
    }
    .map_err(wrap)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("tau range {s:?} is not MIN:MAX")))?;
    let lo: f64 = a.trim().parse().map_err(|_| usage(format!("bad tau minimum {a:?}")))?;
    let hi: f64 = b.trim().parse().map_err(|_| usage(format!("bad tau maximum {b:?}")))?;
    if !(hi > lo) {
        return Err(usage(format!("tau range {s:?} is empty")));
    }
    Ok((lo, hi))
}

fn model_g2(config: &RunConfig, a: ModelG2Args) -> Result<()> {
    let kind = a.kind.correlation()?;
    let ladder = config.ladder()?;
    let (lo, hi) = match &a.tau_range {
        Some(s) => parse_range(s)?,
        None => {
            let h = config.correlate.window_ns * 1000.0;
            (-h, h)
        }
    };
    if !(a.step_ps > 0.0) {
        return Err(usage("--step-ps must be > 0"));
    }
    let n = ((hi - lo) / a.step_ps).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * a.step_ps).collect();
    let irf = config.irf.irf()?;
    let background = config.correlate.background()?;
    let curve = model_curve(&ladder, kind, &grid, irf.as_ref(), background.as_ref())?;

    let mut headers = vec!["tau_ps", "g2_raw"];
    let mut cols: Vec<Vec<f64>> = vec![curve.tau_ps.clone(), curve.raw.clone()];
    if let Some(v) = &curve.irf {
        headers.push("g2_irf");
        cols.push(v.clone());
    }
    if let Some(b) = &background {
        headers.push("g2_background");
        cols.push(background_apply(&curve.raw, b)?);
        if curve.irf.is_some() {
            headers.push("g2_irf_background");
            cols.push(curve.background.clone().expect("computed with background"));
        }
    }
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let mut w = output(&a.out)?;
    qio::write_columns(&mut w, &headers, &refs)?;
    w.flush()?;
    Ok(())
}

fn simulate(config: &RunConfig, a: SimulateArgs) -> Result<()> {
    let mut sim = config.sim()?;
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    let out = simulate_sharded(&sim, config.sim.shards)?;
    for w in &out.warnings {
        match w {
            Warning::PileUp { period_ps, longest_lifetime_ps } => eprintln!(
                "warning: pulse period {period_ps} ps is under 10x the longest lifetime {longest_lifetime_ps} ps"
            ),
        }
    }
    let format = match a.format {
        FormatName::Binary => TimestampFormat::Binary,
        FormatName::Csv => TimestampFormat::Csv,
    };
    qio::write_timestamps(&a.out_a, &out.channel_a, format)?;
    qio::write_timestamps(&a.out_b, &out.channel_b, format)?;
    let t = &out.truth;
    let mut summary = String::new();
    summary.push_str(&format!("duration_s {}\n", t.duration_s));
    summary.push_str(&format!("jumps {}\n", t.jumps));
    if t.pulses > 0 {
        summary.push_str(&format!("pulses {}\n", t.pulses));
    }
    for (k, n) in t.emitted.iter().enumerate() {
        summary.push_str(&format!("emitted_line{} {} ({} cps)\n", k + 1, n, *n as f64 / t.duration_s));
    }
    for (c, name) in ["A", "B"].iter().enumerate() {
        summary.push_str(&format!("detected_photons_{name} {}\n", t.detected_photons[c]));
        summary.push_str(&format!("detected_dark_{name} {}\n", t.detected_dark[c]));
    }
    print!("{summary}");
    if let Some(p) = &a.truth {
        std::fs::write(p, &summary).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn span_s(a: &[PhotonRecord], b: &[PhotonRecord]) -> Option<f64> {
    let first = a.first().into_iter().chain(b.first()).map(|r| r.time_ps).fold(f64::INFINITY, f64::min);
    let last = a.last().into_iter().chain(b.last()).map(|r| r.time_ps).fold(f64::NEG_INFINITY, f64::max);
    (last > first).then(|| (last - first) / qdstat_core::PS_PER_S)
}

fn correlate_cmd(config: &RunConfig, loaded: bool, a: CorrelateArgs) -> Result<()> {
    let start = qio::read_timestamps(&a.start).map_err(|e| e.context(Usage("cannot read start file".into())))?;
    let stop = qio::read_timestamps(&a.stop).map_err(|e| e.context(Usage("cannot read stop file".into())))?;
    let bin = a.bin_ps.unwrap_or(config.correlate.bin_ps);
    let half = a.window_ns.unwrap_or(config.correlate.window_ns) * 1000.0;
    let window = Window::symmetric(half, bin)?;
    let mode = a.mode.unwrap_or(config.correlate.mode);
    let acquisition = match a.acquisition_s {
        Some(t) => t,
        None if loaded => config.sim.acquisition_s,
        None => span_s(&start, &stop).ok_or_else(|| usage("cannot infer acquisition time; pass --acquisition-s"))?,
    };
    let ts: Vec<f64> = start.iter().map(|r| r.time_ps).collect();
    let tp: Vec<f64> = stop.iter().map(|r| r.time_ps).collect();
    let h = correlate(&ts, &tp, &window, mode.into(), acquisition)?;
    if a.background.as_ref().is_some_and(|b| b.len() != 2) {
        return Err(usage("--background takes two rates A_CPS,B_CPS"));
    }
    let normalized = if a.normalize {
        let g = normalize(&h)?;
        Some(match &a.background {
            Some(bg) => {
                let rates = BackgroundRates::new(
                    ChannelRates::new(h.rate_start_cps, bg[0]),
                    ChannelRates::new(h.rate_stop_cps, bg[1]),
                );
                background_correct(&g, &rates)?
            }
            None => g,
        })
    } else {
        None
    };
    let mut w = output(&a.out)?;
    qio::write_histogram_csv(&mut w, &h, normalized.as_ref())?;
    w.flush()?;
    Ok(())
}

fn decay(config: &RunConfig, a: DecayArgs) -> Result<()> {
    let sim = &config.sim;
    let period = a.period_ps.or(sim.period_ps).ok_or_else(|| usage("need --period-ps or [sim] period_ps"))?;
    let bin = a.bin_ps.unwrap_or(config.fit.decay_bin_ps);
    let mut records = Vec::new();
    for p in &a.input {
        records.extend(qio::read_timestamps(p).map_err(|e| e.context(Usage(format!("cannot read {}", p.display()))))?);
    }
    let mut h = decay_histogram(&records, period, bin)?;
    h.pulses = (config.sim.acquisition_s * qdstat_core::PS_PER_S / period).ceil() as u64;
    let mut w = output(&a.out)?;
    qio::write_decay_csv(&mut w, &h)?;
    w.flush()?;
    Ok(())
}

fn fit(config: &RunConfig, a: FitArgs) -> Result<()> {
    let table = qio::read_table_file(&a.data).map_err(|e| e.context(Usage("cannot read fit data".into())))?;
    let mut report = String::new();
    let result = match a.fit_type {
        FitType::Biexp => {
            let t = table.column("t_ps")?;
            let col = match a.kind.line {
                Some(k) => format!("counts_line{k}"),
                None => "counts".to_string(),
            };
            let counts = table.column(&col).map_err(|e| e.context(Usage("choose the decay column with --line".into())))?;
            let fit = fit_biexponential(t, counts)?;
            for w in &fit.warnings {
                eprintln!("warning: {w:?}");
            }
            fit.result
        }
        FitType::Saturation => {
            let line = a.kind.line.unwrap_or(1);
            let sigma = if table.has("sigma") { Some(table.column("sigma")?) } else { None };
            let ladder = config.ladder()?;
            let fit = fit_saturation(table.column("power")?, table.column("intensity")?, sigma, &ladder, line)?;
            report.push_str(&format!("# gamma1_per_ps {}\n", fit.gamma1));
            report.push_str(&format!("# pump_gamma1_per_unit_power {}\n", fit.kappa() / fit.gamma1));
            fit.result
        }
        FitType::G2Overlay => {
            let kind = a.kind.correlation()?;
            let measured = qio::read_normalized(&a.data)?;
            ensure!(measured.len() >= 3, "histogram has too few bins");
            let w = measured.tau_ps[1] - measured.tau_ps[0];
            let half = measured.tau_ps[measured.len() - 1];
            let window = Window::symmetric(half, w)?;
            ensure!(
                window.n_bins() == measured.len() && (window.bin_center(0) - measured.tau_ps[0]).abs() < 1e-6 * w,
                "histogram is not a symmetric window centred on zero"
            );
            let ladder = config.ladder()?;
            let irf: Option<Irf> = config.irf.irf()?;
            let bg = config.correlate.background()?;
            let os = config.fit.oversample;
            let overlay: OverlayReport = if config.fit.float_pump {
                fit_g2_overlay_with_pump(&measured, ladder.pump_rate, |r| {
                    binned_model(&ladder.with_pump_rate(r), kind, &window, irf.as_ref(), bg.as_ref(), os)
                })?
            } else {
                let model = binned_model(&ladder, kind, &window, irf.as_ref(), bg.as_ref(), os)?;
                fit_g2_overlay(&measured, &model)?
            };
            report.push_str(&format!(
                "# fwhm_measured_ps {} {}\n# fwhm_model_ps {}\n# fwhm_ratio {} {}\n",
                overlay.measured.fwhm_ps,
                overlay.measured.fwhm_err_ps,
                overlay.model.fwhm_ps,
                overlay.ratio,
                overlay.ratio_err
            ));
            overlay.fit
        }
    };
    let mut w = output(&a.out)?;
    qio::write_fit_text(&mut w, &result)?;
    w.write_all(report.as_bytes())?;
    w.flush()?;
    if let Some(p) = &a.out_csv {
        let mut f = BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?);
        qio::write_fit_csv(&mut f, &result)?;
        f.flush()?;
    }
    Ok(())
}

fn irf_check(a: IrfCheckArgs) -> Result<()> {
    let share = quadrature_share(a.jitter_ps);
    let setup = ResolutionSetup {
        period_ps: a.period_ps,
        pulses: a.pulses,
        jitter_fwhm_ps: [share, share],
        dispersion_fwhm_ps: 0.0,
        bin_width_ps: a.bin_ps,
        seed: a.seed,
    };
    let m = simulate_resolution_measurement(&setup)?;
    eprintln!("central_fwhm_ps {}", m.central_fwhm_ps);
    eprintln!("peak_spacing_ps {}", m.peak_spacing_ps);
    let mut w = output(&a.out)?;
    qio::write_histogram_csv(&mut w, &m.histogram, None)?;
    w.flush()?;
    Ok(())
}
