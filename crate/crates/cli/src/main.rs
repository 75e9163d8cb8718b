//! `sta`: design, propagate, check and sweep shortcut-to-adiabaticity protocols.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sta_core::curves::TimeGrid;
use sta_core::design_io::{DesignDocument, Method};
use sta_core::tls_design::{commutator_endpoint_report, ControlSchedule, TLSControls};
use sta_core::verify::{check, run, sweep_row, CheckReport, InitialState, Rows, RunOptions, SweepRow};
use sta_core::Error;

const UNITS: &str = "# units: hbar=1, m=1, time unit = that of t_f, frequencies in rad per time unit";

#[derive(Parser)]
#[command(name = "sta", version, about = "Shortcut-to-adiabaticity protocol design and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a design document.
    Design {
        #[command(subcommand)]
        target: DesignTarget,
    },
    /// Propagate a design and write the trajectory as CSV.
    Propagate(RunArgs),
    /// Run the verification battery and write a JSON report.
    Check(RunArgs),
    /// Summarize a family of designs over several durations.
    Sweep(SweepArgs),
}

#[derive(Subcommand)]
enum DesignTarget {
    /// Harmonic oscillator frequency change.
    Ho(HoArgs),
    /// Two-level population transfer.
    Tls(TlsArgs),
}

#[derive(Args, Clone)]
struct HoArgs {
    #[arg(long, default_value_t = 1.0)]
    omega0: f64,
    #[arg(long, default_value_t = 0.1)]
    omegaf: f64,
    #[arg(long)]
    tf: f64,
    #[arg(long, default_value_t = 5)]
    degree: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig1,
    Fig2,
    Tracking,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Tracking => "tracking",
        }
    }
}

#[derive(Args, Clone)]
struct TlsArgs {
    #[arg(long, value_enum, default_value = "fig1")]
    preset: Preset,
    #[arg(long)]
    tf: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Invariant,
    Counterdiabatic,
    #[value(name = "reference_only")]
    ReferenceOnly,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Invariant => Method::Invariant,
            MethodArg::Counterdiabatic => Method::Counterdiabatic,
            MethodArg::ReferenceOnly => Method::ReferenceOnly,
        }
    }
}

#[derive(Args, Clone)]
struct Numerics {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Relative tolerance; the absolute tolerance is 1e-2 of it.
    #[arg(long = "rel-tol", default_value_t = 1e-10)]
    rel_tol: f64,
    /// Output grid nodes (default 1001 two-level, 201 oscillator).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "fock-dim", default_value_t = 128)]
    fock_dim: usize,
    /// `1`, `2`, `plus`, `minus` (two-level) or a level index (oscillator).
    #[arg(long)]
    state: Option<String>,
}

impl Numerics {
    fn options(&self) -> Result<RunOptions, Failure> {
        Ok(RunOptions {
            method: self.method.map(Method::from),
            rel_tol: self.rel_tol,
            abs_tol: self.rel_tol * 1e-2,
            samples: self.samples,
            fock_dim: self.fock_dim,
            state: self.state.as_deref().map(str::parse::<InitialState>).transpose()?,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    /// Design document (JSON).
    design: PathBuf,
    #[command(flatten)]
    numerics: Numerics,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Ho,
    Tls,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    system: System,
    /// Comma-separated durations.
    #[arg(long)]
    tf: String,
    #[arg(long, value_enum, default_value = "fig1")]
    preset: Preset,
    #[arg(long, default_value_t = 1.0)]
    omega0: f64,
    #[arg(long, default_value_t = 0.1)]
    omegaf: f64,
    #[arg(long, default_value_t = 5)]
    degree: usize,
    #[command(flatten)]
    numerics: Numerics,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Check(_) => 1,
            Self::Usage(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Check(m) | Self::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::DegreeMismatch { .. } | Error::DimensionMismatch { .. } => {
                Self::Usage(e.to_string())
            }
            _ => Self::Numeric(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Design { target } => cmd_design(target),
        Command::Propagate(args) => cmd_propagate(args),
        Command::Check(args) => cmd_check(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Numeric(format!("cannot write to stdout: {e}"))),
    }
}

fn load(path: &Path) -> Result<DesignDocument, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(DesignDocument::from_json(&text)?)
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn cmd_design(target: DesignTarget) -> Result<(), Failure> {
    let (doc, out) = match target {
        DesignTarget::Ho(a) => (DesignDocument::oscillator(a.omega0, a.omegaf, a.tf, a.degree)?, a.out),
        DesignTarget::Tls(a) => (DesignDocument::two_level_preset(a.preset.name(), a.tf)?, a.out),
    };
    summarize(&doc)?;
    let mut text = doc.to_json();
    text.push('\n');
    emit(out.as_deref(), &text)
}

fn summarize(doc: &DesignDocument) -> Result<(), Failure> {
    if let Some(d) = doc.ermakov()? {
        let scan = d.trap_scan()?;
        eprintln!(
            "b(t_f) = {}, min omega^2 = {} at t = {}{}",
            num(d.b().value(d.t_f())),
            num(scan.min_omega_squared),
            num(scan.at),
            if scan.inverted { " (trap inverted)" } else { "" }
        );
    }
    let grid = TimeGrid::uniform(doc.t_f(), 1001)?;
    if let Some(a) = doc.angles()? {
        let controls = TLSControls::from_schedule(&a, &grid)?;
        let peak = controls.omega_r().values().iter().fold(0.0f64, |m, v| m.max(*v));
        let ep = commutator_endpoint_report(&a, &controls);
        eprintln!(
            "peak Omega_R = {}, endpoints commute: {}",
            num(peak),
            if ep.commutes(1e-10) { "yes" } else { "no" }
        );
    } else if let Some(r) = doc.reference() {
        let mut peak = 0.0f64;
        for &t in grid.nodes() {
            peak = peak.max(r.controls_at(t)?.omega());
        }
        eprintln!("reference schedule, peak Omega = {}", num(peak));
    }
    Ok(())
}

fn cmd_propagate(args: RunArgs) -> Result<(), Failure> {
    let doc = load(&args.design)?;
    let traj = run(&doc, &args.numerics.options()?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Numeric(e.to_string());
    match &traj.rows {
        Rows::TwoLevel(rows) => {
            w.write_record(["t", "P1", "P2", "P1_ad", "P2_ad", "overlap_mode_plus", "phase_mode_plus", "alpha_plus"])
                .map_err(csv_err)?;
            for r in rows {
                w.write_record(
                    [r.t, r.p1, r.p2, r.p1_ad, r.p2_ad, r.overlap_mode_plus, r.phase_mode_plus, r.alpha_plus].map(num),
                )
                .map_err(csv_err)?;
            }
        }
        Rows::Oscillator { mode, levels, rows } => {
            let mut header = vec!["t".to_string(), format!("fidelity_to_mode_{mode}")];
            header.extend(levels.iter().map(|l| format!("P{l}")));
            header.push("norm".into());
            w.write_record(&header).map_err(csv_err)?;
            for r in rows {
                let mut rec = vec![num(r.t), num(r.fidelity)];
                rec.extend(r.populations.iter().copied().map(num));
                rec.push(num(r.norm));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
    }
    let body = w.into_inner().map_err(|e| Failure::Numeric(e.to_string()))?;
    let text = format!("{UNITS}\n{}", String::from_utf8(body).expect("ASCII output"));
    emit(args.out.as_deref(), &text)
}

fn cmd_check(args: RunArgs) -> Result<(), Failure> {
    let doc = load(&args.design)?;
    let report: CheckReport = check(&doc, &args.numerics.options()?)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    emit(args.out.as_deref(), &text)?;
    if report.passed {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|c| match (&c.error, c.value) {
            (Some(e), _) => format!("{}: {e}", c.name),
            (None, Some(v)) => format!("{} = {} (threshold {})", c.name, num(v), num(c.threshold)),
            (None, None) => c.name.clone(),
        })
        .collect();
    Err(Failure::Check(format!("failed checks: {}", failed.join("; "))))
}

fn parse_durations(list: &str) -> Result<Vec<f64>, Failure> {
    let mut tfs = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(Failure::Usage(format!("invalid duration {s:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if tfs.is_empty() {
        return Err(Failure::Usage("empty duration list".into()));
    }
    tfs.sort_by(f64::total_cmp);
    Ok(tfs)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let tfs = parse_durations(&args.tf)?;
    if args.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let opts = args.numerics.options()?;
    let (omega0, omegaf, degree, preset) = (args.omega0, args.omegaf, args.degree, args.preset.name());
    let build = move |t_f: f64| match args.system {
        System::Ho => DesignDocument::oscillator(omega0, omegaf, t_f, degree),
        System::Tls => DesignDocument::two_level_preset(preset, t_f),
    };
    let probe = build(tfs[0])?;
    probe.check_method(opts.method.unwrap_or(probe.default_method()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Failure::Numeric(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| tfs.par_iter().map(|&t_f| sweep_row(&build, t_f, &opts)).collect());

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Numeric(e.to_string());
    w.write_record(["t_f", "infidelity", "peak_rabi", "min_omega_squared", "trap_inverted", "adiabaticity_metric", "error"])
        .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            num(r.t_f),
            opt(r.infidelity),
            opt(r.peak_rabi),
            opt(r.min_omega_squared),
            r.trap_inverted.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.adiabaticity_metric),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| Failure::Numeric(e.to_string()))?;
    let text = format!("{UNITS}\n{}", String::from_utf8(body).expect("UTF-8 output"));
    emit(args.out.as_deref(), &text)
}
