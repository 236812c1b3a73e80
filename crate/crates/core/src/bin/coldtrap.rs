//! Command line front end: single runs, spectra, fits, calibration, mode
//! temperatures, sweeps and the scalar report.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 for
//! numerical or I/O failures.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use coldtrap::config::ExperimentConfig;
use coldtrap::constants::ConstantsReport;
use coldtrap::error::{Error, Result};
use coldtrap::langevin::{attach_detector, simulate_feedback, simulate_free};
use coldtrap::persist::{read_trajectory, write_csv, write_trajectory};
use coldtrap::report::report_scalars;
use coldtrap::spectral::{
    calibrate_equipartition, calibrate_from_reference, fit_lorentzian, mode_temperature,
    next_pow2, welch, Calibration, FitOptions, FitResult, FitWindow, ModeTemperature, Psd,
};
use coldtrap::sweep::{run_cooling_sweep, run_linewidth_sweep, SweepResult};
use coldtrap::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "coldtrap", version, about = "Feedback-cooled levitated microsphere simulator")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sweep.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the physical constants in use.
    Constants,
    /// Run the configured experiment once and save the trajectory.
    Simulate,
    /// Welch spectra of a saved trajectory.
    Psd(AnalysisArgs),
    /// Fit each mode of a saved trajectory.
    Fit(AnalysisArgs),
    /// Calibrate the detectors from an uncooled trajectory.
    Calibrate(AnalysisArgs),
    /// Mode temperatures of a saved trajectory given a calibration.
    Temp {
        #[command(flatten)]
        args: AnalysisArgs,
        /// Calibration JSON written by `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Linewidth against pressure without feedback.
    SweepLinewidth,
    /// Mode temperatures under feedback over the configured grid.
    SweepCooling,
    /// Closed-form scalars for the configured sphere and modes.
    Report,
}

#[derive(Debug, clap::Args)]
struct AnalysisArgs {
    /// Trajectory file; defaults to `<out>/trajectory.ltrj`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Welch segment length in samples; derived from the expected linewidth when omitted.
    #[arg(long)]
    segment: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.sweep.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, csv: impl FnOnce() -> String, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(value)?,
        Format::Csv => csv(),
    })
}

/// Writes `text` to `<out>/<stem>.<ext>` and echoes it to stdout.
fn publish(cfg: &ExperimentConfig, stem: &str, text: &str, format: Format) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    let ext = match format {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    fs::write(cfg.output_dir.join(format!("{stem}.{ext}")), text)?;
    println!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Constants = cli.command {
        let c = ConstantsReport::current();
        let text = emit(
            &c,
            || {
                let v = serde_json::to_value(&c).expect("constants serialize");
                let mut s = String::from("name,value\n");
                for (k, v) in v.as_object().expect("object") {
                    s.push_str(&format!("{k},{v}\n"));
                }
                s
            },
            cli.format,
        )?;
        println!("{text}");
        return Ok(());
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Constants => unreachable!(),
        Command::Simulate => simulate(&cfg, cli.format),
        Command::Psd(a) => psd_cmd(&cfg, a, cli.format),
        Command::Fit(a) => fit_cmd(&cfg, a, cli.format),
        Command::Calibrate(a) => calibrate_cmd(&cfg, a, cli.format),
        Command::Temp { args, calibration } => temp_cmd(&cfg, args, calibration, cli.format),
        Command::SweepLinewidth => sweep_out(&cfg, run_linewidth_sweep(&cfg)?, "sweep_linewidth", cli.format),
        Command::SweepCooling => sweep_out(&cfg, run_cooling_sweep(&cfg)?, "sweep_cooling", cli.format),
        Command::Report => {
            let r = report_scalars(&cfg)?;
            let text = emit(&r, || r.to_csv(), cli.format)?;
            publish(&cfg, "report", &text, cli.format)
        }
    }
}

fn sweep_out(cfg: &ExperimentConfig, res: SweepResult, stem: &str, format: Format) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    cfg.save(&cfg.output_dir.join(format!("{stem}.config.toml")))?;
    let text = emit(&res, || res.to_csv(), format)?;
    publish(cfg, stem, &text, format)
}

#[derive(Serialize)]
struct RunSummary {
    path: PathBuf,
    samples: usize,
    dt: f64,
    seed: u64,
    config_hash: String,
    position_rms_m: [f64; 3],
}

fn simulate(cfg: &ExperimentConfig, format: Format) -> Result<()> {
    let modes = cfg.trap_modes()?;
    let sim = cfg.sim_config()?;
    let traj = if cfg.feedback_enabled() {
        simulate_feedback(&cfg.sphere, &modes, &cfg.gas, &cfg.detector, &cfg.feedback, &sim)?
    } else {
        let mut t = simulate_free(&cfg.sphere, &modes, &cfg.gas, &sim)?;
        attach_detector(&mut t, &cfg.detector)?;
        t
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("trajectory.ltrj");
    write_trajectory(&traj, &path)?;
    cfg.save(&cfg.output_dir.join("trajectory.config.toml"))?;
    if format == Format::Csv {
        write_csv(&traj, &cfg.output_dir.join("trajectory.csv"))?;
    }
    let summary = RunSummary {
        path,
        samples: traj.len(),
        dt: traj.dt,
        seed: sim.seed,
        config_hash: cfg.config_hash(),
        position_rms_m: [0, 1, 2].map(|j| coldtrap::trajectory::mean_square(&traj.position_axis(j)).sqrt()),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_input(cfg: &ExperimentConfig, a: &AnalysisArgs) -> Result<Trajectory> {
    let path = a
        .input
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("trajectory.ltrj"));
    let loaded = read_trajectory(&path)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.trajectory)
}

/// Expected total damping per axis from the run's own metadata.
fn expected_damping(traj: &Trajectory) -> [f64; 3] {
    let g0 = traj.metadata.gamma0;
    let gains = traj.metadata.feedback.as_ref().map(|f| f.gain).unwrap_or([0.0; 3]);
    gains.map(|g| g0 + g)
}

fn spectra(cfg: &ExperimentConfig, traj: &Trajectory, segment: Option<usize>) -> Result<Vec<Psd>> {
    let fs = traj.sample_rate();
    let damping = expected_damping(traj);
    let n = traj.len();
    let unit = if traj.voltages.is_some() { "V" } else { "m" };
    (0..3)
        .map(|j| {
            let seg = segment.unwrap_or_else(|| {
                let want = next_pow2((cfg.sweep.segment_linewidths / damping[j] * fs).ceil() as usize);
                let cap = (n as f64 / 8.5) as usize;
                let cap = if cap.is_power_of_two() { cap } else { cap.next_power_of_two() / 2 };
                want.min(cap).max(16)
            });
            Ok(welch(&traj.signal_axis(j), fs, seg, cfg.sweep.overlap)?.with_unit(unit))
        })
        .collect()
}

fn windows(cfg: &ExperimentConfig, traj: &Trajectory, psds: &[Psd]) -> Result<[FitWindow; 3]> {
    let modes = traj.metadata.modes.hz();
    let damping = expected_damping(traj);
    let mut out = [FitWindow::new(0.0, 1.0)?; 3];
    for j in 0..3 {
        let w = FitWindow::around(modes[j], damping[j] / (2.0 * PI), cfg.sweep.fit_half_width)?;
        out[j] = FitWindow::new(w.low_hz, w.high_hz.min(0.5 * psds[j].sample_rate))?;
    }
    Ok(out)
}

fn fits(cfg: &ExperimentConfig, traj: &Trajectory, psds: &[Psd]) -> Result<Vec<FitResult>> {
    let wins = windows(cfg, traj, psds)?;
    (0..3)
        .map(|j| fit_lorentzian(&psds[j], wins[j], &FitOptions::default()))
        .collect()
}

fn psd_cmd(cfg: &ExperimentConfig, a: &AnalysisArgs, format: Format) -> Result<()> {
    let traj = load_input(cfg, a)?;
    let psds = spectra(cfg, &traj, a.segment)?;
    let text = emit(
        &psds,
        || {
            let mut s = String::from("axis,frequency_hz,psd\n");
            for (j, p) in psds.iter().enumerate() {
                for (f, v) in p.freqs.iter().zip(&p.values) {
                    s.push_str(&format!("{},{f:e},{v:e}\n", ["x", "y", "z"][j]));
                }
            }
            s
        },
        format,
    )?;
    fs::create_dir_all(&cfg.output_dir)?;
    let ext = if format == Format::Csv { "csv" } else { "json" };
    fs::write(cfg.output_dir.join(format!("psd.{ext}")), &text)?;
    for (j, p) in psds.iter().enumerate() {
        println!(
            "axis {}: {} bins, {:.4} Hz resolution, {} segments",
            ["x", "y", "z"][j],
            p.values.len(),
            p.resolution,
            p.n_segments
        );
    }
    Ok(())
}

fn fits_csv(fits: &[FitResult]) -> String {
    let mut s = String::from("axis,frequency_hz,linewidth_hz,omega,omega_err,gamma,gamma_err,amplitude_scale,amplitude_err,floor,reduced_chi2\n");
    for (j, f) in fits.iter().enumerate() {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            ["x", "y", "z"][j],
            f.frequency_hz(),
            f.linewidth_hz(),
            f.omega,
            f.uncertainties.omega,
            f.gamma,
            f.uncertainties.gamma,
            f.amplitude_scale,
            f.uncertainties.amplitude_scale,
            f.floor,
            f.reduced_chi2
        ));
    }
    s
}

fn fit_cmd(cfg: &ExperimentConfig, a: &AnalysisArgs, format: Format) -> Result<()> {
    let traj = load_input(cfg, a)?;
    let psds = spectra(cfg, &traj, a.segment)?;
    let fits = fits(cfg, &traj, &psds)?;
    let text = emit(&fits, || fits_csv(&fits), format)?;
    publish(cfg, "fits", &text, format)
}

#[derive(Serialize)]
struct CalibrationOutput {
    calibration: Calibration,
    fits: [FitResult; 3],
    consistent: Option<[bool; 3]>,
}

fn calibrate_cmd(cfg: &ExperimentConfig, a: &AnalysisArgs, format: Format) -> Result<()> {
    let traj = load_input(cfg, a)?;
    if traj.metadata.feedback.as_ref().is_some_and(|f| f.gain.iter().any(|g| *g != 0.0)) {
        log::warn!("calibrating from a trajectory recorded with feedback on");
    }
    let psds = spectra(cfg, &traj, a.segment)?;
    let wins = windows(cfg, &traj, &psds)?;
    let psds: [Psd; 3] = psds.try_into().expect("three axes");
    let t0 = traj.metadata.gas.temperature;
    let mass = traj.metadata.sphere.mass();
    let reference = calibrate_from_reference(&psds, &wins, t0, mass, &FitOptions::default())?;
    let modes = traj.metadata.modes.hz();
    let nyquist = 0.5 * traj.sample_rate();
    let mut beta_sq = [0.0; 3];
    for j in 0..3 {
        let cutoff = (10.0 * modes[j]).min(0.8 * nyquist);
        beta_sq[j] = calibrate_equipartition(&traj.signal_axis(j), traj.dt, mass, t0, cutoff)?;
    }
    let calibration = reference.calibration.with_beta_sq(beta_sq);
    let consistent = calibration.consistency().map(|c| c.map(|x| x.consistent));
    if let Some(c) = consistent {
        for (j, ok) in c.iter().enumerate() {
            if !ok {
                eprintln!("warning: axis {j}: reference and equipartition calibrations disagree by more than 25 %");
            }
        }
    }
    let out = CalibrationOutput {
        calibration,
        fits: reference.fits,
        consistent,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join("calibration.json"),
        serde_json::to_string_pretty(&out.calibration)?,
    )?;
    let text = emit(&out, || fits_csv(&out.fits), format)?;
    println!("{text}");
    Ok(())
}

fn temp_cmd(cfg: &ExperimentConfig, a: &AnalysisArgs, cal_path: &Path, format: Format) -> Result<()> {
    let traj = load_input(cfg, a)?;
    let text = fs::read_to_string(cal_path)?;
    let calibration: Calibration = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse calibration {}: {e}", cal_path.display())))?;
    calibration.validate()?;
    let psds = spectra(cfg, &traj, a.segment)?;
    let fits = fits(cfg, &traj, &psds)?;
    let temps = (0..3)
        .map(|j| mode_temperature(&psds[j], &fits[j], &calibration, j))
        .collect::<Result<Vec<ModeTemperature>>>()?;
    let text = emit(
        &temps,
        || {
            let mut s = String::from("axis,temperature_k,temperature_from_fit_k,position_variance_m2,occupancy,in_window_fraction\n");
            for (j, t) in temps.iter().enumerate() {
                s.push_str(&format!(
                    "{},{:e},{:e},{:e},{:e},{:e}\n",
                    ["x", "y", "z"][j],
                    t.temperature,
                    t.temperature_from_fit,
                    t.position_variance,
                    t.occupancy,
                    t.in_window_fraction
                ));
            }
            s
        },
        format,
    )?;
    publish(cfg, "temperatures", &text, format)
}
