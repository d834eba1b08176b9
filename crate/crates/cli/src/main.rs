//! `mwaddr`: batch front end for the microwave addressing model.
//!
//! Exit codes: 0 on success, 1 when a computation fails numerically, 2 for
//! bad input (arguments, files, formats).

mod commands;
mod report;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mwaddr", version, about = "Microwave near-field addressing and crosstalk nulling for multi-zone ion traps")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Layout TOML file. The built-in two-zone layout is used when omitted.
    #[arg(long, global = true)]
    layout: Option<PathBuf>,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format. Tabular commands default to csv, reports to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Spacing {
    Linear,
    Log,
}

/// Target field at the addressed ion and the ions involved.
#[derive(Args, Debug, Clone)]
pub struct DriveArgs {
    /// Addressed zone (1-based).
    #[arg(long, default_value_t = 1)]
    pub zone: usize,

    /// Neighbour zone used for crosstalk ratios. Defaults to the next zone,
    /// or the previous one for the last zone.
    #[arg(long)]
    pub neighbor: Option<usize>,

    /// Target amplitude of B/mu0 at the addressed ion, A/m.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,

    /// Target field direction: x, y, z or a vector `ux,uy,uz`.
    #[arg(long, default_value = "x")]
    pub direction: String,

    /// Target phase, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phase_deg: f64,

    /// `on`: drive every electrode and null the field at all other ions.
    /// `off`: drive only the addressed zone and minimise the neighbour field.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub nulling: Toggle,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the layout as TOML.
    Layout,

    /// Coupling matrix as CSV (or JSON).
    Matrix {
        /// Read a matrix CSV and re-export it instead of assembling one.
        #[arg(long)]
        import: Option<PathBuf>,
    },

    /// Solve for drive currents.
    Solve {
        #[command(flatten)]
        drive: DriveArgs,

        /// Ground-state extent in nm; adds Lamb-Dicke estimates to the report.
        #[arg(long)]
        x0_nm: Option<f64>,
    },

    /// Field magnitudes along the line through the addressed and neighbour
    /// ions, from t = -0.5 to t = 1.5 of their separation.
    AxisScan {
        #[command(flatten)]
        drive: DriveArgs,

        /// Number of sample points.
        #[arg(long, default_value_t = 801)]
        samples: usize,
    },

    /// Quadrature and Monte Carlo drift sensitivity at one operating point.
    Drift {
        #[command(flatten)]
        drive: DriveArgs,

        /// Relative current error, percent.
        #[arg(long, default_value_t = 0.1)]
        di_percent: f64,

        /// Phase error, degrees.
        #[arg(long, default_value_t = 0.1)]
        dphi_deg: f64,

        /// Monte Carlo samples.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,
    },

    /// Rabi ratio over a grid of current and phase errors.
    DriftGrid {
        #[command(flatten)]
        drive: DriveArgs,

        #[arg(long, default_value_t = 0.0)]
        di_min_percent: f64,

        #[arg(long, default_value_t = 0.5)]
        di_max_percent: f64,

        #[arg(long, default_value_t = 0.0)]
        dphi_min_deg: f64,

        #[arg(long, default_value_t = 0.5)]
        dphi_max_deg: f64,

        /// Grid points along the current-error axis.
        #[arg(long, default_value_t = 51)]
        grid_i: usize,

        /// Grid points along the phase-error axis.
        #[arg(long, default_value_t = 51)]
        grid_phi: usize,

        #[arg(long, value_enum, default_value_t = Spacing::Linear)]
        spacing: Spacing,
    },

    /// Simulate a calibration campaign and report reconstruction errors.
    Calibrate {
        #[command(flatten)]
        drive: DriveArgs,

        /// Relative measurement noise.
        #[arg(long, default_value_t = 0.01)]
        noise_sigma: f64,

        /// Repeats per amplitude scan.
        #[arg(long, default_value_t = 100)]
        repeats: usize,

        /// Points per pairwise phase scan.
        #[arg(long, default_value_t = 16)]
        phase_points: usize,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Measurements per zone-ion pair for the cost model.
        #[arg(long, default_value_t = 10)]
        cost_m: u64,

        /// Ion count for the cost model; defaults to the layout's.
        #[arg(long)]
        cost_ions: Option<u64>,

        /// Also write the simulated records as CSV.
        #[arg(long)]
        records_out: Option<PathBuf>,

        /// Reconstruct from a records CSV and print the matrix instead of
        /// simulating.
        #[arg(long)]
        replay: Option<PathBuf>,
    },

    /// Crosstalk convergence for large arrays and the fitted decay exponent.
    Scaling {
        #[arg(long, default_value_t = 3.0)]
        k: f64,

        #[arg(long, default_value_t = 1.0)]
        chi0: f64,

        /// Largest shell distance summed.
        #[arg(long, default_value_t = 10_000)]
        max_distance: usize,

        /// Side of a finite square array; the centre zone is evaluated.
        #[arg(long)]
        lattice_side: Option<usize>,

        /// Electrode whose far field is fitted.
        #[arg(long, default_value = "z1a")]
        fit_electrode: String,

        #[arg(long, default_value_t = 960.0)]
        fit_min_um: f64,

        #[arg(long, default_value_t = 9600.0)]
        fit_max_um: f64,

        #[arg(long, default_value_t = 21)]
        fit_samples: usize,

        /// Fit direction `ux,uy,uz` from the electrode's ion. Defaults to
        /// pointing away from the nearest other ion.
        #[arg(long)]
        fit_direction: Option<String>,
    },
}

/// 2 for input problems, 1 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|c| c.downcast_ref::<mwaddr::Error>()) {
        Some(e) if !e.is_input_error() => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = commands::Context::load(cli.layout.as_deref(), cli.format)?;
    let output = match cli.command {
        Command::Layout => commands::layout(&ctx)?,
        Command::Matrix { import } => commands::matrix(&ctx, import.as_deref())?,
        Command::Solve { drive, x0_nm } => commands::solve(&ctx, &drive, x0_nm)?,
        Command::AxisScan { drive, samples } => commands::axis_scan(&ctx, &drive, samples)?,
        Command::Drift {
            drive,
            di_percent,
            dphi_deg,
            samples,
            seed,
        } => commands::drift(&ctx, &drive, di_percent, dphi_deg, samples, seed)?,
        Command::DriftGrid {
            drive,
            di_min_percent,
            di_max_percent,
            dphi_min_deg,
            dphi_max_deg,
            grid_i,
            grid_phi,
            spacing,
        } => commands::drift_grid(
            &ctx,
            &drive,
            (di_min_percent, di_max_percent),
            (dphi_min_deg, dphi_max_deg),
            (grid_i, grid_phi),
            spacing,
        )?,
        Command::Calibrate {
            drive,
            noise_sigma,
            repeats,
            phase_points,
            seed,
            cost_m,
            cost_ions,
            records_out,
            replay,
        } => match replay {
            Some(path) => commands::replay(&ctx, &path)?,
            None => commands::calibrate(
                &ctx,
                &drive,
                commands::CalibrateArgs {
                    noise_sigma,
                    repeats,
                    phase_points,
                    seed,
                    cost_m,
                    cost_ions,
                    records_out,
                },
            )?,
        },
        Command::Scaling {
            k,
            chi0,
            max_distance,
            lattice_side,
            fit_electrode,
            fit_min_um,
            fit_max_um,
            fit_samples,
            fit_direction,
        } => commands::scaling(
            &ctx,
            commands::ScalingArgs {
                k,
                chi0,
                max_distance,
                lattice_side,
                fit_electrode,
                fit_range_um: (fit_min_um, fit_max_um),
                fit_samples,
                fit_direction,
            },
        )?,
    };
    match cli.out {
        Some(path) => fs::write(&path, output).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(output.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
