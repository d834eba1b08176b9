use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use mwaddr::calibration::{
    calibration_cost, compare_to_truth, crosstalk_degradation, records_from_csv, records_to_csv, reconstruct,
    simulate_campaign, CampaignConfig,
};
use mwaddr::coupling::assemble;
use mwaddr::field::electrode_field;
use mwaddr::format::sig9;
use mwaddr::geometry::{load_layout, reference_two_zone_layout};
use mwaddr::nulling::{crosstalk_ratio, solve_addressed_only_multi, solve_minimum_norm, DriveSolution};
use mwaddr::robustness::{
    drift_contour_grid, lamb_dicke_at_ion, monte_carlo_drift, quadrature_drift, GridSpacing,
};
use mwaddr::scaling::{fit_decay_exponent, lattice_crosstalk, perimeter_count, total_crosstalk, FitLine, Lattice};
use mwaddr::{Axis, Complex64, CouplingMatrix, DriftModel, FieldTarget, PhasorVector3, RatioProbe, ScalingModel, TrapLayout, MU0};

use crate::report::*;
use crate::{DriveArgs, Format, Spacing, Toggle};

pub struct Context {
    pub layout: TrapLayout,
    format: Option<Format>,
}

impl Context {
    pub fn load(path: Option<&Path>, format: Option<Format>) -> Result<Self> {
        let layout = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                load_layout(&text).with_context(|| format!("layout {}", p.display()))?
            }
            None => reference_two_zone_layout(),
        };
        Ok(Context { layout, format })
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn json_only(&self, what: &str) -> Result<()> {
        if self.format == Some(Format::Csv) {
            bail!("{what} is only available as JSON");
        }
        Ok(())
    }

    fn matrix(&self) -> Result<CouplingMatrix> {
        Ok(assemble(&self.layout)?)
    }
}

fn unit(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n.is_finite() && n > 0.0) {
        bail!("direction must be a finite nonzero vector");
    }
    Ok(v.map(|c| c / n))
}

/// `x`, `y`, `z` or `ux,uy,uz`, normalised.
pub fn parse_direction(s: &str) -> Result<[f64; 3]> {
    if let Ok(a) = s.parse::<Axis>() {
        return Ok(a.unit());
    }
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("direction `{s}`: expected x, y, z or ux,uy,uz");
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().with_context(|| format!("direction component `{p}`"))?;
    }
    unit(v)
}

struct Drive {
    zone: usize,
    neighbor: Option<usize>,
    target: PhasorVector3,
    axis: [f64; 3],
    nulling: bool,
}

impl Drive {
    fn resolve(ctx: &Context, args: &DriveArgs) -> Result<Self> {
        let ions = ctx.layout.zones().len();
        if args.zone == 0 || args.zone > ions {
            bail!("zone {} is not in the layout (1..={ions})", args.zone);
        }
        let neighbor = match args.neighbor {
            Some(n) if n == 0 || n > ions || n == args.zone => {
                bail!("neighbor {n} must be another zone of the layout (1..={ions})")
            }
            Some(n) => Some(n),
            None if ions == 1 => None,
            None if args.zone < ions => Some(args.zone + 1),
            None => Some(args.zone - 1),
        };
        if !args.amplitude.is_finite() || !args.phase_deg.is_finite() {
            bail!("amplitude and phase must be finite");
        }
        let dir = parse_direction(&args.direction)?;
        let scale = Complex64::from_polar(args.amplitude * MU0, args.phase_deg.to_radians());
        Ok(Drive {
            zone: args.zone,
            neighbor,
            target: PhasorVector3::from_real(dir, scale),
            axis: ctx.layout.quant_axis(),
            nulling: args.nulling == Toggle::On,
        })
    }

    fn neighbor(&self) -> Result<usize> {
        self.neighbor.context("the layout has a single zone; no neighbour to compare against")
    }

    fn solve(&self, m: &CouplingMatrix) -> Result<DriveSolution> {
        let ions = m.ion_count();
        if self.nulling {
            let t = FieldTarget::addressed_with_nulls(ions, self.zone, self.target)?;
            Ok(solve_minimum_norm(m, &t)?)
        } else {
            let others: Vec<usize> = (1..=ions).filter(|&n| n != self.zone).collect();
            if others.is_empty() {
                bail!("addressed-only drive needs at least one other zone");
            }
            Ok(solve_addressed_only_multi(m, self.zone, self.target, &others)?)
        }
    }

    fn probe(&self) -> Result<RatioProbe> {
        Ok(RatioProbe {
            addressed: self.zone,
            neighbor: self.neighbor()?,
            axis: self.axis,
        })
    }
}

pub fn layout(ctx: &Context) -> Result<String> {
    if ctx.format.is_some() {
        bail!("the layout is always written as TOML");
    }
    Ok(ctx.layout.to_toml_string())
}

fn matrix_output(ctx: &Context, m: &CouplingMatrix) -> Result<String> {
    match ctx.format(Format::Csv) {
        Format::Csv => Ok(m.to_csv()),
        Format::Json => {
            let e = m.entries();
            to_json(&MatrixReport {
                schema_version: SCHEMA_VERSION,
                rows: m.rows().iter().map(ToString::to_string).collect(),
                columns: m.column_ids(),
                entries: (0..e.nrows()).map(|r| (0..e.ncols()).map(|k| pair(e[(r, k)])).collect()).collect(),
            })
        }
    }
}

pub fn matrix(ctx: &Context, import: Option<&Path>) -> Result<String> {
    let m = match import {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            CouplingMatrix::from_csv(&text).with_context(|| format!("matrix {}", p.display()))?
        }
        None => ctx.matrix()?,
    };
    matrix_output(ctx, &m)
}

pub fn solve(ctx: &Context, args: &DriveArgs, x0_nm: Option<f64>) -> Result<String> {
    let drive = Drive::resolve(ctx, args)?;
    let m = ctx.matrix()?;
    let sol = drive.solve(&m)?;
    let ratio = match drive.neighbor {
        Some(n) => Some(crosstalk_ratio(&m, &sol, drive.zone, n, drive.axis)?),
        None => None,
    };
    match ctx.format(Format::Csv) {
        Format::Csv => {
            let mut s = String::from("electrode_id,re_a,im_a,abs_a,phase_deg\n");
            for (id, c) in sol.currents.ids().iter().zip(sol.currents.values()) {
                s.push_str(&format!(
                    "{id},{},{},{},{}\n",
                    sig9(c.re),
                    sig9(c.im),
                    sig9(c.norm()),
                    sig9(c.arg().to_degrees())
                ));
            }
            Ok(s)
        }
        Format::Json => {
            let lamb_dicke = match x0_nm {
                Some(x0) => {
                    if !(x0.is_finite() && x0 > 0.0) {
                        bail!("x0 must be positive");
                    }
                    let eta = |mode: Axis| lamb_dicke_at_ion(&ctx.layout, &sol.currents, drive.zone, drive.axis, mode.unit(), x0 * 1e-9);
                    Some(LambDicke {
                        x0_nm: num(x0),
                        eta_x: num(eta(Axis::X)?),
                        eta_y: num(eta(Axis::Y)?),
                        eta_z: num(eta(Axis::Z)?),
                    })
                }
                None => None,
            };
            to_json(&SolveReport {
                schema_version: SCHEMA_VERSION,
                zone: drive.zone,
                neighbor: drive.neighbor,
                nulling: drive.nulling,
                currents: sol
                    .currents
                    .ids()
                    .iter()
                    .zip(sol.currents.values())
                    .map(|(id, c)| CurrentEntry {
                        electrode: id.clone(),
                        current_a: pair(*c),
                        abs_a: num(c.norm()),
                        phase_deg: num(c.arg().to_degrees()),
                    })
                    .collect(),
                current_norm_a: num(sol.norm),
                inexact: sol.flags.inexact,
                no_nulling_freedom: sol.flags.no_nulling_freedom,
                fields: sol
                    .achieved
                    .iter()
                    .enumerate()
                    .map(|(i, b)| IonField {
                        ion: i + 1,
                        b_over_mu0_a_per_m: std::array::from_fn(|a| pair(b[a] / MU0)),
                        abs_projection_a_per_m: num(b.project(drive.axis).norm() / MU0),
                    })
                    .collect(),
                crosstalk_ratio: opt(ratio),
                lamb_dicke,
            })
        }
    }
}

pub fn axis_scan(ctx: &Context, args: &DriveArgs, samples: usize) -> Result<String> {
    if samples < 2 {
        bail!("axis scan needs at least 2 samples");
    }
    let drive = Drive::resolve(ctx, args)?;
    let neighbor = drive.neighbor()?;
    let m = ctx.matrix()?;
    let sol = drive.solve(&m)?;
    let a = ctx.layout.zone(drive.zone)?.ion_position.to_array();
    let b = ctx.layout.zone(neighbor)?.ion_position.to_array();
    let electrodes = sol
        .currents
        .ids()
        .iter()
        .map(|id| ctx.layout.electrode(id))
        .collect::<mwaddr::Result<Vec<_>>>()?;
    // t runs over [-0.5, 1.5]; with (samples - 1) divisible by 4 the ions
    // fall exactly on t = 0 and t = 1.
    let span = (samples - 1) as f64;
    let mut points = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = (4.0 * i as f64 - span) / (2.0 * span);
        let p: [f64; 3] = std::array::from_fn(|j| a[j] + t * (b[j] - a[j]));
        let at = mwaddr::Point3::new(p[0], p[1], p[2]);
        let mut f = PhasorVector3::ZERO;
        for (e, c) in electrodes.iter().zip(sol.currents.values()) {
            f += electrode_field(e, *c, at)?;
        }
        points.push((t, p, std::array::from_fn::<f64, 3, _>(|j| f[j].norm() / MU0)));
    }
    match ctx.format(Format::Csv) {
        Format::Csv => {
            let mut s = String::from("t,x_um,y_um,z_um,abs_bx_a_per_m,abs_by_a_per_m,abs_bz_a_per_m\n");
            for (t, p, f) in &points {
                let cols: Vec<String> = [*t].iter().chain(p).chain(f).map(|v| sig9(*v)).collect();
                s.push_str(&cols.join(","));
                s.push('\n');
            }
            Ok(s)
        }
        Format::Json => to_json(&AxisScanReport {
            schema_version: SCHEMA_VERSION,
            zone: drive.zone,
            neighbor,
            nulling: drive.nulling,
            points: points
                .iter()
                .map(|(t, p, f)| ScanPoint {
                    t: num(*t),
                    position_um: p.map(num),
                    abs_b_over_mu0_a_per_m: f.map(num),
                })
                .collect(),
        }),
    }
}

fn check_drift(di_percent: f64, dphi_deg: f64) -> Result<()> {
    if !(di_percent.is_finite() && di_percent >= 0.0 && dphi_deg.is_finite() && dphi_deg >= 0.0) {
        bail!("drift magnitudes must be finite and non-negative");
    }
    Ok(())
}

pub fn drift(ctx: &Context, args: &DriveArgs, di_percent: f64, dphi_deg: f64, samples: usize, seed: u64) -> Result<String> {
    ctx.json_only("the drift report")?;
    check_drift(di_percent, dphi_deg)?;
    if samples == 0 {
        bail!("at least one Monte Carlo sample is required");
    }
    let drive = Drive::resolve(ctx, args)?;
    let probe = drive.probe()?;
    let m = ctx.matrix()?;
    let sol = drive.solve(&m)?;
    let model = DriftModel::uniform(sol.currents.len(), di_percent / 100.0, dphi_deg.to_radians())?;
    let q = quadrature_drift(&m, &sol.currents, &model, probe)?;
    let mc = monte_carlo_drift(&m, &sol.currents, &model, probe, samples, seed)?;
    let qd = q.neighbor_projection_delta;
    to_json(&DriftReport {
        schema_version: SCHEMA_VERSION,
        zone: drive.zone,
        neighbor: probe.neighbor,
        nulling: drive.nulling,
        delta_i_percent: num(di_percent),
        delta_phi_deg: num(dphi_deg),
        quadrature: QuadratureBlock {
            delta_b_over_mu0_a_per_m: q.delta_b.iter().map(|d| num(d / MU0)).collect(),
            rows: m.rows().iter().map(ToString::to_string).collect(),
            neighbor_projection_delta_a_per_m: num(qd / MU0),
            rabi_ratio: num(q.rabi_ratio),
        },
        monte_carlo: MonteCarloBlock {
            samples,
            seed,
            nominal_ratio: num(mc.nominal_ratio),
            mean_ratio: num(mc.mean_ratio),
            rms_ratio: num(mc.rms_ratio),
            rms_deviation_a_per_m: num(mc.rms_deviation / MU0),
            variance_factor: num(mc.variance_factor),
            rms_deviation_scaled_a_per_m: num(mc.rms_deviation_scaled / MU0),
            relative_difference: (qd > 0.0).then(|| num((mc.rms_deviation_scaled - qd).abs() / qd)),
        },
    })
}

pub fn drift_grid(
    ctx: &Context,
    args: &DriveArgs,
    di_percent: (f64, f64),
    dphi_deg: (f64, f64),
    counts: (usize, usize),
    spacing: Spacing,
) -> Result<String> {
    let drive = Drive::resolve(ctx, args)?;
    let probe = drive.probe()?;
    let m = ctx.matrix()?;
    let sol = drive.solve(&m)?;
    let spacing = match spacing {
        Spacing::Linear => GridSpacing::Linear,
        Spacing::Log => GridSpacing::Log,
    };
    let grid = drift_contour_grid(
        &m,
        &sol.currents,
        probe,
        (di_percent.0 / 100.0, di_percent.1 / 100.0),
        (dphi_deg.0.to_radians(), dphi_deg.1.to_radians()),
        counts,
        spacing,
    )?;
    match ctx.format(Format::Csv) {
        Format::Csv => Ok(grid.to_csv()),
        Format::Json => to_json(&DriftGridReport {
            schema_version: SCHEMA_VERSION,
            delta_i_percent: grid.delta_i.iter().map(|v| num(v * 100.0)).collect(),
            delta_phi_deg: grid.delta_phi.iter().map(|v| num(v.to_degrees())).collect(),
            rabi_ratio: grid.ratios.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect(),
        }),
    }
}

pub struct CalibrateArgs {
    pub noise_sigma: f64,
    pub repeats: usize,
    pub phase_points: usize,
    pub seed: u64,
    pub cost_m: u64,
    pub cost_ions: Option<u64>,
    pub records_out: Option<PathBuf>,
}

/// Matrix component closest to the quantisation axis.
fn drive_axis(layout: &TrapLayout) -> Axis {
    let u = layout.quant_axis();
    Axis::ALL
        .into_iter()
        .max_by(|a, b| u[a.index()].abs().total_cmp(&u[b.index()].abs()))
        .expect("three axes")
}

pub fn calibrate(ctx: &Context, args: &DriveArgs, c: CalibrateArgs) -> Result<String> {
    ctx.json_only("the calibration report")?;
    let drive = Drive::resolve(ctx, args)?;
    let truth = ctx.matrix()?;
    let records = simulate_campaign(
        &truth,
        &CampaignConfig {
            repeats: c.repeats,
            phase_points: c.phase_points,
            noise_sigma: c.noise_sigma,
            seed: c.seed,
            drive_axis: drive_axis(&ctx.layout),
        },
    )?;
    if let Some(path) = &c.records_out {
        fs::write(path, records_to_csv(&records)).with_context(|| format!("writing {}", path.display()))?;
    }
    let recon = reconstruct(&records, truth.ion_count(), &truth.column_ids())?;
    let errors = compare_to_truth(&truth, &recon.matrix)?;
    let crosstalk = match drive.neighbor {
        Some(n) => {
            let zoned = recon.matrix.clone().with_layout_zones(&ctx.layout)?;
            let d = crosstalk_degradation(&truth, &zoned, drive.zone, n, drive.target, drive.axis)?;
            Some(CrosstalkReport {
                nulled_ideal: num(d.nulled_ideal),
                nulled_calibrated: num(d.nulled_calibrated),
                addressed_only_ideal: num(d.addressed_only_ideal),
                addressed_only_calibrated: num(d.addressed_only_calibrated),
            })
        }
        None => None,
    };
    let ions = c.cost_ions.unwrap_or(truth.ion_count() as u64);
    let parallel = calibration_cost(ions, c.cost_m, true)?;
    let serial = calibration_cost(ions, c.cost_m, false)?;
    let max = |f: fn(&mwaddr::calibration::EntryError) -> f64| errors.iter().map(f).fold(0.0, f64::max);
    to_json(&CalibrationReport {
        schema_version: SCHEMA_VERSION,
        seed: c.seed,
        noise_sigma: num(c.noise_sigma),
        repeats: c.repeats,
        phase_points: c.phase_points,
        records: records.len(),
        max_rel_entry_error: num(max(|e| e.rel_error)),
        max_amplitude_rel_error: num(max(|e| e.amplitude_rel_error)),
        max_phase_error_rad: num(max(|e| e.phase_error_rad.abs())),
        indeterminate: recon
            .indeterminate
            .iter()
            .map(|&(r, k)| format!("{}/{}", truth.rows()[r], truth.columns()[k].id))
            .collect(),
        entries: errors
            .iter()
            .map(|e| EntryReport {
                row: e.row.to_string(),
                electrode: e.electrode.clone(),
                amplitude_rel_error: num(e.amplitude_rel_error),
                phase_error_rad: num(e.phase_error_rad),
                rel_error: num(e.rel_error),
            })
            .collect(),
        crosstalk,
        cost: CostReport {
            ions,
            m: c.cost_m,
            total_measurements: parallel.total_measurements,
            wall_clock_parallel: parallel.wall_clock_units,
            wall_clock_serial: serial.wall_clock_units,
        },
    })
}

/// Reconstruct a matrix from a records file against the layout's shape.
pub fn replay(ctx: &Context, path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records = records_from_csv(&text).with_context(|| format!("records {}", path.display()))?;
    let ids: Vec<String> = ctx.layout.electrodes().iter().map(|e| e.id.clone()).collect();
    let recon = reconstruct(&records, ctx.layout.zones().len(), &ids)?;
    matrix_output(ctx, &recon.matrix)
}

pub struct ScalingArgs {
    pub k: f64,
    pub chi0: f64,
    pub max_distance: usize,
    pub lattice_side: Option<usize>,
    pub fit_electrode: String,
    pub fit_range_um: (f64, f64),
    pub fit_samples: usize,
    pub fit_direction: Option<String>,
}

pub fn scaling(ctx: &Context, a: ScalingArgs) -> Result<String> {
    ctx.json_only("the scaling report")?;
    let lattice = match a.lattice_side {
        Some(side) => Lattice::Square {
            side,
            centre: (side.saturating_sub(1) / 2, side.saturating_sub(1) / 2),
        },
        None => Lattice::Infinite,
    };
    let model = ScalingModel::new(a.chi0, a.k, lattice)?;
    let sum = total_crosstalk(&model, a.max_distance)?;
    let lattice_total = match a.lattice_side {
        Some(_) => Some(lattice_crosstalk(&model, a.max_distance)?),
        None => None,
    };
    let perimeter_counts = (1..=5).map(|d| perimeter_count(&lattice, d)).collect::<mwaddr::Result<Vec<_>>>()?;

    let electrode = ctx.layout.electrode(&a.fit_electrode)?;
    let origin = ctx.layout.zone(electrode.zone)?.ion_position;
    let direction = match &a.fit_direction {
        Some(s) => parse_direction(s)?,
        None => {
            let nearest = ctx
                .layout
                .zones()
                .iter()
                .filter(|z| z.index != electrode.zone)
                .min_by(|p, q| origin.distance(p.ion_position).total_cmp(&origin.distance(q.ion_position)));
            match nearest {
                Some(z) => unit(std::array::from_fn(|j| origin.to_array()[j] - z.ion_position.to_array()[j]))?,
                None => [0.0, 0.0, 1.0],
            }
        }
    };
    let fit = fit_decay_exponent(
        &ctx.layout,
        &a.fit_electrode,
        FitLine {
            origin,
            direction,
            axis: ctx.layout.quant_axis(),
        },
        a.fit_range_um,
        a.fit_samples,
    )?;
    to_json(&ScalingReport {
        schema_version: SCHEMA_VERSION,
        chi0: num(a.chi0),
        k: num(a.k),
        max_distance: a.max_distance,
        partial_sum: num(sum.partial_sum),
        converged: sum.converged,
        limit_estimate: opt(sum.limit_estimate),
        tail_bound: opt(sum.tail_bound),
        lattice_side: a.lattice_side,
        lattice_crosstalk: opt(lattice_total),
        perimeter_counts,
        fit: FitReport {
            electrode: a.fit_electrode,
            direction: direction.map(num),
            d_min_um: num(a.fit_range_um.0),
            d_max_um: num(a.fit_range_um.1),
            samples: a.fit_samples,
            k: num(fit.k),
            r_squared: num(fit.r_squared),
        },
    })
}
