//! Sensitivity of the drive solution to amplitude and phase drift.
//!
//! The linear estimate combines per-channel errors in quadrature,
//! `dB_j = sqrt(sum_k |dB_j/dI_k|^2 dI_k^2 + |dB_j/dphi_k|^2 dphi_k^2)`,
//! with Jacobians `dB_j/dI_k = M_jk e^{i phi_k}` and
//! `dB_j/dphi_k = i M_jk I_k e^{i phi_k}`. A Monte Carlo sampler checks the
//! linearisation. Light-shift and Lamb-Dicke helpers live here as well.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coupling::{split_fields, CouplingMatrix, PhasorCurrentSet};
use crate::error::{Error, Result};
use crate::field::{superposed_sample, PhasorVector3};
use crate::format::sig9;
use crate::geometry::TrapLayout;

/// Ratio of the standard deviation of `uniform(-a, a)` to `a`, inverted:
/// the factor that turns a Monte Carlo RMS into the quadrature convention.
pub const UNIFORM_VARIANCE_FACTOR: f64 = 1.732_050_807_568_877_2;

/// Per-channel relative amplitude error `dI/I` and phase error in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel {
    rel_current: Vec<f64>,
    phase_rad: Vec<f64>,
}

impl DriftModel {
    pub fn new(rel_current: Vec<f64>, phase_rad: Vec<f64>) -> Result<Self> {
        if rel_current.len() != phase_rad.len() {
            return Err(Error::Dimension(format!(
                "{} amplitude errors but {} phase errors",
                rel_current.len(),
                phase_rad.len()
            )));
        }
        if rel_current.iter().chain(&phase_rad).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "drift magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(DriftModel { rel_current, phase_rad })
    }

    /// The same drift on every channel.
    pub fn uniform(channels: usize, rel_current: f64, phase_rad: f64) -> Result<Self> {
        Self::new(vec![rel_current; channels], vec![phase_rad; channels])
    }

    pub fn channels(&self) -> usize {
        self.rel_current.len()
    }

    pub fn rel_current(&self) -> &[f64] {
        &self.rel_current
    }

    pub fn phase_rad(&self) -> &[f64] {
        &self.phase_rad
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.rel_current.iter().map(|v| v * s).collect(),
            self.phase_rad.iter().map(|v| v * s).collect(),
        )
    }

    fn check(&self, currents: &PhasorCurrentSet) -> Result<()> {
        if self.channels() != currents.len() {
            return Err(Error::Dimension(format!(
                "drift model has {} channels, current set {}",
                self.channels(),
                currents.len()
            )));
        }
        Ok(())
    }
}

/// Which ions and which field projection define the Rabi ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioProbe {
    pub addressed: usize,
    pub neighbor: usize,
    pub axis: [f64; 3],
}

impl RatioProbe {
    fn rows(&self, m: &CouplingMatrix) -> Result<(usize, usize)> {
        for n in [self.addressed, self.neighbor] {
            if n == 0 || n > m.ion_count() {
                return Err(Error::UnknownZone(n));
            }
        }
        Ok((3 * (self.addressed - 1), 3 * (self.neighbor - 1)))
    }

    /// `u . B` for the three rows starting at `row`.
    fn project_rows(&self, j: &DMatrix<Complex64>, row: usize, col: usize) -> Complex64 {
        (0..3).map(|a| j[(row + a, col)] * self.axis[a]).sum()
    }
}

/// `dB/dI` (per ampere of amplitude) and `dB/dphi` (per radian), both
/// `3N x E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub d_amplitude: DMatrix<Complex64>,
    pub d_phase: DMatrix<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    /// Quadrature `dB_j` for every row of the matrix, tesla.
    pub delta_b: Vec<f64>,
    /// Quadrature deviation of `u . B` at the neighbour, tesla.
    pub neighbor_projection_delta: f64,
    /// `|u . B|` at the addressed ion, tesla.
    pub addressed_projection: f64,
    /// Drift-induced neighbour/addressed Rabi ratio.
    pub rabi_ratio: f64,
    pub jacobians: Jacobians,
}

pub fn sensitivity_jacobians(m: &CouplingMatrix, currents: &PhasorCurrentSet) -> Result<Jacobians> {
    m.apply(currents)?;
    let e = m.entries();
    let mut d_amplitude = e.clone();
    let mut d_phase = e.clone();
    let i = Complex64::new(0.0, 1.0);
    for (k, c) in currents.values().iter().enumerate() {
        let unit = Complex64::from_polar(1.0, c.arg());
        for j in 0..e.nrows() {
            d_amplitude[(j, k)] = e[(j, k)] * unit;
            d_phase[(j, k)] = i * e[(j, k)] * *c;
        }
    }
    Ok(Jacobians { d_amplitude, d_phase })
}

fn quadrature(terms: impl Iterator<Item = f64>) -> f64 {
    terms.map(|t| t * t).sum::<f64>().sqrt()
}

pub fn quadrature_drift(
    m: &CouplingMatrix,
    currents: &PhasorCurrentSet,
    drift: &DriftModel,
    probe: RatioProbe,
) -> Result<SensitivityReport> {
    drift.check(currents)?;
    let (ra, rn) = probe.rows(m)?;
    let jac = sensitivity_jacobians(m, currents)?;
    let abs_di: Vec<f64> = currents
        .values()
        .iter()
        .zip(&drift.rel_current)
        .map(|(c, r)| r * c.norm())
        .collect();
    let row_delta = |j: usize| {
        quadrature((0..currents.len()).flat_map(|k| {
            [
                jac.d_amplitude[(j, k)].norm() * abs_di[k],
                jac.d_phase[(j, k)].norm() * drift.phase_rad[k],
            ]
        }))
    };
    let delta_b = (0..m.entries().nrows()).map(row_delta).collect();
    let neighbor_projection_delta = quadrature((0..currents.len()).flat_map(|k| {
        [
            probe.project_rows(&jac.d_amplitude, rn, k).norm() * abs_di[k],
            probe.project_rows(&jac.d_phase, rn, k).norm() * drift.phase_rad[k],
        ]
    }));
    let addressed_projection = (m.entries().rows(ra, 3) * currents.vector())
        .iter()
        .zip(probe.axis)
        .map(|(b, u)| b * u)
        .sum::<Complex64>()
        .norm();
    if !(addressed_projection > 0.0) {
        return Err(Error::UndefinedRatio);
    }
    Ok(SensitivityReport {
        delta_b,
        neighbor_projection_delta,
        addressed_projection,
        rabi_ratio: neighbor_projection_delta / addressed_projection,
        jacobians: jac,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// `|u . B_nb| / |u . B_addr|` per sample, in sample order.
    pub ratios: Vec<f64>,
    /// `|u . B_nb - u . B_nb,0|` per sample, tesla.
    pub deviations: Vec<f64>,
    pub nominal_ratio: f64,
    pub mean_ratio: f64,
    pub rms_ratio: f64,
    /// RMS of `deviations`, tesla.
    pub rms_deviation: f64,
    /// `rms_deviation * sqrt(3)`: comparable with the quadrature delta,
    /// which treats the uniform half-width as a standard deviation.
    pub rms_deviation_scaled: f64,
    pub variance_factor: f64,
}

/// Sampled drift with `I_k -> I_k (1 + e_k) e^{i d_k}`, `e_k` and `d_k`
/// uniform on `[-dI/I, dI/I]` and `[-dphi, dphi]`. Sample `s` draws from its
/// own ChaCha8 stream, so the result does not depend on thread count.
pub fn monte_carlo_drift(
    m: &CouplingMatrix,
    currents: &PhasorCurrentSet,
    drift: &DriftModel,
    probe: RatioProbe,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    drift.check(currents)?;
    probe.rows(m)?;
    let nominal = m.apply(currents)?;
    let nb0 = nominal[probe.neighbor - 1].project(probe.axis);
    let a0 = nominal[probe.addressed - 1].project(probe.axis).norm();
    if !(a0 > 0.0) {
        return Err(Error::UndefinedRatio);
    }
    let e = m.entries();
    let base = currents.values();

    let draws: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let perturbed: nalgebra::DVector<Complex64> = base
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let eps = drift.rel_current[k] * (2.0 * rng.random::<f64>() - 1.0);
                    let dphi = drift.phase_rad[k] * (2.0 * rng.random::<f64>() - 1.0);
                    c * (1.0 + eps) * Complex64::from_polar(1.0, dphi)
                })
                .collect::<Vec<_>>()
                .into();
            let f = split_fields(&(e * perturbed));
            let nb = f[probe.neighbor - 1].project(probe.axis);
            let ad = f[probe.addressed - 1].project(probe.axis).norm();
            (nb.norm() / ad, (nb - nb0).norm())
        })
        .collect();

    let n = samples as f64;
    let (ratios, deviations): (Vec<f64>, Vec<f64>) = draws.into_iter().unzip();
    let mean_ratio = ratios.iter().sum::<f64>() / n;
    let rms_ratio = (ratios.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let rms_deviation = (deviations.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    Ok(MonteCarloReport {
        nominal_ratio: nb0.norm() / a0,
        mean_ratio,
        rms_ratio,
        rms_deviation,
        rms_deviation_scaled: rms_deviation * UNIFORM_VARIANCE_FACTOR,
        variance_factor: UNIFORM_VARIANCE_FACTOR,
        ratios,
        deviations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSpacing {
    Linear,
    Log,
}

/// Quadrature Rabi ratio over a grid of drift magnitudes applied
/// identically to every channel. `ratios[i][j]` is at
/// `(delta_i[i], delta_phi[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftGrid {
    /// Relative amplitude error, dimensionless.
    pub delta_i: Vec<f64>,
    /// Phase error, radians.
    pub delta_phi: Vec<f64>,
    pub ratios: Vec<Vec<f64>>,
}

impl DriftGrid {
    /// CSV with columns `delta_I_percent,delta_phi_deg,rabi_ratio`, amplitude
    /// error varying slowest.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta_I_percent,delta_phi_deg,rabi_ratio\n");
        for (i, di) in self.delta_i.iter().enumerate() {
            for (j, dp) in self.delta_phi.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{}\n",
                    sig9(di * 100.0),
                    sig9(dp.to_degrees()),
                    sig9(self.ratios[i][j])
                ));
            }
        }
        s
    }
}

fn axis_points(range: (f64, f64), count: usize, spacing: GridSpacing) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if count < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points per axis".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!("bad drift range [{lo}, {hi}]")));
    }
    let last = (count - 1) as f64;
    Ok(match spacing {
        GridSpacing::Linear => (0..count).map(|i| lo + (hi - lo) * i as f64 / last).collect(),
        GridSpacing::Log => {
            if lo <= 0.0 {
                return Err(Error::InvalidArgument("log grid needs a positive lower bound".into()));
            }
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / last).exp()).collect()
        }
    })
}

pub fn drift_contour_grid(
    m: &CouplingMatrix,
    currents: &PhasorCurrentSet,
    probe: RatioProbe,
    rel_current_range: (f64, f64),
    phase_range_rad: (f64, f64),
    counts: (usize, usize),
    spacing: GridSpacing,
) -> Result<DriftGrid> {
    let delta_i = axis_points(rel_current_range, counts.0, spacing)?;
    let delta_phi = axis_points(phase_range_rad, counts.1, spacing)?;
    let channels = currents.len();
    // Validate once so the parallel loop cannot fail on shape.
    quadrature_drift(m, currents, &DriftModel::uniform(channels, 0.0, 0.0)?, probe)?;
    let ratios = delta_i
        .par_iter()
        .map(|&di| {
            delta_phi
                .iter()
                .map(|&dp| {
                    let d = DriftModel::uniform(channels, di, dp)?;
                    Ok(quadrature_drift(m, currents, &d, probe)?.rabi_ratio)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftGrid {
        delta_i,
        delta_phi,
        ratios,
    })
}

/// Off-resonant shift `Omega^2 / (2 Delta)` in hertz, signed by the detuning.
pub fn light_shift(rabi_hz: f64, detuning_hz: f64) -> Result<f64> {
    if detuning_hz == 0.0 {
        return Err(Error::ZeroDetuning);
    }
    Ok(rabi_hz * rabi_hz / (2.0 * detuning_hz))
}

/// `eta = |grad(u . B) . m| x0 / |u . B|`.
///
/// `gradient_projection` is `d(u . B)/dx_j` in tesla per metre, `mode` the
/// motional mode direction, `x0` the ground-state extent in metres.
pub fn effective_lamb_dicke(
    gradient_projection: [Complex64; 3],
    mode: [f64; 3],
    field_projection: Complex64,
    x0: f64,
) -> Result<f64> {
    let carrier = field_projection.norm();
    if !(carrier > 0.0) {
        return Err(Error::ZeroCarrier);
    }
    let slope: Complex64 = (0..3).map(|j| gradient_projection[j] * mode[j]).sum();
    Ok(slope.norm() * x0 / carrier)
}

/// Effective Lamb-Dicke parameter at a zone's ion for currents driven on the
/// layout's electrodes, using the analytic field gradient.
pub fn lamb_dicke_at_ion(
    layout: &TrapLayout,
    currents: &PhasorCurrentSet,
    ion: usize,
    axis: [f64; 3],
    mode: [f64; 3],
    x0: f64,
) -> Result<f64> {
    let at = layout.zone(ion)?.ion_position;
    let drive = currents
        .ids()
        .iter()
        .zip(currents.values())
        .map(|(id, c)| Ok((layout.electrode(id)?, *c)))
        .collect::<Result<Vec<_>>>()?;
    let s = superposed_sample(drive, at)?;
    effective_lamb_dicke(s.gradient.project(axis), mode, s.field.project(axis), x0)
}

/// `u . B` at one ion from matrix fields.
pub fn projected_field(fields: &[PhasorVector3], ion: usize, axis: [f64; 3]) -> Result<Complex64> {
    ion.checked_sub(1)
        .and_then(|i| fields.get(i))
        .map(|f| f.project(axis))
        .ok_or(Error::UnknownZone(ion))
}
