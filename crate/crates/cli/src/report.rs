//! JSON report shapes. Every float passes through [`num`] so reports carry
//! nine significant digits and repeat byte for byte.

use mwaddr::format::round_sig9;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Nine significant digits; negative zero becomes zero.
pub fn num(x: f64) -> f64 {
    round_sig9(x) + 0.0
}

pub fn opt(x: Option<f64>) -> Option<f64> {
    x.map(num)
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// A complex number as `[re, im]`.
pub type Pair = [f64; 2];

pub fn pair(c: mwaddr::Complex64) -> Pair {
    [num(c.re), num(c.im)]
}

#[derive(Serialize)]
pub struct MatrixReport {
    pub schema_version: u32,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major `[re, im]` entries, tesla per ampere.
    pub entries: Vec<Vec<Pair>>,
}

#[derive(Serialize)]
pub struct CurrentEntry {
    pub electrode: String,
    pub current_a: Pair,
    pub abs_a: f64,
    pub phase_deg: f64,
}

#[derive(Serialize)]
pub struct IonField {
    pub ion: usize,
    /// B/mu0 components `[re, im]`, A/m.
    pub b_over_mu0_a_per_m: [Pair; 3],
    pub abs_projection_a_per_m: f64,
}

#[derive(Serialize)]
pub struct LambDicke {
    pub x0_nm: f64,
    /// Principal mode directions x, y, z.
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_z: f64,
}

#[derive(Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub zone: usize,
    pub neighbor: Option<usize>,
    pub nulling: bool,
    pub currents: Vec<CurrentEntry>,
    pub current_norm_a: f64,
    pub inexact: bool,
    pub no_nulling_freedom: bool,
    pub fields: Vec<IonField>,
    pub crosstalk_ratio: Option<f64>,
    pub lamb_dicke: Option<LambDicke>,
}

#[derive(Serialize)]
pub struct ScanPoint {
    pub t: f64,
    pub position_um: [f64; 3],
    pub abs_b_over_mu0_a_per_m: [f64; 3],
}

#[derive(Serialize)]
pub struct AxisScanReport {
    pub schema_version: u32,
    pub zone: usize,
    pub neighbor: usize,
    pub nulling: bool,
    pub points: Vec<ScanPoint>,
}

#[derive(Serialize)]
pub struct QuadratureBlock {
    /// Quadrature dB/mu0 per matrix row, A/m.
    pub delta_b_over_mu0_a_per_m: Vec<f64>,
    pub rows: Vec<String>,
    pub neighbor_projection_delta_a_per_m: f64,
    pub rabi_ratio: f64,
}

#[derive(Serialize)]
pub struct MonteCarloBlock {
    pub samples: usize,
    pub seed: u64,
    pub nominal_ratio: f64,
    pub mean_ratio: f64,
    pub rms_ratio: f64,
    pub rms_deviation_a_per_m: f64,
    /// Multiplies the RMS deviation to match the quadrature convention for
    /// uniformly distributed errors.
    pub variance_factor: f64,
    pub rms_deviation_scaled_a_per_m: f64,
    /// `|scaled - quadrature| / quadrature`.
    pub relative_difference: Option<f64>,
}

#[derive(Serialize)]
pub struct DriftReport {
    pub schema_version: u32,
    pub zone: usize,
    pub neighbor: usize,
    pub nulling: bool,
    pub delta_i_percent: f64,
    pub delta_phi_deg: f64,
    pub quadrature: QuadratureBlock,
    pub monte_carlo: MonteCarloBlock,
}

#[derive(Serialize)]
pub struct DriftGridReport {
    pub schema_version: u32,
    pub delta_i_percent: Vec<f64>,
    pub delta_phi_deg: Vec<f64>,
    /// `rabi_ratio[i][j]` at `(delta_i_percent[i], delta_phi_deg[j])`.
    pub rabi_ratio: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct EntryReport {
    pub row: String,
    pub electrode: String,
    pub amplitude_rel_error: f64,
    pub phase_error_rad: f64,
    pub rel_error: f64,
}

#[derive(Serialize)]
pub struct CrosstalkReport {
    pub nulled_ideal: f64,
    pub nulled_calibrated: f64,
    pub addressed_only_ideal: f64,
    pub addressed_only_calibrated: f64,
}

#[derive(Serialize)]
pub struct CostReport {
    pub ions: u64,
    pub m: u64,
    pub total_measurements: u64,
    pub wall_clock_parallel: u64,
    pub wall_clock_serial: u64,
}

#[derive(Serialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub seed: u64,
    pub noise_sigma: f64,
    pub repeats: usize,
    pub phase_points: usize,
    pub records: usize,
    pub max_rel_entry_error: f64,
    pub max_amplitude_rel_error: f64,
    pub max_phase_error_rad: f64,
    pub indeterminate: Vec<String>,
    pub entries: Vec<EntryReport>,
    pub crosstalk: Option<CrosstalkReport>,
    pub cost: CostReport,
}

#[derive(Serialize)]
pub struct FitReport {
    pub electrode: String,
    pub direction: [f64; 3],
    pub d_min_um: f64,
    pub d_max_um: f64,
    pub samples: usize,
    pub k: f64,
    pub r_squared: f64,
}

#[derive(Serialize)]
pub struct ScalingReport {
    pub schema_version: u32,
    pub chi0: f64,
    pub k: f64,
    pub max_distance: usize,
    pub partial_sum: f64,
    pub converged: bool,
    pub limit_estimate: Option<f64>,
    pub tail_bound: Option<f64>,
    pub lattice_side: Option<usize>,
    pub lattice_crosstalk: Option<f64>,
    /// Zones at Chebyshev distance 1..=5.
    pub perimeter_counts: Vec<usize>,
    pub fit: FitReport,
}
