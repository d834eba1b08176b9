//! Simulated calibration of the coupling matrix.
//!
//! Amplitudes come from driving one electrode at a time and recording the
//! magnitude of a single field component. Relative phases come from driving
//! two electrodes together while stepping the phase of the second one:
//! the observable `|M_ja + M_jb e^{i phi}|` follows
//! `sqrt(A^2 + B^2 + 2AB cos(phi - phi0))` with `phi0 = arg M_ja - arg M_jb`.
//! Only relative phases within a row are observable, so each reconstructed
//! row carries its own phase reference.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coupling::{Axis, ColumnLabel, CouplingMatrix, RowLabel};
use crate::error::{Error, Result};
use crate::field::PhasorVector3;
use crate::format::sig9;
use crate::nulling::{crosstalk_ratio, solve_addressed_only, solve_minimum_norm, FieldTarget};

/// Entries smaller than this fraction of their row maximum get no phase.
pub const INDETERMINATE_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservableKind {
    RabiFrequency,
    LightShift,
}

impl ObservableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservableKind::RabiFrequency => "rabi",
            ObservableKind::LightShift => "light_shift",
        }
    }
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObservableKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rabi" => Ok(ObservableKind::RabiFrequency),
            "light_shift" => Ok(ObservableKind::LightShift),
            _ => Err(Error::InvalidArgument(format!("unknown observable kind `{s}`"))),
        }
    }
}

/// One observation. Single-electrode records measure `|M_jk|`; two-electrode
/// records measure `|M_ja + M_jb e^{i phase_offset}|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub electrodes: Vec<String>,
    pub ion: usize,
    pub axis: Axis,
    pub kind: ObservableKind,
    pub phase_offset_rad: Option<f64>,
    pub value: f64,
    /// Relative noise level of the observation.
    pub sigma: f64,
}

impl MeasurementRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("measurement record: {m}")));
        match (self.electrodes.len(), self.phase_offset_rad) {
            (1, None) => {}
            (2, Some(p)) if p.is_finite() => {
                if self.electrodes[0] == self.electrodes[1] {
                    return bad("pair scan drives the same electrode twice");
                }
            }
            (1, Some(_)) => return bad("amplitude record carries a phase offset"),
            (2, _) => return bad("pair record needs a finite phase offset"),
            _ => return bad("one or two electrodes expected"),
        }
        if self.ion == 0 {
            return bad("ion index is 1-based");
        }
        if !self.value.is_finite() {
            return bad("value is not finite");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be finite and non-negative");
        }
        Ok(())
    }
}

fn kind_for(axis: Axis, drive_axis: Axis) -> ObservableKind {
    if axis == drive_axis {
        ObservableKind::RabiFrequency
    } else {
        ObservableKind::LightShift
    }
}

fn entry(truth: &CouplingMatrix, id: &str, row: RowLabel) -> Result<Complex64> {
    if row.ion == 0 || row.ion > truth.ion_count() {
        return Err(Error::UnknownZone(row.ion));
    }
    let k = truth.column_index(id)?;
    Ok(truth.entries()[(3 * (row.ion - 1) + row.axis.index(), k)])
}

/// Which field component a scan observes and the noise model applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSpec {
    pub ion: usize,
    pub axis: Axis,
    /// Component that drives the qubit; other components are labelled as
    /// light-shift observations.
    pub drive_axis: Axis,
    /// Relative (multiplicative) Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

fn noisy(rng: &mut ChaCha8Rng, value: f64, sigma: f64) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    value * (1.0 + sigma * n)
}

fn scan_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// `repeats` observations of `|M_jk|`.
pub fn simulate_amplitude_scan(
    truth: &CouplingMatrix,
    electrode: &str,
    spec: ScanSpec,
    repeats: usize,
) -> Result<Vec<MeasurementRecord>> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    check_sigma(spec.noise_sigma)?;
    let row = RowLabel {
        ion: spec.ion,
        axis: spec.axis,
    };
    let amp = entry(truth, electrode, row)?.norm();
    let mut rng = scan_rng(spec.seed, 0);
    Ok((0..repeats)
        .map(|_| MeasurementRecord {
            electrodes: vec![electrode.to_string()],
            ion: spec.ion,
            axis: spec.axis,
            kind: kind_for(spec.axis, spec.drive_axis),
            phase_offset_rad: None,
            value: noisy(&mut rng, amp, spec.noise_sigma),
            sigma: spec.noise_sigma,
        })
        .collect())
}

/// `phase_points` observations of `|M_ja + M_jb e^{i phi}|` on a uniform
/// grid `phi = 2 pi i / phase_points`.
pub fn simulate_phase_scan(
    truth: &CouplingMatrix,
    pair: (&str, &str),
    spec: ScanSpec,
    phase_points: usize,
) -> Result<Vec<MeasurementRecord>> {
    if phase_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "a phase scan needs at least 3 points, got {phase_points}"
        )));
    }
    check_sigma(spec.noise_sigma)?;
    let row = RowLabel {
        ion: spec.ion,
        axis: spec.axis,
    };
    let (ma, mb) = (entry(truth, pair.0, row)?, entry(truth, pair.1, row)?);
    let mut rng = scan_rng(spec.seed, 1);
    Ok((0..phase_points)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / phase_points as f64;
            let v = (ma + mb * Complex64::from_polar(1.0, phi)).norm();
            MeasurementRecord {
                electrodes: vec![pair.0.to_string(), pair.1.to_string()],
                ion: spec.ion,
                axis: spec.axis,
                kind: kind_for(spec.axis, spec.drive_axis),
                phase_offset_rad: Some(phi),
                value: noisy(&mut rng, v, spec.noise_sigma),
                sigma: spec.noise_sigma,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignConfig {
    pub repeats: usize,
    pub phase_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub drive_axis: Axis,
}

/// Every row: one amplitude scan per electrode and phase scans over
/// consecutive electrode pairs. Each scan gets its own seed derived from the
/// campaign seed and the scan index, so rows can be simulated in any order.
pub fn simulate_campaign(truth: &CouplingMatrix, cfg: &CampaignConfig) -> Result<Vec<MeasurementRecord>> {
    let ids = truth.column_ids();
    let e = ids.len();
    let rows = truth.rows().to_vec();
    let per_row = rows
        .par_iter()
        .enumerate()
        .map(|(r, row)| {
            let spec = |scan: usize| ScanSpec {
                ion: row.ion,
                axis: row.axis,
                drive_axis: cfg.drive_axis,
                noise_sigma: cfg.noise_sigma,
                seed: derive_seed(cfg.seed, (r * (2 * e) + scan) as u64),
            };
            let mut out = Vec::new();
            for (k, id) in ids.iter().enumerate() {
                out.extend(simulate_amplitude_scan(truth, id, spec(k), cfg.repeats)?);
            }
            for k in 0..e.saturating_sub(1) {
                out.extend(simulate_phase_scan(truth, (&ids[k], &ids[k + 1]), spec(e + k), cfg.phase_points)?);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_row.into_iter().flatten().collect())
}

/// SplitMix64 step; spreads scan indices over independent seeds.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Least-squares fit of `y = sqrt(c0 + c1 cos phi + c2 sin phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFit {
    /// `arg M_a - arg M_b`, wrapped to `(-pi, pi]`.
    pub phi0: f64,
    /// `A^2 + B^2`.
    pub c0: f64,
    /// `A B`.
    pub amplitude_product: f64,
    pub rms_residual: f64,
}

/// Fit a pair scan. The squared observable is linear in `(c0, c1, c2)`, which
/// gives the starting point; Gauss-Newton on the unsquared residuals refines
/// it when noise is present.
pub fn fit_phase_scan(points: &[(f64, f64)]) -> Result<PhaseFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a phase scan needs at least 3 points, got {}",
            points.len()
        )));
    }
    let basis = |phi: f64| Vector3::new(1.0, phi.cos(), phi.sin());
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(phi, y) in points {
        let a = basis(phi);
        ata += a * a.transpose();
        aty += a * (y * y);
    }
    let mut c = ata
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("phase scan points do not determine the curve".into()))?
        * aty;

    let cost = |c: &Vector3<f64>| -> Option<f64> {
        let mut s = 0.0;
        for &(phi, y) in points {
            let g = c.dot(&basis(phi));
            if g <= 0.0 {
                return None;
            }
            s += (g.sqrt() - y).powi(2);
        }
        Some(s)
    };
    if let Some(mut best) = cost(&c) {
        for _ in 0..50 {
            let mut jtj = Matrix3::zeros();
            let mut jtr = Vector3::zeros();
            for &(phi, y) in points {
                let a = basis(phi);
                let g = c.dot(&a).sqrt();
                let j = a / (2.0 * g);
                jtj += j * j.transpose();
                jtr += j * (g - y);
            }
            let Some(step) = jtj.try_inverse().map(|m| m * jtr) else { break };
            let trial = c - step;
            match cost(&trial) {
                Some(t) if t < best => {
                    let done = best - t <= 1e-15 * best.max(f64::MIN_POSITIVE);
                    c = trial;
                    best = t;
                    if done {
                        break;
                    }
                }
                _ => break,
            }
        }
    }
    let rms = (points
        .iter()
        .map(|&(phi, y)| (c.dot(&basis(phi)).max(0.0).sqrt() - y).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(PhaseFit {
        phi0: c[2].atan2(c[1]),
        c0: c[0],
        amplitude_product: 0.5 * c[1].hypot(c[2]),
        rms_residual: rms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedMatrix {
    pub matrix: CouplingMatrix,
    /// Standard error of each amplitude, same shape as the matrix.
    pub amplitude_sigma: DMatrix<f64>,
    /// Entries too small to carry a phase, as (row, column) indices.
    pub indeterminate: Vec<(usize, usize)>,
    /// Column whose phase is zero in each row, by electrode id.
    pub phase_reference: Vec<String>,
}

/// Rebuild the matrix from records. Amplitudes are scan means; phases are
/// propagated through the pair scans from each row's first determinate
/// column. Missing amplitude scans or a disconnected pair graph are reported
/// together in one coverage error.
pub fn reconstruct(records: &[MeasurementRecord], ions: usize, electrodes: &[String]) -> Result<ReconstructedMatrix> {
    if ions == 0 || electrodes.is_empty() {
        return Err(Error::InvalidArgument("empty matrix shape".into()));
    }
    let col_of: BTreeMap<&str, usize> = electrodes.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    if col_of.len() != electrodes.len() {
        return Err(Error::InvalidArgument("duplicate electrode ids".into()));
    }
    let e = electrodes.len();
    let nrows = 3 * ions;
    let mut amps: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); e]; nrows];
    let mut sigmas: Vec<Vec<f64>> = vec![vec![0.0; e]; nrows];
    let mut pairs: Vec<BTreeMap<(usize, usize), Vec<(f64, f64)>>> = vec![BTreeMap::new(); nrows];

    for rec in records {
        rec.validate()?;
        if rec.ion > ions {
            return Err(Error::UnknownZone(rec.ion));
        }
        let r = 3 * (rec.ion - 1) + rec.axis.index();
        let col = |id: &String| col_of.get(id.as_str()).copied().ok_or_else(|| Error::UnknownElectrode(id.clone()));
        match rec.phase_offset_rad {
            None => {
                let k = col(&rec.electrodes[0])?;
                amps[r][k].push(rec.value);
                sigmas[r][k] = sigmas[r][k].max(rec.sigma);
            }
            Some(phi) => {
                let key = (col(&rec.electrodes[0])?, col(&rec.electrodes[1])?);
                pairs[r].entry(key).or_default().push((phi, rec.value));
            }
        }
    }

    let row_label = |r: usize| RowLabel {
        ion: r / 3 + 1,
        axis: Axis::ALL[r % 3],
    };
    let mut missing = Vec::new();
    for (r, row) in amps.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if v.is_empty() {
                missing.push(format!("amplitude {}/{}", row_label(r), electrodes[k]));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing.join(", ")));
    }

    let rows: Vec<Result<RowResult>> = (0..nrows)
        .into_par_iter()
        .map(|r| reconstruct_row(&amps[r], &sigmas[r], &pairs[r]))
        .collect();

    let mut entries = DMatrix::zeros(nrows, e);
    let mut amplitude_sigma = DMatrix::zeros(nrows, e);
    let mut indeterminate = Vec::new();
    let mut phase_reference = Vec::with_capacity(nrows);
    for (r, res) in rows.into_iter().enumerate() {
        let res = res?;
        if !res.unreached.is_empty() {
            missing.push(format!(
                "phase link {} to {}",
                row_label(r),
                res.unreached.iter().map(|&k| electrodes[k].as_str()).collect::<Vec<_>>().join(";")
            ));
            continue;
        }
        for k in 0..e {
            entries[(r, k)] = res.values[k];
            amplitude_sigma[(r, k)] = res.sigma[k];
        }
        indeterminate.extend(res.indeterminate.iter().map(|&k| (r, k)));
        phase_reference.push(res.reference.map_or_else(String::new, |k| electrodes[k].clone()));
    }
    if !missing.is_empty() {
        return Err(Error::Coverage(missing.join(", ")));
    }
    let columns = electrodes
        .iter()
        .map(|id| ColumnLabel {
            id: id.clone(),
            zone: None,
        })
        .collect();
    Ok(ReconstructedMatrix {
        matrix: CouplingMatrix::new(entries, columns)?,
        amplitude_sigma,
        indeterminate,
        phase_reference,
    })
}

struct RowResult {
    values: Vec<Complex64>,
    sigma: Vec<f64>,
    indeterminate: Vec<usize>,
    unreached: Vec<usize>,
    reference: Option<usize>,
}

fn reconstruct_row(
    amps: &[Vec<f64>],
    rel_sigma: &[f64],
    pairs: &BTreeMap<(usize, usize), Vec<(f64, f64)>>,
) -> Result<RowResult> {
    let e = amps.len();
    let mut mean = vec![0.0; e];
    let mut sigma = vec![0.0; e];
    for k in 0..e {
        let v = &amps[k];
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        mean[k] = m.max(0.0);
        sigma[k] = if v.len() > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            rel_sigma[k] * m.abs()
        };
    }
    let row_max = mean.iter().copied().fold(0.0, f64::max);
    let determinate: Vec<bool> = mean
        .iter()
        .map(|&a| row_max > 0.0 && a >= INDETERMINATE_FRACTION * row_max)
        .collect();

    // Edges a -> b with phase(a) - phase(b) = phi0.
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); e];
    for (&(a, b), pts) in pairs {
        if !(determinate[a] && determinate[b]) {
            continue;
        }
        let fit = fit_phase_scan(pts)?;
        adj[a].push((b, -fit.phi0));
        adj[b].push((a, fit.phi0));
    }
    let reference = determinate.iter().position(|&d| d);
    let mut phase: Vec<Option<f64>> = vec![None; e];
    if let Some(root) = reference {
        phase[root] = Some(0.0);
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            let pa = phase[a].expect("queued nodes have a phase");
            for &(b, delta) in &adj[a] {
                if phase[b].is_none() {
                    phase[b] = Some(pa + delta);
                    queue.push_back(b);
                }
            }
        }
    }
    let unreached = (0..e).filter(|&k| determinate[k] && phase[k].is_none()).collect();
    let indeterminate = (0..e).filter(|&k| !determinate[k]).collect();
    let values = (0..e)
        .map(|k| Complex64::from_polar(mean[k], phase[k].unwrap_or(0.0)))
        .collect();
    Ok(RowResult {
        values,
        sigma,
        indeterminate,
        unreached,
        reference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalibrationCost {
    pub total_measurements: u64,
    pub wall_clock_units: u64,
}

/// `m N^2` measurements; with parallel readout of all ions the wall clock
/// drops to `m N`.
pub fn calibration_cost(ions: u64, m: u64, parallel_readout: bool) -> Result<CalibrationCost> {
    if ions == 0 || m == 0 {
        return Err(Error::InvalidArgument("N and m must be >= 1".into()));
    }
    let total = m
        .checked_mul(ions)
        .and_then(|v| v.checked_mul(ions))
        .ok_or_else(|| Error::InvalidArgument("measurement count overflows".into()))?;
    Ok(CalibrationCost {
        total_measurements: total,
        wall_clock_units: if parallel_readout { m * ions } else { total },
    })
}

/// Per-entry comparison after removing each row's phase reference.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryError {
    pub row: RowLabel,
    pub electrode: String,
    /// `| |r| - |t| | / |t|`.
    pub amplitude_rel_error: f64,
    /// Wrapped phase difference, radians; zero for indeterminate entries.
    pub phase_error_rad: f64,
    /// `|t - e^{i theta} r| / |t|`, `theta` the best row phase.
    pub rel_error: f64,
}

/// Align each reconstructed row to the truth with the least-squares phase
/// and report per-entry errors. Entries below the indeterminate threshold of
/// the true row contribute amplitude error only.
pub fn compare_to_truth(truth: &CouplingMatrix, recon: &CouplingMatrix) -> Result<Vec<EntryError>> {
    if truth.entries().shape() != recon.entries().shape() {
        return Err(Error::Dimension("reconstruction and truth differ in shape".into()));
    }
    let (t, r) = (truth.entries(), recon.entries());
    let mut out = Vec::with_capacity(t.len());
    for row in 0..t.nrows() {
        let theta = (0..t.ncols()).map(|k| r[(row, k)].conj() * t[(row, k)]).sum::<Complex64>().arg();
        let rot = Complex64::from_polar(1.0, theta);
        let row_max = (0..t.ncols()).map(|k| t[(row, k)].norm()).fold(0.0, f64::max);
        for k in 0..t.ncols() {
            let (tv, rv) = (t[(row, k)], r[(row, k)] * rot);
            let tn = tv.norm();
            let small = tn < INDETERMINATE_FRACTION * row_max || tn == 0.0;
            let scale = if small { row_max.max(f64::MIN_POSITIVE) } else { tn };
            let dphi = if small { 0.0 } else { (rv * tv.conj()).arg() };
            out.push(EntryError {
                row: truth.rows()[row],
                electrode: truth.columns()[k].id.clone(),
                amplitude_rel_error: (rv.norm() - tn).abs() / scale,
                phase_error_rad: dphi,
                rel_error: if small { (rv.norm() - tn).abs() / scale } else { (tv - rv).norm() / scale },
            });
        }
    }
    Ok(out)
}

/// Crosstalk ratios evaluated on the true matrix for currents solved on the
/// truth and on the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkDegradation {
    pub nulled_ideal: f64,
    pub nulled_calibrated: f64,
    pub addressed_only_ideal: f64,
    pub addressed_only_calibrated: f64,
}

pub fn crosstalk_degradation(
    truth: &CouplingMatrix,
    recon: &CouplingMatrix,
    zone: usize,
    neighbor: usize,
    target: PhasorVector3,
    axis: [f64; 3],
) -> Result<CrosstalkDegradation> {
    let ions = truth.ion_count();
    let full = FieldTarget::addressed_with_nulls(ions, zone, target)?;
    let evaluate = |sol: crate::nulling::DriveSolution| crosstalk_ratio(truth, &sol, zone, neighbor, axis);
    let nulled_ideal = evaluate(solve_minimum_norm(truth, &full)?)?;
    let nulled_calibrated = evaluate(solve_minimum_norm(recon, &full)?)?;
    let addressed_only_ideal = evaluate(solve_addressed_only(truth, zone, target, neighbor)?)?;
    let addressed_only_calibrated = evaluate(solve_addressed_only(recon, zone, target, neighbor)?)?;
    Ok(CrosstalkDegradation {
        nulled_ideal,
        nulled_calibrated,
        addressed_only_ideal,
        addressed_only_calibrated,
    })
}

const RECORD_HEADER: [&str; 7] = ["electrodes", "ion", "axis", "kind", "phase_offset_rad", "value", "sigma"];

/// CSV with columns `electrodes,ion,axis,kind,phase_offset_rad,value,sigma`.
/// Pair records join their electrode ids with `;`; amplitude records leave
/// the phase column empty.
pub fn records_to_csv(records: &[MeasurementRecord]) -> String {
    let mut s = RECORD_HEADER.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.electrodes.join(";"),
            r.ion,
            r.axis,
            r.kind,
            r.phase_offset_rad.map(sig9).unwrap_or_default(),
            sig9(r.value),
            sig9(r.sigma)
        ));
    }
    s
}

pub fn records_from_csv(text: &str) -> Result<Vec<MeasurementRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: format!("expected header `{}`", RECORD_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let err = |col: usize, m: String| Error::Parse {
            location: format!("line {line}, column {}", col + 1),
            message: m,
        };
        let num = |i: usize| field(i).parse::<f64>().map_err(|e| err(i, format!("`{}`: {e}", field(i))));
        let phase = match field(4) {
            "" => None,
            _ => Some(num(4)?),
        };
        let r = MeasurementRecord {
            electrodes: field(0).split(';').map(str::to_string).collect(),
            ion: field(1).parse().map_err(|e| err(1, format!("`{}`: {e}", field(1))))?,
            axis: field(2).parse().map_err(|e: Error| err(2, e.to_string()))?,
            kind: field(3).parse().map_err(|e: Error| err(3, e.to_string()))?,
            phase_offset_rad: phase,
            value: num(5)?,
            sigma: num(6)?,
        };
        r.validate().map_err(|e| err(0, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    let location = e
        .position()
        .map_or_else(|| "unknown".to_string(), |p| format!("line {}", p.line()));
    Error::Parse {
        location,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::assemble;
    use crate::field::MU0;
    use crate::geometry::reference_two_zone_layout;
    use rand::Rng;
    use std::f64::consts::{PI, TAU};

    fn cx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_truth(seed: u64) -> CouplingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CouplingMatrix::from_matrix(DMatrix::from_fn(6, 8, |_, _| {
            Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(-PI..PI))
        }))
        .unwrap()
    }

    fn spec(sigma: f64, seed: u64) -> ScanSpec {
        ScanSpec {
            ion: 1,
            axis: Axis::X,
            drive_axis: Axis::X,
            noise_sigma: sigma,
            seed,
        }
    }

    fn cfg(sigma: f64, repeats: usize) -> CampaignConfig {
        CampaignConfig {
            repeats,
            phase_points: 16,
            noise_sigma: sigma,
            seed: 3,
            drive_axis: Axis::X,
        }
    }

    fn wrap(a: f64) -> f64 {
        (a + PI).rem_euclid(TAU) - PI
    }

    #[test]
    fn noiseless_amplitude_scan_is_exact() {
        let t = random_truth(1);
        let recs = simulate_amplitude_scan(&t, "e3", spec(0.0, 9), 5).unwrap();
        assert_eq!(recs.len(), 5);
        let want = t.entries()[(0, 2)].norm();
        assert!(recs.iter().all(|r| r.value == want && r.kind == ObservableKind::RabiFrequency));
        assert!(simulate_amplitude_scan(&t, "e3", spec(0.0, 9), 0).is_err());
        assert!(matches!(simulate_amplitude_scan(&t, "zz", spec(0.0, 9), 1), Err(Error::UnknownElectrode(_))));
    }

    #[test]
    fn amplitude_mean_converges() {
        let t = random_truth(2);
        let recs = simulate_amplitude_scan(&t, "e1", spec(0.01, 5), 10_000).unwrap();
        let mean = recs.iter().map(|r| r.value).sum::<f64>() / recs.len() as f64;
        let want = t.entries()[(0, 0)].norm();
        assert!((mean - want).abs() / want < 5e-4);
        assert_eq!(recs, simulate_amplitude_scan(&t, "e1", spec(0.01, 5), 10_000).unwrap());
    }

    #[test]
    fn antiphase_scan_has_zero_at_origin() {
        let mut e = DMatrix::zeros(3, 2);
        e[(0, 0)] = cx(1.0, 0.0);
        e[(0, 1)] = cx(-1.0, 0.0);
        let t = CouplingMatrix::from_matrix(e).unwrap();
        let recs = simulate_phase_scan(&t, ("e1", "e2"), spec(0.0, 0), 8).unwrap();
        assert_eq!(recs[0].value, 0.0);
        assert!(recs.iter().all(|r| r.value >= recs[0].value));

        let mut e = DMatrix::zeros(3, 2);
        e[(0, 0)] = cx(0.3, 0.4);
        let t = CouplingMatrix::from_matrix(e).unwrap();
        let flat = simulate_phase_scan(&t, ("e1", "e2"), spec(0.0, 0), 8).unwrap();
        assert!(flat.iter().all(|r| (r.value - 0.5).abs() < 1e-15));
        assert!(simulate_phase_scan(&t, ("e1", "e2"), spec(0.0, 0), 2).is_err());
    }

    #[test]
    fn phase_fit_matches_fourier_oracle() {
        let t = random_truth(4);
        for (a, b) in [(0usize, 1usize), (2, 5), (7, 3)] {
            let ids = (format!("e{}", a + 1), format!("e{}", b + 1));
            let recs = simulate_phase_scan(&t, (&ids.0, &ids.1), spec(0.0, 0), 16).unwrap();
            let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.phase_offset_rad.unwrap(), r.value)).collect();
            let fit = fit_phase_scan(&pts).unwrap();
            // Oracle: on a uniform grid the first Fourier coefficient of y^2
            // is 2AB e^{i phi0} / 2.
            let c: Complex64 = pts.iter().map(|&(p, y)| Complex64::from_polar(y * y, p)).sum::<Complex64>() / 16.0;
            let truth = t.entries()[(0, a)].arg() - t.entries()[(0, b)].arg();
            assert!(wrap(c.arg() - truth).abs() < 1e-9);
            assert!(wrap(fit.phi0 - truth).abs() < 1e-6);
            assert!((fit.amplitude_product - t.entries()[(0, a)].norm() * t.entries()[(0, b)].norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_fit_with_noise_stays_close() {
        let t = random_truth(6);
        let recs = simulate_phase_scan(&t, ("e1", "e2"), spec(0.01, 77), 64).unwrap();
        let pts: Vec<(f64, f64)> = recs.iter().map(|r| (r.phase_offset_rad.unwrap(), r.value)).collect();
        let fit = fit_phase_scan(&pts).unwrap();
        let truth = t.entries()[(0, 0)].arg() - t.entries()[(0, 1)].arg();
        assert!(wrap(fit.phi0 - truth).abs() < 0.05);
        assert!(fit.rms_residual > 0.0);
    }

    #[test]
    fn noiseless_round_trip() {
        let t = random_truth(8);
        let recs = simulate_campaign(&t, &cfg(0.0, 1)).unwrap();
        let r = reconstruct(&recs, 2, &t.column_ids()).unwrap();
        assert!(r.indeterminate.is_empty());
        assert!(r.phase_reference.iter().all(|p| p == "e1"));
        let errs = compare_to_truth(&t, &r.matrix).unwrap();
        let worst = errs.iter().map(|e| e.rel_error).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
        // First column is real and non-negative in every row.
        for row in 0..6 {
            let v = r.matrix.entries()[(row, 0)];
            assert!(v.im.abs() < 1e-15 && v.re > 0.0);
        }
    }

    #[test]
    fn gauge_invariance() {
        let t = random_truth(10);
        let mut g = t.entries().clone();
        for row in 0..6 {
            let ph = Complex64::from_polar(1.0, 0.7 * row as f64 - 1.1);
            for k in 0..8 {
                g[(row, k)] *= ph;
            }
        }
        let tg = CouplingMatrix::from_matrix(g).unwrap();
        let a = reconstruct(&simulate_campaign(&t, &cfg(0.0, 1)).unwrap(), 2, &t.column_ids()).unwrap();
        let b = reconstruct(&simulate_campaign(&tg, &cfg(0.0, 1)).unwrap(), 2, &t.column_ids()).unwrap();
        for (x, y) in a.matrix.entries().iter().zip(b.matrix.entries().iter()) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn gauge_leaves_crosstalk_unchanged() {
        let l = reference_two_zone_layout();
        let t = assemble(&l).unwrap();
        let recs = simulate_campaign(&t, &cfg(0.0, 1)).unwrap();
        let r = reconstruct(&recs, 2, &t.column_ids()).unwrap();
        let recon = r.matrix.with_layout_zones(&l).unwrap();
        let target = PhasorVector3::new(cx(MU0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0));
        let d = crosstalk_degradation(&t, &recon, 1, 2, target, l.quant_axis()).unwrap();
        assert!((d.addressed_only_calibrated - d.addressed_only_ideal).abs() <= 1e-6 * d.addressed_only_ideal);
        assert!(d.nulled_calibrated < 1e-6);
    }

    #[test]
    fn noisy_calibration_degrades_nulling() {
        let l = reference_two_zone_layout();
        let t = assemble(&l).unwrap();
        let recs = simulate_campaign(&t, &cfg(0.01, 20)).unwrap();
        let recon = reconstruct(&recs, 2, &t.column_ids()).unwrap().matrix.with_layout_zones(&l).unwrap();
        let target = PhasorVector3::new(cx(MU0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0));
        let d = crosstalk_degradation(&t, &recon, 1, 2, target, l.quant_axis()).unwrap();
        assert!(d.nulled_calibrated > d.nulled_ideal);
        assert!(d.nulled_calibrated.is_finite() && d.addressed_only_calibrated.is_finite());
    }

    #[test]
    fn coverage_errors() {
        let t = random_truth(12);
        let recs = simulate_campaign(&t, &cfg(0.0, 1)).unwrap();
        // Drop the (e4, e5) phase scan of ion1_y.
        let cut: Vec<_> = recs
            .iter()
            .filter(|r| !(r.axis == Axis::Y && r.ion == 1 && r.electrodes == ["e4", "e5"]))
            .cloned()
            .collect();
        match reconstruct(&cut, 2, &t.column_ids()) {
            Err(Error::Coverage(m)) => assert!(m.contains("ion1_y") && m.contains("e5"), "{m}"),
            other => panic!("{other:?}"),
        }
        let no_amp: Vec<_> = recs
            .iter()
            .filter(|r| !(r.ion == 2 && r.axis == Axis::Z && r.electrodes == ["e8"]))
            .cloned()
            .collect();
        match reconstruct(&no_amp, 2, &t.column_ids()) {
            Err(Error::Coverage(m)) => assert!(m.contains("ion2_z/e8"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_spanning_trees_work() {
        let t = random_truth(14);
        let ids = t.column_ids();
        let mut recs = Vec::new();
        for row in t.rows() {
            let s = ScanSpec {
                ion: row.ion,
                axis: row.axis,
                drive_axis: Axis::X,
                noise_sigma: 0.0,
                seed: 0,
            };
            for id in &ids {
                recs.extend(simulate_amplitude_scan(&t, id, s, 1).unwrap());
            }
            // Star from the last electrode, in reversed orientation.
            for id in &ids[..7] {
                recs.extend(simulate_phase_scan(&t, (&ids[7], id), s, 5).unwrap());
            }
        }
        let r = reconstruct(&recs, 2, &ids).unwrap();
        let worst = compare_to_truth(&t, &r.matrix).unwrap().iter().map(|e| e.rel_error).fold(0.0, f64::max);
        assert!(worst < 1e-6);
    }

    #[test]
    fn small_entries_are_indeterminate() {
        let mut e = random_truth(16).entries().clone();
        e[(2, 3)] = cx(1e-9, 1e-9);
        let t = CouplingMatrix::from_matrix(e).unwrap();
        let mut recs = simulate_campaign(&t, &cfg(0.0, 1)).unwrap();
        // The consecutive chain runs through the tiny entry, so e5..e8 of
        // that row cannot be phased.
        match reconstruct(&recs, 2, &t.column_ids()) {
            Err(Error::Coverage(m)) => assert!(m.contains("ion1_z") && m.contains("e5;e6;e7;e8"), "{m}"),
            other => panic!("{other:?}"),
        }
        let s = ScanSpec {
            ion: 1,
            axis: Axis::Z,
            drive_axis: Axis::X,
            noise_sigma: 0.0,
            seed: 0,
        };
        recs.extend(simulate_phase_scan(&t, ("e3", "e5"), s, 8).unwrap());
        let r = reconstruct(&recs, 2, &t.column_ids()).unwrap();
        assert_eq!(r.indeterminate, vec![(2, 3)]);
        assert_eq!(r.matrix.entries()[(2, 3)].arg(), 0.0);
        let worst = compare_to_truth(&t, &r.matrix).unwrap().iter().map(|e| e.rel_error).fold(0.0, f64::max);
        assert!(worst < 1e-6);
    }

    #[test]
    fn noise_scaling() {
        let t = random_truth(18);
        let err = |sigma: f64, repeats: usize| {
            let recs = simulate_campaign(&t, &CampaignConfig { seed: 99, ..cfg(sigma, repeats) }).unwrap();
            let r = reconstruct(&recs, 2, &t.column_ids()).unwrap();
            let e = compare_to_truth(&t, &r.matrix).unwrap();
            (e.iter().map(|x| x.amplitude_rel_error.powi(2)).sum::<f64>() / e.len() as f64).sqrt()
        };
        for sigma in [1e-3, 1e-2] {
            for repeats in [100, 10_000] {
                let got = err(sigma, repeats);
                let expect = sigma / (repeats as f64).sqrt();
                assert!(got > expect / 2.0 && got < expect * 2.0, "sigma {sigma} n {repeats}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn cost_model() {
        for (n, m) in [(1, 5), (10, 10), (100, 10)] {
            let s = calibration_cost(n, m, false).unwrap();
            let p = calibration_cost(n, m, true).unwrap();
            assert_eq!(s.total_measurements, m * n * n);
            assert_eq!(s.wall_clock_units, m * n * n);
            assert_eq!(p.total_measurements, m * n * n);
            assert_eq!(p.wall_clock_units, m * n);
        }
        assert_eq!(calibration_cost(1, 5, true).unwrap(), CalibrationCost { total_measurements: 5, wall_clock_units: 5 });
        let a = calibration_cost(7, 3, true).unwrap();
        let b = calibration_cost(14, 3, true).unwrap();
        assert_eq!(b.total_measurements, 4 * a.total_measurements);
        assert_eq!(b.wall_clock_units, 2 * a.wall_clock_units);
        assert!(calibration_cost(0, 1, true).is_err());
    }

    #[test]
    fn records_csv_round_trip() {
        let t = random_truth(20);
        let recs = simulate_campaign(&t, &cfg(0.01, 2)).unwrap();
        let csv = records_to_csv(&recs);
        let back = records_from_csv(&csv).unwrap();
        assert_eq!(back.len(), recs.len());
        assert_eq!(records_to_csv(&back), csv);
        assert!(csv.starts_with("electrodes,ion,axis,kind,phase_offset_rad,value,sigma\ne1,1,x,rabi,,"));
        assert!(csv.contains("e1;e2,1,x,rabi,0,"));
        assert!(csv.contains(",1,y,light_shift,"));
    }

    #[test]
    fn records_csv_errors() {
        let h = "electrodes,ion,axis,kind,phase_offset_rad,value,sigma\n";
        assert!(matches!(records_from_csv("a,b\n"), Err(Error::Parse { .. })));
        match records_from_csv(&format!("{h}e1,1,q,rabi,,1,0\n")) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2, column 3"),
            other => panic!("{other:?}"),
        }
        // Amplitude record with a phase offset.
        assert!(records_from_csv(&format!("{h}e1,1,x,rabi,0.5,1,0\n")).is_err());
        assert!(records_from_csv(&format!("{h}e1;e2,1,x,rabi,,1,0\n")).is_err());
        assert!(records_from_csv(&format!("{h}e1,1,x,rabi,,1,-1\n")).is_err());
    }
}
