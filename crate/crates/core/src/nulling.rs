//! Drive-current solvers.
//!
//! * [`solve_minimum_norm`]: every ion has a target; the minimum-norm
//!   pseudo-inverse solution over all electrodes.
//! * [`solve_addressed_only`]: only the addressed zone's electrodes are
//!   driven; the addressed field is met exactly and the remaining null-space
//!   freedom minimises the field at the other ions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::coupling::{split_fields, stack_fields, CouplingMatrix, PhasorCurrentSet};
use crate::error::{Error, Result};
use crate::field::PhasorVector3;
use crate::linalg::{self, FullSvd};

/// Relative residual above which a solution is reported as inexact.
pub const EXACT_TOL: f64 = 1e-10;

/// Desired field at each ion; `None` marks an ion whose field is left free.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTarget {
    per_ion: Vec<Option<PhasorVector3>>,
}

impl FieldTarget {
    pub fn new(per_ion: Vec<Option<PhasorVector3>>) -> Result<Self> {
        if per_ion.iter().all(Option::is_none) {
            return Err(Error::InvalidArgument("field target specifies no ion".into()));
        }
        if per_ion.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("field target is not finite".into()));
        }
        Ok(FieldTarget { per_ion })
    }

    /// Target `b` at `addressed` and zero at every other ion.
    pub fn addressed_with_nulls(ions: usize, addressed: usize, b: PhasorVector3) -> Result<Self> {
        if addressed == 0 || addressed > ions {
            return Err(Error::UnknownZone(addressed));
        }
        Self::new(
            (1..=ions)
                .map(|n| Some(if n == addressed { b } else { PhasorVector3::ZERO }))
                .collect(),
        )
    }

    pub fn per_ion(&self) -> &[Option<PhasorVector3>] {
        &self.per_ion
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        FieldTarget {
            per_ion: self.per_ion.iter().map(|b| b.map(|b| b * s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveFlags {
    /// Least-squares solution; the target is not reproduced exactly.
    pub inexact: bool,
    /// The addressed block had no null space to optimise over.
    pub no_nulling_freedom: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveSolution {
    pub currents: PhasorCurrentSet,
    /// `M I` at every ion.
    pub achieved: Vec<PhasorVector3>,
    /// `|achieved - target|` per ion in tesla. Ions without a target count
    /// against a zero field, so this is their residual crosstalk.
    pub residual: Vec<f64>,
    /// `||I||` in amperes.
    pub norm: f64,
    pub flags: SolveFlags,
}

impl DriveSolution {
    fn build(m: &CouplingMatrix, currents: DVector<Complex64>, targets: &[Option<PhasorVector3>], flags: SolveFlags) -> Result<Self> {
        let achieved = split_fields(&(m.entries() * &currents));
        let residual = achieved
            .iter()
            .zip(targets)
            .map(|(a, t)| (*a - t.unwrap_or(PhasorVector3::ZERO)).norm())
            .collect();
        let currents = m.currents_from_vector(currents)?;
        Ok(DriveSolution {
            norm: currents.norm(),
            currents,
            achieved,
            residual,
            flags,
        })
    }
}

/// `I = pinv(M) B`, the minimum-norm current set reproducing the target.
pub fn solve_minimum_norm(m: &CouplingMatrix, target: &FieldTarget) -> Result<DriveSolution> {
    if target.per_ion.len() != m.ion_count() {
        return Err(Error::Dimension(format!(
            "target covers {} ions, matrix {}",
            target.per_ion.len(),
            m.ion_count()
        )));
    }
    let fields: Vec<PhasorVector3> = target
        .per_ion
        .iter()
        .enumerate()
        .map(|(n, b)| {
            b.ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "minimum-norm solve needs a target at every ion; ion {} is free",
                    n + 1
                ))
            })
        })
        .collect::<Result<_>>()?;
    let b = stack_fields(&fields);
    let currents = linalg::pinv(m.entries()) * &b;
    let achieved = m.entries() * &currents;
    let bn = linalg::vec_norm(&b);
    let err = linalg::vec_norm(&(achieved - &b));
    let flags = SolveFlags {
        inexact: err > EXACT_TOL * bn,
        no_nulling_freedom: false,
    };
    DriveSolution::build(m, currents, &target.per_ion, flags)
}

/// Orthonormal basis of the right null space of `m`.
pub fn null_space_basis(m: &CouplingMatrix) -> Vec<PhasorCurrentSet> {
    let ns = linalg::null_space(m.entries());
    ns.column_iter()
        .map(|c| PhasorCurrentSet::new(m.column_ids(), c.iter().copied().collect()).expect("matching length"))
        .collect()
}

/// The complex coefficient minimising `||b_p + c b_n||`:
/// `c = -<b_n, b_p> / <b_n, b_n>`. Zero when `b_n` vanishes.
pub fn optimal_null_coefficient(b_p: &DVector<Complex64>, b_n: &DVector<Complex64>) -> Complex64 {
    let nn = b_n.dotc(b_n).re;
    if nn == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    -b_n.dotc(b_p) / nn
}

/// Drive only the electrodes of `zone`, reproduce `target_at_zone` at its ion
/// and minimise the field magnitude at `neighbor`.
pub fn solve_addressed_only(
    m: &CouplingMatrix,
    zone: usize,
    target_at_zone: PhasorVector3,
    neighbor: usize,
) -> Result<DriveSolution> {
    solve_addressed_only_multi(m, zone, target_at_zone, &[neighbor])
}

/// As [`solve_addressed_only`], minimising the sum of squared field
/// magnitudes over all listed neighbours.
pub fn solve_addressed_only_multi(
    m: &CouplingMatrix,
    zone: usize,
    target_at_zone: PhasorVector3,
    neighbors: &[usize],
) -> Result<DriveSolution> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument("no neighbour ion given".into()));
    }
    for &n in neighbors {
        if n == 0 || n > m.ion_count() {
            return Err(Error::UnknownZone(n));
        }
        if n == zone {
            return Err(Error::InvalidArgument(format!(
                "neighbour {n} is the addressed zone"
            )));
        }
    }
    let cols = m.zone_columns(zone)?;
    let block = m.ion_rows(zone)?.select_columns(cols.iter());
    let mut neighbor_rows = DMatrix::zeros(3 * neighbors.len(), cols.len());
    for (i, &n) in neighbors.iter().enumerate() {
        neighbor_rows
            .view_mut((3 * i, 0), (3, cols.len()))
            .copy_from(&m.ion_rows(n)?.select_columns(cols.iter()));
    }

    let b = stack_fields(&[target_at_zone]);
    let svd = FullSvd::new(&block);
    let i_p = svd.pinv() * &b;
    let null = svd.null_space();

    let i_block = match null.ncols() {
        0 => i_p,
        1 => {
            let i_n = null.column(0).into_owned();
            let c = optimal_null_coefficient(&(&neighbor_rows * &i_p), &(&neighbor_rows * &i_n));
            i_p + i_n * c
        }
        _ => {
            // min_c ||B_p + N c||  =>  c = -pinv(N) B_p
            let images = &neighbor_rows * &null;
            let c = -linalg::pinv(&images) * (&neighbor_rows * &i_p);
            i_p + &null * c
        }
    };

    let mut full = DVector::zeros(m.electrode_count());
    for (k, &col) in cols.iter().enumerate() {
        full[col] = i_block[k];
    }
    let achieved_here = &block * &i_block;
    let err = linalg::vec_norm(&(achieved_here - &b));
    let flags = SolveFlags {
        inexact: err > EXACT_TOL * linalg::vec_norm(&b),
        no_nulling_freedom: null.ncols() == 0,
    };
    let mut targets = vec![None; m.ion_count()];
    targets[zone - 1] = Some(target_at_zone);
    DriveSolution::build(m, full, &targets, flags)
}

/// Neighbour-to-addressed drive ratio `|u . B_nb| / |u . B_addr|`.
pub fn crosstalk_ratio(
    m: &CouplingMatrix,
    solution: &DriveSolution,
    addressed: usize,
    neighbor: usize,
    axis: [f64; 3],
) -> Result<f64> {
    let fields = m.apply(&solution.currents)?;
    let get = |n: usize| {
        n.checked_sub(1)
            .and_then(|i| fields.get(i))
            .copied()
            .ok_or(Error::UnknownZone(n))
    };
    let (a, nb) = (get(addressed)?, get(neighbor)?);
    let den = a.project(axis).norm();
    if !(den > 0.0) {
        return Err(Error::UndefinedRatio);
    }
    Ok(nb.project(axis).norm() / den)
}
