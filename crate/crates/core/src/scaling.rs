//! Crosstalk accumulation in large two-dimensional arrays.
//!
//! Zones sit on a unit square lattice. A zone at Chebyshev distance `d`
//! contributes crosstalk `chi0 / d^k` and there are `8d` of them, so the total
//! behaves like `chi0 * sum d^(1-k)`, finite only for `k > 2`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::electrode_unit_field;
use crate::geometry::{Electrode, Point3, TrapLayout};

/// Fields below this are treated as numerical underflow by the decay fit.
pub const UNDERFLOW_T: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lattice {
    /// Unbounded lattice; every shell is complete.
    Infinite,
    /// `side x side` zones; `centre` is the 0-based (column, row) of the
    /// zone whose crosstalk is accumulated.
    Square { side: usize, centre: (usize, usize) },
}

impl Lattice {
    fn validate(&self) -> Result<()> {
        if let Lattice::Square { side, centre } = *self {
            if side == 0 || centre.0 >= side || centre.1 >= side {
                return Err(Error::InvalidArgument(format!(
                    "centre {centre:?} outside a {side}x{side} lattice"
                )));
            }
        }
        Ok(())
    }

    /// Largest shell distance that still holds a zone.
    pub fn max_distance(&self) -> Option<usize> {
        match *self {
            Lattice::Infinite => None,
            Lattice::Square { side, centre } => {
                let far = |c: usize| c.max(side - 1 - c);
                Some(far(centre.0).max(far(centre.1)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingModel {
    /// Crosstalk per unit distance at `d = 1`, dimensionless.
    pub chi0: f64,
    /// Decay exponent of a single zone's crosstalk with distance.
    pub k: f64,
    pub lattice: Lattice,
}

impl ScalingModel {
    pub fn new(chi0: f64, k: f64, lattice: Lattice) -> Result<Self> {
        if !(chi0.is_finite() && chi0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("chi0 must be >= 0, got {chi0}")));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidArgument(format!("k must be > 0, got {k}")));
        }
        lattice.validate()?;
        Ok(ScalingModel { chi0, k, lattice })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkSum {
    /// `chi0 * sum_{d=1}^{D} d^(1-k)`.
    pub partial_sum: f64,
    pub max_distance: usize,
    /// True iff `k > 2`.
    pub converged: bool,
    /// Euler-Maclaurin estimate of the infinite sum; `None` when divergent.
    pub limit_estimate: Option<f64>,
    /// Integral-test bound `chi0 * int_D^inf x^(1-k) dx` on the missing tail.
    pub tail_bound: Option<f64>,
}

pub fn total_crosstalk(model: &ScalingModel, max_distance: usize) -> Result<CrosstalkSum> {
    if max_distance == 0 {
        return Err(Error::InvalidArgument("max distance must be >= 1".into()));
    }
    let p = model.k - 1.0;
    // Smallest terms first.
    let s: f64 = (1..=max_distance).rev().map(|d| (d as f64).powf(-p)).sum();
    let converged = model.k > 2.0;
    let (limit_estimate, tail_bound) = if converged {
        let d = max_distance as f64;
        let tail = d.powf(1.0 - p) / (p - 1.0);
        let em = tail - 0.5 * d.powf(-p) + p * d.powf(-p - 1.0) / 12.0;
        (Some(model.chi0 * (s + em)), Some(model.chi0 * tail))
    } else {
        (None, None)
    };
    Ok(CrosstalkSum {
        partial_sum: model.chi0 * s,
        max_distance,
        converged,
        limit_estimate,
        tail_bound,
    })
}

/// Zones at Chebyshev distance `d` from the centre zone.
pub fn perimeter_count(lattice: &Lattice, d: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::InvalidArgument("shell distance must be >= 1".into()));
    }
    lattice.validate()?;
    match *lattice {
        Lattice::Infinite => Ok(8 * d),
        Lattice::Square { side, centre } => {
            let inside = |c: usize, off: i64| {
                let v = c as i64 + off;
                v >= 0 && v < side as i64
            };
            let d = d as i64;
            let mut n = 0;
            for dx in -d..=d {
                for dy in -d..=d {
                    if dx.abs().max(dy.abs()) == d && inside(centre.0, dx) && inside(centre.1, dy) {
                        n += 1;
                    }
                }
            }
            Ok(n)
        }
    }
}

/// Shell-by-shell crosstalk on the model's lattice, each zone weighted by
/// `chi0 / (8 d^k)` so a complete shell contributes `chi0 d^(1-k)`.
/// Infinite lattices are cut at `max_distance`.
pub fn lattice_crosstalk(model: &ScalingModel, max_distance: usize) -> Result<f64> {
    let dmax = model.lattice.max_distance().map_or(max_distance, |m| m.min(max_distance));
    let mut total = 0.0;
    for d in (1..=dmax).rev() {
        let n = perimeter_count(&model.lattice, d)? as f64;
        total += n / 8.0 * (d as f64).powf(-model.k);
    }
    Ok(model.chi0 * total)
}

/// `N` independent equal contributions `chi0` combined in quadrature.
pub fn uniform_quadrature(chi0: f64, n: usize) -> f64 {
    chi0 * (n as f64).sqrt()
}

/// Root-sum-square of independent contributions.
pub fn quadrature_sum(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Straight line along which the decay fit samples the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitLine {
    pub origin: Point3,
    /// Unit vector.
    pub direction: [f64; 3],
    /// Field projection axis.
    pub axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Fitted exponent in `|u . B| ~ d^-k`.
    pub k: f64,
    pub r_squared: f64,
    /// Sample distances, micrometres.
    pub distances_um: Vec<f64>,
    /// `|u . B|` per ampere at each distance, tesla.
    pub fields: Vec<f64>,
}

/// Least-squares slope of `log|u . B|` against `log d` for a unit current,
/// with `samples` log-spaced distances over `d_range_um`.
pub fn fit_decay_exponent_electrode(
    electrode: &Electrode,
    line: FitLine,
    d_range_um: (f64, f64),
    samples: usize,
) -> Result<DecayFit> {
    let (lo, hi) = d_range_um;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad distance range [{lo}, {hi}]")));
    }
    if samples < 3 {
        return Err(Error::InvalidArgument("decay fit needs at least 3 samples".into()));
    }
    let n = norm(line.direction);
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("fit direction is zero".into()));
    }
    let dir = line.direction.map(|c| c / n);
    let distances_um: Vec<f64> = (0..samples)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (samples - 1) as f64).exp())
        .collect();
    let fields = distances_um
        .par_iter()
        .map(|&d| {
            let b = electrode_unit_field(electrode, line.origin.offset(dir, d))?;
            Ok((0..3).map(|j| b[j] * line.axis[j]).sum::<f64>().abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some((d, b)) = distances_um.iter().zip(&fields).find(|(_, b)| **b < UNDERFLOW_T) {
        return Err(Error::Underflow(format!("|u . B| = {b:e} T at {d} um")));
    }
    let xs: Vec<f64> = distances_um.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = fields.iter().map(|b| b.ln()).collect();
    let (slope, r_squared) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        k: -slope,
        r_squared,
        distances_um,
        fields,
    })
}

pub fn fit_decay_exponent(
    layout: &TrapLayout,
    electrode: &str,
    line: FitLine,
    d_range_um: (f64, f64),
    samples: usize,
) -> Result<DecayFit> {
    fit_decay_exponent_electrode(layout.electrode(electrode)?, line, d_range_um, samples)
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Ordinary least squares `y = a + b x`; returns `(b, R^2)`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (b, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_two_zone_layout, Label};
    use proptest::prelude::*;

    const ZETA3: f64 = 1.202_056_903_159_594_3;

    fn model(chi0: f64, k: f64) -> ScalingModel {
        ScalingModel::new(chi0, k, Lattice::Infinite).unwrap()
    }

    #[test]
    fn basel_limit() {
        let r = total_crosstalk(&model(1.0, 3.0), 10_000).unwrap();
        let limit = std::f64::consts::PI.powi(2) / 6.0;
        assert!(r.converged);
        assert!(r.partial_sum < limit);
        assert!(limit - r.partial_sum <= 1.0 / 10_000.0);
        assert!(r.partial_sum + r.tail_bound.unwrap() >= limit);
        assert!((r.limit_estimate.unwrap() - limit).abs() < 1e-10);
    }

    #[test]
    fn harmonic_diverges() {
        let r = total_crosstalk(&model(1.0, 2.0), 1000).unwrap();
        assert!(!r.converged);
        assert_eq!(r.limit_estimate, None);
        assert!(!total_crosstalk(&model(1.0, 1.5), 10).unwrap().converged);
    }

    #[test]
    fn zeta3_bracket() {
        let m = model(0.005, 4.0);
        let limit = 0.005 * ZETA3;
        let mut prev = 0.0;
        for d in [1, 2, 5, 10, 100, 1000] {
            let r = total_crosstalk(&m, d).unwrap();
            assert!(r.partial_sum > prev);
            assert!(r.partial_sum <= limit);
            assert!(r.partial_sum + r.tail_bound.unwrap() >= limit);
            prev = r.partial_sum;
        }
        let r = total_crosstalk(&m, 1000).unwrap();
        assert!((r.limit_estimate.unwrap() - limit).abs() < 1e-12);
        assert!((limit - 0.00601).abs() < 1e-5);
    }

    #[test]
    fn chi0_linearity() {
        let a = total_crosstalk(&model(0.02, 3.3), 500).unwrap();
        let b = total_crosstalk(&model(0.01, 3.3), 500).unwrap();
        assert_eq!(b.partial_sum, a.partial_sum / 2.0);
    }

    #[test]
    fn perimeter_counts() {
        assert_eq!(perimeter_count(&Lattice::Infinite, 1).unwrap(), 8);
        assert_eq!(perimeter_count(&Lattice::Infinite, 2).unwrap(), 16);
        for d in 1..50 {
            assert_eq!(perimeter_count(&Lattice::Infinite, d).unwrap(), 8 * d);
        }
        let five = Lattice::Square { side: 5, centre: (2, 2) };
        assert_eq!(perimeter_count(&five, 1).unwrap(), 8);
        assert_eq!(perimeter_count(&five, 2).unwrap(), 16);
        assert_eq!(perimeter_count(&five, 3).unwrap(), 0);
        let corner = Lattice::Square { side: 5, centre: (0, 0) };
        assert_eq!(perimeter_count(&corner, 1).unwrap(), 3);
        assert_eq!(perimeter_count(&corner, 4).unwrap(), 9);
        let total: usize = (1..=4).map(|d| perimeter_count(&corner, d).unwrap()).sum();
        assert_eq!(total, 24);
        assert!(perimeter_count(&Lattice::Infinite, 0).is_err());
        assert!(ScalingModel::new(1.0, 3.0, Lattice::Square { side: 3, centre: (3, 0) }).is_err());
    }

    #[test]
    fn lattice_sum_matches_series_on_full_shells() {
        let inf = model(0.3, 3.5);
        let a = lattice_crosstalk(&inf, 200).unwrap();
        let b = total_crosstalk(&inf, 200).unwrap().partial_sum;
        assert!((a - b).abs() <= 1e-14 * b);
        let small = ScalingModel::new(0.3, 3.5, Lattice::Square { side: 5, centre: (2, 2) }).unwrap();
        let s = lattice_crosstalk(&small, 200).unwrap();
        let two = total_crosstalk(&inf, 2).unwrap().partial_sum;
        assert!((s - two).abs() <= 1e-14 * two);
    }

    #[test]
    fn quadrature_helper() {
        assert_eq!(uniform_quadrature(0.01, 100), 0.1);
        assert_eq!(uniform_quadrature(0.5, 4), 1.0);
        assert_eq!(quadrature_sum(&[3.0, 4.0]), 5.0);
        assert_eq!(quadrature_sum(&[0.25; 16]), uniform_quadrature(0.25, 16));
    }

    fn segment_electrode(with_return: bool) -> Electrode {
        let path = [Point3::new(-50.0, 0.0, 0.0), Point3::new(50.0, 0.0, 0.0)];
        // Same waypoint order; the return sign makes the current antiparallel.
        let ret = [Point3::new(-50.0, 0.0, 20.0), Point3::new(50.0, 0.0, 20.0)];
        Electrode::from_waypoints("e", 1, Label::A, &path, if with_return { &ret } else { &[] }).unwrap()
    }

    fn far_line() -> FitLine {
        FitLine {
            origin: Point3::new(0.0, 0.0, 10.0),
            direction: [0.0, 1.0, 0.0],
            axis: [0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn isolated_segment_decays_as_inverse_square() {
        let f = fit_decay_exponent_electrode(&segment_electrode(false), far_line(), (2_000.0, 20_000.0), 21).unwrap();
        assert!((f.k - 2.0).abs() < 0.1, "{}", f.k);
        assert!(f.r_squared > 0.999);
    }

    #[test]
    fn return_path_decays_faster() {
        let line = FitLine {
            axis: [0.0, 1.0, 0.0],
            ..far_line()
        };
        let f = fit_decay_exponent_electrode(&segment_electrode(true), line, (2_000.0, 20_000.0), 21).unwrap();
        assert!(f.k > 2.0, "{}", f.k);
        assert!(f.r_squared > 0.99);
    }

    #[test]
    fn fit_errors() {
        let e = segment_electrode(false);
        assert!(fit_decay_exponent_electrode(&e, far_line(), (10.0, 1.0), 5).is_err());
        assert!(fit_decay_exponent_electrode(&e, far_line(), (1.0, 10.0), 2).is_err());
        // Projection axis along the wire: the field has no such component.
        let blind = FitLine {
            axis: [1.0, 0.0, 0.0],
            ..far_line()
        };
        assert!(matches!(fit_decay_exponent_electrode(&e, blind, (100.0, 1000.0), 5), Err(Error::Underflow(_))));
        let l = reference_two_zone_layout();
        assert!(matches!(fit_decay_exponent(&l, "nope", far_line(), (1.0, 10.0), 5), Err(Error::UnknownElectrode(_))));
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = xs.map(|x| 1.5 - 2.5 * x);
        let (b, r2) = linear_fit(&xs, &ys);
        assert!((b + 2.5).abs() < 1e-14);
        assert!((r2 - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn partial_sums_monotone(k in 0.5f64..6.0, d in 1usize..300) {
            let m = model(1.0, k);
            let a = total_crosstalk(&m, d).unwrap().partial_sum;
            let b = total_crosstalk(&m, d + 1).unwrap().partial_sum;
            prop_assert!(b >= a);
        }
    }
}
