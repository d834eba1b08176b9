//! Quasi-static phasor magnetic field of straight current filaments.
//!
//! Every electrode carries a spatially uniform phasor current, so the field
//! of a segment is the d.c. Biot-Savart field scaled by the complex current.
//! Field and gradient are both closed-form.

use std::ops::{Add, AddAssign, Index, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Electrode, Point3, Segment};

/// Vacuum permeability, T m / A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
const MU0_OVER_4PI: f64 = 1.0e-7;

/// Minimum distance between an evaluation point and any segment, micrometres.
pub const SINGULARITY_GUARD_UM: f64 = 1e-3;

/// Complex field vector (tesla). Component `i` is `B_i = |B_i| e^{i phi_i}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasorVector3(pub [Complex64; 3]);

impl PhasorVector3 {
    pub const ZERO: PhasorVector3 = PhasorVector3([Complex64::new(0.0, 0.0); 3]);

    pub fn new(x: Complex64, y: Complex64, z: Complex64) -> Self {
        PhasorVector3([x, y, z])
    }

    /// Real vector times a complex scalar.
    pub fn from_real(v: [f64; 3], scale: Complex64) -> Self {
        PhasorVector3(v.map(|c| scale * c))
    }

    /// `sqrt(|Bx|^2 + |By|^2 + |Bz|^2)`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Complex projection onto a real direction, `u . B`.
    pub fn project(&self, u: [f64; 3]) -> Complex64 {
        self.0[0] * u[0] + self.0[1] * u[1] + self.0[2] * u[2]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

impl Index<usize> for PhasorVector3 {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

impl Add for PhasorVector3 {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for PhasorVector3 {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for PhasorVector3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        PhasorVector3([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl Mul<Complex64> for PhasorVector3 {
    type Output = Self;
    fn mul(self, rhs: Complex64) -> Self {
        PhasorVector3(self.0.map(|c| c * rhs))
    }
}

/// `grad[i][j] = dB_i / dx_j` in tesla per metre.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldGradient(pub [[Complex64; 3]; 3]);

impl FieldGradient {
    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Gradient of the projected component, `d(u . B)/dx_j`.
    pub fn project(&self, u: [f64; 3]) -> [Complex64; 3] {
        std::array::from_fn(|j| self.0[0][j] * u[0] + self.0[1][j] * u[1] + self.0[2][j] * u[2])
    }

    fn add_real_scaled(&mut self, g: &[[f64; 3]; 3], s: Complex64) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += s * g[i][j];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub position: Point3,
    pub field: PhasorVector3,
    pub gradient: FieldGradient,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance from `p` to the closed segment `[a, b]`, all in the same unit.
fn distance_to_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]]))
}

/// Field per ampere (real, tesla) of a straight segment at `at`, and, when
/// requested, its Jacobian in tesla per metre per ampere.
///
/// With `a = start - P`, `b = end - P`:
/// `B = mu0/4pi (a x b) (|a| + |b|) / (|a||b| (|a||b| + a.b))`.
fn unit_segment_field(
    seg: &Segment,
    at: Point3,
    with_gradient: bool,
) -> Result<([f64; 3], Option<[[f64; 3]; 3]>)> {
    let (p_um, s_um, e_um) = (at.to_array(), seg.start.to_array(), seg.end.to_array());
    let d = distance_to_segment(p_um, s_um, e_um);
    if !(d >= SINGULARITY_GUARD_UM) {
        return Err(Error::Singularity { distance_um: d });
    }

    let p = at.to_meters();
    let a = sub(seg.start.to_meters(), p);
    let b = sub(seg.end.to_meters(), p);
    let (na, nb) = (norm(a), norm(b));
    let axb = cross(a, b);
    let ab = dot(a, b);
    // |a||b| + a.b cancels catastrophically next to a long segment; use
    // |a x b|^2 / (|a||b| - a.b) there instead.
    let denom = if ab >= 0.0 {
        na * nb + ab
    } else {
        dot(axb, axb) / (na * nb - ab)
    };
    let s = na + nb;
    let g = s / (na * nb * denom);
    let field = axb.map(|c| MU0_OVER_4PI * c * g);

    if !with_gradient {
        return Ok((field, None));
    }

    // d(a x b)/dP_j = e_j x (start - end); d ln g / dP follows from
    // d|a|/dP = -a_hat, d|b|/dP = -b_hat, d(|a||b| + a.b)/dP = -s (a_hat + b_hat).
    let ah = a.map(|c| c / na);
    let bh = b.map(|c| c / nb);
    let sum_hat = [ah[0] + bh[0], ah[1] + bh[1], ah[2] + bh[2]];
    let dlng: [f64; 3] =
        std::array::from_fn(|j| -sum_hat[j] / s + ah[j] / na + bh[j] / nb + s * sum_hat[j] / denom);
    let rev = sub(a, b);
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut ej = [0.0; 3];
        ej[j] = 1.0;
        let dcross = cross(ej, rev);
        for i in 0..3 {
            jac[i][j] = MU0_OVER_4PI * g * (dcross[i] + axb[i] * dlng[j]);
        }
    }
    Ok((field, Some(jac)))
}

/// Field of a single straight segment carrying `current` (A) from start to end.
pub fn segment_field(seg: &Segment, current: Complex64, at: Point3) -> Result<PhasorVector3> {
    let (f, _) = unit_segment_field(seg, at, false)?;
    Ok(PhasorVector3::from_real(f, current))
}

/// Field per ampere of an electrode: signal path with `+I`, return path with `-I`.
pub fn electrode_unit_field(e: &Electrode, at: Point3) -> Result<[f64; 3]> {
    let mut acc = [0.0; 3];
    for (seg, sign) in e.signed_segments() {
        let (f, _) = unit_segment_field(seg, at, false)?;
        for i in 0..3 {
            acc[i] += sign * f[i];
        }
    }
    Ok(acc)
}

pub fn electrode_field(e: &Electrode, current: Complex64, at: Point3) -> Result<PhasorVector3> {
    Ok(PhasorVector3::from_real(electrode_unit_field(e, at)?, current))
}

/// Analytic Jacobian `dB_i/dx_j` of the electrode field.
pub fn field_gradient(e: &Electrode, current: Complex64, at: Point3) -> Result<FieldGradient> {
    Ok(field_sample(e, current, at)?.gradient)
}

pub fn field_sample(e: &Electrode, current: Complex64, at: Point3) -> Result<FieldSample> {
    let mut field = [0.0; 3];
    let mut grad = [[0.0; 3]; 3];
    for (seg, sign) in e.signed_segments() {
        let (f, g) = unit_segment_field(seg, at, true)?;
        let g = g.expect("gradient requested");
        for i in 0..3 {
            field[i] += sign * f[i];
            for j in 0..3 {
                grad[i][j] += sign * g[i][j];
            }
        }
    }
    let mut gradient = FieldGradient::default();
    gradient.add_real_scaled(&grad, current);
    Ok(FieldSample {
        position: at,
        field: PhasorVector3::from_real(field, current),
        gradient,
    })
}

/// Field and gradient of several electrodes driven together.
pub fn superposed_sample<'a>(
    drive: impl IntoIterator<Item = (&'a Electrode, Complex64)>,
    at: Point3,
) -> Result<FieldSample> {
    let mut out = FieldSample {
        position: at,
        field: PhasorVector3::ZERO,
        gradient: FieldGradient::default(),
    };
    for (e, current) in drive {
        let s = field_sample(e, current, at)?;
        out.field += s.field;
        for i in 0..3 {
            for j in 0..3 {
                out.gradient.0[i][j] += s.gradient.0[i][j];
            }
        }
    }
    Ok(out)
}
