//! Near-field microwave addressing for multi-zone surface ion traps.
//!
//! The crate models control electrodes as chains of straight current
//! filaments, assembles the complex coupling matrix that maps electrode
//! phasor currents to the microwave field at every ion, and solves for drive
//! currents that realise a target field at an addressed ion while nulling
//! the field at its neighbours. Around that solver sit the analyses needed to
//! judge a design: drift sensitivity (linear quadrature and Monte Carlo),
//! light-shift and Lamb-Dicke estimates, a simulated calibration campaign for
//! the coupling matrix, and the large-array crosstalk scaling model.
//!
//! Lengths are micrometres at the file and API boundary for geometry and
//! metres everywhere inside the field model. Fields are tesla internally.

pub mod calibration;
pub mod coupling;
pub mod error;
pub mod field;
pub mod format;
pub mod geometry;
pub mod linalg;
pub mod nulling;
pub mod robustness;
pub mod scaling;

pub use num_complex::Complex64;

pub use coupling::{Axis, CouplingMatrix, PhasorCurrentSet, RowLabel};
pub use error::{Error, Result};
pub use field::{FieldGradient, FieldSample, PhasorVector3, MU0};
pub use geometry::{Electrode, Label, Point3, Segment, TrapLayout, Zone};
pub use nulling::{DriveSolution, FieldTarget};
pub use robustness::{DriftModel, RatioProbe, SensitivityReport};
pub use scaling::ScalingModel;
