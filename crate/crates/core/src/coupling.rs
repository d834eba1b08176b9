//! The coupling matrix: electrode phasor currents to the field components at
//! every ion, with rows stacked ion-major and axis-minor.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{electrode_unit_field, PhasorVector3};
use crate::format::sig9;
use crate::geometry::TrapLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn unit(self) -> [f64; 3] {
        let mut u = [0.0; 3];
        u[self.index()] = 1.0;
        u
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidArgument(format!("unknown axis `{s}`"))),
        }
    }
}

/// One row of the coupling matrix: a field component at an ion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowLabel {
    /// 1-based ion (and zone) index.
    pub ion: usize,
    pub axis: Axis,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ion{}_{}", self.ion, self.axis)
    }
}

impl FromStr for RowLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            location: format!("row label `{s}`"),
            message: "expected ion<N>_<x|y|z>".into(),
        };
        let rest = s.strip_prefix("ion").ok_or_else(bad)?;
        let (n, axis) = rest.split_once('_').ok_or_else(bad)?;
        let ion: usize = n.parse().map_err(|_| bad())?;
        if ion == 0 {
            return Err(bad());
        }
        Ok(RowLabel {
            ion,
            axis: axis.parse().map_err(|_| bad())?,
        })
    }
}

/// Electrode drive currents (amperes) keyed by electrode id.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorCurrentSet {
    ids: Vec<String>,
    values: DVector<Complex64>,
}

impl PhasorCurrentSet {
    pub fn new(ids: Vec<String>, values: Vec<Complex64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} electrode ids but {} currents",
                ids.len(),
                values.len()
            )));
        }
        Ok(PhasorCurrentSet {
            ids,
            values: DVector::from_vec(values),
        })
    }

    pub fn zeros(ids: Vec<String>) -> Self {
        let n = ids.len();
        PhasorCurrentSet {
            ids,
            values: DVector::zeros(n),
        }
    }

    pub(crate) fn from_vector(ids: Vec<String>, values: DVector<Complex64>) -> Self {
        debug_assert_eq!(ids.len(), values.len());
        PhasorCurrentSet { ids, values }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[Complex64] {
        self.values.as_slice()
    }

    pub fn vector(&self) -> &DVector<Complex64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<Complex64> {
        self.ids.iter().position(|i| i == id).map(|k| self.values[k])
    }

    /// `sqrt(sum |I_e|^2)`.
    pub fn norm(&self) -> f64 {
        crate::linalg::vec_norm(&self.values)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        PhasorCurrentSet {
            ids: self.ids.clone(),
            values: &self.values * s,
        }
    }
}

/// Column metadata: electrode id and, when known, the zone it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnLabel {
    pub id: String,
    pub zone: Option<usize>,
}

/// Complex `3N x E` coupling matrix in tesla per ampere.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    entries: DMatrix<Complex64>,
    rows: Vec<RowLabel>,
    columns: Vec<ColumnLabel>,
}

impl CouplingMatrix {
    /// Wrap a raw matrix. Rows must be ion-major, axis-minor for ions `1..=N`.
    pub fn new(entries: DMatrix<Complex64>, columns: Vec<ColumnLabel>) -> Result<Self> {
        if !entries.nrows().is_multiple_of(3) || entries.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "row count {} is not a positive multiple of 3",
                entries.nrows()
            )));
        }
        if entries.ncols() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} column labels",
                entries.ncols(),
                columns.len()
            )));
        }
        if entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Validation("coupling matrix has non-finite entries".into()));
        }
        let rows = (0..entries.nrows())
            .map(|r| RowLabel {
                ion: r / 3 + 1,
                axis: Axis::ALL[r % 3],
            })
            .collect();
        Ok(CouplingMatrix {
            entries,
            rows,
            columns,
        })
    }

    /// Matrix with anonymous columns `e1..eE` and no zone information.
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Result<Self> {
        let columns = (1..=entries.ncols())
            .map(|k| ColumnLabel {
                id: format!("e{k}"),
                zone: None,
            })
            .collect();
        Self::new(entries, columns)
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn rows(&self) -> &[RowLabel] {
        &self.rows
    }

    pub fn columns(&self) -> &[ColumnLabel] {
        &self.columns
    }

    pub fn column_ids(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.id.clone()).collect()
    }

    pub fn ion_count(&self) -> usize {
        self.entries.nrows() / 3
    }

    pub fn electrode_count(&self) -> usize {
        self.entries.ncols()
    }

    pub fn column_index(&self, id: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::UnknownElectrode(id.to_string()))
    }

    /// Assign zones to columns from a layout with the same electrode ids.
    pub fn with_layout_zones(mut self, layout: &TrapLayout) -> Result<Self> {
        if layout.zones().len() != self.ion_count() {
            return Err(Error::Dimension(format!(
                "matrix covers {} ions but layout has {} zones",
                self.ion_count(),
                layout.zones().len()
            )));
        }
        for c in &mut self.columns {
            c.zone = Some(layout.electrode(&c.id)?.zone);
        }
        Ok(self)
    }

    /// Column indices of the electrodes in `zone`.
    pub fn zone_columns(&self, zone: usize) -> Result<Vec<usize>> {
        if zone == 0 || zone > self.ion_count() {
            return Err(Error::UnknownZone(zone));
        }
        if self.columns.iter().any(|c| c.zone.is_none()) {
            return Err(Error::InvalidArgument(
                "column zones unknown; attach a layout first".into(),
            ));
        }
        Ok((0..self.columns.len())
            .filter(|&k| self.columns[k].zone == Some(zone))
            .collect())
    }

    /// Rows `3(ion-1)..3ion` as a `3 x E` matrix.
    pub fn ion_rows(&self, ion: usize) -> Result<DMatrix<Complex64>> {
        if ion == 0 || ion > self.ion_count() {
            return Err(Error::UnknownZone(ion));
        }
        Ok(self.entries.rows(3 * (ion - 1), 3).into_owned())
    }

    fn check_currents(&self, currents: &PhasorCurrentSet) -> Result<()> {
        if currents.len() != self.electrode_count() {
            return Err(Error::Dimension(format!(
                "matrix has {} electrodes, current set has {}",
                self.electrode_count(),
                currents.len()
            )));
        }
        for (c, id) in self.columns.iter().zip(currents.ids()) {
            if &c.id != id {
                return Err(Error::Dimension(format!(
                    "current set electrode `{id}` does not match matrix column `{}`",
                    c.id
                )));
            }
        }
        Ok(())
    }

    /// Zero current set matching the columns.
    pub fn zero_currents(&self) -> PhasorCurrentSet {
        PhasorCurrentSet::zeros(self.column_ids())
    }

    pub fn currents_from_vector(&self, values: DVector<Complex64>) -> Result<PhasorCurrentSet> {
        if values.len() != self.electrode_count() {
            return Err(Error::Dimension(format!(
                "matrix has {} electrodes, got {} currents",
                self.electrode_count(),
                values.len()
            )));
        }
        Ok(PhasorCurrentSet::from_vector(self.column_ids(), values))
    }

    /// Field at every ion, `B = M I`.
    pub fn apply(&self, currents: &PhasorCurrentSet) -> Result<Vec<PhasorVector3>> {
        self.check_currents(currents)?;
        Ok(split_fields(&(&self.entries * currents.vector())))
    }

    /// The `3 x E_zone` block coupling a zone's own electrodes to its own ion.
    pub fn addressed_block(&self, zone: usize) -> Result<CouplingMatrix> {
        let cols = self.zone_columns(zone)?;
        let rows = self.ion_rows(zone)?;
        let entries = rows.select_columns(cols.iter());
        let columns = cols.iter().map(|&k| self.columns[k].clone()).collect();
        let mut block = CouplingMatrix::new(entries, columns)?;
        block.rows = self.rows[3 * (zone - 1)..3 * zone].to_vec();
        Ok(block)
    }

    /// CSV export: header `electrode_id,<id>_re,<id>_im,...`, one row per
    /// field component labelled `ion<N>_<axis>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("electrode_id");
        for c in &self.columns {
            write!(s, ",{0}_re,{0}_im", c.id).unwrap();
        }
        s.push('\n');
        for (r, label) in self.rows.iter().enumerate() {
            write!(s, "{label}").unwrap();
            for k in 0..self.electrode_count() {
                let v = self.entries[(r, k)];
                write!(s, ",{},{}", sig9(v.re), sig9(v.im)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Inverse of [`CouplingMatrix::to_csv`]. Column zones are left unknown.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| csv_error(&e, "header"))?
            .clone();
        if header.get(0) != Some("electrode_id") {
            return Err(Error::Parse {
                location: "line 1, column 1".into(),
                message: "header must start with `electrode_id`".into(),
            });
        }
        if header.len() < 3 || header.len() % 2 == 0 {
            return Err(Error::Parse {
                location: "line 1".into(),
                message: "header must list `<id>_re,<id>_im` pairs".into(),
            });
        }
        let mut columns = Vec::new();
        for k in (1..header.len()).step_by(2) {
            let (re, im) = (&header[k], &header[k + 1]);
            let id = re.strip_suffix("_re").filter(|id| im.strip_suffix("_im") == Some(*id));
            let id = id.ok_or_else(|| Error::Parse {
                location: format!("line 1, column {}", k + 1),
                message: format!("expected `<id>_re,<id>_im`, found `{re},{im}`"),
            })?;
            columns.push(ColumnLabel {
                id: id.to_string(),
                zone: None,
            });
        }
        let mut data = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| csv_error(&e, &format!("line {line}")))?;
            let label: RowLabel = record[0].parse().map_err(|_| Error::Parse {
                location: format!("line {line}, column 1"),
                message: format!("bad row label `{}`", &record[0]),
            })?;
            let expected = RowLabel {
                ion: r / 3 + 1,
                axis: Axis::ALL[r % 3],
            };
            if label != expected {
                return Err(Error::Parse {
                    location: format!("line {line}, column 1"),
                    message: format!("expected row `{expected}`, found `{label}`"),
                });
            }
            let num = |k: usize| -> Result<f64> {
                record[k].trim().parse::<f64>().map_err(|_| Error::Parse {
                    location: format!("line {line}, column {}", k + 1),
                    message: format!("`{}` is not a number", &record[k]),
                })
            };
            for k in (1..record.len()).step_by(2) {
                data.push(Complex64::new(num(k)?, num(k + 1)?));
            }
        }
        let ncols = columns.len();
        let nrows = data.len() / ncols.max(1);
        let entries = DMatrix::from_row_slice(nrows, ncols, &data);
        Self::new(entries, columns)
    }
}

fn csv_error(e: &csv::Error, location: &str) -> Error {
    Error::Parse {
        location: location.to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn split_fields(b: &DVector<Complex64>) -> Vec<PhasorVector3> {
    b.as_slice()
        .chunks(3)
        .map(|c| PhasorVector3([c[0], c[1], c[2]]))
        .collect()
}

pub(crate) fn stack_fields(fields: &[PhasorVector3]) -> DVector<Complex64> {
    DVector::from_iterator(fields.len() * 3, fields.iter().flat_map(|f| f.0))
}

/// Build the coupling matrix of a layout from the filament field model.
/// Entry `(3(n-1)+axis, e)` is field component `axis` at ion `n` per ampere
/// in electrode `e`.
pub fn assemble(layout: &TrapLayout) -> Result<CouplingMatrix> {
    let ions: Vec<_> = layout.zones().iter().map(|z| z.ion_position).collect();
    let columns: Vec<Vec<f64>> = layout
        .electrodes()
        .par_iter()
        .map(|e| {
            let mut col = Vec::with_capacity(3 * ions.len());
            for &p in &ions {
                col.extend(electrode_unit_field(e, p)?);
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let entries = DMatrix::from_fn(3 * ions.len(), columns.len(), |r, c| Complex64::new(columns[c][r], 0.0));
    let labels = layout
        .electrodes()
        .iter()
        .map(|e| ColumnLabel {
            id: e.id.clone(),
            zone: Some(e.zone),
        })
        .collect();
    CouplingMatrix::new(entries, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::electrode_field;
    use crate::geometry::{reference_two_zone_layout, Electrode, Label, Point3, Zone};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_shape() {
        let m = assemble(&reference_two_zone_layout()).unwrap();
        assert_eq!(m.entries().shape(), (6, 8));
        assert_eq!(m.rows()[4].to_string(), "ion2_y");
        assert_eq!(m.columns()[5].id, "z2b");
    }

    #[test]
    fn single_zone_shape_and_duplicate_column() {
        let l = reference_two_zone_layout();
        let mut es: Vec<Electrode> = l.electrodes_in_zone(1).cloned().collect();
        let one = TrapLayout::new(vec![l.zones()[0]], es.clone(), l.quant_axis()).unwrap();
        assert_eq!(assemble(&one).unwrap().entries().shape(), (3, 4));

        let mut dup = es[0].clone();
        dup.id = "dup".into();
        dup.label = Label::D;
        es.truncate(3);
        es.push(dup);
        let m = assemble(&TrapLayout::new(vec![l.zones()[0]], es, l.quant_axis()).unwrap()).unwrap();
        assert_eq!(m.entries().column(0), m.entries().column(3));
    }

    #[test]
    fn columns_match_electrode_field() {
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        for (k, e) in l.electrodes().iter().enumerate() {
            for z in l.zones() {
                let b = electrode_field(e, Complex64::new(1.0, 0.0), z.ion_position).unwrap();
                for a in 0..3 {
                    assert_eq!(m.entries()[(3 * (z.index - 1) + a, k)], b[a]);
                }
            }
        }
    }

    #[test]
    fn apply_basics() {
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        let zero = m.apply(&m.zero_currents()).unwrap();
        assert!(zero.iter().all(|f| f.norm() == 0.0));

        let mut v = DVector::zeros(8);
        v[3] = Complex64::new(1.0, 0.0);
        let b = m.apply(&m.currents_from_vector(v).unwrap()).unwrap();
        for (n, f) in b.iter().enumerate() {
            for a in 0..3 {
                assert_eq!(f[a], m.entries()[(3 * n + a, 3)]);
            }
        }

        let wrong = PhasorCurrentSet::zeros(vec!["x".into(); 8]);
        assert!(matches!(m.apply(&wrong), Err(Error::Dimension(_))));
        assert!(matches!(m.apply(&PhasorCurrentSet::zeros(vec![])), Err(Error::Dimension(_))));
    }

    #[test]
    fn apply_matches_direct_summation() {
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<Complex64> = (0..8)
            .map(|_| Complex64::from_polar(rng.random_range(0.0..0.05), rng.random_range(0.0..6.3)))
            .collect();
        let currents = m.currents_from_vector(DVector::from_vec(v.clone())).unwrap();
        let b = m.apply(&currents).unwrap();
        for z in l.zones() {
            // Oracle: per-segment summation, independent of the matrix path.
            let mut direct = PhasorVector3::ZERO;
            for (e, i) in l.electrodes().iter().zip(&v) {
                for (seg, sign) in e.signed_segments() {
                    direct += crate::field::segment_field(seg, *i * sign, z.ion_position).unwrap();
                }
            }
            let got = b[z.index - 1];
            assert!((got - direct).norm() <= 1e-12 * direct.norm());
        }
    }

    #[test]
    fn addressed_block_extraction() {
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        let b1 = m.addressed_block(1).unwrap();
        assert_eq!(b1.entries().shape(), (3, 4));
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(b1.entries()[(r, c)], m.entries()[(r, c)]);
            }
        }
        assert!(matches!(m.addressed_block(3), Err(Error::UnknownZone(3))));
        assert!(matches!(m.addressed_block(0), Err(Error::UnknownZone(0))));
    }

    #[test]
    fn mirror_zones_give_reflected_blocks() {
        // Reflection z -> -z maps polar current elements with R = diag(1,1,-1);
        // the axial field picks up det(R) R = diag(-1,-1,1).
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        let (b1, b2) = (m.addressed_block(1).unwrap(), m.addressed_block(2).unwrap());
        let sign = [-1.0, -1.0, 1.0];
        let scale = b1.entries().iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (k1, c1) in b1.columns().iter().enumerate() {
            let label = l.electrode(&c1.id).unwrap().label;
            let k2 = b2
                .columns()
                .iter()
                .position(|c| l.electrode(&c.id).unwrap().label == label)
                .unwrap();
            for r in 0..3 {
                let d = b2.entries()[(r, k2)] - b1.entries()[(r, k1)] * sign[r];
                assert!(d.norm() < 1e-12 * scale, "row {r} label {label}: {d}");
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = assemble(&reference_two_zone_layout()).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("electrode_id,z1a_re,z1a_im,"));
        assert_eq!(text.lines().count(), 7);
        let back = CouplingMatrix::from_csv(&text).unwrap();
        assert_eq!(back.to_csv(), text);
        assert_eq!(back.electrode_count(), 8);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(CouplingMatrix::from_csv("id,a_re,a_im\n"), Err(Error::Parse { .. })));
        let bad = "electrode_id,a_re,a_im\nion1_x,1,0\nion1_y,zz,0\nion1_z,0,0\n";
        match CouplingMatrix::from_csv(bad) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 3, column 2"),
            other => panic!("{other:?}"),
        }
        let short = "electrode_id,a_re,a_im\nion1_x,1,0\n";
        assert!(CouplingMatrix::from_csv(short).is_err());
    }

    #[test]
    fn layout_zone_attachment() {
        let l = reference_two_zone_layout();
        let m = assemble(&l).unwrap();
        let imported = CouplingMatrix::from_csv(&m.to_csv()).unwrap();
        assert!(imported.addressed_block(1).is_err());
        let attached = imported.with_layout_zones(&l).unwrap();
        let (got, want) = (attached.addressed_block(2).unwrap(), m.addressed_block(2).unwrap());
        assert_eq!(got.columns(), want.columns());
        for (a, b) in got.entries().iter().zip(want.entries().iter()) {
            assert!((a - b).norm() <= 1e-8 * b.norm());
        }

        let zones = vec![Zone {
            index: 1,
            ion_position: Point3::new(0.0, 110.0, 0.0),
        }];
        let es: Vec<Electrode> = l.electrodes_in_zone(1).cloned().map(|mut e| { e.zone = 1; e }).collect();
        let single = TrapLayout::new(zones, es, l.quant_axis()).unwrap();
        assert!(m.clone().with_layout_zones(&single).is_err());
    }
}
