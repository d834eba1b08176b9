//! Trap layouts: zones, ion positions and electrodes as chains of straight
//! current filaments, plus the layout file format.
//!
//! Coordinates are micrometres. The built-in reference layout uses `z` along
//! the trap axis, `y` along the surface normal (the chip surface is `y = 0`)
//! and `x` across the trap in the surface plane.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::format::sig9;

/// Contiguity tolerance between consecutive segments, micrometres.
pub const CONTIGUITY_TOL_UM: f64 = 1e-6;

const AXIS_NORM_TOL: f64 = 1e-12;
/// Files carry nine significant digits, so a unit axis read back from text
/// can be off by ~1e-9. Anything inside this window is renormalised on load.
const FILE_AXIS_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Point3 { x, y, z }
    }
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Position in metres.
    pub fn to_meters(self) -> [f64; 3] {
        [self.x * 1e-6, self.y * 1e-6, self.z * 1e-6]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(self, other: Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// `self + t * dir` with `dir` in micrometres.
    pub fn offset(self, dir: [f64; 3], t: f64) -> Point3 {
        Point3::new(self.x + t * dir[0], self.y + t * dir[1], self.z + t * dir[2])
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Point3,
    pub end: Point3,
}

impl Segment {
    pub fn new(start: Point3, end: Point3) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::Validation(format!(
                "segment {start} -> {end}: non-finite coordinate"
            )));
        }
        if start == end {
            return Err(Error::Validation(format!(
                "segment at {start}: zero length"
            )));
        }
        Ok(Segment { start, end })
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }
}

/// Position of an electrode within its zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    A,
    B,
    C,
    D,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::A, Label::B, Label::C, Label::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "a",
            Label::B => "b",
            Label::C => "c",
            Label::D => "d",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A control electrode. The signal path carries the drive current; the
/// optional return path carries the same current in the opposite sense.
#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub id: String,
    pub zone: usize,
    pub label: Label,
    pub path: Vec<Segment>,
    pub return_path: Vec<Segment>,
}

impl Electrode {
    /// Build an electrode from waypoint chains. The return chain may be empty.
    pub fn from_waypoints(
        id: impl Into<String>,
        zone: usize,
        label: Label,
        path: &[Point3],
        return_path: &[Point3],
    ) -> Result<Self> {
        let id = id.into();
        let chain = |pts: &[Point3], what: &str| -> Result<Vec<Segment>> {
            if pts.len() == 1 {
                return Err(Error::Validation(format!(
                    "electrode `{id}`: {what} needs at least two waypoints"
                )));
            }
            pts.windows(2)
                .map(|w| {
                    Segment::new(w[0], w[1]).map_err(|e| match e {
                        Error::Validation(m) => {
                            Error::Validation(format!("electrode `{id}` {what}: {m}"))
                        }
                        other => other,
                    })
                })
                .collect()
        };
        if path.is_empty() {
            return Err(Error::Validation(format!(
                "electrode `{id}`: path is empty"
            )));
        }
        let path = chain(path, "path")?;
        let return_path = chain(return_path, "return_path")?;
        Ok(Electrode {
            id,
            zone,
            label,
            path,
            return_path,
        })
    }

    pub fn path_waypoints(&self) -> Vec<Point3> {
        waypoints(&self.path)
    }

    pub fn return_waypoints(&self) -> Vec<Point3> {
        waypoints(&self.return_path)
    }

    /// Every segment with its current sense: `+1` on the path, `-1` on the
    /// return path.
    pub fn signed_segments(&self) -> impl Iterator<Item = (&Segment, f64)> {
        self.path
            .iter()
            .map(|s| (s, 1.0))
            .chain(self.return_path.iter().map(|s| (s, -1.0)))
    }

    fn check_contiguous(&self) -> Result<()> {
        for (what, chain) in [("path", &self.path), ("return_path", &self.return_path)] {
            for (i, w) in chain.windows(2).enumerate() {
                let gap = w[0].end.distance(w[1].start);
                if gap > CONTIGUITY_TOL_UM {
                    return Err(Error::Validation(format!(
                        "electrode `{}` {what}: segments {i} and {} are not contiguous (gap {gap:e} um)",
                        self.id,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

fn waypoints(chain: &[Segment]) -> Vec<Point3> {
    let mut pts: Vec<Point3> = chain.iter().map(|s| s.start).collect();
    if let Some(last) = chain.last() {
        pts.push(last.end);
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zone {
    /// 1-based zone number; zone `n` holds ion `n`.
    pub index: usize,
    pub ion_position: Point3,
}

/// Validated, immutable trap geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapLayout {
    zones: Vec<Zone>,
    electrodes: Vec<Electrode>,
    quant_axis: [f64; 3],
}

impl TrapLayout {
    /// Validate and assemble a layout. Zones are stored sorted by index.
    pub fn new(mut zones: Vec<Zone>, electrodes: Vec<Electrode>, quant_axis: [f64; 3]) -> Result<Self> {
        let norm = quant_axis.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > AXIS_NORM_TOL {
            return Err(Error::Validation(format!(
                "quant_axis: norm {norm} is not 1 (non-unit axis)"
            )));
        }
        if zones.is_empty() {
            return Err(Error::Validation("zones: layout has no zones".into()));
        }
        zones.sort_by_key(|z| z.index);
        for (i, z) in zones.iter().enumerate() {
            if z.index != i + 1 {
                return Err(Error::Validation(format!(
                    "zones: indices must be 1..={} without gaps or repeats (found {})",
                    zones.len(),
                    z.index
                )));
            }
            if !z.ion_position.is_finite() {
                return Err(Error::Validation(format!(
                    "zone {}: non-finite ion position",
                    z.index
                )));
            }
        }
        for (i, a) in zones.iter().enumerate() {
            for b in &zones[i + 1..] {
                if a.ion_position == b.ion_position {
                    return Err(Error::Validation(format!(
                        "zones {} and {}: ion positions coincide",
                        a.index, b.index
                    )));
                }
            }
        }

        let mut ids = HashSet::new();
        let mut labels: HashMap<usize, HashSet<Label>> = HashMap::new();
        for e in &electrodes {
            if e.id.is_empty() || e.id.contains([',', ';', '"']) || e.id.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!(
                    "electrode id `{}`: must be non-empty without commas, semicolons, quotes or whitespace",
                    e.id
                )));
            }
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("electrode `{}`: duplicate id", e.id)));
            }
            if e.zone == 0 || e.zone > zones.len() {
                return Err(Error::Validation(format!(
                    "electrode `{}`: references zone {} which does not exist",
                    e.id, e.zone
                )));
            }
            if !labels.entry(e.zone).or_default().insert(e.label) {
                return Err(Error::Validation(format!(
                    "electrode `{}`: label {} is already used in zone {}",
                    e.id, e.label, e.zone
                )));
            }
            if e.path.is_empty() {
                return Err(Error::Validation(format!("electrode `{}`: path is empty", e.id)));
            }
            e.check_contiguous()?;
        }
        for z in &zones {
            let n = labels.get(&z.index).map_or(0, HashSet::len);
            if n < 3 {
                return Err(Error::Validation(format!(
                    "zone {}: has {n} control electrodes, at least three are required",
                    z.index
                )));
            }
        }

        Ok(TrapLayout {
            zones,
            electrodes,
            quant_axis,
        })
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn quant_axis(&self) -> [f64; 3] {
        self.quant_axis
    }

    pub fn zone(&self, index: usize) -> Result<&Zone> {
        index
            .checked_sub(1)
            .and_then(|i| self.zones.get(i))
            .ok_or(Error::UnknownZone(index))
    }

    pub fn electrode(&self, id: &str) -> Result<&Electrode> {
        self.electrodes
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownElectrode(id.to_string()))
    }

    pub fn electrodes_in_zone(&self, zone: usize) -> impl Iterator<Item = &Electrode> {
        self.electrodes.iter().filter(move |e| e.zone == zone)
    }

    /// Serialise to the layout file format. Output is deterministic and every
    /// number carries at most nine significant digits.
    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        let p = |pt: Point3| format!("[{}, {}, {}]", sig9(pt.x), sig9(pt.y), sig9(pt.z));
        let chain = |pts: Vec<Point3>| {
            let items: Vec<String> = pts.into_iter().map(p).collect();
            format!("[\n    {},\n]", items.join(",\n    "))
        };
        let [ax, ay, az] = self.quant_axis;
        writeln!(s, "quant_axis = {}", p(Point3::new(ax, ay, az))).unwrap();
        for z in &self.zones {
            writeln!(s, "\n[[zones]]\nindex = {}\nion_position = {}", z.index, p(z.ion_position)).unwrap();
        }
        for e in &self.electrodes {
            writeln!(
                s,
                "\n[[electrodes]]\nid = \"{}\"\nzone = {}\nlabel = \"{}\"\npath = {}",
                e.id,
                e.zone,
                e.label,
                chain(e.path_waypoints())
            )
            .unwrap();
            if !e.return_path.is_empty() {
                writeln!(s, "return_path = {}", chain(e.return_waypoints())).unwrap();
            }
        }
        s
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDoc {
    quant_axis: [f64; 3],
    zones: Vec<ZoneDoc>,
    electrodes: Vec<ElectrodeDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoneDoc {
    index: usize,
    ion_position: Point3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElectrodeDoc {
    id: String,
    zone: usize,
    label: Label,
    path: Vec<Point3>,
    #[serde(default)]
    return_path: Vec<Point3>,
}

/// Parse and validate a layout document.
pub fn load_layout(source: &str) -> Result<TrapLayout> {
    let doc: LayoutDoc = toml::from_str(source).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let before = &source[..span.start.min(source.len())];
                let line = before.matches('\n').count() + 1;
                let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                format!("line {line}, column {col}")
            }
            None => "document".to_string(),
        };
        Error::Parse {
            location,
            message: e.message().to_string(),
        }
    })?;

    let norm = doc.quant_axis.iter().map(|c| c * c).sum::<f64>().sqrt();
    let quant_axis = if norm.is_finite() && (norm - 1.0).abs() <= FILE_AXIS_NORM_TOL {
        doc.quant_axis.map(|c| c / norm)
    } else {
        doc.quant_axis
    };
    let zones = doc
        .zones
        .into_iter()
        .map(|z| Zone {
            index: z.index,
            ion_position: z.ion_position,
        })
        .collect();
    let electrodes = doc
        .electrodes
        .into_iter()
        .map(|e| Electrode::from_waypoints(e.id, e.zone, e.label, &e.path, &e.return_path))
        .collect::<Result<Vec<_>>>()?;
    TrapLayout::new(zones, electrodes, quant_axis)
}

/// Dimensions of the built-in two-zone layout, micrometres.
pub mod reference {
    /// Ion height above the electrode plane.
    pub const ION_HEIGHT: f64 = 110.0;
    /// Separation of the two addressing zones along the trap axis.
    pub const ZONE_SEPARATION: f64 = 960.0;
    /// Inner (trap-side) edge of the control electrodes: half the 5 um
    /// central gap, 60 um axial DC, 10 um gap, 101.5 um RF, 10 um gap, 35 um
    /// ground strip and a final 10 um gap.
    pub const CONTROL_INNER_EDGE: f64 = 2.5 + 60.0 + 10.0 + 101.5 + 10.0 + 35.0 + 10.0;
    /// Control electrode width across the trap.
    pub const CONTROL_WIDTH: f64 = 150.0;
    /// Electrode extent along the trap axis.
    pub const CONTROL_LENGTH: f64 = 400.0;
    /// Gap between the two electrodes on one side of a zone.
    pub const AXIAL_GAP: f64 = 10.0;
    /// Width of each conducting strip of the slotted loop.
    pub const STRIP_WIDTH: f64 = 50.0;
    /// Centre-to-centre spacing of the two feed legs.
    pub const FEED_SPACING: f64 = 100.0;
    /// Distance from the nearer electrode end to the feed slot centre.
    pub const FEED_OFFSET: f64 = 100.0;
    /// Distance from the trap axis at which the feed legs terminate.
    pub const FEED_END: f64 = 4500.0;
}

/// The built-in two-zone layout.
///
/// Each control electrode is a slotted current loop drawn along conductor
/// centrelines: a feed leg runs in from the chip edge, the current travels
/// along the outer strip, across the electrode end, back along the inner
/// (trap-side) strip, across the other end, and out along the second feed
/// leg. The loop outlines are placed symmetrically about the trap axis; the
/// feed slot sits at the outer end of electrodes `a` and `c` and the inner
/// end of `b` and `d`, so each zone maps onto itself under a half turn about
/// the ion's surface normal. Zone 2 is the mirror image of zone 1 through the
/// plane midway between the ions.
///
/// The published device gives strip widths and gaps but not the slot
/// dimensions, so this is an approximation of that geometry and not a model
/// of the fabricated chip.
pub fn reference_two_zone_layout() -> TrapLayout {
    use reference::*;

    let z1 = -ZONE_SEPARATION / 2.0;
    let inner_strip = CONTROL_INNER_EDGE + STRIP_WIDTH / 2.0;
    let outer_strip = CONTROL_INNER_EDGE + CONTROL_WIDTH - STRIP_WIDTH / 2.0;

    // (label, side across the trap, side along the axis, feed at outer end)
    let placement = [
        (Label::A, 1.0, -1.0, true),
        (Label::B, 1.0, 1.0, false),
        (Label::C, -1.0, 1.0, true),
        (Label::D, -1.0, -1.0, false),
    ];

    let zone1_paths: Vec<(Label, Vec<Point3>)> = placement
        .iter()
        .map(|&(label, sx, sz, feed_outer)| {
            // Local axial coordinate u runs from the axial gap outward.
            let u_near = AXIAL_GAP / 2.0;
            let u_far = u_near + CONTROL_LENGTH;
            let u_feed = if feed_outer {
                u_far - FEED_OFFSET
            } else {
                u_near + FEED_OFFSET
            };
            let end_near = u_near + STRIP_WIDTH / 2.0;
            let end_far = u_far - STRIP_WIDTH / 2.0;
            let local = [
                (FEED_END, u_feed - FEED_SPACING / 2.0),
                (outer_strip, u_feed - FEED_SPACING / 2.0),
                (outer_strip, end_near),
                (inner_strip, end_near),
                (inner_strip, end_far),
                (outer_strip, end_far),
                (outer_strip, u_feed + FEED_SPACING / 2.0),
                (FEED_END, u_feed + FEED_SPACING / 2.0),
            ];
            let pts = local
                .iter()
                .map(|&(x, u)| Point3::new(sx * x, 0.0, z1 + sz * u))
                .collect();
            (label, pts)
        })
        .collect();

    let mut electrodes = Vec::with_capacity(8);
    for (zone, mirror) in [(1usize, 1.0), (2, -1.0)] {
        for (label, pts) in &zone1_paths {
            let pts: Vec<Point3> = pts
                .iter()
                .map(|p| Point3::new(p.x, p.y, mirror * p.z))
                .collect();
            electrodes.push(
                Electrode::from_waypoints(format!("z{zone}{label}"), zone, *label, &pts, &[])
                    .expect("reference geometry has no degenerate segments"),
            );
        }
    }
    let zones = vec![
        Zone {
            index: 1,
            ion_position: Point3::new(0.0, ION_HEIGHT, z1),
        },
        Zone {
            index: 2,
            ion_position: Point3::new(0.0, ION_HEIGHT, -z1),
        },
    ];
    TrapLayout::new(zones, electrodes, [1.0, 0.0, 0.0]).expect("reference layout is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_electrode(id: &str, zone: usize, label: Label, cx: f64, cz: f64) -> Electrode {
        let pts = [
            Point3::new(cx, 0.0, cz),
            Point3::new(cx + 50.0, 0.0, cz),
            Point3::new(cx + 50.0, 0.0, cz + 50.0),
            Point3::new(cx, 0.0, cz + 50.0),
            Point3::new(cx, 0.0, cz),
        ];
        Electrode::from_waypoints(id, zone, label, &pts, &[]).unwrap()
    }

    fn single_zone() -> TrapLayout {
        let electrodes = Label::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| square_electrode(&format!("e{i}"), 1, l, 100.0 * i as f64 - 150.0, 0.0))
            .collect();
        let zones = vec![Zone {
            index: 1,
            ion_position: Point3::new(0.0, 100.0, 0.0),
        }];
        TrapLayout::new(zones, electrodes, [0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn reference_layout_dimensions() {
        let l = reference_two_zone_layout();
        assert_eq!(l.zones().len(), 2);
        assert_eq!(l.electrodes().len(), 8);
        let (p1, p2) = (l.zones()[0].ion_position, l.zones()[1].ion_position);
        assert_eq!(p1.y, 110.0);
        assert_eq!(p2.y, 110.0);
        assert_eq!((p1.x, p1.y), (p2.x, p2.y));
        assert_eq!(p2.z - p1.z, 960.0);
        assert_eq!(l.quant_axis(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn reference_outlines_symmetric_about_trap_axis() {
        let l = reference_two_zone_layout();
        let bbox = |e: &Electrode| {
            let pts = e.path_waypoints();
            let f = |g: fn(&Point3) -> f64, max: bool| {
                pts.iter().map(g).fold(if max { f64::MIN } else { f64::MAX }, |a, b| if max { a.max(b) } else { a.min(b) })
            };
            [f(|p| p.x, false), f(|p| p.x, true), f(|p| p.z, false), f(|p| p.z, true)]
        };
        for zone in 1..=2 {
            let ion = l.zone(zone).unwrap().ion_position;
            let boxes: Vec<[f64; 4]> = l.electrodes_in_zone(zone).map(bbox).collect();
            for b in &boxes {
                // Reflection across the trap axis (x -> -x).
                let across = [-b[1], -b[0], b[2], b[3]];
                // Reflection through the ion along the axis (z -> 2 z_ion - z).
                let along = [b[0], b[1], 2.0 * ion.z - b[3], 2.0 * ion.z - b[2]];
                for m in [across, along] {
                    assert!(
                        boxes.iter().any(|o| o.iter().zip(&m).all(|(p, q)| (p - q).abs() < 1e-9)),
                        "no mirror partner for {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn reference_zones_mirror_through_midplane() {
        let l = reference_two_zone_layout();
        let mid = 0.5 * (l.zones()[0].ion_position.z + l.zones()[1].ion_position.z);
        for e1 in l.electrodes_in_zone(1) {
            let e2 = l
                .electrodes_in_zone(2)
                .find(|e| e.label == e1.label)
                .unwrap();
            for (p, q) in e1.path_waypoints().iter().zip(e2.path_waypoints()) {
                let r = Point3::new(p.x, p.y, 2.0 * mid - p.z);
                assert!(r.distance(q) < 1e-6, "{r} vs {q}");
            }
        }
    }

    #[test]
    fn reference_paths_contiguous() {
        for e in reference_two_zone_layout().electrodes() {
            for w in e.path.windows(2) {
                assert!(w[0].end.distance(w[1].start) <= CONTIGUITY_TOL_UM);
            }
        }
    }

    #[test]
    fn reference_round_trips_field_by_field() {
        let l = reference_two_zone_layout();
        let text = l.to_toml_string();
        let back = load_layout(&text).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn single_zone_minimal_layout() {
        let l = single_zone();
        let back = load_layout(&l.to_toml_string()).unwrap();
        assert_eq!(back.zones().len(), 1);
        assert_eq!(back.electrodes().len(), 4);
    }

    #[test]
    fn zero_axis_rejected() {
        let text = single_zone()
            .to_toml_string()
            .replace("quant_axis = [0, 0, 1]", "quant_axis = [0, 0, 0]");
        match load_layout(&text) {
            Err(Error::Validation(m)) => assert!(m.contains("non-unit axis"), "{m}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_names_field_and_location() {
        let text = single_zone().to_toml_string().replace("ion_position", "ion_pos");
        match load_layout(&text) {
            Err(Error::Parse { location, message }) => {
                assert!(location.starts_with("line "), "{location}");
                assert!(message.contains("ion_pos") || message.contains("ion_position"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(load_layout("zones = 3"), Err(Error::Parse { .. })));
    }

    #[test]
    fn invariant_violations() {
        let base = single_zone();
        let mut electrodes = base.electrodes().to_vec();

        // Too few electrodes.
        let few = TrapLayout::new(base.zones().to_vec(), electrodes[..2].to_vec(), [1.0, 0.0, 0.0]);
        assert!(matches!(few, Err(Error::Validation(m)) if m.contains("at least three")));

        // Duplicate label.
        electrodes[1].label = Label::A;
        let dup = TrapLayout::new(base.zones().to_vec(), electrodes.clone(), [1.0, 0.0, 0.0]);
        assert!(matches!(dup, Err(Error::Validation(m)) if m.contains("label")));
        electrodes[1].label = Label::B;

        // Unknown zone.
        electrodes[0].zone = 3;
        let bad = TrapLayout::new(base.zones().to_vec(), electrodes.clone(), [1.0, 0.0, 0.0]);
        assert!(matches!(bad, Err(Error::Validation(m)) if m.contains("zone 3")));
        electrodes[0].zone = 1;

        // Broken chain.
        electrodes[2].path[1].start.x += 1.0;
        let gap = TrapLayout::new(base.zones().to_vec(), electrodes, [1.0, 0.0, 0.0]);
        assert!(matches!(gap, Err(Error::Validation(m)) if m.contains("not contiguous")));

        // Zero-length segment.
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(Electrode::from_waypoints("x", 1, Label::A, &[p, p], &[]).is_err());
    }

    #[test]
    fn coincident_ions_rejected() {
        let base = single_zone();
        let mut electrodes = base.electrodes().to_vec();
        for (i, l) in Label::ALL.iter().take(3).enumerate() {
            electrodes.push(square_electrode(&format!("f{i}"), 2, *l, 500.0 + 100.0 * i as f64, 0.0));
        }
        let mut zones = base.zones().to_vec();
        zones.push(Zone {
            index: 2,
            ion_position: zones[0].ion_position,
        });
        let r = TrapLayout::new(zones, electrodes, [1.0, 0.0, 0.0]);
        assert!(matches!(r, Err(Error::Validation(m)) if m.contains("coincide")));
    }
}
