//! Building heights from a local newline-delimited JSON extract.
//!
//! Each line is `{"geometry": <ring or polygon rings>, "height": <meters>}`
//! with coordinates as `[lon, lat]`. A polygon (list of rings) contributes its
//! outer ring; a multipolygon contributes one record per outer ring.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::Value;

use super::ProviderError;
use crate::geodesy::{mercator_scale, to_mercator, GeoPoint};

/// Nearest-centroid fallback radius, in ground meters.
pub const MATCH_RADIUS_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeightRecord {
    pub footprint: Vec<GeoPoint>,
    pub height: f64,
}

#[derive(Debug, Clone)]
struct Entry {
    ring: Vec<[f64; 2]>,
    centroid: [f64; 2],
    min: [f64; 2],
    max: [f64; 2],
    height: f64,
}

impl Entry {
    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1] && point_in_ring(p, &self.ring)
    }
}

/// Immutable lookup structure over height records, in Mercator meters.
#[derive(Debug, Clone, Default)]
pub struct HeightIndex {
    entries: Vec<Entry>,
    /// Lines that were not valid JSON or had unusable geometry.
    pub malformed: usize,
    /// Records skipped for a missing, non-finite or non-positive height.
    pub heightless: usize,
}

fn strip_closing(ring: &[GeoPoint]) -> &[GeoPoint] {
    match ring {
        [first, .., last] if ring.len() > 3 && first == last => &ring[..ring.len() - 1],
        _ => ring,
    }
}

fn project(ring: &[GeoPoint]) -> Option<Vec<[f64; 2]>> {
    strip_closing(ring)
        .iter()
        .map(|p| to_mercator(*p).ok().map(|m| [m.x, m.y]))
        .collect()
}

/// Area centroid of a ring; falls back to the vertex mean when the area vanishes.
fn centroid(ring: &[[f64; 2]]) -> [f64; 2] {
    let n = ring.len();
    let origin = ring[0];
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = [ring[i][0] - origin[0], ring[i][1] - origin[1]];
        let q = [ring[(i + 1) % n][0] - origin[0], ring[(i + 1) % n][1] - origin[1]];
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a.abs() > 1e-12 {
        [origin[0] + cx / (3.0 * a), origin[1] + cy / (3.0 * a)]
    } else {
        let k = n as f64;
        [
            ring.iter().map(|p| p[0]).sum::<f64>() / k,
            ring.iter().map(|p| p[1]).sum::<f64>() / k,
        ]
    }
}

/// Even-odd ray casting.
fn point_in_ring(p: [f64; 2], ring: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl HeightIndex {
    pub fn from_records(records: impl IntoIterator<Item = HeightRecord>) -> Self {
        let mut index = HeightIndex::default();
        for r in records {
            index.push(r);
        }
        index
    }

    fn push(&mut self, r: HeightRecord) {
        if !(r.height.is_finite() && r.height > 0.0) {
            self.heightless += 1;
            return;
        }
        let Some(ring) = project(&r.footprint).filter(|ring| ring.len() >= 3) else {
            self.malformed += 1;
            return;
        };
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &ring {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        self.entries.push(Entry {
            centroid: centroid(&ring),
            ring,
            min,
            max,
            height: r.height,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn geo_ring(v: &Value) -> Option<Vec<GeoPoint>> {
    v.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            let (lon, lat) = (p.first()?.as_f64()?, p.get(1)?.as_f64()?);
            GeoPoint::checked(lon, lat).ok()
        })
        .collect()
}

/// Nesting depth of the first coordinate: 1 for a point, 2 for a ring, ...
fn depth(v: &Value) -> usize {
    match v.as_array().and_then(|a| a.first()) {
        Some(inner) => 1 + depth(inner),
        None if v.is_array() => 1,
        None => 0,
    }
}

fn outer_rings(geometry: &Value) -> Option<Vec<Vec<GeoPoint>>> {
    match depth(geometry) {
        2 => Some(vec![geo_ring(geometry)?]),
        3 => Some(vec![geo_ring(geometry.get(0)?)?]),
        4 => geometry.as_array()?.iter().map(|poly| geo_ring(poly.get(0)?)).collect(),
        _ => None,
    }
}

/// Parses one extract line into its records. `Ok(vec![])` means heightless.
fn parse_line(line: &str) -> Result<Vec<HeightRecord>, ()> {
    let v: Value = serde_json::from_str(line).map_err(|_| ())?;
    let height = match v.get("height") {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(h) => h.as_f64().ok_or(())?,
    };
    let rings = v.get("geometry").and_then(outer_rings).ok_or(())?;
    Ok(rings
        .into_iter()
        .map(|footprint| HeightRecord { footprint, height })
        .collect())
}

/// Loads an extract file. Malformed lines are skipped and counted.
pub fn load_heights(path: &Path) -> Result<HeightIndex, ProviderError> {
    let io = |e: std::io::Error| ProviderError::Io(format!("{}: {e}", path.display()));
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut index = HeightIndex::default();
    for line in reader.lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(records) if records.is_empty() => index.heightless += 1,
            Ok(records) => records.into_iter().for_each(|r| index.push(r)),
            Err(()) => index.malformed += 1,
        }
    }
    if index.malformed > 0 {
        log::warn!("{}: skipped {} malformed height records", path.display(), index.malformed);
    }
    Ok(index)
}

/// Height for a building footprint: the record containing its centroid (the
/// nearest-centroid one if several do), else the nearest record centroid
/// within [`MATCH_RADIUS_M`] ground meters.
pub fn match_height(footprint: &[GeoPoint], index: &HeightIndex) -> Option<f64> {
    if index.is_empty() {
        return None;
    }
    let ring = project(footprint).filter(|r| r.len() >= 3)?;
    let c = centroid(&ring);
    let dist2 = |e: &Entry| (e.centroid[0] - c[0]).powi(2) + (e.centroid[1] - c[1]).powi(2);
    let closer = |a: &&Entry, b: &&Entry| dist2(a).total_cmp(&dist2(b));

    if let Some(e) = index.entries.iter().filter(|e| e.contains(c)).min_by(closer) {
        return Some(e.height);
    }
    // Mercator meters stretch by 1/cos(lat).
    let lat = crate::geodesy::from_mercator(crate::geodesy::MercatorPoint::new(c[0], c[1])).ok()?.lat;
    let radius = MATCH_RADIUS_M / mercator_scale(lat);
    index
        .entries
        .iter()
        .min_by(closer)
        .filter(|e| dist2(e) <= radius * radius)
        .map(|e| e.height)
}
