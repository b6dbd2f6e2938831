//! Mesh and path construction: terrain triangulation, polyline densification
//! and draping, footprint triangulation and prism extrusion.
//!
//! All outputs are in Web Mercator meters with z in meters above the DEM datum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{ground_distance, to_mercator, GeoPoint, GeodesyError};
use crate::raster::DemGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("grid must be at least 2x2, got {0}x{1}")]
    GridTooSmall(usize, usize),
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("densify step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("polygon has fewer than 3 distinct vertices")]
    Degenerate,
    #[error("polygon repeats vertex {0} consecutively")]
    RepeatedVertex(usize),
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("extrusion height must be positive and finite, got {0}")]
    BadHeight(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("triangle {index} is invalid: {reason}")]
    InvalidTriangle { index: usize, reason: String },
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Checks index bounds, distinct corners and finite coordinates.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self
            .vertices
            .iter()
            .any(|v| v.iter().any(|c| !c.is_finite()))
        {
            return Err(GeometryError::NonFinite);
        }
        let n = self.vertices.len();
        for (index, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(GeometryError::InvalidTriangle {
                    index,
                    reason: format!("{t:?} references a vertex >= {n}"),
                });
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(GeometryError::InvalidTriangle {
                    index,
                    reason: format!("{t:?} repeats a vertex"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Road,
    Power,
}

/// A 3D path in Mercator meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline3 {
    pub points: Vec<[f64; 3]>,
    pub kind: LineKind,
}

/// Triangulates the centers of adjacent valid pixels.
///
/// Vertices are the valid pixels in row-major order. Each 2x2 cell proposes
/// (TL, BL, BR) and (TL, BR, TR); a triangle is kept iff its three pixels are
/// valid.
pub fn grid_mesh(grid: &DemGrid) -> Result<TriMesh, GeometryError> {
    if grid.rows < 2 || grid.cols < 2 {
        return Err(GeometryError::GridTooSmall(grid.rows, grid.cols));
    }
    const NONE: u32 = u32::MAX;
    let mut index = vec![NONE; grid.rows * grid.cols];
    let mut vertices = Vec::with_capacity(grid.valid_count());
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            if !grid.is_valid(row, col) {
                continue;
            }
            let m = to_mercator(grid.pixel_center(row, col))?;
            index[row * grid.cols + col] = vertices.len() as u32;
            vertices.push([m.x, m.y, f64::from(grid.value(row, col))]);
        }
    }

    let mut triangles = Vec::new();
    for row in 0..grid.rows - 1 {
        for col in 0..grid.cols - 1 {
            let tl = index[row * grid.cols + col];
            let tr = index[row * grid.cols + col + 1];
            let bl = index[(row + 1) * grid.cols + col];
            let br = index[(row + 1) * grid.cols + col + 1];
            for tri in [[tl, bl, br], [tl, br, tr]] {
                if tri.iter().all(|&i| i != NONE) {
                    triangles.push(tri);
                }
            }
        }
    }
    Ok(TriMesh {
        vertices,
        triangles,
    })
}

/// Subdivides every segment into `ceil(length / max_step)` equal parts.
///
/// Lengths are ground meters (Mercator distance rescaled at the segment
/// midpoint latitude). Input points are always kept; zero-length segments
/// pass through untouched.
pub fn densify(points: &[GeoPoint], max_step: f64) -> Result<Vec<GeoPoint>, GeometryError> {
    if !(max_step > 0.0 && max_step.is_finite()) {
        return Err(GeometryError::BadStep(max_step));
    }
    if points.len() < 2 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }
    let mut out = Vec::with_capacity(points.len());
    out.push(points[0]);
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let length = ground_distance(a, b)?;
        let parts = if length > max_step {
            (length / max_step).ceil() as usize
        } else {
            1
        };
        for k in 1..parts {
            let t = k as f64 / parts as f64;
            out.push(GeoPoint::new(
                a.lon + (b.lon - a.lon) * t,
                a.lat + (b.lat - a.lat) * t,
            ));
        }
        out.push(b);
    }
    Ok(out)
}

/// Lifts points onto the terrain, dropping those without an elevation.
/// Returns `None` when fewer than two points survive.
pub fn drape(points: &[GeoPoint], grid: &DemGrid, z_offset: f64, kind: LineKind) -> Option<Polyline3> {
    let points: Vec<[f64; 3]> = points
        .iter()
        .filter_map(|&p| {
            let z = grid.sample_bilinear(p)?;
            let m = to_mercator(p).ok()?;
            Some([m.x, m.y, z + z_offset])
        })
        .collect();
    (points.len() >= 2).then_some(Polyline3 { points, kind })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection, touching and collinear overlap included.
fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// Rejects rings that are not simple polygons.
pub fn check_simple(ring: &[[f64; 2]]) -> Result<(), GeometryError> {
    let n = ring.len();
    if ring.iter().flatten().any(|c| !c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let mut distinct: Vec<[f64; 2]> = ring.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(GeometryError::Degenerate);
    }
    if let Some(i) = (0..n).find(|&i| ring[i] == ring[(i + 1) % n]) {
        return Err(GeometryError::RepeatedVertex(i));
    }
    if distinct.len() != n {
        // A vertex visited twice pinches the boundary.
        return Err(GeometryError::SelfIntersecting(0, 0));
    }
    for i in 0..n {
        let (a, b, c) = (ring[i], ring[(i + 1) % n], ring[(i + 2) % n]);
        // Adjacent edges may only share their common vertex: no fold-backs.
        let (u, v) = ([b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]]);
        if cross(a, b, c) == 0.0 && u[0] * v[0] + u[1] * v[1] < 0.0 {
            return Err(GeometryError::SelfIntersecting(i, (i + 1) % n));
        }
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

fn in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Ear-clipping triangulation of a simple polygon.
///
/// Returns exactly `N - 2` index triples into `ring`, each counter-clockwise,
/// whatever the winding of the input.
pub fn ear_clip(ring: &[[f64; 2]]) -> Result<Vec<[u32; 3]>, GeometryError> {
    if ring.len() < 3 {
        return Err(GeometryError::Degenerate);
    }
    check_simple(ring)?;
    let area = signed_area(ring);
    if area == 0.0 {
        return Err(GeometryError::ZeroArea);
    }
    let mut poly: Vec<usize> = (0..ring.len()).collect();
    if area < 0.0 {
        poly.reverse();
    }

    let mut out = Vec::with_capacity(ring.len() - 2);
    let mut start = 0;
    while poly.len() > 3 {
        let m = poly.len();
        let corner = |k: usize| {
            let prev = poly[(k + m - 1) % m];
            let next = poly[(k + 1) % m];
            (prev, poly[k], next)
        };
        let is_ear = |k: usize| {
            let (p, c, n) = corner(k);
            if cross(ring[p], ring[c], ring[n]) <= 0.0 {
                return false;
            }
            poly.iter()
                .filter(|&&v| v != p && v != c && v != n)
                .all(|&v| !in_triangle(ring[v], ring[p], ring[c], ring[n]))
        };
        let pick = (0..m)
            .map(|o| (start + o) % m)
            .find(|&k| is_ear(k))
            // Straight vertices can always go: the triangle is flat and the
            // remaining outline is unchanged.
            .or_else(|| {
                (0..m).find(|&k| {
                    let (p, c, n) = corner(k);
                    cross(ring[p], ring[c], ring[n]) == 0.0
                })
            })
            // Rounding can hide every ear on nearly degenerate input; fall back
            // to the most convex corner so the loop always terminates.
            .unwrap_or_else(|| {
                (0..m)
                    .max_by(|&a, &b| {
                        let (pa, ca, na) = corner(a);
                        let (pb, cb, nb) = corner(b);
                        cross(ring[pa], ring[ca], ring[na]).total_cmp(&cross(ring[pb], ring[cb], ring[nb]))
                    })
                    .unwrap()
            });
        let (p, c, n) = corner(pick);
        out.push([p as u32, c as u32, n as u32]);
        poly.remove(pick);
        start = pick % poly.len();
    }
    out.push([poly[0] as u32, poly[1] as u32, poly[2] as u32]);
    Ok(out)
}

/// Builds a flat-roofed prism: N base vertices at `base_z`, then N roof
/// vertices at `base_z + height`. Two wall triangles per edge plus the roof
/// triangulation; the base face is omitted.
pub fn extrude(ring: &[[f64; 2]], base_z: f64, height: f64) -> Result<TriMesh, GeometryError> {
    if !(height > 0.0 && height.is_finite()) {
        return Err(GeometryError::BadHeight(height));
    }
    if !base_z.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let roof = ear_clip(ring)?;
    let n = ring.len();
    let top = base_z + height;
    let mut vertices = Vec::with_capacity(2 * n);
    vertices.extend(ring.iter().map(|p| [p[0], p[1], base_z]));
    vertices.extend(ring.iter().map(|p| [p[0], p[1], top]));

    let ccw = signed_area(ring) > 0.0;
    let up = n as u32;
    let mut triangles = Vec::with_capacity(3 * n - 2);
    for i in 0..n as u32 {
        let j = (i + 1) % n as u32;
        // Outward-facing walls for either winding.
        let (a, b) = if ccw { (i, j) } else { (j, i) };
        triangles.push([a, b, b + up]);
        triangles.push([a, b + up, a + up]);
    }
    triangles.extend(roof.iter().map(|t| [t[0] + up, t[1] + up, t[2] + up]));
    Ok(TriMesh {
        vertices,
        triangles,
    })
}

/// Concatenates meshes, offsetting each mesh's indices by the vertices before it.
pub fn merge_meshes<'a>(meshes: impl IntoIterator<Item = &'a TriMesh>) -> TriMesh {
    let mut out = TriMesh::default();
    for m in meshes {
        let offset = out.vertices.len() as u32;
        out.vertices.extend_from_slice(&m.vertices);
        out.triangles
            .extend(m.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }
    out
}

/// How a footprint's base elevation is derived from the terrain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseElevation {
    /// Lowest sampled vertex: no corner of the building floats above ground.
    #[default]
    Min,
    Mean,
}

/// Samples the terrain under each footprint vertex and reduces the samples.
/// Vertices outside the DEM are ignored; `None` if none can be sampled.
pub fn footprint_base(grid: &DemGrid, ring: &[GeoPoint], rule: BaseElevation) -> Option<f64> {
    let samples: Vec<f64> = ring.iter().filter_map(|&p| grid.sample_bilinear(p)).collect();
    if samples.is_empty() {
        return None;
    }
    Some(match rule {
        BaseElevation::Min => samples.iter().copied().fold(f64::INFINITY, f64::min),
        BaseElevation::Mean => samples.iter().sum::<f64>() / samples.len() as f64,
    })
}
