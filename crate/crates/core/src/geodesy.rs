//! Spherical Web Mercator (EPSG:3857) transforms and geographic bounding boxes.
//!
//! Every geometry the crate emits is expressed in Web Mercator meters; upstream
//! data (DEM, OSM, height extracts) arrives as WGS84 longitude/latitude.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS84 semi-major axis, the sphere radius used by EPSG:3857.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Latitude at which the projected square world ends (y = R·π).
pub const MAX_LATITUDE: f64 = 85.051_128_78;

/// Half the projected world width, R·π.
pub const HALF_WORLD: f64 = EARTH_RADIUS * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("non-finite coordinate ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("ring needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate bounding box: west={west} south={south} east={east} north={north}")]
    Degenerate {
        west: f64,
        south: f64,
        east: f64,
        north: f64,
    },
    #[error("bounding box spans {0}° of longitude; antimeridian crossings are not supported")]
    Antimeridian(f64),
    #[error("coordinate out of range: lon={lon} lat={lat}")]
    OutOfRange { lon: f64, lat: f64 },
}

/// Longitude/latitude in degrees (EPSG:4326).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// Constructs a point, rejecting non-finite or out-of-range coordinates.
    pub fn checked(lon: f64, lat: f64) -> Result<Self, GeodesyError> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(GeodesyError::NonFinite(lon, lat));
        }
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(GeodesyError::OutOfRange { lon, lat });
        }
        Ok(Self { lon, lat })
    }
}

/// Web Mercator easting/northing in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MercatorPoint {
    pub x: f64,
    pub y: f64,
}

impl MercatorPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Projects a geographic point to Web Mercator. Latitude is clamped to
/// `±MAX_LATITUDE` first so the result stays inside the projected square.
pub fn to_mercator(p: GeoPoint) -> Result<MercatorPoint, GeodesyError> {
    if !p.lon.is_finite() || !p.lat.is_finite() {
        return Err(GeodesyError::NonFinite(p.lon, p.lat));
    }
    let lat = p.lat.clamp(-MAX_LATITUDE, MAX_LATITUDE);
    let x = EARTH_RADIUS * p.lon.to_radians();
    let s = lat.to_radians().sin();
    // Evaluated on |s| so the projection is exactly odd in latitude.
    let y = EARTH_RADIUS * s.abs().atanh().copysign(s);
    Ok(MercatorPoint { x, y })
}

pub fn from_mercator(p: MercatorPoint) -> Result<GeoPoint, GeodesyError> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(GeodesyError::NonFinite(p.x, p.y));
    }
    let lon = (p.x / EARTH_RADIUS).to_degrees();
    let t = p.y / EARTH_RADIUS;
    let lat = t.abs().sinh().atan().to_degrees().copysign(t);
    Ok(GeoPoint { lon, lat })
}

/// Ground distance represented by one Mercator meter at `lat` degrees.
pub fn mercator_scale(lat: f64) -> f64 {
    lat.clamp(-MAX_LATITUDE, MAX_LATITUDE).to_radians().cos()
}

/// Approximate ground distance in meters between two nearby points, measured
/// in Mercator space and rescaled at the midpoint latitude.
pub fn ground_distance(a: GeoPoint, b: GeoPoint) -> Result<f64, GeodesyError> {
    let ma = to_mercator(a)?;
    let mb = to_mercator(b)?;
    let planar = (mb.x - ma.x).hypot(mb.y - ma.y);
    Ok(planar * mercator_scale((a.lat + b.lat) / 2.0))
}

/// Geographic bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBBox {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl GeoBBox {
    pub fn new(west: f64, south: f64, east: f64, north: f64) -> Result<Self, GeodesyError> {
        for (lon, lat) in [(west, south), (east, north)] {
            GeoPoint::checked(lon, lat)?;
        }
        if !(west < east && south < north) {
            return Err(GeodesyError::Degenerate {
                west,
                south,
                east,
                north,
            });
        }
        if east - west > 180.0 {
            return Err(GeodesyError::Antimeridian(east - west));
        }
        Ok(Self {
            west,
            south,
            east,
            north,
        })
    }

    /// Area in square degrees.
    pub fn area(&self) -> f64 {
        (self.east - self.west) * (self.north - self.south)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.west && p.lon <= self.east && p.lat >= self.south && p.lat <= self.north
    }

    pub fn expand(&self, margin: f64) -> GeoBBox {
        GeoBBox {
            west: self.west - margin,
            south: self.south - margin,
            east: self.east + margin,
            north: self.north + margin,
        }
    }
}

/// Componentwise min/max over a ring (or any point sequence of length ≥ 3).
pub fn bbox_of_ring(ring: &[GeoPoint]) -> Result<GeoBBox, GeodesyError> {
    if ring.len() < 3 {
        return Err(GeodesyError::TooFewPoints(ring.len()));
    }
    let mut west = f64::INFINITY;
    let mut south = f64::INFINITY;
    let mut east = f64::NEG_INFINITY;
    let mut north = f64::NEG_INFINITY;
    for p in ring {
        let p = GeoPoint::checked(p.lon, p.lat)?;
        west = west.min(p.lon);
        east = east.max(p.lon);
        south = south.min(p.lat);
        north = north.max(p.lat);
    }
    GeoBBox::new(west, south, east, north)
}
