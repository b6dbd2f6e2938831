use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::Value;

use super::{status_error, HttpRequest, ProviderError, Transport, USER_AGENT};
use crate::geodesy::{bbox_of_ring, GeoBBox, GeoPoint};

pub const NOMINATIM_ENDPOINT: &str = "https://nominatim.openstreetmap.org/search";

/// Turns the URL-friendly `Rousay-Orkney Islands-Scotland` form into the
/// geocoder query `Rousay, Orkney Islands, Scotland`. Strings that already
/// contain a comma pass through (trimmed) untouched.
pub fn normalize_place(place: &str) -> String {
    let place = place.trim();
    if place.contains(',') {
        return place.to_string();
    }
    place
        .split('-')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceResult {
    pub display_name: String,
    /// Outer rings of the place boundary.
    pub boundary: Vec<Vec<GeoPoint>>,
    pub bbox: GeoBBox,
}

#[derive(Deserialize)]
struct SearchHit {
    #[serde(default)]
    display_name: String,
    geojson: Option<Value>,
}

fn ring_from(v: &Value) -> Option<Vec<GeoPoint>> {
    v.as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            Some(GeoPoint::new(p.first()?.as_f64()?, p.get(1)?.as_f64()?))
        })
        .collect()
}

/// Outer rings of a GeoJSON Polygon or MultiPolygon; `None` for other types.
fn outer_rings(geojson: &Value) -> Result<Option<Vec<Vec<GeoPoint>>>, ProviderError> {
    let coords = geojson.get("coordinates");
    let malformed = || ProviderError::Parse("malformed polygon coordinates".into());
    let rings = match geojson.get("type").and_then(Value::as_str) {
        Some("Polygon") => {
            let outer = coords.and_then(|c| c.get(0)).ok_or_else(malformed)?;
            vec![ring_from(outer).ok_or_else(malformed)?]
        }
        Some("MultiPolygon") => coords
            .and_then(Value::as_array)
            .ok_or_else(malformed)?
            .iter()
            .map(|poly| poly.get(0).and_then(ring_from).ok_or_else(malformed))
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Ok(None),
    };
    Ok(Some(rings))
}

/// Parses a `format=jsonv2&polygon_geojson=1` search response.
pub(crate) fn parse_search(body: &[u8], query: &str) -> Result<PlaceResult, ProviderError> {
    let hits: Vec<SearchHit> = serde_json::from_slice(body).map_err(|e| ProviderError::Parse(e.to_string()))?;
    if hits.is_empty() {
        return Err(ProviderError::NotFound(format!("no geocoder result for {query:?}")));
    }
    for hit in &hits {
        let Some(geojson) = &hit.geojson else { continue };
        let Some(boundary) = outer_rings(geojson)? else { continue };
        let all: Vec<GeoPoint> = boundary.iter().flatten().copied().collect();
        let bbox = bbox_of_ring(&all).map_err(|e| ProviderError::Parse(format!("boundary of {query:?}: {e}")))?;
        return Ok(PlaceResult {
            display_name: hit.display_name.clone(),
            boundary,
            bbox,
        });
    }
    Err(ProviderError::NotFound(format!("no polygon boundary for {query:?}")))
}

/// Nominatim forward geocoder returning polygon boundaries.
pub struct Geocoder {
    transport: Arc<dyn Transport>,
    endpoint: String,
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl Geocoder {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self::with_endpoint(transport, NOMINATIM_ENDPOINT)
    }

    pub fn with_endpoint(transport: Arc<dyn Transport>, endpoint: impl Into<String>) -> Self {
        Self {
            transport,
            endpoint: endpoint.into(),
            min_interval: Duration::ZERO,
            last: Mutex::new(None),
        }
    }

    /// Spaces consecutive requests at least `interval` apart.
    pub fn with_min_interval(mut self, interval: Duration) -> Self {
        self.min_interval = interval;
        self
    }

    pub fn request_for(&self, query: &str) -> HttpRequest {
        let q: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
        HttpRequest::get(format!(
            "{}?q={q}&format=jsonv2&polygon_geojson=1&limit=5",
            self.endpoint
        ))
        .header("User-Agent", USER_AGENT)
    }

    pub fn geocode(&self, place: &str) -> Result<PlaceResult, ProviderError> {
        let query = normalize_place(place);
        if query.is_empty() {
            return Err(ProviderError::InvalidInput("empty place name".into()));
        }
        let req = self.request_for(&query);
        let resp = {
            let mut last = self.last.lock().unwrap();
            if let Some(t) = *last {
                let wait = self.min_interval.saturating_sub(t.elapsed());
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            let resp = self.transport.execute(&req);
            *last = Some(Instant::now());
            resp?
        };
        if !resp.is_success() {
            return Err(status_error(&resp));
        }
        parse_search(&resp.body, &query)
    }
}
