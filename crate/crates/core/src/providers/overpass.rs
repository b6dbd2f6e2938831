use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{status_error, HttpRequest, ProviderError, Transport, USER_AGENT};
use crate::geodesy::{GeoBBox, GeoPoint};

pub const OVERPASS_ENDPOINT: &str = "https://overpass-api.de/api/interpreter";

/// The three vector layers pulled from OpenStreetMap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSelector {
    Roads,
    PowerLines,
    Buildings,
}

impl FeatureSelector {
    pub const ALL: [FeatureSelector; 3] = [Self::Roads, Self::PowerLines, Self::Buildings];

    fn filter(self) -> &'static str {
        match self {
            Self::Roads => r#"way["highway"]"#,
            Self::PowerLines => r#"way["power"~"^(line|minor_line|cable)$"]"#,
            Self::Buildings => r#"way["building"]"#,
        }
    }
}

/// Overpass QL for one layer over `bbox`.
pub fn overpass_query(bbox: &GeoBBox, selector: FeatureSelector) -> String {
    format!(
        "[out:json][timeout:90];{}({},{},{},{});out geom;",
        selector.filter(),
        bbox.south,
        bbox.west,
        bbox.north,
        bbox.east
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsmWay {
    pub id: i64,
    pub tags: BTreeMap<String, String>,
    pub geometry: Vec<GeoPoint>,
}

impl OsmWay {
    pub fn is_closed(&self) -> bool {
        self.geometry.len() >= 4 && self.geometry.first() == self.geometry.last()
    }

    /// Footprint ring without the closing duplicate.
    pub fn ring(&self) -> &[GeoPoint] {
        if self.is_closed() {
            &self.geometry[..self.geometry.len() - 1]
        } else {
            &self.geometry
        }
    }
}

#[derive(Deserialize)]
struct Response {
    elements: Vec<Element>,
}

#[derive(Deserialize)]
struct Element {
    #[serde(rename = "type")]
    kind: String,
    id: i64,
    #[serde(default)]
    tags: BTreeMap<String, String>,
    #[serde(default)]
    geometry: Vec<Option<LatLon>>,
}

#[derive(Deserialize)]
struct LatLon {
    lat: f64,
    lon: f64,
}

/// Parses an `out geom` JSON response, keeping ways usable for `selector`:
/// closed rings for buildings, at least two points for lines.
pub fn parse_overpass(body: &[u8], selector: FeatureSelector) -> Result<Vec<OsmWay>, ProviderError> {
    let resp: Response = serde_json::from_slice(body).map_err(|e| ProviderError::Parse(e.to_string()))?;
    Ok(resp
        .elements
        .into_iter()
        .filter(|e| e.kind == "way")
        .map(|e| OsmWay {
            id: e.id,
            tags: e.tags,
            // Nodes outside a clipped output come back as null.
            geometry: e.geometry.into_iter().flatten().map(|p| GeoPoint::new(p.lon, p.lat)).collect(),
        })
        .filter(|w| match selector {
            FeatureSelector::Buildings => w.is_closed(),
            _ => w.geometry.len() >= 2,
        })
        .collect())
}

/// Overpass client: one request in flight at a time, exponential backoff on
/// HTTP 429 and 504.
pub struct OverpassClient {
    transport: Arc<dyn Transport>,
    endpoint: String,
    gate: Mutex<()>,
    backoff: Duration,
    max_retries: u32,
}

impl OverpassClient {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self::with_endpoint(transport, OVERPASS_ENDPOINT)
    }

    pub fn with_endpoint(transport: Arc<dyn Transport>, endpoint: impl Into<String>) -> Self {
        Self {
            transport,
            endpoint: endpoint.into(),
            gate: Mutex::new(()),
            backoff: Duration::from_secs(2),
            max_retries: 4,
        }
    }

    pub fn with_backoff(mut self, base: Duration, max_retries: u32) -> Self {
        self.backoff = base;
        self.max_retries = max_retries;
        self
    }

    pub fn request_for(&self, bbox: &GeoBBox, selector: FeatureSelector) -> HttpRequest {
        HttpRequest::post(self.endpoint.clone(), overpass_query(bbox, selector)).header("User-Agent", USER_AGENT)
    }

    pub fn fetch_osm(&self, bbox: &GeoBBox, selector: FeatureSelector) -> Result<Vec<OsmWay>, ProviderError> {
        let req = self.request_for(bbox, selector);
        let _turn = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        let mut attempt = 0;
        let resp = loop {
            let resp = self.transport.execute(&req)?;
            if matches!(resp.status, 429 | 504) && attempt < self.max_retries {
                let wait = self.backoff * 2u32.pow(attempt);
                log::warn!("overpass answered {}; retrying in {wait:?}", resp.status);
                std::thread::sleep(wait);
                attempt += 1;
                continue;
            }
            break resp;
        };
        if !resp.is_success() {
            return Err(status_error(&resp));
        }
        parse_overpass(&resp.body, selector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{HttpResponse, TransportError};
    use std::sync::atomic::{AtomicU32, Ordering};

    fn bbox() -> GeoBBox {
        GeoBBox::new(10.0, 59.9, 10.01, 59.91).unwrap()
    }

    #[test]
    fn queries() {
        assert_eq!(
            overpass_query(&bbox(), FeatureSelector::Roads),
            r#"[out:json][timeout:90];way["highway"](59.9,10,59.91,10.01);out geom;"#
        );
        assert_eq!(
            overpass_query(&bbox(), FeatureSelector::PowerLines),
            r#"[out:json][timeout:90];way["power"~"^(line|minor_line|cable)$"](59.9,10,59.91,10.01);out geom;"#
        );
        assert_eq!(
            overpass_query(&bbox(), FeatureSelector::Buildings),
            r#"[out:json][timeout:90];way["building"](59.9,10,59.91,10.01);out geom;"#
        );
    }

    const MIXED: &str = r#"{"version":0.6,"elements":[
        {"type":"node","id":1,"lat":1,"lon":1},
        {"type":"way","id":10,"tags":{"building":"yes"},"geometry":[{"lat":0,"lon":0},{"lat":0,"lon":1},{"lat":1,"lon":1},{"lat":0,"lon":0}]},
        {"type":"way","id":11,"tags":{"building":"yes"},"geometry":[{"lat":0,"lon":0},{"lat":0,"lon":1},{"lat":1,"lon":1}]},
        {"type":"way","id":12,"tags":{"highway":"path"},"geometry":[{"lat":0,"lon":0},null,{"lat":1,"lon":1}]},
        {"type":"way","id":13,"geometry":[{"lat":0,"lon":0}]}
    ]}"#;

    #[test]
    fn buildings_keep_only_closed_ways() {
        let ways = parse_overpass(MIXED.as_bytes(), FeatureSelector::Buildings).unwrap();
        assert_eq!(ways.iter().map(|w| w.id).collect::<Vec<_>>(), vec![10]);
        assert_eq!(ways[0].ring().len(), 3);
    }

    #[test]
    fn lines_need_two_points_and_skip_nulls() {
        let ways = parse_overpass(MIXED.as_bytes(), FeatureSelector::Roads).unwrap();
        assert_eq!(ways.iter().map(|w| w.id).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert_eq!(ways[2].geometry.len(), 2);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_overpass(br#"{"elements":[]}"#, FeatureSelector::PowerLines).unwrap().is_empty());
        assert!(matches!(parse_overpass(b"<html>", FeatureSelector::Roads), Err(ProviderError::Parse(_))));
    }

    struct Busy {
        calls: AtomicU32,
        busy_for: u32,
    }
    impl Transport for Busy {
        fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
            assert!(String::from_utf8_lossy(&req.body).starts_with("[out:json]"));
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(if n < self.busy_for {
                HttpResponse {
                    status: 429,
                    body: Vec::new(),
                }
            } else {
                HttpResponse::ok(r#"{"elements":[]}"#)
            })
        }
    }

    #[test]
    fn backs_off_on_rate_limit() {
        let t = Arc::new(Busy {
            calls: AtomicU32::new(0),
            busy_for: 2,
        });
        let c = OverpassClient::new(t.clone()).with_backoff(Duration::from_millis(1), 3);
        assert!(c.fetch_osm(&bbox(), FeatureSelector::Roads).unwrap().is_empty());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);

        let t = Arc::new(Busy {
            calls: AtomicU32::new(0),
            busy_for: 10,
        });
        let c = OverpassClient::new(t.clone()).with_backoff(Duration::from_millis(1), 2);
        assert!(matches!(
            c.fetch_osm(&bbox(), FeatureSelector::Roads),
            Err(ProviderError::BadRequest { status: 429, .. })
        ));
    }
}
