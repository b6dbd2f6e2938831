//! Clients for the upstream open-data services.
//!
//! Every client talks through a shared [`Transport`], so the same code runs
//! live, records fixtures, or replays them offline.

mod elevation;
mod geocoder;
mod heights;
mod overpass;
pub mod transport;

use thiserror::Error;

pub use elevation::{ElevationClient, OPENTOPO_ENDPOINT};
pub use geocoder::{normalize_place, Geocoder, PlaceResult, NOMINATIM_ENDPOINT};
pub use heights::{load_heights, match_height, HeightIndex, HeightRecord, MATCH_RADIUS_M};
pub use overpass::{overpass_query, parse_overpass, FeatureSelector, OsmWay, OverpassClient, OVERPASS_ENDPOINT};
pub use transport::{
    CapturingTransport, HttpRequest, HttpResponse, LiveTransport, RecordingTransport, ReplayTransport, Transport,
    TransportError,
};

/// Identifies requests from this tool, as the public endpoints require.
pub const USER_AGENT: &str = concat!("urban3d/", env!("CARGO_PKG_VERSION"), " (open-data 3D scene generator)");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bbox too large: {area:.4} square degrees exceeds the cap of {cap}")]
    BboxTooLarge { area: f64, cap: f64 },
    #[error("upstream rejected the API key")]
    InvalidKey,
    #[error("upstream rejected the request (HTTP {status}): {message}")]
    BadRequest { status: u16, message: String },
    #[error("upstream failure: {0}")]
    Upstream(String),
    #[error("upstream timeout: {0}")]
    Timeout(String),
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("fixture replay: {0}")]
    Fixture(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<TransportError> for ProviderError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout(m) => ProviderError::Timeout(m),
            TransportError::Network(m) => ProviderError::Upstream(m),
            e @ TransportError::Unmatched { .. } => ProviderError::Fixture(e.to_string()),
            TransportError::Io(m) => ProviderError::Io(m),
        }
    }
}

/// Maps a non-success status onto the error taxonomy shared by all clients.
fn status_error(resp: &HttpResponse) -> ProviderError {
    let message = String::from_utf8_lossy(&resp.body[..resp.body.len().min(300)]).trim().to_string();
    match resp.status {
        401 => ProviderError::InvalidKey,
        408 | 504 => ProviderError::Timeout(format!("HTTP {}", resp.status)),
        s @ 400..=499 => ProviderError::BadRequest { status: s, message },
        s => ProviderError::Upstream(format!("HTTP {s}: {message}")),
    }
}
