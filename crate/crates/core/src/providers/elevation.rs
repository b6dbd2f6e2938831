use std::sync::Arc;

use super::{status_error, HttpRequest, ProviderError, Transport, USER_AGENT};
use crate::geodesy::GeoBBox;

pub const OPENTOPO_ENDPOINT: &str = "https://portal.opentopography.org/API/globaldem";

/// OpenTopography global DEM client (COP30, GeoTIFF output).
pub struct ElevationClient {
    transport: Arc<dyn Transport>,
    endpoint: String,
    max_area: f64,
}

impl ElevationClient {
    pub fn new(transport: Arc<dyn Transport>, max_area: f64) -> Self {
        Self::with_endpoint(transport, OPENTOPO_ENDPOINT, max_area)
    }

    pub fn with_endpoint(transport: Arc<dyn Transport>, endpoint: impl Into<String>, max_area: f64) -> Self {
        Self {
            transport,
            endpoint: endpoint.into(),
            max_area,
        }
    }

    pub fn request_for(&self, bbox: &GeoBBox, api_key: &str) -> HttpRequest {
        let key: String = url::form_urlencoded::byte_serialize(api_key.as_bytes()).collect();
        HttpRequest::get(format!(
            "{}?demtype=COP30&south={}&north={}&west={}&east={}&outputFormat=GTiff&API_Key={key}",
            self.endpoint, bbox.south, bbox.north, bbox.west, bbox.east
        ))
        .header("User-Agent", USER_AGENT)
    }

    /// Raw GeoTIFF bytes covering `bbox`. Empty keys and oversized boxes are
    /// rejected before any request is made.
    pub fn fetch_dem(&self, bbox: &GeoBBox, api_key: &str) -> Result<Vec<u8>, ProviderError> {
        if api_key.trim().is_empty() {
            return Err(ProviderError::InvalidInput("empty API key".into()));
        }
        let area = bbox.area();
        if area > self.max_area {
            return Err(ProviderError::BboxTooLarge {
                area,
                cap: self.max_area,
            });
        }
        let resp = self.transport.execute(&self.request_for(bbox, api_key))?;
        if !resp.is_success() {
            return Err(status_error(&resp));
        }
        Ok(resp.body)
    }
}
