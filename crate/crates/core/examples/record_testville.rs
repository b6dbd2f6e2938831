//! Rebuilds the offline Testville fixture set from the hand-written upstream
//! responses in `fixtures/source/`.
//!
//! ```text
//! cargo run -p urban3d-core --example record_testville -- fixtures
//! ```
//!
//! Writes `fixtures/testville/` (hashed request/response pairs plus
//! `heights.jsonl`) and `fixtures/golden/testville.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use urban3d_core::pipeline::{Pipeline, PipelineConfig};
use urban3d_core::providers::{
    HttpRequest, HttpResponse, RecordingTransport, Transport, TransportError, NOMINATIM_ENDPOINT,
    OPENTOPO_ENDPOINT, OVERPASS_ENDPOINT,
};
use urban3d_core::scene;

/// Answers the handful of requests a Testville run makes from static files.
struct Static {
    source: PathBuf,
}

impl Static {
    fn file(&self, name: &str) -> Result<HttpResponse, TransportError> {
        fs::read(self.source.join(name))
            .map(HttpResponse::ok)
            .map_err(|e| TransportError::Io(format!("{name}: {e}")))
    }
}

impl Transport for Static {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let body = String::from_utf8_lossy(&req.body);
        if req.url.starts_with(NOMINATIM_ENDPOINT) {
            if req.url.contains("q=Testville&") {
                return self.file("testville_geocode.json");
            }
            return Ok(HttpResponse::ok("[]"));
        }
        if req.url.starts_with(OPENTOPO_ENDPOINT) {
            return self.file("testville_dem.tif");
        }
        if req.url == OVERPASS_ENDPOINT {
            if body.contains(r#"way["highway"]"#) {
                return self.file("osm_roads.json");
            }
            if body.contains(r#"way["power"~"#) {
                return self.file("osm_power.json");
            }
            if body.contains(r#"way["building"]"#) {
                return self.file("osm_buildings.json");
            }
        }
        Err(TransportError::Network(format!("no static response for {}", req.url)))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let source = root.join("source");
    let out = root.join("testville");
    if out.exists() {
        fs::remove_dir_all(&out)?;
    }
    fs::create_dir_all(&out)?;
    fs::copy(source.join("testville_heights.jsonl"), out.join("heights.jsonl"))?;

    let recorder = RecordingTransport::new(Static { source }, &out);
    let config = PipelineConfig {
        fixture_dir: Some(out.clone()),
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::with_transport(config, Arc::new(recorder))?;
    let (figure, stats) = pipeline.generate("Testville", "RECORDING")?;
    println!("{stats}");
    match pipeline.generate("NoSuchPlaceZZZ", "RECORDING") {
        Err(e) => println!("NoSuchPlaceZZZ: {e}"),
        Ok(_) => return Err("NoSuchPlaceZZZ unexpectedly resolved".into()),
    }

    let golden = root.join("golden");
    fs::create_dir_all(&golden)?;
    write(&golden.join("testville.json"), &scene::serialize(&figure)?)?;
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    fs::write(path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}
