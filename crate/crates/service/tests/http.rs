use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;
use urban3d_core::pipeline::{Pipeline, PipelineConfig};
use urban3d_core::providers::{
    CapturingTransport, HttpRequest, HttpResponse, ReplayTransport, Transport, TransportError,
};
use urban3d_service::{router, router_with, ServiceOptions, CACHE_HEADER, STATS_HEADER};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn offline_config() -> PipelineConfig {
    PipelineConfig {
        offline: true,
        fixture_dir: Some(fixtures().join("testville")),
        ..PipelineConfig::default()
    }
}

fn replaying(config: PipelineConfig) -> (Arc<CapturingTransport<ReplayTransport>>, Arc<Pipeline>) {
    let capture = Arc::new(CapturingTransport::new(ReplayTransport::new(fixtures().join("testville"))));
    let pipeline = Pipeline::with_transport(config, capture.clone()).unwrap();
    (capture, Arc::new(pipeline))
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

async fn get(app: &Router, uri: &str) -> Reply {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn testville_matches_golden_and_is_cached() {
    let golden = std::fs::read(fixtures().join("golden/testville.json")).unwrap();
    let (capture, pipeline) = replaying(offline_config());
    let app = router(pipeline);

    let health = get(&app, "/health").await;
    assert_eq!(health.status, StatusCode::OK);
    assert_eq!(json(&health.body), serde_json::json!({"status": "ok", "cache_entries": 0}));

    let first = get(&app, "/KEY/Testville").await;
    assert_eq!(first.status, StatusCode::OK);
    assert_eq!(first.body, golden);
    assert_eq!(first.headers["content-type"], "application/json");
    assert_eq!(first.headers["access-control-allow-origin"], "*");
    assert_eq!(first.headers[CACHE_HEADER], "miss");
    assert_eq!(
        first.headers[STATS_HEADER],
        "we collect 16 records of elevations, 2 road segments, 1 power lines, and 2 buildings with height"
    );
    let upstream = capture.count();
    assert_eq!(upstream, 5);

    let second = get(&app, "/KEY/Testville").await;
    assert_eq!(second.status, StatusCode::OK);
    assert_eq!(second.body, first.body);
    assert_eq!(second.headers[CACHE_HEADER], "hit");
    assert_eq!(capture.count(), upstream, "cache hit must not reach upstream");

    let health = get(&app, "/health").await;
    assert_eq!(json(&health.body)["cache_entries"], 1);
}

#[tokio::test]
async fn unknown_place_is_404_at_geocode() {
    let (_, pipeline) = replaying(offline_config());
    let app = router(pipeline);
    let r = get(&app, "/KEY/NoSuchPlaceZZZ").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.headers["access-control-allow-origin"], "*");
    let body = json(&r.body);
    assert_eq!(body["status"], 404);
    assert_eq!(body["stage"], "geocode");
    assert!(body["message"].as_str().unwrap().contains("NoSuchPlaceZZZ"));
}

#[tokio::test]
async fn place_is_percent_decoded() {
    let (_, pipeline) = replaying(offline_config());
    let app = router(pipeline);
    assert_eq!(get(&app, "/KEY/Test%76ille").await.status, StatusCode::OK);
    let r = get(&app, "/KEY/%20-%20").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(json(&r.body)["status"], 400);
}

#[tokio::test]
async fn api_key_only_reaches_the_elevation_service() {
    let (capture, pipeline) = replaying(offline_config());
    let app = router(pipeline);
    assert_eq!(get(&app, "/S3CRET-KEY/Testville").await.status, StatusCode::OK);
    let requests = capture.requests();
    assert!(!requests.is_empty());
    for req in requests {
        let leaks = req.url.contains("S3CRET") || String::from_utf8_lossy(&req.body).contains("S3CRET");
        assert_eq!(leaks, req.url.starts_with("https://portal.opentopography.org/"), "{}", req.url);
    }
}

#[tokio::test]
async fn oversized_bbox_is_422_before_the_dem_fetch() {
    let (capture, pipeline) = replaying(PipelineConfig {
        max_bbox_area: 1e-7,
        ..offline_config()
    });
    let app = router(pipeline);
    let r = get(&app, "/KEY/Testville").await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&r.body)["stage"], "bbox");
    assert_eq!(capture.count(), 1, "only the geocoder was called");
}

#[tokio::test]
async fn concurrent_requests_agree() {
    let golden = std::fs::read(fixtures().join("golden/testville.json")).unwrap();
    let (_, pipeline) = replaying(offline_config());
    let app = router_with(
        pipeline,
        ServiceOptions {
            max_concurrent: 2,
            ..ServiceOptions::default()
        },
    );
    let mut tasks = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        let uri = if i % 2 == 0 { "/KEY/Testville" } else { "/health" };
        tasks.push(tokio::spawn(async move { (uri, get(&app, uri).await) }));
    }
    for t in tasks {
        let (uri, r) = t.await.unwrap();
        assert_eq!(r.status, StatusCode::OK);
        if uri != "/health" {
            assert_eq!(r.body, golden);
        }
    }
}

/// Serves Testville from fixtures and a second synthetic place, Otherville,
/// whose boundary is a sub-square of Testville with no power lines or buildings.
struct TwoPlaces {
    testville: ReplayTransport,
}

impl Transport for TwoPlaces {
    fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let body = String::from_utf8_lossy(&req.body);
        if req.url.contains("q=Otherville") {
            return Ok(HttpResponse::ok(
                r#"[{"display_name":"Otherville","boundingbox":["59.9004","59.9026","10.0004","10.0026"],"geojson":{"type":"Polygon","coordinates":[[[10.0004,59.9004],[10.0026,59.9004],[10.0026,59.9026],[10.0004,59.9026],[10.0004,59.9004]]]}}]"#,
            ));
        }
        if req.url.contains("south=59.9004") {
            return Ok(HttpResponse {
                status: 200,
                body: std::fs::read(fixtures().join("source/testville_dem.tif")).unwrap(),
            });
        }
        if body.contains("(59.9004,10.0004,59.9026,10.0026)") {
            let roads = std::fs::read(fixtures().join("source/osm_roads.json")).unwrap();
            return Ok(if body.contains(r#"way["highway"]"#) {
                HttpResponse { status: 200, body: roads }
            } else {
                HttpResponse::ok(r#"{"elements":[]}"#)
            });
        }
        self.testville.execute(req)
    }
}

#[tokio::test]
async fn concurrent_distinct_places_do_not_interfere() {
    let golden = std::fs::read(fixtures().join("golden/testville.json")).unwrap();
    let transport = TwoPlaces {
        testville: ReplayTransport::new(fixtures().join("testville")),
    };
    let pipeline = Pipeline::with_transport(offline_config(), Arc::new(transport)).unwrap();
    let app = router(Arc::new(pipeline));
    let mut tasks = Vec::new();
    for i in 0..6 {
        let app = app.clone();
        let place = if i % 2 == 0 { "Testville" } else { "Otherville" };
        tasks.push(tokio::spawn(async move { (place, get(&app, &format!("/KEY/{place}")).await) }));
    }
    for t in tasks {
        let (place, r) = t.await.unwrap();
        assert_eq!(r.status, StatusCode::OK, "{place}");
        let stats = r.headers[STATS_HEADER].to_str().unwrap();
        if place == "Testville" {
            assert_eq!(r.body, golden);
            assert!(stats.contains("16 records of elevations, 2 road segments, 1 power lines, and 2 buildings"));
        } else {
            assert_ne!(r.body, golden);
            assert!(stats.contains("16 records of elevations, 2 road segments, 0 power lines, and 0 buildings"), "{stats}");
            let fig = json(&r.body);
            assert_eq!(fig["layout"]["title"], "Otherville");
        }
    }
}

struct Slow;

impl Transport for Slow {
    fn execute(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
        std::thread::sleep(Duration::from_millis(500));
        Ok(HttpResponse::ok("[]"))
    }
}

#[tokio::test]
async fn slow_upstream_times_out_with_504() {
    let pipeline = Pipeline::with_transport(offline_config(), Arc::new(Slow)).unwrap();
    let app = router_with(
        Arc::new(pipeline),
        ServiceOptions {
            timeout: Duration::from_millis(50),
            ..ServiceOptions::default()
        },
    );
    let r = get(&app, "/KEY/Anywhere").await;
    assert_eq!(r.status, StatusCode::GATEWAY_TIMEOUT);
    assert_eq!(json(&r.body)["status"], 504);
}

#[tokio::test]
async fn upstream_failure_is_502_with_stage() {
    struct Refuse;
    impl Transport for Refuse {
        fn execute(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
            Ok(HttpResponse {
                status: 401,
                body: b"bad key".to_vec(),
            })
        }
    }
    let pipeline = Pipeline::with_transport(offline_config(), Arc::new(Refuse)).unwrap();
    let app = router(Arc::new(pipeline));
    let r = get(&app, "/KEY/Testville").await;
    assert_eq!(r.status, StatusCode::BAD_GATEWAY);
    assert_eq!(json(&r.body)["stage"], "geocode");
}
