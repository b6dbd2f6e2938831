//! Acceptance gate. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Random cases come from a fixed seed so failures reproduce.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use tower::ServiceExt;
use urban3d_core::geodesy::{from_mercator, to_mercator, GeoPoint};
use urban3d_core::geometry::{densify, drape, ear_clip, extrude, grid_mesh, LineKind};
use urban3d_core::pipeline::{Pipeline, PipelineConfig};
use urban3d_core::providers::{CapturingTransport, ReplayTransport};
use urban3d_core::raster::{decode_geotiff, DemGrid};
use urban3d_core::scene;

const SEED: u64 = 0x7e57_5eed;

const MERCATOR_X_180: f64 = 20_037_508.342_789_244;
const MERCATOR_TOL_M: f64 = 1e-6;
const ROUND_TRIP_TOL_DEG: f64 = 1e-9;
const PROJECTION_BUDGET: Duration = Duration::from_secs(1);

const GEOTIFF_BUDGET: Duration = Duration::from_secs(1);

const TERRAIN_CASES: usize = 1000;
const TERRAIN_MAX_DIM: usize = 50;
const TERRAIN_BUDGET: Duration = Duration::from_secs(10);

const EAR_CLIP_CASES: usize = 500;
const EAR_CLIP_MAX_N: usize = 20;
const AREA_REL_TOL: f64 = 1e-9;

const DRAPE_CASES: usize = 500;

const E2E_BUDGET: Duration = Duration::from_secs(5);
const TESTVILLE_STATS: &str =
    "we collect 16 records of elevations, 2 road segments, 1 power lines, and 2 buildings with height";

const LIVE_ENV: &str = "URBAN3D_LIVE";
const KEY_ENV: &str = "CENERGY_OPENTOPO_KEY";
const ROUSAY: &str = "Rousay-Orkney Islands-Scotland";
const ROUSAY_ELEVATIONS: f64 = 129_652.0;
const ROUSAY_FACTOR: f64 = 2.0;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> PathBuf {
    workspace().join("fixtures")
}

fn timed(start: Instant, budget: Duration, failures: Vec<String>, summary: String) -> Outcome {
    let took = start.elapsed();
    let mut failures = failures;
    if took > budget {
        failures.push(format!("took {took:.2?}, budget {budget:.0?}"));
    }
    if failures.is_empty() {
        Outcome::Pass(format!("{summary} in {took:.2?}"))
    } else {
        let shown: Vec<_> = failures.iter().take(3).cloned().collect();
        Outcome::Fail(format!("{} problem(s): {}", failures.len(), shown.join("; ")))
    }
}

fn projection() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let x = to_mercator(GeoPoint::new(180.0, 0.0)).unwrap().x;
    if (x - MERCATOR_X_180).abs() > MERCATOR_TOL_M {
        failures.push(format!("x(180) = {x}"));
    }
    let mut worst: f64 = 0.0;
    for lon in -180..=180 {
        for lat in -85..=85 {
            let p = GeoPoint::new(f64::from(lon), f64::from(lat));
            let back = from_mercator(to_mercator(p).unwrap()).unwrap();
            let err = (back.lon - p.lon).abs().max((back.lat - p.lat).abs());
            worst = worst.max(err);
            if err >= ROUND_TRIP_TOL_DEG {
                failures.push(format!("({lon}, {lat}) round-trip error {err:e}"));
            }
        }
    }
    timed(
        start,
        PROJECTION_BUDGET,
        failures,
        format!("x(180) = {x}, worst round-trip error {worst:.1e} deg over 361x171 grid"),
    )
}

/// Writes fixtures with the independent Python writer, or falls back to the
/// committed copies of its output when no interpreter is available.
fn tiff_source(dir: &Path) -> Result<(PathBuf, &'static str), String> {
    let script = workspace().join("tools/write_tiff_fixtures.py");
    match Command::new("python3").arg(&script).arg(dir).output() {
        Ok(out) if out.status.success() => Ok((dir.to_path_buf(), "fresh")),
        Ok(out) => Err(format!("fixture writer failed: {}", String::from_utf8_lossy(&out.stderr))),
        Err(_) => Ok((fixtures().join("tiff"), "committed")),
    }
}

fn geotiff_oracle() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, origin) = match tiff_source(tmp.path()) {
        Ok(v) => v,
        Err(e) => return Outcome::Fail(e),
    };
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut files = 0;
    let mut samples = 0;
    let mut kinds = std::collections::BTreeSet::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let tif = entry.unwrap().path();
        if tif.extension().is_none_or(|e| e != "tif") {
            continue;
        }
        files += 1;
        let name = tif.file_name().unwrap().to_string_lossy().to_string();
        let side: Value = serde_json::from_slice(&std::fs::read(tif.with_extension("json")).unwrap()).unwrap();
        let float = side["sample"] == "f32";
        kinds.insert((side["sample"].as_str().unwrap_or("?").to_string(), name.contains("deflate")));
        let grid = match decode_geotiff(&std::fs::read(&tif).unwrap()) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("{name}: {e}"));
                continue;
            }
        };
        let expected = side["expected"].as_array().unwrap();
        let mask = side["nodata_mask"].as_array().unwrap();
        if grid.values.len() != expected.len() {
            failures.push(format!("{name}: {} samples, expected {}", grid.values.len(), expected.len()));
            continue;
        }
        for (i, v) in grid.values.iter().enumerate() {
            let ok = if float {
                u64::from(v.to_bits()) == expected[i].as_u64().unwrap()
            } else {
                *v == expected[i].as_i64().unwrap() as f32
            };
            if !ok {
                failures.push(format!("{name}[{i}] = {v}"));
            }
            if grid.is_nodata(*v) != mask[i].as_bool().unwrap() {
                failures.push(format!("{name}[{i}] nodata flag"));
            }
        }
        samples += expected.len();
    }
    let needed = [("f32", false), ("f32", true), ("i16", false), ("i16", true)];
    for (sample, deflate) in needed {
        if !kinds.contains(&(sample.to_string(), deflate)) {
            failures.push(format!("no {sample} file with deflate={deflate}"));
        }
    }
    timed(
        start,
        GEOTIFF_BUDGET,
        failures,
        format!("{files} {origin} files, {samples} samples bit-exact"),
    )
}

fn random_grid(rng: &mut StdRng, rows: usize, cols: usize, hole_rate: f64) -> DemGrid {
    const ND: f32 = -9999.0;
    let values = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(hole_rate) {
                ND
            } else {
                rng.random_range(-30.0f32..1500.0)
            }
        })
        .collect();
    DemGrid::new(-3.2, 58.9, 0.000_277_8, 0.000_277_8, rows, cols, values, Some(ND)).unwrap()
}

/// Enumerates candidate triangles by pixel coordinates, independently of the
/// mesh builder's index bookkeeping.
fn brute_force_triangles(g: &DemGrid) -> (usize, Vec<[(usize, usize); 3]>) {
    let valid = |r: usize, c: usize| {
        let v = g.values[r * g.cols + c];
        !(v.is_nan() || Some(v) == g.nodata)
    };
    let vertices = (0..g.rows).flat_map(|r| (0..g.cols).map(move |c| (r, c))).filter(|&(r, c)| valid(r, c)).count();
    let mut tris = Vec::new();
    for r in 0..g.rows - 1 {
        for c in 0..g.cols - 1 {
            let (tl, tr, bl, br) = ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1));
            for cand in [[tl, bl, br], [tl, br, tr]] {
                if cand.iter().all(|&(r, c)| valid(r, c)) {
                    tris.push(cand);
                }
            }
        }
    }
    (vertices, tris)
}

fn terrain_mesh() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED);
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut triangles = 0;
    for case in 0..TERRAIN_CASES {
        let rows = rng.random_range(2..=TERRAIN_MAX_DIM);
        let cols = rng.random_range(2..=TERRAIN_MAX_DIM);
        let hole_rate = [0.0, 0.05, 0.3, 0.7, 1.0][case % 5];
        let grid = random_grid(&mut rng, rows, cols, hole_rate);
        let mesh = match grid_mesh(&grid) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let (vertices, expected) = brute_force_triangles(&grid);
        if mesh.vertices.len() != vertices || mesh.triangles.len() != expected.len() {
            failures.push(format!(
                "case {case} ({rows}x{cols}): {} vertices / {} triangles, expected {vertices} / {}",
                mesh.vertices.len(),
                mesh.triangles.len(),
                expected.len()
            ));
            continue;
        }
        if let Err(e) = mesh.validate() {
            failures.push(format!("case {case}: {e}"));
        }
        // Map mesh vertices back to pixels through their projected positions.
        let pixel_of: Vec<(usize, usize)> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| grid.is_valid(r, c))
            .collect();
        for (k, v) in mesh.vertices.iter().enumerate() {
            let (r, c) = pixel_of[k];
            let m = to_mercator(grid.pixel_center(r, c)).unwrap();
            if [v[0], v[1], v[2]] != [m.x, m.y, f64::from(grid.value(r, c))] {
                failures.push(format!("case {case}: vertex {k} is not pixel ({r}, {c})"));
                break;
            }
        }
        let got: Vec<[(usize, usize); 3]> = mesh.triangles.iter().map(|t| t.map(|i| pixel_of[i as usize])).collect();
        if got != expected {
            failures.push(format!("case {case}: triangle set differs"));
        }
        triangles += expected.len();
    }
    timed(
        start,
        TERRAIN_BUDGET,
        failures,
        format!("{TERRAIN_CASES} grids, {triangles} triangles match brute force"),
    )
}

fn star_polygon(rng: &mut StdRng, n: usize) -> Vec<[f64; 2]> {
    let slot = TAU / n as f64;
    let (cx, cy) = (rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
    let mut ring: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = (i as f64 + rng.random_range(0.05..0.85)) * slot;
            let r = rng.random_range(1.0..60.0);
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect();
    if rng.random_bool(0.5) {
        ring.reverse();
    }
    ring
}

fn shoelace(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

fn triangulation() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED ^ 1);
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..EAR_CLIP_CASES {
        let n = rng.random_range(3..=EAR_CLIP_MAX_N);
        let ring = star_polygon(&mut rng, n);
        let tris = match ear_clip(&ring) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("case {case} (N={n}): {e}"));
                continue;
            }
        };
        if tris.len() != n - 2 {
            failures.push(format!("case {case}: {} triangles for N={n}", tris.len()));
        }
        let summed: f64 = tris
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| ring[i as usize]);
                ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs() / 2.0
            })
            .sum();
        let area = shoelace(&ring);
        let rel = (summed - area).abs() / area;
        worst = worst.max(rel);
        if rel > AREA_REL_TOL {
            failures.push(format!("case {case}: relative area error {rel:e}"));
        }
    }
    timed(
        start,
        Duration::MAX,
        failures,
        format!("{EAR_CLIP_CASES} polygons, worst relative area error {worst:.1e}"),
    )
}

fn extrusion() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED ^ 2);
    let start = Instant::now();
    let mut failures = Vec::new();
    for n in 3..=12 {
        let ring = star_polygon(&mut rng, n);
        let base = rng.random_range(-20.0..900.0);
        let height = rng.random_range(2.0..120.0);
        let mesh = match extrude(&ring, base, height) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("N={n}: {e}"));
                continue;
            }
        };
        if mesh.vertices.len() != 2 * n || mesh.triangles.len() != 3 * n - 2 {
            failures.push(format!("N={n}: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len()));
            continue;
        }
        for k in 0..n {
            let (b, r) = (mesh.vertices[k][2], mesh.vertices[n + k][2]);
            if b != base || r != base + height {
                failures.push(format!("N={n}: vertex {k} base {b} roof {r}"));
            }
        }
    }
    timed(start, Duration::MAX, failures, "N = 3..12: 2N vertices, 3N-2 triangles, exact roof height".into())
}

fn drape_bounds() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED ^ 3);
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut points = 0;
    for case in 0..DRAPE_CASES {
        let rows = rng.random_range(2..=30);
        let cols = rng.random_range(2..=30);
        let grid = random_grid(&mut rng, rows, cols, [0.0, 0.1, 0.5][case % 3]);
        let Some((lo, hi)) = grid.valid_range() else {
            continue;
        };
        let (w, n) = (grid.lon0, grid.lat0);
        let (e, s) = (w + (cols - 1) as f64 * grid.dlon, n - (rows - 1) as f64 * grid.dlat);
        let margin = 2.0 * grid.dlon;
        let line: Vec<GeoPoint> = (0..rng.random_range(2..12))
            .map(|_| {
                GeoPoint::new(
                    rng.random_range(w - margin..e + margin),
                    rng.random_range(s - margin..n + margin),
                )
            })
            .collect();
        let offset = rng.random_range(-5.0..15.0);
        let line = densify(&line, 10.0).unwrap();
        if let Some(path) = drape(&line, &grid, offset, LineKind::Power) {
            for p in &path.points {
                let z = p[2] - offset;
                points += 1;
                if !(z >= f64::from(lo) && z <= f64::from(hi)) {
                    failures.push(format!("case {case}: z {z} outside [{lo}, {hi}]"));
                }
            }
        }
    }
    timed(start, Duration::MAX, failures, format!("{DRAPE_CASES} polylines, {points} draped points in range"))
}

fn end_to_end() -> Outcome {
    let golden = std::fs::read(fixtures().join("golden/testville.json")).unwrap();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_urban3d"))
        .args(["generate", "--place", "Testville", "--offline", "--fixtures"])
        .arg(fixtures().join("testville"))
        .args(["--out", "-"])
        .env_remove(KEY_ENV)
        .output()
        .unwrap();
    let mut failures = Vec::new();
    if !out.status.success() {
        failures.push(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    if out.stdout != golden {
        failures.push(format!("stdout ({} bytes) differs from golden ({} bytes)", out.stdout.len(), golden.len()));
    }
    let stderr = String::from_utf8_lossy(&out.stderr);
    if !stderr.lines().any(|l| l == TESTVILLE_STATS) {
        failures.push(format!("stats line missing from stderr: {stderr:?}"));
    }
    match scene::deserialize(&golden).and_then(|f| scene::serialize(&f)) {
        Ok(again) if again == golden => {}
        Ok(_) => failures.push("serialize(deserialize(golden)) differs".into()),
        Err(e) => failures.push(format!("golden does not round-trip: {e}")),
    }
    timed(
        start,
        E2E_BUDGET,
        failures,
        format!("{} bytes byte-identical to golden, stats {{16, 2, 1, 2}}", golden.len()),
    )
}

async fn fetch(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract() -> Outcome {
    let golden = std::fs::read(fixtures().join("golden/testville.json")).unwrap();
    let config = PipelineConfig {
        offline: true,
        fixture_dir: Some(fixtures().join("testville")),
        ..PipelineConfig::default()
    };
    let capture = Arc::new(CapturingTransport::new(ReplayTransport::new(fixtures().join("testville"))));
    let pipeline = Arc::new(Pipeline::with_transport(config, capture.clone()).unwrap());
    let app = urban3d_service::router(pipeline);
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let start = Instant::now();
    let mut failures = Vec::new();
    runtime.block_on(async {
        let (status, body) = fetch(&app, "/KEY/Testville").await;
        if status != StatusCode::OK || body != golden {
            failures.push(format!("Testville: {status}, {} bytes", body.len()));
        }
        let (status, body) = fetch(&app, "/KEY/NoSuchPlaceZZZ").await;
        let err: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        if status != StatusCode::NOT_FOUND || err["status"] != 404 || err["stage"] != "geocode" || !err["message"].is_string() {
            failures.push(format!("NoSuchPlaceZZZ: {status} {err}"));
        }
        let before = capture.count();
        let (status, body) = fetch(&app, "/KEY/Testville").await;
        let upstream = capture.count() - before;
        if status != StatusCode::OK || body != golden {
            failures.push(format!("repeat: {status}, {} bytes", body.len()));
        }
        if upstream != 0 {
            failures.push(format!("repeat made {upstream} upstream call(s)"));
        }
    });
    timed(
        start,
        Duration::MAX,
        failures,
        "200 + golden, 404 ApiError, repeat served from cache with 0 upstream calls".into(),
    )
}

fn live_magnitudes() -> Outcome {
    let key = std::env::var(KEY_ENV).unwrap_or_default();
    if std::env::var(LIVE_ENV).as_deref() != Ok("1") || key.is_empty() {
        return Outcome::Skip(format!("set {LIVE_ENV}=1 and {KEY_ENV} to run against live services"));
    }
    let start = Instant::now();
    let pipeline = match Pipeline::new(PipelineConfig::default()) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let stats = match pipeline.generate(ROUSAY, &key) {
        Ok((_, s)) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut failures = Vec::new();
    let counts = [stats.elevation_count, stats.road_segments, stats.power_lines, stats.buildings_with_height];
    if counts.contains(&0) {
        failures.push(format!("zero count in {counts:?}"));
    }
    let ratio = stats.elevation_count as f64 / ROUSAY_ELEVATIONS;
    if !(1.0 / ROUSAY_FACTOR..=ROUSAY_FACTOR).contains(&ratio) {
        failures.push(format!("elevation count {} is {ratio:.2}x the reference", stats.elevation_count));
    }
    timed(start, Duration::MAX, failures, stats.to_string())
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("projection correctness", projection),
        ("geotiff oracle", geotiff_oracle),
        ("terrain mesh counts", terrain_mesh),
        ("triangulation area preservation", triangulation),
        ("extrusion", extrusion),
        ("drape bounds", drape_bounds),
        ("end-to-end offline determinism", end_to_end),
        ("service contract", service_contract),
        ("live magnitudes (Rousay)", live_magnitudes),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Outcome::Pass(d) => println!("PASS  {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
