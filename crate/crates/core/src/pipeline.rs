//! End-to-end scene generation: geocode, DEM, OSM layers, heights, meshes,
//! figure. Also hosts the in-memory figure cache shared by the service.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geodesy::{to_mercator, GeoPoint};
use crate::geometry::{self, BaseElevation, GeometryError, LineKind, Polyline3, TriMesh};
use crate::providers::{
    load_heights, match_height, normalize_place, ElevationClient, FeatureSelector, Geocoder, HeightIndex,
    LiveTransport, OsmWay, OverpassClient, ProviderError, RecordingTransport, ReplayTransport, Transport,
};
use crate::raster::{decode_geotiff, RasterError};
use crate::scene::{self, Figure, SceneError};

/// Conventional extract name picked up from the fixture directory when no
/// explicit extract is configured.
pub const FIXTURE_HEIGHTS: &str = "heights.jsonl";

/// Stand-in elevation key for offline runs; fixture hashes ignore the key.
const OFFLINE_KEY: &str = "offline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Square degrees.
    pub max_bbox_area: f64,
    /// Meters between draped polyline vertices.
    pub densify_step: f64,
    pub road_offset: f64,
    pub power_offset: f64,
    /// Meters, used when no extract height matches a footprint.
    pub default_height: f64,
    pub height_extract: Option<PathBuf>,
    /// Seconds.
    pub cache_ttl: u64,
    pub offline: bool,
    pub fixture_dir: Option<PathBuf>,
    pub base_elevation: BaseElevation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_bbox_area: 0.05,
            densify_step: 30.0,
            road_offset: 0.5,
            power_offset: 10.0,
            default_height: 8.0,
            height_extract: None,
            cache_ttl: 86_400,
            offline: false,
            fixture_dir: None,
            base_elevation: BaseElevation::Min,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("max_bbox_area", self.max_bbox_area),
            ("densify_step", self.densify_step),
            ("road_offset", self.road_offset),
            ("power_offset", self.power_offset),
            ("default_height", self.default_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be a positive number, got {v}"));
            }
        }
        if self.cache_ttl == 0 {
            return Err("cache_ttl must be positive".into());
        }
        if self.offline && self.fixture_dir.is_none() {
            return Err("offline mode requires a fixture directory".into());
        }
        Ok(())
    }

    /// Height extract in effect: the configured one, else `heights.jsonl` in
    /// the fixture directory if present.
    pub fn effective_extract(&self) -> Option<PathBuf> {
        self.height_extract.clone().or_else(|| {
            let p = self.fixture_dir.as_ref()?.join(FIXTURE_HEIGHTS);
            p.is_file().then_some(p)
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub elevation_count: usize,
    pub road_segments: usize,
    pub power_lines: usize,
    pub buildings_with_height: usize,
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for ModelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "we collect {} records of elevations, {} road segments, {} power lines, and {} buildings with height",
            thousands(self.elevation_count),
            thousands(self.road_segments),
            thousands(self.power_lines),
            thousands(self.buildings_with_height)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Geocode,
    Bbox,
    Dem,
    Terrain,
    Osm,
    Heights,
    Scene,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Geocode => "geocode",
            Stage::Bbox => "bbox",
            Stage::Dem => "dem",
            Stage::Terrain => "terrain",
            Stage::Osm => "osm",
            Stage::Heights => "heights",
            Stage::Scene => "scene",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {failure}")]
pub struct PipelineError {
    pub stage: Stage,
    pub failure: Failure,
}

impl PipelineError {
    fn new(stage: Stage, source: impl Into<Failure>) -> Self {
        PipelineError {
            stage,
            failure: source.into(),
        }
    }
}

/// Monotonic time source for cache expiry.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// Hand-advanced clock for tests.
#[derive(Default)]
pub struct ManualClock(Mutex<Duration>);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.0.lock().unwrap()
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> Duration {
        (**self).now()
    }
}

/// Serialized figure plus its stats, as stored in the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedFigure {
    pub bytes: Arc<[u8]>,
    pub stats: ModelStats,
}

struct CacheSlot {
    at: Duration,
    value: CachedFigure,
}

/// TTL cache of serialized figures. Entries are replaced whole.
pub struct FigureCache {
    ttl: Duration,
    clock: Box<dyn Clock>,
    slots: RwLock<HashMap<String, CacheSlot>>,
}

impl FigureCache {
    pub fn new(ttl: Duration) -> Self {
        Self::with_clock(ttl, SystemClock::default())
    }

    pub fn with_clock(ttl: Duration, clock: impl Clock + 'static) -> Self {
        Self {
            ttl,
            clock: Box::new(clock),
            slots: RwLock::new(HashMap::new()),
        }
    }

    pub fn get(&self, key: &str) -> Option<CachedFigure> {
        let now = self.clock.now();
        let slots = self.slots.read().unwrap();
        let slot = slots.get(key)?;
        (now.saturating_sub(slot.at) < self.ttl).then(|| slot.value.clone())
    }

    pub fn insert(&self, key: String, value: CachedFigure) {
        let now = self.clock.now();
        let mut slots = self.slots.write().unwrap();
        slots.retain(|_, s| now.saturating_sub(s.at) < self.ttl);
        slots.insert(key, CacheSlot { at: now, value });
    }

    /// Number of live (unexpired) entries.
    pub fn len(&self) -> usize {
        let now = self.clock.now();
        self.slots
            .read()
            .unwrap()
            .values()
            .filter(|s| now.saturating_sub(s.at) < self.ttl)
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of [`Pipeline::generate_cached`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub figure: CachedFigure,
    pub from_cache: bool,
}

pub struct Pipeline {
    config: PipelineConfig,
    geocoder: Geocoder,
    elevation: ElevationClient,
    overpass: OverpassClient,
    heights: HeightIndex,
    digest: String,
    cache: FigureCache,
}

impl Pipeline {
    /// Live network access, or fixture replay when `config.offline` is set.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate().map_err(|m| PipelineError::new(Stage::Config, Failure::Config(m)))?;
        match (&config.fixture_dir, config.offline) {
            (Some(dir), true) => {
                let t: Arc<dyn Transport> = Arc::new(ReplayTransport::new(dir));
                Self::with_transport(config, t)
            }
            _ => {
                let t: Arc<dyn Transport> = Arc::new(LiveTransport::default());
                let p = Self::with_transport(config, t)?;
                Ok(p.polite())
            }
        }
    }

    /// Live network access, recording every successful exchange into the
    /// fixture directory.
    pub fn recording(config: PipelineConfig) -> Result<Self, PipelineError> {
        let Some(dir) = config.fixture_dir.clone() else {
            return Err(PipelineError::new(
                Stage::Config,
                Failure::Config("recording requires a fixture directory".into()),
            ));
        };
        if config.offline {
            return Err(PipelineError::new(
                Stage::Config,
                Failure::Config("recording and offline mode are mutually exclusive".into()),
            ));
        }
        let t: Arc<dyn Transport> = Arc::new(RecordingTransport::new(LiveTransport::default(), dir));
        Ok(Self::with_transport(config, t)?.polite())
    }

    pub fn with_transport(config: PipelineConfig, transport: Arc<dyn Transport>) -> Result<Self, PipelineError> {
        Self::with_transport_and_clock(config, transport, SystemClock::default())
    }

    pub fn with_transport_and_clock(
        config: PipelineConfig,
        transport: Arc<dyn Transport>,
        clock: impl Clock + 'static,
    ) -> Result<Self, PipelineError> {
        config.validate().map_err(|m| PipelineError::new(Stage::Config, Failure::Config(m)))?;
        let (heights, extract_digest) = match config.effective_extract() {
            Some(path) => load_extract(&path)?,
            None => (HeightIndex::default(), String::new()),
        };
        let digest = config_digest(&config, &extract_digest);
        Ok(Self {
            geocoder: Geocoder::new(transport.clone()),
            elevation: ElevationClient::new(transport.clone(), config.max_bbox_area),
            overpass: OverpassClient::new(transport),
            cache: FigureCache::with_clock(Duration::from_secs(config.cache_ttl), clock),
            heights,
            digest,
            config,
        })
    }

    /// Public-endpoint etiquette for live runs: at most one geocoder request
    /// per second.
    fn polite(mut self) -> Self {
        self.geocoder = self.geocoder.with_min_interval(Duration::from_secs(1));
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn cache(&self) -> &FigureCache {
        &self.cache
    }

    pub fn heights(&self) -> &HeightIndex {
        &self.heights
    }

    /// Cache key: normalized place plus a digest of every output-affecting setting.
    pub fn cache_key(&self, place: &str) -> String {
        format!("{}#{}", normalize_place(place), self.digest)
    }

    /// Serves from the cache when a fresh entry exists, else generates,
    /// serializes and stores.
    pub fn generate_cached(&self, place: &str, api_key: &str) -> Result<Generated, PipelineError> {
        let key = self.cache_key(place);
        if let Some(figure) = self.cache.get(&key) {
            log::info!("cache hit for {key}");
            return Ok(Generated {
                figure,
                from_cache: true,
            });
        }
        let (fig, stats) = self.generate(place, api_key)?;
        let bytes = scene::serialize(&fig).map_err(|e| PipelineError::new(Stage::Scene, e))?;
        let figure = CachedFigure {
            bytes: bytes.into(),
            stats,
        };
        self.cache.insert(key, figure.clone());
        Ok(Generated {
            figure,
            from_cache: false,
        })
    }

    pub fn generate(&self, place: &str, api_key: &str) -> Result<(Figure, ModelStats), PipelineError> {
        let cfg = &self.config;
        let api_key = match api_key.trim() {
            "" if cfg.offline => OFFLINE_KEY,
            "" => {
                return Err(PipelineError::new(
                    Stage::Dem,
                    ProviderError::InvalidInput("an elevation API key is required".into()),
                ))
            }
            k => k,
        };
        let mut timer = Timer::default();

        let place_result = self.geocoder.geocode(place).map_err(|e| PipelineError::new(Stage::Geocode, e))?;
        timer.lap(Stage::Geocode);

        let bbox = place_result.bbox;
        if bbox.area() > cfg.max_bbox_area {
            return Err(PipelineError::new(
                Stage::Bbox,
                ProviderError::BboxTooLarge {
                    area: bbox.area(),
                    cap: cfg.max_bbox_area,
                },
            ));
        }
        timer.lap(Stage::Bbox);

        let tiff = self.elevation.fetch_dem(&bbox, api_key).map_err(|e| PipelineError::new(Stage::Dem, e))?;
        let grid = decode_geotiff(&tiff).map_err(|e| PipelineError::new(Stage::Dem, e))?;
        timer.lap(Stage::Dem);

        let terrain = geometry::grid_mesh(&grid).map_err(|e| PipelineError::new(Stage::Terrain, e))?;
        timer.lap(Stage::Terrain);

        let roads = self.fetch_layer(&bbox, FeatureSelector::Roads)?;
        let power = self.fetch_layer(&bbox, FeatureSelector::PowerLines)?;
        let buildings = self.fetch_layer(&bbox, FeatureSelector::Buildings)?;
        let road_lines = self.drape_ways(&roads, &grid, cfg.road_offset, LineKind::Road);
        let power_lines = self.drape_ways(&power, &grid, cfg.power_offset, LineKind::Power);
        timer.lap(Stage::Osm);

        let meshes: Vec<Option<TriMesh>> = buildings.par_iter().map(|w| self.building_mesh(w, &grid)).collect();
        let extruded = meshes.iter().flatten().count();
        let building_mesh = geometry::merge_meshes(meshes.iter().flatten());
        timer.lap(Stage::Heights);

        let scene_err = |e| PipelineError::new(Stage::Scene, e);
        let title = if place_result.display_name.is_empty() {
            normalize_place(place)
        } else {
            place_result.display_name.clone()
        };
        let figure = Figure::from_layers(
            title,
            scene::terrain_trace(&terrain).map_err(scene_err)?,
            scene::buildings_trace(&building_mesh).map_err(scene_err)?,
            scene::lines_trace(&road_lines, LineKind::Road),
            scene::lines_trace(&power_lines, LineKind::Power),
        );
        timer.lap(Stage::Scene);

        let stats = ModelStats {
            elevation_count: grid.valid_count(),
            road_segments: roads.len(),
            power_lines: power.len(),
            buildings_with_height: extruded,
        };
        log::info!("{stats}");
        log::info!("{}", timer.record(&normalize_place(place), &stats));
        Ok((figure, stats))
    }

    /// One OSM layer. Upstream failures degrade to an empty layer; a missing
    /// fixture or local I/O failure is fatal so offline runs stay honest.
    fn fetch_layer(&self, bbox: &crate::geodesy::GeoBBox, sel: FeatureSelector) -> Result<Vec<OsmWay>, PipelineError> {
        match self.overpass.fetch_osm(bbox, sel) {
            Ok(ways) => Ok(ways),
            Err(e @ (ProviderError::Fixture(_) | ProviderError::Io(_))) => Err(PipelineError::new(Stage::Osm, e)),
            Err(e) => {
                log::warn!("{sel:?} layer unavailable, continuing without it: {e}");
                Ok(Vec::new())
            }
        }
    }

    fn drape_ways(&self, ways: &[OsmWay], grid: &crate::raster::DemGrid, offset: f64, kind: LineKind) -> Vec<Polyline3> {
        ways.iter()
            .filter_map(|w| {
                let dense = geometry::densify(&w.geometry, self.config.densify_step)
                    .map_err(|e| log::debug!("way {} skipped: {e}", w.id))
                    .ok()?;
                geometry::drape(&dense, grid, offset, kind)
            })
            .collect()
    }

    fn building_mesh(&self, way: &OsmWay, grid: &crate::raster::DemGrid) -> Option<TriMesh> {
        let mut ring: Vec<GeoPoint> = way.ring().to_vec();
        ring.dedup();
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return None;
        }
        let height = match_height(&way.geometry, &self.heights).unwrap_or(self.config.default_height);
        let base = geometry::footprint_base(grid, &ring, self.config.base_elevation)?;
        let flat: Vec<[f64; 2]> = ring
            .iter()
            .map(|p| to_mercator(*p).ok().map(|m| [m.x, m.y]))
            .collect::<Option<_>>()?;
        geometry::extrude(&flat, base, height)
            .map_err(|e| log::debug!("building {} skipped: {e}", way.id))
            .ok()
    }
}

fn load_extract(path: &Path) -> Result<(HeightIndex, String), PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::new(Stage::Heights, ProviderError::Io(format!("{}: {e}", path.display()))))?;
    let index = load_heights(path).map_err(|e| PipelineError::new(Stage::Heights, e))?;
    log::info!(
        "loaded {} height records from {} ({} heightless, {} malformed)",
        index.len(),
        path.display(),
        index.heightless,
        index.malformed
    );
    Ok((index, hex::encode(Sha256::digest(&bytes))))
}

fn config_digest(cfg: &PipelineConfig, extract_digest: &str) -> String {
    let material = serde_json::json!({
        "max_bbox_area": cfg.max_bbox_area,
        "densify_step": cfg.densify_step,
        "road_offset": cfg.road_offset,
        "power_offset": cfg.power_offset,
        "default_height": cfg.default_height,
        "base_elevation": cfg.base_elevation,
        "heights": extract_digest,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Default)]
struct Timer {
    laps: Vec<(Stage, f64)>,
    last: Option<Instant>,
}

impl Timer {
    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        let since = self.last.map_or(0.0, |t| now.duration_since(t).as_secs_f64() * 1e3);
        self.laps.push((stage, since));
        self.last = Some(now);
    }

    fn record(&self, place: &str, stats: &ModelStats) -> String {
        let timings: serde_json::Map<String, serde_json::Value> =
            self.laps.iter().map(|(s, ms)| (s.as_str().to_string(), (*ms).into())).collect();
        serde_json::json!({"place": place, "stats": stats, "timings_ms": timings}).to_string()
    }
}
