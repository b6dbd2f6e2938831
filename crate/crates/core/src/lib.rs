//! Open-data 3D urban energy scenes.
//!
//! A place name is geocoded to a boundary, the terrain under its bounding box
//! is fetched as a DEM and triangulated, and OpenStreetMap roads, power lines
//! and building footprints are draped or extruded onto it. The result is a
//! figure document (terrain, buildings, roads, power lines) in Web Mercator
//! meters, serialized as canonical JSON.

pub mod geodesy;
pub mod geometry;
pub mod pipeline;
pub mod providers;
pub mod raster;
pub mod scene;

pub use geodesy::{GeoBBox, GeoPoint, MercatorPoint};
pub use geometry::{LineKind, Polyline3, TriMesh};
pub use pipeline::{ModelStats, Pipeline, PipelineConfig, PipelineError, Stage};
pub use raster::DemGrid;
pub use scene::Figure;
