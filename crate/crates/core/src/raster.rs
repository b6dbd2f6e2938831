//! Single-band elevation rasters.
//!
//! [`decode_geotiff`] reads the subset of classic TIFF that elevation services
//! export for a bounding-box request: one band of `int16` or `float32`
//! samples, strips or tiles, uncompressed or deflate, georeferenced through
//! `ModelPixelScale` + `ModelTiepoint` in EPSG:4326.

use std::io::Read;

use flate2::read::ZlibDecoder;
use thiserror::Error;

use crate::geodesy::{to_mercator, GeoPoint, GeodesyError, MercatorPoint};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("not a TIFF")]
    NotTiff,
    #[error("BigTIFF is not supported")]
    BigTiff,
    #[error("unexpected end of data at offset {0}")]
    Eof(usize),
    #[error("unsupported band count: {0}")]
    BandCount(u32),
    #[error("unsupported compression: {0}")]
    Compression(u32),
    #[error("unsupported predictor: {0}")]
    Predictor(u32),
    #[error("unsupported sample type: {bits} bits, format {format}")]
    SampleType { bits: u32, format: u32 },
    #[error("missing tag {0}")]
    MissingTag(&'static str),
    #[error("invalid tag {tag}: {reason}")]
    InvalidTag { tag: &'static str, reason: String },
    #[error("truncated {kind} {index}: expected {expected} bytes, got {actual}")]
    Truncated {
        kind: &'static str,
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("deflate error: {0}")]
    Deflate(#[from] std::io::Error),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("pixel ({row}, {col}) outside {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

/// Row-major elevation grid. `lon0`/`lat0` locate the center of pixel (0, 0);
/// rows advance southward by `dlat`, columns eastward by `dlon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    pub lon0: f64,
    pub lat0: f64,
    pub dlon: f64,
    pub dlat: f64,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub nodata: Option<f32>,
}

impl DemGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lon0: f64,
        lat0: f64,
        dlon: f64,
        dlat: f64,
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        nodata: Option<f32>,
    ) -> Result<Self, RasterError> {
        if rows < 2 || cols < 2 {
            return Err(RasterError::InvalidGrid(format!(
                "need at least 2x2 pixels, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(RasterError::InvalidGrid(format!(
                "{} values for {rows}x{cols} grid",
                values.len()
            )));
        }
        if !(dlon > 0.0 && dlat > 0.0 && dlon.is_finite() && dlat.is_finite()) {
            return Err(RasterError::InvalidGrid(format!(
                "pixel size must be positive, got ({dlon}, {dlat})"
            )));
        }
        if !lon0.is_finite() || !lat0.is_finite() {
            return Err(RasterError::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self {
            lon0,
            lat0,
            dlon,
            dlat,
            rows,
            cols,
            values,
            nodata,
        })
    }

    /// NaN samples are always invalid, whatever the declared sentinel.
    pub fn is_nodata(&self, v: f32) -> bool {
        v.is_nan() || self.nodata.is_some_and(|nd| v == nd)
    }

    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        !self.is_nodata(self.value(row, col))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !self.is_nodata(**v)).count()
    }

    /// Min and max over valid samples, or `None` if every pixel is nodata.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        self.values
            .iter()
            .copied()
            .filter(|v| !self.is_nodata(*v))
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(
            self.lon0 + col as f64 * self.dlon,
            self.lat0 - row as f64 * self.dlat,
        )
    }

    /// Projected center of pixel (row, col) together with its elevation.
    pub fn vertex_mercator(&self, row: usize, col: usize) -> Result<(MercatorPoint, f32), RasterError> {
        if row >= self.rows || col >= self.cols {
            return Err(RasterError::OutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let m = to_mercator(self.pixel_center(row, col))?;
        Ok((m, self.value(row, col)))
    }

    /// Bilinear elevation at `p`.
    ///
    /// Returns `None` outside the envelope of pixel centers, or when any
    /// corner that carries non-zero weight is nodata.
    pub fn sample_bilinear(&self, p: GeoPoint) -> Option<f64> {
        let c = snap((p.lon - self.lon0) / self.dlon);
        let r = snap((self.lat0 - p.lat) / self.dlat);
        if !(c >= 0.0 && r >= 0.0 && c <= (self.cols - 1) as f64 && r <= (self.rows - 1) as f64) {
            return None;
        }
        let c0 = (c.floor() as usize).min(self.cols - 2);
        let r0 = (r.floor() as usize).min(self.rows - 2);
        let fc = c - c0 as f64;
        let fr = r - r0 as f64;
        let corners = [
            (r0, c0, (1.0 - fr) * (1.0 - fc)),
            (r0, c0 + 1, (1.0 - fr) * fc),
            (r0 + 1, c0, fr * (1.0 - fc)),
            (r0 + 1, c0 + 1, fr * fc),
        ];
        if corners
            .iter()
            .any(|&(row, col, w)| w > 0.0 && !self.is_valid(row, col))
        {
            return None;
        }
        let v = |row, col| f64::from(self.value(row, col));
        // Zero-weight corners may be nodata; they must not reach the blend.
        let top = lerp(v(r0, c0), v(r0, c0 + 1), fc);
        let bottom = if fr > 0.0 {
            lerp(v(r0 + 1, c0), v(r0 + 1, c0 + 1), fc)
        } else {
            0.0
        };
        Some(if fr > 0.0 { lerp(top, bottom, fr) } else { top })
    }
}

/// Pulls fractional pixel coordinates that are within rounding noise of an
/// integer onto that integer, so pixel centers sample exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        (a + (b - a) * t).clamp(a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Strips,
    Tiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    None,
    Deflate,
}

/// The header fields of a decoded GeoTIFF.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTiffMeta {
    pub width: u32,
    pub height: u32,
    pub bits_per_sample: u32,
    pub sample_format: SampleFormat,
    pub pixel_scale: (f64, f64),
    /// (raster x, raster y, lon, lat)
    pub tiepoint: (f64, f64, f64, f64),
    pub nodata: Option<f32>,
    pub layout: Layout,
    pub compression: Compression,
}

mod tag {
    pub const IMAGE_WIDTH: u16 = 256;
    pub const IMAGE_LENGTH: u16 = 257;
    pub const BITS_PER_SAMPLE: u16 = 258;
    pub const COMPRESSION: u16 = 259;
    pub const STRIP_OFFSETS: u16 = 273;
    pub const SAMPLES_PER_PIXEL: u16 = 277;
    pub const ROWS_PER_STRIP: u16 = 278;
    pub const STRIP_BYTE_COUNTS: u16 = 279;
    pub const PREDICTOR: u16 = 317;
    pub const TILE_WIDTH: u16 = 322;
    pub const TILE_LENGTH: u16 = 323;
    pub const TILE_OFFSETS: u16 = 324;
    pub const TILE_BYTE_COUNTS: u16 = 325;
    pub const SAMPLE_FORMAT: u16 = 339;
    pub const MODEL_PIXEL_SCALE: u16 = 33550;
    pub const MODEL_TIEPOINT: u16 = 33922;
    pub const GDAL_NODATA: u16 = 42113;
}

#[derive(Clone, Copy)]
enum ByteOrder {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    order: ByteOrder,
}

impl<'a> Reader<'a> {
    fn slice(&self, offset: usize, len: usize) -> Result<&'a [u8], RasterError> {
        offset
            .checked_add(len)
            .and_then(|end| self.bytes.get(offset..end))
            .ok_or(RasterError::Eof(offset))
    }

    fn u16(&self, offset: usize) -> Result<u16, RasterError> {
        let b: [u8; 2] = self.slice(offset, 2)?.try_into().unwrap();
        Ok(match self.order {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&self, offset: usize) -> Result<u32, RasterError> {
        let b: [u8; 4] = self.slice(offset, 4)?.try_into().unwrap();
        Ok(match self.order {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        })
    }

    fn u64(&self, offset: usize) -> Result<u64, RasterError> {
        let b: [u8; 8] = self.slice(offset, 8)?.try_into().unwrap();
        Ok(match self.order {
            ByteOrder::Little => u64::from_le_bytes(b),
            ByteOrder::Big => u64::from_be_bytes(b),
        })
    }
}

/// One IFD entry with its value bytes resolved (inline or via offset).
struct Entry<'a> {
    field_type: u16,
    count: usize,
    data: &'a [u8],
}

fn type_size(field_type: u16) -> Option<usize> {
    Some(match field_type {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 => 4,
        5 | 10 | 12 => 8,
        _ => return None,
    })
}

impl Entry<'_> {
    fn unsigned(&self, r: &Reader, name: &'static str) -> Result<Vec<u64>, RasterError> {
        let sub = Reader {
            bytes: self.data,
            order: r.order,
        };
        (0..self.count)
            .map(|i| match self.field_type {
                1 => Ok(u64::from(self.data[i])),
                3 => sub.u16(i * 2).map(u64::from),
                4 => sub.u32(i * 4).map(u64::from),
                t => Err(RasterError::InvalidTag {
                    tag: name,
                    reason: format!("expected integer type, got {t}"),
                }),
            })
            .collect()
    }

    fn doubles(&self, r: &Reader, name: &'static str) -> Result<Vec<f64>, RasterError> {
        if self.field_type != 12 {
            return Err(RasterError::InvalidTag {
                tag: name,
                reason: format!("expected DOUBLE, got type {}", self.field_type),
            });
        }
        let sub = Reader {
            bytes: self.data,
            order: r.order,
        };
        (0..self.count)
            .map(|i| sub.u64(i * 8).map(f64::from_bits))
            .collect()
    }

    fn ascii(&self) -> String {
        let end = self
            .data
            .iter()
            .position(|&b| b == 0)
            .unwrap_or(self.data.len());
        String::from_utf8_lossy(&self.data[..end]).trim().to_string()
    }
}

struct Ifd<'a> {
    entries: Vec<(u16, Entry<'a>)>,
}

impl<'a> Ifd<'a> {
    fn read(r: &Reader<'a>, offset: usize) -> Result<Self, RasterError> {
        let n = r.u16(offset)? as usize;
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let at = offset + 2 + i * 12;
            let tag = r.u16(at)?;
            let field_type = r.u16(at + 2)?;
            let count = r.u32(at + 4)? as usize;
            // Unknown types are skipped; they cannot be tags we read.
            let Some(size) = type_size(field_type) else {
                continue;
            };
            let len = size.checked_mul(count).ok_or(RasterError::Eof(at))?;
            let data = if len <= 4 {
                r.slice(at + 8, len)?
            } else {
                r.slice(r.u32(at + 8)? as usize, len)?
            };
            entries.push((
                tag,
                Entry {
                    field_type,
                    count,
                    data,
                },
            ));
        }
        Ok(Self { entries })
    }

    fn get(&self, tag: u16) -> Option<&Entry<'a>> {
        self.entries.iter().find(|(t, _)| *t == tag).map(|(_, e)| e)
    }

    fn unsigned(&self, r: &Reader, tag: u16, name: &'static str) -> Result<Option<Vec<u64>>, RasterError> {
        self.get(tag).map(|e| e.unsigned(r, name)).transpose()
    }

    fn scalar(&self, r: &Reader, tag: u16, name: &'static str) -> Result<Option<u32>, RasterError> {
        match self.unsigned(r, tag, name)? {
            None => Ok(None),
            Some(v) if v.is_empty() => Err(RasterError::InvalidTag {
                tag: name,
                reason: "empty".into(),
            }),
            Some(v) => u32::try_from(v[0]).map(Some).map_err(|_| RasterError::InvalidTag {
                tag: name,
                reason: "value overflows u32".into(),
            }),
        }
    }
}

/// Reads the image header without touching pixel data.
pub fn read_geotiff_meta(bytes: &[u8]) -> Result<GeoTiffMeta, RasterError> {
    let (reader, ifd) = open(bytes)?;
    parse_meta(&reader, &ifd).map(|(meta, _)| meta)
}

fn open(bytes: &[u8]) -> Result<(Reader<'_>, Ifd<'_>), RasterError> {
    let order = match bytes.get(0..2) {
        Some(b"II") => ByteOrder::Little,
        Some(b"MM") => ByteOrder::Big,
        _ => return Err(RasterError::NotTiff),
    };
    let reader = Reader { bytes, order };
    match reader.u16(2).map_err(|_| RasterError::NotTiff)? {
        42 => {}
        43 => return Err(RasterError::BigTiff),
        _ => return Err(RasterError::NotTiff),
    }
    let first = reader.u32(4).map_err(|_| RasterError::NotTiff)? as usize;
    let ifd = Ifd::read(&reader, first)?;
    Ok((reader, ifd))
}

/// Chunk (strip or tile) geometry needed to assemble pixel data.
struct Chunks {
    offsets: Vec<u64>,
    byte_counts: Vec<u64>,
    width: usize,
    height: usize,
    predictor: u32,
}

fn parse_meta(r: &Reader, ifd: &Ifd) -> Result<(GeoTiffMeta, Chunks), RasterError> {
    let width = ifd
        .scalar(r, tag::IMAGE_WIDTH, "ImageWidth")?
        .ok_or(RasterError::MissingTag("ImageWidth"))?;
    let height = ifd
        .scalar(r, tag::IMAGE_LENGTH, "ImageLength")?
        .ok_or(RasterError::MissingTag("ImageLength"))?;
    if width == 0 || height == 0 {
        return Err(RasterError::InvalidTag {
            tag: "ImageWidth",
            reason: "empty image".into(),
        });
    }
    let spp = ifd
        .scalar(r, tag::SAMPLES_PER_PIXEL, "SamplesPerPixel")?
        .unwrap_or(1);
    if spp != 1 {
        return Err(RasterError::BandCount(spp));
    }
    let bits = match ifd.unsigned(r, tag::BITS_PER_SAMPLE, "BitsPerSample")? {
        Some(v) if !v.is_empty() => v[0] as u32,
        _ => 1,
    };
    let format = ifd
        .scalar(r, tag::SAMPLE_FORMAT, "SampleFormat")?
        .unwrap_or(1);
    let sample_format = match (bits, format) {
        (16, 2) => SampleFormat::Int16,
        (32, 3) => SampleFormat::Float32,
        _ => return Err(RasterError::SampleType { bits, format }),
    };
    let compression = match ifd.scalar(r, tag::COMPRESSION, "Compression")?.unwrap_or(1) {
        1 => Compression::None,
        8 | 32946 => Compression::Deflate,
        other => return Err(RasterError::Compression(other)),
    };
    let predictor = ifd.scalar(r, tag::PREDICTOR, "Predictor")?.unwrap_or(1);
    if predictor != 1 && predictor != 2 {
        return Err(RasterError::Predictor(predictor));
    }

    let scale = ifd
        .get(tag::MODEL_PIXEL_SCALE)
        .ok_or(RasterError::MissingTag("ModelPixelScale"))?
        .doubles(r, "ModelPixelScale")?;
    let tie = ifd
        .get(tag::MODEL_TIEPOINT)
        .ok_or(RasterError::MissingTag("ModelTiepoint"))?
        .doubles(r, "ModelTiepoint")?;
    if scale.len() < 2 || !(scale[0] > 0.0 && scale[1] > 0.0) {
        return Err(RasterError::InvalidTag {
            tag: "ModelPixelScale",
            reason: format!("{scale:?}"),
        });
    }
    if tie.len() < 6 {
        return Err(RasterError::InvalidTag {
            tag: "ModelTiepoint",
            reason: format!("expected 6 values, got {}", tie.len()),
        });
    }
    let nodata = match ifd.get(tag::GDAL_NODATA) {
        None => None,
        Some(e) => {
            let text = e.ascii();
            let v: f64 = if text.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                text.parse().map_err(|_| RasterError::InvalidTag {
                    tag: "GDAL_NODATA",
                    reason: format!("not a number: {text:?}"),
                })?
            };
            Some(v as f32)
        }
    };

    let tile_w = ifd.scalar(r, tag::TILE_WIDTH, "TileWidth")?;
    let tile_h = ifd.scalar(r, tag::TILE_LENGTH, "TileLength")?;
    let (layout, chunks) = match (tile_w, tile_h) {
        (Some(tw), Some(th)) => {
            let offsets = ifd
                .unsigned(r, tag::TILE_OFFSETS, "TileOffsets")?
                .ok_or(RasterError::MissingTag("TileOffsets"))?;
            let byte_counts = ifd
                .unsigned(r, tag::TILE_BYTE_COUNTS, "TileByteCounts")?
                .ok_or(RasterError::MissingTag("TileByteCounts"))?;
            if tw == 0 || th == 0 {
                return Err(RasterError::InvalidTag {
                    tag: "TileWidth",
                    reason: "zero tile size".into(),
                });
            }
            (
                Layout::Tiles,
                Chunks {
                    offsets,
                    byte_counts,
                    width: tw as usize,
                    height: th as usize,
                    predictor,
                },
            )
        }
        _ => {
            let offsets = ifd
                .unsigned(r, tag::STRIP_OFFSETS, "StripOffsets")?
                .ok_or(RasterError::MissingTag("StripOffsets"))?;
            let byte_counts = ifd
                .unsigned(r, tag::STRIP_BYTE_COUNTS, "StripByteCounts")?
                .ok_or(RasterError::MissingTag("StripByteCounts"))?;
            let rps = ifd
                .scalar(r, tag::ROWS_PER_STRIP, "RowsPerStrip")?
                .unwrap_or(height)
                .clamp(1, height);
            (
                Layout::Strips,
                Chunks {
                    offsets,
                    byte_counts,
                    width: width as usize,
                    height: rps as usize,
                    predictor,
                },
            )
        }
    };
    if chunks.offsets.len() != chunks.byte_counts.len() {
        return Err(RasterError::InvalidTag {
            tag: "StripByteCounts",
            reason: "offset and byte count arrays differ in length".into(),
        });
    }

    Ok((
        GeoTiffMeta {
            width,
            height,
            bits_per_sample: bits,
            sample_format,
            pixel_scale: (scale[0], scale[1]),
            tiepoint: (tie[0], tie[1], tie[3], tie[4]),
            nodata,
            layout,
            compression,
        },
        chunks,
    ))
}

/// Decodes a single-band GeoTIFF into a [`DemGrid`].
///
/// The tiepoint maps raster point (i, j) to (lon, lat), where raster point
/// (0, 0) is the outer corner of the first pixel; the grid origin is shifted
/// half a pixel inward to the first pixel center.
pub fn decode_geotiff(bytes: &[u8]) -> Result<DemGrid, RasterError> {
    let (r, ifd) = open(bytes)?;
    let (meta, chunks) = parse_meta(&r, &ifd)?;
    let width = meta.width as usize;
    let height = meta.height as usize;
    let bytes_per_sample = (meta.bits_per_sample / 8) as usize;

    let across = width.div_ceil(chunks.width);
    let down = height.div_ceil(chunks.height);
    let (expected_chunks, kind) = match meta.layout {
        Layout::Strips => (down, "strip"),
        Layout::Tiles => (across * down, "tile"),
    };
    if chunks.offsets.len() < expected_chunks {
        return Err(RasterError::Truncated {
            kind,
            index: chunks.offsets.len(),
            expected: expected_chunks,
            actual: chunks.offsets.len(),
        });
    }

    let mut values = vec![0f32; width * height];
    for index in 0..expected_chunks {
        let (row0, col0) = match meta.layout {
            Layout::Strips => (index * chunks.height, 0),
            Layout::Tiles => ((index / across) * chunks.height, (index % across) * chunks.width),
        };
        // Strips shrink at the bottom edge; tiles are always full size and padded.
        let chunk_rows = match meta.layout {
            Layout::Strips => chunks.height.min(height - row0),
            Layout::Tiles => chunks.height,
        };
        let expected = chunk_rows * chunks.width * bytes_per_sample;

        let offset = chunks.offsets[index] as usize;
        let count = chunks.byte_counts[index] as usize;
        let raw = r.slice(offset, count).map_err(|_| RasterError::Truncated {
            kind,
            index,
            expected: count,
            actual: bytes.len().saturating_sub(offset).min(count),
        })?;
        let mut data = match meta.compression {
            Compression::None => raw.to_vec(),
            Compression::Deflate => {
                let mut out = Vec::with_capacity(expected);
                ZlibDecoder::new(raw).read_to_end(&mut out)?;
                out
            }
        };
        if data.len() < expected {
            return Err(RasterError::Truncated {
                kind,
                index,
                expected,
                actual: data.len(),
            });
        }
        data.truncate(expected);

        if chunks.predictor == 2 {
            undo_horizontal_predictor(&mut data, chunks.width, bytes_per_sample, r.order);
        }

        for cr in 0..chunk_rows {
            let row = row0 + cr;
            if row >= height {
                break;
            }
            for cc in 0..chunks.width {
                let col = col0 + cc;
                if col >= width {
                    break;
                }
                let at = (cr * chunks.width + cc) * bytes_per_sample;
                let s = &data[at..at + bytes_per_sample];
                values[row * width + col] = match (meta.sample_format, r.order) {
                    (SampleFormat::Int16, ByteOrder::Little) => f32::from(i16::from_le_bytes([s[0], s[1]])),
                    (SampleFormat::Int16, ByteOrder::Big) => f32::from(i16::from_be_bytes([s[0], s[1]])),
                    (SampleFormat::Float32, ByteOrder::Little) => {
                        f32::from_le_bytes([s[0], s[1], s[2], s[3]])
                    }
                    (SampleFormat::Float32, ByteOrder::Big) => {
                        f32::from_be_bytes([s[0], s[1], s[2], s[3]])
                    }
                };
            }
        }
    }

    let (dlon, dlat) = meta.pixel_scale;
    let (ti, tj, tie_lon, tie_lat) = meta.tiepoint;
    let corner_lon = tie_lon - ti * dlon;
    let corner_lat = tie_lat + tj * dlat;
    DemGrid::new(
        corner_lon + dlon / 2.0,
        corner_lat - dlat / 2.0,
        dlon,
        dlat,
        height,
        width,
        values,
        meta.nodata,
    )
}

/// Reverses TIFF predictor 2 (horizontal differencing) in place, row by row.
fn undo_horizontal_predictor(data: &mut [u8], row_len: usize, size: usize, order: ByteOrder) {
    for row in data.chunks_exact_mut(row_len * size) {
        match size {
            2 => {
                let read = |b: &[u8]| match order {
                    ByteOrder::Little => u16::from_le_bytes([b[0], b[1]]),
                    ByteOrder::Big => u16::from_be_bytes([b[0], b[1]]),
                };
                let mut prev = read(&row[0..2]);
                for i in 1..row_len {
                    let cur = read(&row[i * 2..i * 2 + 2]).wrapping_add(prev);
                    let b = match order {
                        ByteOrder::Little => cur.to_le_bytes(),
                        ByteOrder::Big => cur.to_be_bytes(),
                    };
                    row[i * 2..i * 2 + 2].copy_from_slice(&b);
                    prev = cur;
                }
            }
            4 => {
                let read = |b: &[u8]| match order {
                    ByteOrder::Little => u32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                    ByteOrder::Big => u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
                };
                let mut prev = read(&row[0..4]);
                for i in 1..row_len {
                    let cur = read(&row[i * 4..i * 4 + 4]).wrapping_add(prev);
                    let b = match order {
                        ByteOrder::Little => cur.to_le_bytes(),
                        ByteOrder::Big => cur.to_be_bytes(),
                    };
                    row[i * 4..i * 4 + 4].copy_from_slice(&b);
                    prev = cur;
                }
            }
            _ => unreachable!("sample sizes are 2 or 4 bytes"),
        }
    }
}
