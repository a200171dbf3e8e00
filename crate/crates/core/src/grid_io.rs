//! The canonical on-disk grid format: a raw little-endian payload
//! (`<name>.grid`) next to a JSON sidecar (`<name>.grid.json`).
//!
//! Payloads are row-major, top row first. Multi-frame stacks are the
//! concatenation of identically-shaped frames, with the frame count in
//! the sidecar. The sidecar field order is fixed so repeated writes are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Crs, GeoTransform};

/// Sample types a payload can hold. Only little-endian layouts exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U16,
    U32,
    U8,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::U16 => "u16le",
            Dtype::U32 => "u32le",
            Dtype::U8 => "u8",
            Dtype::F32 => "f32le",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::U16 => 2,
            Dtype::U32 => 4,
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "u16le" => Ok(Dtype::U16),
            "u32le" => Ok(Dtype::U32),
            "u8" => Ok(Dtype::U8),
            "f32le" => Ok(Dtype::F32),
            other if other.ends_with("be") => Err(Error::Grid(format!(
                "unsupported byte order in dtype {other:?}"
            ))),
            other => Err(Error::Grid(format!("unknown dtype {other:?}"))),
        }
    }
}

/// Typed payload contents.
#[derive(Debug, Clone, PartialEq)]
pub enum GridValues {
    U16(Vec<u16>),
    U32(Vec<u32>),
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl GridValues {
    pub fn dtype(&self) -> Dtype {
        match self {
            GridValues::U16(_) => Dtype::U16,
            GridValues::U32(_) => Dtype::U32,
            GridValues::U8(_) => Dtype::U8,
            GridValues::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridValues::U16(v) => v.len(),
            GridValues::U32(v) => v.len(),
            GridValues::U8(v) => v.len(),
            GridValues::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            GridValues::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            GridValues::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            GridValues::U8(v) => v.clone(),
            GridValues::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(dtype.size_bytes()) {
            return Err(Error::Grid(format!(
                "payload length {} is not a multiple of the {}-byte sample size",
                bytes.len(),
                dtype.size_bytes()
            )));
        }
        Ok(match dtype {
            Dtype::U16 => GridValues::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            Dtype::U32 => GridValues::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::U8 => GridValues::U8(bytes.to_vec()),
            Dtype::F32 => GridValues::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        })
    }
}

/// Everything the sidecar records about a payload.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub band_id: String,
    pub resolution_m: f64,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub nodata: u32,
    pub crs: Crs,
    pub geotransform: GeoTransform,
    /// Frame count for stacks; single grids omit it from the sidecar.
    pub frames: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct SidecarWire {
    band_id: String,
    resolution_m: f64,
    rows: usize,
    cols: usize,
    dtype: String,
    nodata: u32,
    crs: Crs,
    geotransform: [f64; 6],
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
}

impl GridMeta {
    pub fn frame_count(&self) -> usize {
        self.frames.unwrap_or(1)
    }

    pub fn samples_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    fn to_wire(&self) -> SidecarWire {
        SidecarWire {
            band_id: self.band_id.clone(),
            resolution_m: self.resolution_m,
            rows: self.rows,
            cols: self.cols,
            dtype: self.dtype.name().to_string(),
            nodata: self.nodata,
            crs: self.crs,
            geotransform: self.geotransform.to_gdal(),
            frames: self.frames,
        }
    }

    fn from_wire(wire: SidecarWire, path: &Path) -> Result<Self> {
        let dtype = Dtype::parse(&wire.dtype)?;
        let gt = GeoTransform::from_gdal(wire.geotransform)?;
        if !wire.crs.is_projected() {
            return Err(Error::Grid(format!(
                "{}: grid crs must be projected",
                path.display()
            )));
        }
        if (gt.pixel_width - wire.resolution_m).abs() > 1e-9 {
            return Err(Error::Grid(format!(
                "{}: resolution_m {} disagrees with geotransform pixel width {}",
                path.display(),
                wire.resolution_m,
                gt.pixel_width
            )));
        }
        Ok(GridMeta {
            band_id: wire.band_id,
            resolution_m: wire.resolution_m,
            rows: wire.rows,
            cols: wire.cols,
            dtype,
            nodata: wire.nodata,
            crs: wire.crs,
            geotransform: gt,
            frames: wire.frames,
        })
    }
}

pub fn sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes payload and sidecar. The payload lands at `path`, the sidecar
/// right next to it.
pub fn write_grid(path: &Path, meta: &GridMeta, values: &GridValues) -> Result<()> {
    if values.dtype() != meta.dtype {
        return Err(Error::Grid(format!(
            "dtype mismatch: sidecar says {}, values are {}",
            meta.dtype.name(),
            values.dtype().name()
        )));
    }
    let expected = meta.samples_per_frame() * meta.frame_count();
    if values.len() != expected {
        return Err(Error::Grid(format!(
            "value count {} does not match {} rows x {} cols x {} frames",
            values.len(),
            meta.rows,
            meta.cols,
            meta.frame_count()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io_at(format!("create {}", dir.display()), e))?;
    }
    fs::write(path, values.to_le_bytes())
        .map_err(|e| Error::io_at(format!("write {}", path.display()), e))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string(&meta.to_wire())?;
    fs::write(&sidecar, json)
        .map_err(|e| Error::io_at(format!("write {}", sidecar.display()), e))?;
    Ok(())
}

/// Reads sidecar and payload, cross-checking the byte length against the
/// declared shape.
pub fn read_grid(path: &Path) -> Result<(GridMeta, GridValues)> {
    let meta = read_sidecar(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io_at(format!("read {}", path.display()), e))?;
    let expected = meta.samples_per_frame() * meta.frame_count() * meta.dtype.size_bytes();
    if bytes.len() != expected {
        return Err(Error::Grid(format!(
            "{}: payload length {} does not match sidecar shape ({} expected)",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    let values = GridValues::from_le_bytes(meta.dtype, &bytes)?;
    Ok((meta, values))
}

pub fn read_sidecar(path: &Path) -> Result<GridMeta> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar)
        .map_err(|e| Error::io_at(format!("read {}", sidecar.display()), e))?;
    let wire: SidecarWire = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: sidecar.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    GridMeta::from_wire(wire, path)
}
