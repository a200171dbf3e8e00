//! Library for turning satellite imagery products and vector ground truth
//! into fixed-size, multi-resolution timeseries training samples.
//!
//! The pipeline stages, in order:
//!
//! 1. [`catalog`] — query construction, candidate scoring and selection.
//! 2. [`hub`] — throttled, resumable product retrieval (with a bundled
//!    deterministic mock hub for tests and demos).
//! 3. [`ingest`] — canonical band-grid loading and coverage statistics.
//! 4. [`raster`] — parcel polygons to class/id grids and conflict masks.
//! 5. [`tile`] — window planning and patch extraction.
//! 6. [`assemble`] — grouping per-date patches into timeseries samples.

pub mod assemble;
pub mod catalog;
pub mod config;
pub mod error;
pub mod grid_io;
pub mod parcels;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tile;
pub mod ingest;
pub mod geo;
pub mod hub;

pub use error::{Error, Result};
pub use geo::{Crs, GeoPoint, GeoPolygon, GeoTransform, Hemisphere, PixelRect, Rect};
pub use catalog::{Aoi, Poi, ProductMeta, SelectionConfig};
pub use ingest::{BandGrid, ProductBundle};
pub use raster::{GridSpec, GroundTruth, LabelProduct, ParcelRecord};
pub use tile::{Patch, Window, WindowSpec};
