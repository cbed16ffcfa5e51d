//! Fuses geotagged photographs with OpenStreetMap building data and terrain
//! grids into a metric 3D scene, projects the photos back onto that scene as
//! perspective projectors, and anchors externally detected objects in it.
//!
//! The crate is I/O free: every parser consumes bytes and every operation is
//! a pure function of its inputs. Sockets, HTTP and files live in `ave-cli`.

pub mod detection;
pub mod geodesy;
pub mod ingest;
pub mod math;
pub mod meshgen;
pub mod pipeline;
pub mod projection;
pub mod protocol;
pub mod scene;

pub use geodesy::{GeoCoord, Hemisphere, LocalCoord, LocalFrame, UtmCoord};
pub use math::{Vec2, Vec3};
