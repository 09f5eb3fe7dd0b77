//! Point cloud data model, PCSEG file I/O, neighbor search, synthetic
//! scenes and PLY export.

mod cloud;
mod io;
mod knn;
mod ply;
pub mod synth;

pub use cloud::{normalize_coords, PointCloud};
pub use io::{format_cloud, load_cloud, parse_cloud, save_cloud, FEATURE_SCALE, NORMALIZED_DIRECTIVE};
pub use knn::{knn, knn_points, neighborhood_change_rate, Neighbors};
pub use ply::{format_ply, to_u8, write_ply, PlyColor};
pub use synth::{synth_scene, Primitive, SceneSpec, Shape};
