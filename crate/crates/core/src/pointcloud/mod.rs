//! Point-cloud data model, file formats, downsampling and exact spatial search.

mod cloud;
pub mod index;
pub mod io;
pub mod sampling;

pub use cloud::{ClassId, PointCloud};
pub use index::{Neighbor, SpatialIndex};
pub use io::{load_cloud, save_cloud, CloudFormat};
pub use sampling::{grid_downsample, random_downsample, GridSampleResult};
