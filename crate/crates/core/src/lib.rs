pub mod delaunay;
pub mod geom;
pub mod geonet;
pub mod graphnet;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pointcloud;
pub mod supervision;
pub mod surface;
