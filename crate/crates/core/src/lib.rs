pub mod cbs;
pub mod cld;
pub mod dataset;
pub mod io;
pub mod loss;
pub mod model;
pub mod morph;
pub mod raster;
pub mod rng;
pub mod synth;
pub mod train;
