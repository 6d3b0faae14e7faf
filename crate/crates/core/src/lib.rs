pub mod dataset;
pub mod grd;
pub mod grid;
pub mod meteo;
pub mod metrics;
pub mod microclimate;
pub mod routing;
pub mod scene;
pub mod solar;
pub mod stack;
pub mod stvit;
