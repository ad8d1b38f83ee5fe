pub mod grid;
pub mod model;
pub mod propagator;
pub mod bohm;
pub mod analytic;
pub mod io;
pub mod ensemble;
pub mod config;
pub mod runner;
