//! Numerical laboratory for controlled front propagation in time-dependent
//! incompressible flows: a G-equation level-set solver, reachable-set
//! measurement, and effective-shape (homogenized limit) estimation.

pub mod config;
pub mod ensemble;
pub mod flow;
pub mod grid;
pub mod gsolve;
pub mod homog;
pub mod reach;

pub use flow::{FlowBounds, FlowKind, FlowSpec, TimeModulation, VelocityField};
pub use grid::{Grid, ScalarField};
pub use gsolve::{InitialData, ScalarFieldSeries, SolveConfig};
pub use homog::{EffectiveShape, HomogConfig, TravelTimeSample};
pub use reach::{CubeWindow, ReachMeasurement};
