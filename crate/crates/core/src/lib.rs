//! Minimum-time, collision-free crossing of connected autonomous vehicles
//! through a lane-free, signal-free four-legged intersection.
//!
//! The crate assembles a free-final-time optimal control problem over a
//! kinematic bicycle model, enforces collision avoidance between polytopic
//! footprints through the dual of the minimum-distance problem, transcribes it
//! by Radau collocation and solves it with an in-repo interior-point method.

pub mod ad;
pub mod analysis;
pub mod collocation;
pub mod exec;
pub mod geometry;
pub mod nlp;
pub mod ocp;
pub mod planner;
pub mod scenario;
pub mod vehicle;

pub use exec::Exec;
