//! Interactive lane-change planning in dense, non-cooperative traffic.
//!
//! The ego vehicle is planned with a constrained iterative LQR over a
//! kinematic bicycle model. Surrounding vehicles are keep-out ellipses whose
//! motion is predicted at constant velocity; the planner re-solves every
//! replanning stride and falls back from the target-lane path to an abort path
//! and finally to a braking backup when its safety check fails.
//!
//! [`world`] provides the closed-loop ground truth and [`harness`] the
//! scenario runs, grid sweeps and trace export used by the command line tool.

pub mod constraints;
pub mod error;
pub mod harness;
pub mod objective;
pub mod planner;
pub mod solver;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};
