//! Transverse feedback linearization with partial information for
//! single-input control-affine systems.
//!
//! Decides whether a target submanifold admits an observable transverse
//! output near a base point, builds that output from a flow chart, derives
//! the normal form, and simulates output-feedback stabilization of the set
//! with a high-gain observer.

pub mod charts;
pub mod config;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod liegeom;
pub mod ltflpi;
pub mod ode;
pub mod sampling;
pub mod sim;
pub mod sysmodel;

pub use config::{Config, Sampling, Tolerances};
pub use error::{Error, Result};
pub use expr::{parse, Expr, VarTable};
pub use liegeom::{Distribution, Frame, VectorField};
pub use sysmodel::{load_system, ControlSystem, SystemFile, TargetSet};

#[cfg(test)]
pub(crate) mod testing;
