//! Fixed-time gradient flows for unconstrained, constrained, composite and
//! networked optimization, with settling-time bounds and regret analysis.

pub mod error;
pub mod linalg;
pub mod objective;
pub mod dynamics;
pub mod protocols;
pub mod proximal;
pub mod flows;
pub mod bounds;
pub mod regret;
pub mod io;
pub mod network;
pub mod problems;
pub mod cases;

pub use error::{Error, Result};
pub use objective::{Objective, SolveReport, Trajectory};
pub use protocols::{ClassConstants, Kind, Protocol, ProtocolSum};
