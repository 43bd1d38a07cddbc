//! Battery flexibility scheduling in distribution grids: linearized
//! dynamic optimal power flow inside a rolling-horizon MPC, and a neural
//! controller trained to imitate it.

pub mod bench;
pub mod calendar;
pub mod dataset;
pub mod dopf;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod hyperopt;
pub mod linearizer;
pub mod mpc;
pub mod npc;
pub mod series;

pub use error::{Error, Result};
