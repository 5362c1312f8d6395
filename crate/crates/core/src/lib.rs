//! Support-selective phase invariants of diagonal unitaries and invariant-based
//! pulse synthesis for an NV-center spin register.
//!
//! The pipeline: a [`pulse::PulseParams`] drives the rotating-frame
//! [`nvmodel::RegisterModel`], [`propagate`] produces the register propagator,
//! the logical block's diagonal phases are reduced to invariants `Delta_S`
//! ([`invariants`]), and [`objective`] turns those into a control cost that
//! [`search`] minimizes.

pub mod error;
pub mod invariants;
pub mod linalg;
pub mod nvmodel;
pub mod objective;
pub mod propagate;
pub mod pulse;
pub mod search;
pub mod selective;
pub mod table;
pub mod walsh;

pub use error::{Error, Result};
