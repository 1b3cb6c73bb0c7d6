//! Boosted Haar-feature cascades with two feature-selection back ends:
//! exhaustive Gentle AdaBoost over every feature of the window, and a
//! genetic search that hands AdaBoost an evolved subset per stage.

pub mod bench;
pub mod boost;
pub mod cascade;
pub mod detect;
pub mod error;
pub mod eval;
pub mod ga;
pub mod haar;
pub mod image;
pub mod stump;
pub mod synth;

pub use error::{Error, Result};
