//! One-terminal fault location for wind-farm collector feeders with a learned
//! additive distance correction.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod grn;
pub mod io;
pub mod locators;
pub mod phasor;
pub mod pipeline;
pub mod sim;
pub mod tune;
