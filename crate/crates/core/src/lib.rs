//! Differentiable equations-system constructor for hierarchical analog circuits.

pub mod analysis;
pub mod circuit;
pub mod compiler;
pub mod elements;
pub mod graph;
pub mod netlist;
pub mod optim;
pub mod par;
pub mod sizing;
pub mod sparse;
pub mod submodel;

/// Marker index of the reference node. It is never a row or column of the
/// assembled system and reads as 0 V.
pub const GND: usize = usize::MAX;
