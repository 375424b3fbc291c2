//! Shared fixtures for the criterion benchmarks.

use ofo_core::powergrid::{self, GridModel};
use ofo_core::{DMatrix, DVector, SensitivityModel, SeparableObjective};

/// Default eight-node grid at uniform conductance `g`.
pub fn grid(g: f64) -> GridModel {
    powergrid::assemble_stabilized(&powergrid::default_topology().with_conductance(g))
        .expect("default grid assembles")
        .0
}

/// Two-agent reference game.
pub fn reference() -> (SeparableObjective, SensitivityModel, DVector<f64>) {
    (
        SeparableObjective::quadratic(1.0, 1.0, DVector::zeros(2)).expect("valid weights"),
        SensitivityModel::from_h(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).expect("square"),
        DVector::from_element(2, 1.0),
    )
}
