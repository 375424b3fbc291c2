//! Online feedback optimization for networked LTI systems.
//!
//! The crate runs centralized and decentralized gradient-feedback controllers
//! in closed loop with either the steady-state map `y = H u + d` or the full
//! state-space plant, and computes the certificates that govern them:
//! strong monotonicity of the decentralized update, the diagonal-dominance
//! coupling condition, linear contraction rates, the distance between the
//! decentralized (Nash) operating point and the global optimum, and the
//! two-by-two contraction matrix for the dynamic interconnection.
//!
//! The [`powergrid`] module builds the 8-node DC grid used as the reference
//! scenario.

pub mod analysis;
pub mod controller;
pub mod equilibria;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod objective;
pub mod plant;
pub mod powergrid;
pub mod sim;

pub use analysis::{
    AnalysisReport, ConstantConvention, ContractionRate, CouplingCondition, EtaBranch, EtaStar,
    LtiRateCertificate, MonotonicityConstants, SuboptimalityBound, TrackingCheck,
};
pub use controller::{ControllerConfig, ControllerMode};
pub use equilibria::{EquilibriumSolution, SolutionKind};
pub use error::{OfoError, Result};
pub use objective::{Moduli, QuadraticObjective, ScalarCost, SeparableObjective};
pub use plant::{LtiPlant, SensitivityModel};
pub use powergrid::{GridModel, GridSpec, SweepRow};
pub use sim::{ErrorMetrics, PlantKind, Trajectory, TrajectoryMeta};

pub use nalgebra::{DMatrix, DVector};
