//! Breakdown frontiers for treatment-effect conclusions.
//!
//! Given binary-treatment data with discrete covariates, the crate estimates
//! the weakest combinations of a selection-on-unobservables relaxation `c`
//! and a rank-invariance relaxation `t` under which a conclusion such as
//! `P(Y1 > Y0) >= p` or `ATE >= mu` still holds, and builds bootstrap lower
//! confidence bands for that frontier.

pub mod bootstrap;
pub mod bounds;
pub mod data;
pub mod empirical;
pub mod error;
pub mod export;
pub mod frontier;
pub mod marginal;
pub mod minarea;
pub mod montecarlo;
pub mod rng;
pub mod smoothing;

pub use bootstrap::{BandResult, BootstrapConfig, SigmaMode};
pub use bounds::{AteBounds, BreakdownPoint, TauRule};
pub use data::{coarsen, load_csv, CoarseningSpec, Dataset};
pub use empirical::{estimate_theta, CellEstimates, CellTheta};
pub use error::{Error, Result};
pub use frontier::{
    CGrid, Claim, DteBounds, FrontierCurve, FrontierEngine, FrontierSettings, GridSpec, JointOp,
};
pub use marginal::{Marginal, StepCdf, TruncNormal};
pub use montecarlo::McDgp;
pub use smoothing::SmoothingConfig;
