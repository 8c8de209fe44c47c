//! Optimal LQG control of a plant driven by two controllers with asymmetric
//! information: a remote controller that receives the state over a lossy
//! link, and an embedded controller that always sees a noisy local
//! measurement.
//!
//! The pipeline is [`model`] → [`riccati`] → [`controller`], with
//! [`estimator`] supplying the filters and [`sim`] closing the loop.

pub mod controller;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod riccati;
pub mod sim;

pub use controller::{CostReport, GainBlock, GainSchedule, StepGains};
pub use error::{NcsError, Result, Weight};
pub use estimator::{CovarianceStep, EmbeddedFilterState, RemoteFilterState};
pub use model::{prepare, AssumptionReport, AugmentedSpec, SystemSpec, ValidatedSpec};
pub use riccati::{AreSolution, Certificates, RiccatiSchedule, RiccatiStep, Verdict};
pub use sim::{ChannelModel, Replicate, SimResult, Simulator, TrajectoryRecord};
