//! Residential EV charging demand: expected load profiles from arrival and
//! charging-time distributions, Monte Carlo fleet sampling, and iterated
//! best-response demand response with optional vehicle-to-grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod distributions;
pub mod dr;
pub mod montecarlo;
pub mod optimize;
pub mod profile;
pub mod quadrature;
pub mod scenario;
pub mod special;

pub use analytic::{expected_profile, peak_time, AnalyticError, ChargerModel, ExtendedProfile, PeakTime};
pub use distributions::{match_moments, DistError, Distribution, DistributionSpec, Family, MomentMatch};
pub use dr::{best_response, run_dr, DrConfig, DrError, DrOutcome, UpdateDiscipline};
pub use montecarlo::{EvSession, FleetSpec, SamplingError};
pub use profile::{DemandProfile, ProfileError, TimeGrid};
pub use scenario::{Case, ScenarioConfig, ScenarioError};
