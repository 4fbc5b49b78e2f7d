//! Simulated participants that drive the trial service over HTTP, with
//! closed-form accuracy expectations for each policy.

mod client;
mod cohort;
mod policy;

pub use client::HttpApi;
pub use cohort::{run_cohort, run_session, simulate, truth_oracle, CohortOptions, TruthOracle};
pub use policy::{arm_moments, resolve_policies, Action, AgentPolicy, ArmMoments, ThinkTime};
