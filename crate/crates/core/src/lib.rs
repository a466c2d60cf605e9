//! Risk-aware automated diff review: diff model, policy, risk scoring, the
//! review agent, eligibility rules, the review funnel, statistics and a
//! discrete-event simulator.

pub mod diff;
pub mod exec;
pub mod policy;
pub mod review;
pub mod risk;
pub mod eligibility;
pub mod funnel;
pub mod stats;
pub mod telemetry;
pub mod eventlog;
pub mod ingest;
pub mod sim;
