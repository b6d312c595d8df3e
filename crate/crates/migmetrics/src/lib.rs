//! Indicators of internal migration and its relationship to education,
//! computed from census-style microdata.
//!
//! The crate ingests weighted person records from delimited text files
//! (bindings described by a JSON schema, regions by a hierarchy CSV)
//! and computes migration intensities, age schedules, flow matrices,
//! educational selectivity measures and net-migration regressions. A
//! deterministic synthetic census generator doubles as the test oracle
//! for every estimator, and published reference tables are shipped as
//! fixtures for self-checks.
//!
//! Start with the `examples/` directory: each example is a runnable
//! walkthrough of one capability. The `migmetrics` binary exposes the
//! same operations as subcommands.

pub mod age_profile;
pub mod intensity;
pub mod microdata;
pub mod stats;

pub use microdata::{
    classify_migrant_status, classify_move, classify_settlement_flow, scale_status, Education,
    MigrantStatus, MoveClass, PersonRecord, Reason, RegionHierarchy, RegionId, Scale, Schema,
    SettlementFlow, Sex, UrbanStatus,
};
