//! Scenario-driven runs of the `pardec-core` pipeline, with CSV output.

pub mod output;
pub mod run;
