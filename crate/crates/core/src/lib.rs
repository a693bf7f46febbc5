//! Auditing toolkit for demographic bias in LLM tutors.

pub mod biasstats;
pub mod cohort;
pub mod corpus;
pub mod modelgate;
pub mod promptkit;
pub mod readability;
pub mod report;
pub mod seeds;
pub mod taskrunner;
