//! Static detection of privacy leaks in enclave programs.
//!
//! The pipeline reads enclave interface definitions ([`edl`]) and programs in
//! a small SSA IR ([`sir`]), runs an inclusion-based points-to analysis
//! ([`points_to`]), builds call and value-flow graphs ([`graphs`]), taints
//! pointers that may reference untrusted memory to find leak sinks
//! ([`taint`]), and finally walks the value-flow graph backward from each
//! sink to the allocations whose contents escape ([`tracker`]).
//!
//! [`pipeline::analyze`] runs all of it and produces a [`report::LeakReport`].
//! [`corpus`] holds the golden-case runner and the test program generator.

pub mod corpus;
pub mod edl;
pub mod graphs;
pub mod pipeline;
pub mod points_to;
pub mod report;
pub mod sir;
pub mod taint;
pub mod tracker;
