//! Discrete-event simulator and protocol library for LEO satellite
//! handover signaling.
//!
//! A moving low-Earth-orbit constellation forces every terminal in a cell
//! to hand over within seconds, and the resulting request flood can
//! overwhelm a satellite's onboard processors. This crate models that
//! regime end to end:
//!
//! * [`geometry`] — coverage sweep math and the closed-form handover-load
//!   estimate behind the `analyze` subcommand.
//! * [`des`] — the deterministic event engine: microsecond clock, bounded
//!   priority queues, processor pools, and the delay/service model.
//! * [`protocol`] — the group-handover cryptography: XOR secret shares,
//!   hash commitments, aggregated tickets, and signed, replay-protected
//!   notifications.
//! * [`entities`] — UE, satellite, and core state machines for the
//!   baseline per-UE handover and the group handover.
//! * [`scenario`] — configuration, seeded deployment, fixed-square
//!   grouping, and construction of the three-satellite sweep experiment.
//! * [`metrics`] — counters, waiting times, time buckets, seed
//!   aggregation, and CSV/JSON exports.
//! * [`cli`] — the `run`, `compare`, and `analyze` subcommands.
//!
//! The `book/` directory holds a guide whose code snippets are compiled
//! and run as documentation tests via the hidden modules below, so the
//! guide cannot drift from the library.

pub mod cli;
pub mod des;
pub mod entities;
pub mod geometry;
pub mod ids;
pub mod metrics;
pub mod protocol;
pub mod scenario;

// Guide chapters double as doctests (`cargo test --doc`).
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/handover-load.md")]
    mod handover_load {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
