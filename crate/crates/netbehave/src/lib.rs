//! Behavioral clustering of network connections.
//!
//! This crate groups unidirectional connections from packet captures by what
//! they *do* on the wire rather than by payload signatures. Each connection
//! is reduced to four short sequences — packet sizes, inter-arrival times,
//! source ports, destination ports — compared pairwise with warping and
//! n-gram distances, and clustered density-based so that recurring behaviors
//! (scans, beacons, floods, bulk transfers) land in the same cluster across
//! samples. Downstream, per-sample membership profiles summarize which
//! behaviors a sample exhibits, and a subset lattice over those profiles
//! shows how samples relate.
//!
//! The pipeline, end to end:
//!
//! 1. [`capture`] — read packets, group them into connections, truncate to a
//!    fixed window.
//! 2. [`features`] — n-gram port profiles plus simple per-connection
//!    statistics for the baseline mode.
//! 3. [`distance`] — the combined pairwise distance matrix.
//! 4. [`cluster`] — density-based clustering over that matrix.
//! 5. [`profiles`] — per-sample membership bit strings and their subset
//!    lattice.
//! 6. [`report`] — heatmaps, per-cluster quality estimates, summaries.
//! 7. [`eval`] / [`synth`] — ground-truth scoring and synthetic traffic for
//!    experiments.
//! 8. [`pipeline`] — the orchestration used by the command-line binary.

pub mod capture;
pub mod cluster;
pub mod distance;
pub mod eval;
pub mod features;
pub mod profiles;
pub mod pipeline;
pub mod report;
pub mod synth;

// Every Rust snippet in the guide compiles and runs as a doctest, so the
// book cannot drift from the library it documents.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/connections.md")]
    mod connections {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/distance.md")]
    mod distance {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/profiles.md")]
    mod profiles {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
