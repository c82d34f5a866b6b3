//! Simulation of plurality consensus protocols built on generations and
//! two-choices sampling: a synchronous round-based version, an asynchronous
//! version coordinated by one leader, and a decentralised version with
//! self-elected cluster leaders.
//!
//! [`harness::run_experiment`] runs a configured batch of trials;
//! [`harness::write_outputs`] turns the result into CSV and JSON files.

// `!(x > 0.0)` is how parameter checks reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod config;
pub mod error;
pub mod event;
pub mod harness;
pub mod metrics;
pub mod multi_leader;
pub mod oracle;
pub mod params;
pub mod population;
pub mod rng;
pub mod single_leader;
pub mod sync;
pub mod types;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }

    chapter!(introduction, "introduction.md");
    chapter!(running, "running.md");
    chapter!(synchronous, "synchronous.md");
    chapter!(asynchronous, "asynchronous.md");
    chapter!(clusters, "clusters.md");
    chapter!(outputs, "outputs.md");
    chapter!(results, "results.md");
}
