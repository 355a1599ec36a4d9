//! Training dynamics of over-parameterized two-layer linear networks.
//!
//! The model is `f(x) = aᵀWx` with both layers trainable. This crate
//! implements the optimizers whose noise structure drives the model out of
//! the lazy (kernel) regime — label-noise SGD, SAM, and a three-state
//! oscillation chain for the second layer — together with the diagnostics
//! that make the two-phase picture measurable (neuron norms, escape from
//! initialization, alignment with the teacher, an exact telescoping
//! identity for `‖wᵢ‖²`) and a Monte-Carlo verification suite for every
//! claim that is checkable by computation.
//!
//! Start with [`model::init_ntk`] to build a network, [`data::make_teacher`]
//! for a ground-truth problem, and [`runner::run_schedule`] to drive a
//! training protocol. The long-form guide lives in `book/` and every code
//! snippet in it compiles and runs as a doc-test of this crate.

// Index loops over paired arrays and wide stepper signatures are the
// natural shape of this numeric code.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod snapshot;
pub mod verify;

pub use error::{Error, Result};
pub use model::{InitConfig, NetworkParams};

#[cfg(doctest)]
mod book {
    //! Runs every fenced Rust block in the guide as a doc-test so the book
    //! cannot drift out of sync with the library.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(network, "../../../book/src/network.md");
    chapter!(data, "../../../book/src/data.md");
    chapter!(optimizers, "../../../book/src/optimizers.md");
    chapter!(two_phase, "../../../book/src/two-phase.md");
    chapter!(oscillation, "../../../book/src/oscillation.md");
    chapter!(verification, "../../../book/src/verification.md");
    chapter!(running, "../../../book/src/running.md");
}
