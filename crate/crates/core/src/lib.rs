//! Exchangeable Markov multi-state survival processes.

pub mod error;
pub mod estimators;
pub mod io;
pub mod mcmc;
pub mod measure;
pub mod predictive;
pub mod statespace;
pub mod trajectory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-space.md")]
    mod state_space {}
    #[doc = include_str!("../../../book/src/transition-measure.md")]
    mod transition_measure {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/predictive.md")]
    mod predictive {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/survival-curves.md")]
    mod survival_curves {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
