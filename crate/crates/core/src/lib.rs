//! Reward-guided Langevin sampling over a toy latent backbone.
//!
//! A Gaussian-mixture prior in latent space, an interpolation schedule and a
//! small decoder form the [`backbone`]. Six differentiable reward heads in
//! [`rewards`] score decoded images; [`policy`] fuses them into one scalar
//! with adaptive weights and step size; [`sampler`] runs the reverse-time
//! chain. [`oracle`] holds independent reference implementations used by the
//! test suite and the `verify` command.

pub mod backbone;
pub mod config;
pub mod error;
pub mod guidance;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod rewards;
pub mod sampler;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};

/// Book chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/backbone.md")]
    mod backbone {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/sampler.md")]
    mod sampler {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
