//! Distance and relative-position estimation between two nodes that observe
//! the same multipath components (MPCs) of a shared radio environment.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assoc;
pub mod chansim;
pub mod distest;
pub mod error;
pub mod eval;
pub mod geom;
pub mod likelihood;
pub mod posest;
pub mod seed;

pub use error::{Error, Result};

/// Guide chapters, compiled as doc-tests so their snippets stay current.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/distance.md")]
    mod distance {}
    #[doc = include_str!("../../../book/src/position.md")]
    mod position {}
    #[doc = include_str!("../../../book/src/association.md")]
    mod association {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
