//! The book chapters, compiled as doc-tests so their listings can't drift
//! from the library.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
mod data {}
#[doc = include_str!("../../../book/src/training.md")]
mod training {}
#[doc = include_str!("../../../book/src/metrics.md")]
mod metrics {}
#[doc = include_str!("../../../book/src/refinement.md")]
mod refinement {}
#[doc = include_str!("../../../book/src/checkpoints.md")]
mod checkpoints {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
