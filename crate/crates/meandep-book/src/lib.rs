//! Mirrors each guide chapter as a module so its code blocks run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data-model.md")]
pub mod data_model {}

#[doc = include_str!("../../../book/src/covariance.md")]
pub mod covariance {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/testing.md")]
pub mod testing {}

#[doc = include_str!("../../../book/src/prediction.md")]
pub mod prediction {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
