//! The guide under `book/`, compiled so that every snippet runs as a
//! doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/h2.md")]
pub mod h2 {}

#[doc = include_str!("../../../book/src/irka.md")]
pub mod irka {}

#[doc = include_str!("../../../book/src/delay-search.md")]
pub mod delay_search {}

#[doc = include_str!("../../../book/src/iodirka.md")]
pub mod iodirka {}

#[doc = include_str!("../../../book/src/benchmark.md")]
pub mod benchmark {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
