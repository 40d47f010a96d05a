//! Command-line driver and wire-protocol server for `context-kernel`.

pub mod server;
pub mod wire;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/serving.md")]
mod book {}
