//! The chapters of `book/` compiled as documentation, so every Rust listing
//! in the guide runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/trace-format.md")]
pub mod trace_format {}

#[doc = include_str!("../../../book/src/attention.md")]
pub mod attention {}

#[doc = include_str!("../../../book/src/semantic-vectors.md")]
pub mod semantic_vectors {}

#[doc = include_str!("../../../book/src/classification.md")]
pub mod classification {}

#[doc = include_str!("../../../book/src/budgets.md")]
pub mod budgets {}

#[doc = include_str!("../../../book/src/contribution.md")]
pub mod contribution {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
