//! Head-aware KV-cache compression on recorded attention traces.
//!
//! The crate classifies attention heads by how far their semantic vectors
//! sit from the layer's semantic centre, gives the outliers their whole
//! cache, and trims the rest to sinks, recent tokens and a handful of
//! high-scoring middle tokens. Baseline policies, a fidelity metric against
//! the full cache, memory accounting and an empirical check of the
//! head-contribution bound round it out.
//!
//! ```
//! use headcache::budget::{apply_policy, PolicyKind, PolicyParams};
//! use headcache::semantic::profile_layer;
//! use headcache::trace::{gen_synthetic_trace, SyntheticProfile, TraceShape};
//!
//! let trace = gen_synthetic_trace(
//!     &SyntheticProfile::clustered(1, 1, 0.0),
//!     TraceShape::new(1, 6, 128, 8),
//! )?;
//! let profile = profile_layer(0, trace.layer(0), 16, 64, 2)?;
//! let params = PolicyParams { budget_ratio: 0.5, sinks: 4, recents: 16, window: 16, kernel: 7 };
//! let plan = apply_policy(0, trace.layer(0), &profile.classes(), PolicyKind::TaskKv, &params)?;
//! assert!(plan.slots_used() <= plan.total_budget);
//! # Ok::<(), headcache::Error>(())
//! ```

pub mod budget;
pub mod cache;
pub mod contrib;
mod error;
pub mod fidelity;
pub mod harness;
pub mod rng;
pub mod semantic;
pub mod tensor;
pub mod trace;

pub use error::{Error, Result};
