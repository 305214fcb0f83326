//! Partitioned computing over relations that mix sensitive and
//! non-sensitive rows.
//!
//! - [`data`]: relations, sensitivity policies and the sensitive /
//!   non-sensitive split.
//! - [`crypto`]: a simulated searchable encrypted store.
//! - [`binning`]: query bins that hide which keyword a query targets.
//! - [`public_exec`]: binned selection over an encrypted store plus a
//!   plaintext store.
//! - [`hybrid`]: split execution across a private and a public cloud.
//! - [`adversary`]: what an honest-but-curious cloud learns from a trace.
//! - [`cost`]: analytical cost model, generic over the float type.

pub mod adversary;
pub mod binning;
pub mod cost;
pub mod crypto;
pub mod data;
pub mod demo;
pub mod fixtures;
pub mod hybrid;
pub mod public_exec;

pub type CostParams64 = cost::CostParams<f64>;
pub type CostParams32 = cost::CostParams<f32>;
