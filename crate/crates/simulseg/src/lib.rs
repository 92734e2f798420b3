//! Desk-scale laboratory for segmentation in simultaneous speech translation.
//!
//! The crate wires together the pieces of a streaming segmentation-translation
//! experiment: acoustic feature extraction ([`audio`]), baseline segmenters
//! ([`segmenters`]), a trainable boundary policy with sliding-window streaming
//! decoding ([`policy`]), preference-pair construction ([`pairs`]) and direct
//! preference optimization of the policy ([`dpo`]), a segmentation-translation
//! loop with a deterministic oracle backend and an external adapter protocol
//! ([`translate`]), quality/latency metrics and tradeoff sweeps ([`metrics`]),
//! and a synthetic corpus generator ([`synth`]).
//!
//! Everything is a deterministic simulation: wall-clock time is modeled, so
//! results are reproducible bit-for-bit given a seed.

// Validation deliberately writes `!(x > 0.0)` so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cli;
pub mod dpo;
pub mod metrics;
pub mod pairs;
pub mod policy;
pub mod segmenters;
pub mod synth;
pub mod translate;

pub(crate) mod util;
