//! Shared fixtures for the benchmarks.

use abht_core::data::gen_case_a;
use abht_core::{LabeledDataset, RngStream};

/// Case A draws at the usual noise level.
pub fn case_a(n: usize, seed: u64) -> LabeledDataset {
    gen_case_a(n, 0.01, &mut RngStream::new(seed, 0)).expect("positive sample size")
}
