//! Strategies and laws shared by the property suites and the acceptance run.
#![allow(dead_code)]

pub mod algebra;
pub mod dsl;

use proptest::test_runner::{Config, RngSeed};

pub fn config(cases: u32, seed: u64) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    }
}
