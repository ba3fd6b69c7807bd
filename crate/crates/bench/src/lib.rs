//! Fixtures shared by the criterion benchmarks.

use sfr_core::benchgen::{generate_in_memory, BenchSpec};
use sfr_core::features::Dataset;

/// The 64-d, 20-class benchmark used by the end-to-end checks.
pub fn standard_spec() -> BenchSpec {
    BenchSpec {
        dim: 64,
        n_classes: 20,
        train_per_class: 200,
        test_per_class: 100,
        separation: 8.0,
        rank: None,
        base_classes: 8,
        increment: 2,
        sessions: 6,
        seed: 11,
        tail_dof: None,
    }
}

pub fn standard_dataset() -> Dataset {
    generate_in_memory(&standard_spec()).expect("standard spec is feasible")
}
