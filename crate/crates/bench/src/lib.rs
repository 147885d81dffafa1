//! Shared fixtures for the benchmarks.

use pilotmatch::datagen::generate;
use pilotmatch::pilot::prepare_pilot;
use pilotmatch::{Dataset, DistanceMatrix, PilotOptions, ScenarioSpec};

/// Base-scenario dataset with `n` units.
pub fn base_dataset(n: usize, seed: u64) -> Dataset {
    generate(&ScenarioSpec { n, ..ScenarioSpec::base() }, seed).expect("base scenario is valid")
}

/// Joint-score distances over the analysis set of a base dataset.
pub fn pilot_distances(n: usize, seed: u64) -> DistanceMatrix {
    let ds = base_dataset(n, seed);
    prepare_pilot(&ds, seed, &PilotOptions::default()).expect("pilot fit").distances
}
