//! Shared fixtures for the benchmarks.

use gridsd2e_core::config::RunConfig;
use gridsd2e_core::dataset::Dataset;
use gridsd2e_core::{Grid, GridParams, SpaceBounds};

pub fn square_grid(n: usize) -> Grid {
    Grid::new(
        SpaceBounds::cube(2, 0.0, 10.0).expect("valid bounds"),
        GridParams::centered(n, 2),
    )
    .expect("valid grid")
}

/// Deterministic points spread over `[0, 10)^2`.
pub fn points(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let t = i as f64;
            [
                (t * 0.618_033_988_7).fract() * 10.0,
                (t * 0.754_877_666_2).fract() * 10.0,
            ]
        })
        .collect()
}

pub fn reference_config(samples: usize, n: usize) -> RunConfig {
    let src = format!(
        "seed = 42\n[grid]\nn = {n}\n[decoder]\nreflect_axes = [0, 1]\n[data]\nsamples = {samples}\nchannels = 100\n"
    );
    RunConfig::from_toml_str(&src).expect("valid config")
}

pub fn reference_data(samples: usize) -> (RunConfig, Dataset) {
    let c = reference_config(samples, 6);
    let d = c.dataset().expect("synthetic data");
    (c, d)
}
