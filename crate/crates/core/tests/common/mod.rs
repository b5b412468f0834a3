#![allow(dead_code)]

use std::sync::OnceLock;

use lle_core::params::{shipped_params, shipped_wavenumber};
use lle_core::wave::{solve_steady, turing_seed, NewtonOptions, PeriodicWave};
use lle_core::Grid;

pub fn wave() -> &'static PeriodicWave {
    static W: OnceLock<PeriodicWave> = OnceLock::new();
    W.get_or_init(|| {
        let p = shipped_params();
        let k = shipped_wavenumber();
        let seed = turing_seed(&p, k, 0.6, 64).unwrap();
        solve_steady(&p, k, &seed, NewtonOptions::default()).unwrap()
    })
}

pub fn periodic_grid(w: &PeriodicWave, periods: usize, per_period: usize) -> Grid {
    Grid::new(per_period * periods, periods as f64 / w.k).unwrap()
}
