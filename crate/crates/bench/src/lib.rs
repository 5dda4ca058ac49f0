//! Shared fixtures for the benchmarks in `benches/`.

use stochabs_core::{Grid, HyperRect, InputSet, LinearDtScs, Region};

pub fn room() -> LinearDtScs {
    LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6)
}

/// Grid over the comfort interval and `n` gridded heater levels.
pub fn room_grid(cells: usize, inputs: usize) -> (Grid, InputSet) {
    let grid = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![cells]).unwrap();
    (grid, InputSet::linspace(0.0, 0.6, inputs).unwrap())
}

pub fn comfort() -> Region {
    Region::single(HyperRect::interval(19.0, 21.0).unwrap())
}
