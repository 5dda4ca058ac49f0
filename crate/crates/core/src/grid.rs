//! Uniform hyper-rectangular partitions and the quantization map.
//!
//! Cells are half-open `[l, h)` per dimension except the last cell of each
//! dimension, which is closed. Representatives are cell centers. Flat cell
//! indices are row-major (the last dimension varies fastest).

use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::model::HyperRect;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    domain: HyperRect,
    cells: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl Grid {
    pub fn new(domain: HyperRect, cells_per_dim: Vec<usize>) -> Result<Self> {
        check_dim("cells_per_dim", domain.dim(), cells_per_dim.len())?;
        if domain.dim() == 0 {
            return Err(Error::InvalidArgument("grid needs at least one dimension".into()));
        }
        for (d, (l, u)) in domain.lower().iter().zip(domain.upper()).enumerate() {
            if !(u > l) {
                return Err(Error::InvalidArgument(format!("degenerate domain in dimension {d}")));
            }
        }
        if cells_per_dim.contains(&0) {
            return Err(Error::InvalidArgument("cells per dimension must be >= 1".into()));
        }
        let mut strides = vec![1usize; cells_per_dim.len()];
        for d in (0..cells_per_dim.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1]
                .checked_mul(cells_per_dim[d + 1])
                .ok_or_else(|| Error::TooLarge("cell count overflows".into()))?;
        }
        let total = strides[0]
            .checked_mul(cells_per_dim[0])
            .ok_or_else(|| Error::TooLarge("cell count overflows".into()))?;
        Ok(Grid {
            domain,
            cells: cells_per_dim,
            strides,
            total,
        })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn domain(&self) -> &HyperRect {
        &self.domain
    }

    pub fn cells_per_dim(&self) -> &[usize] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.total
    }

    /// Index reserved for "outside the domain".
    pub fn absorbing_index(&self) -> usize {
        self.total
    }

    pub fn width(&self, d: usize) -> f64 {
        (self.domain.upper()[d] - self.domain.lower()[d]) / self.cells[d] as f64
    }

    /// `i`-th boundary of dimension `d`, `i ∈ 0..=cells[d]`.
    #[inline]
    pub fn boundary(&self, d: usize, i: usize) -> f64 {
        let (l, u) = (self.domain.lower()[d], self.domain.upper()[d]);
        if i >= self.cells[d] {
            u
        } else {
            l + i as f64 * (u - l) / self.cells[d] as f64
        }
    }

    /// All `cells[d] + 1` boundaries of dimension `d`.
    pub fn boundaries(&self, d: usize) -> Vec<f64> {
        (0..=self.cells[d]).map(|i| self.boundary(d, i)).collect()
    }

    #[inline]
    pub fn center(&self, d: usize, i: usize) -> f64 {
        let (l, u) = (self.domain.lower()[d], self.domain.upper()[d]);
        l + (i as f64 + 0.5) * (u - l) / self.cells[d] as f64
    }

    /// Cell diameter in the infinity norm: the largest per-dimension width.
    pub fn delta(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).fold(0.0, f64::max)
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.cells
            .iter()
            .zip(&self.strides)
            .map(|(c, s)| (flat / s) % c)
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn representative(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.center(d, i))
            .collect()
    }

    pub fn representatives(&self) -> Vec<Vec<f64>> {
        (0..self.total).map(|i| self.representative(i)).collect()
    }

    /// Per-dimension `[low, high]` bounds of a cell.
    pub fn cell_bounds(&self, flat: usize) -> Vec<(f64, f64)> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| (self.boundary(d, i), self.boundary(d, i + 1)))
            .collect()
    }

    /// Index of the cell along dimension `d` holding coordinate `v`, if any.
    pub fn axis_cell(&self, d: usize, v: f64) -> Option<usize> {
        let (l, u) = (self.domain.lower()[d], self.domain.upper()[d]);
        if !(v >= l && v <= u) {
            return None;
        }
        let n = self.cells[d];
        let mut i = (((v - l) * n as f64) / (u - l)).floor() as usize;
        i = i.min(n - 1);
        // keep the arithmetic index consistent with `boundary`
        while i > 0 && v < self.boundary(d, i) {
            i -= 1;
        }
        while i + 1 < n && v >= self.boundary(d, i + 1) {
            i += 1;
        }
        Some(i)
    }

    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for (d, v) in x.iter().enumerate() {
            flat += self.axis_cell(d, *v)? * self.strides[d];
        }
        Some(flat)
    }

    /// Quantization map: cell index and representative, or the absorbing
    /// index with no representative when `x` leaves the domain.
    pub fn quantize(&self, x: &[f64]) -> (usize, Option<Vec<f64>>) {
        match self.cell_of(x) {
            Some(i) => (i, Some(self.representative(i))),
            None => (self.absorbing_index(), None),
        }
    }

    /// Stable digest of the grid geometry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"grid");
        for (l, u) in self.domain.lower().iter().zip(self.domain.upper()) {
            h.update(l.to_le_bytes());
            h.update(u.to_le_bytes());
        }
        for c in &self.cells {
            h.update((*c as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Finite input alphabet of an abstraction: either a grid (representatives
/// are cell centers) or an explicit list of input vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSet {
    Grid(Grid),
    List(Vec<Vec<f64>>),
}

impl InputSet {
    pub fn list(values: Vec<Vec<f64>>) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::InvalidArgument("input list is empty".into()))?;
        if values.iter().any(|v| v.len() != first.len()) {
            return Err(Error::InvalidArgument("input vectors differ in length".into()));
        }
        Ok(InputSet::List(values))
    }

    /// Evenly spaced scalar inputs including both endpoints.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("need at least one input".into()));
        }
        if count == 1 {
            return Self::list(vec![vec![lo]]);
        }
        Self::list(
            (0..count)
                .map(|i| vec![lo + (hi - lo) * i as f64 / (count - 1) as f64])
                .collect(),
        )
    }

    pub fn representatives(&self) -> Vec<Vec<f64>> {
        match self {
            InputSet::Grid(g) => g.representatives(),
            InputSet::List(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InputSet::Grid(g) => g.num_cells(),
            InputSet::List(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSet::Grid(g) => g.dim(),
            InputSet::List(v) => v.first().map_or(0, Vec::len),
        }
    }

    pub fn digest(&self) -> String {
        match self {
            InputSet::Grid(g) => g.digest(),
            InputSet::List(v) => {
                let mut h = Sha256::new();
                h.update(b"list");
                for x in v.iter().flatten() {
                    h.update(x.to_le_bytes());
                }
                hex::encode(&h.finalize()[..8])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn room_grid() -> Grid {
        Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![400]).unwrap()
    }

    #[test]
    fn running_example_grid() {
        let g = room_grid();
        assert_eq!(g.num_cells(), 400);
        assert!((g.delta() - 0.005).abs() < 1e-15);
        assert!((g.representative(0)[0] - 19.0025).abs() < 1e-12);
        assert!((g.representative(1)[0] - 19.0075).abs() < 1e-12);
    }

    #[test]
    fn one_cell_grid() {
        let g = Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![1]).unwrap();
        assert_eq!(g.representatives(), vec![vec![0.5]]);
        assert_eq!(g.delta(), 1.0);
    }

    #[test]
    fn two_dimensional_grid() {
        let g = Grid::new(HyperRect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(), vec![2, 3]).unwrap();
        assert_eq!(g.num_cells(), 6);
        assert_eq!(g.delta(), 0.5);
        let g = Grid::new(HyperRect::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap(), vec![4, 4]).unwrap();
        assert_eq!(g.delta(), 0.5);
    }

    #[test]
    fn degenerate_domain_rejected() {
        assert!(Grid::new(HyperRect::interval(1.0, 1.0).unwrap(), vec![3]).is_err());
        assert!(Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![0]).is_err());
    }

    #[test]
    fn quantize_on_boundary_uses_upper_cell() {
        let (i, rep) = room_grid().quantize(&[20.0]);
        assert_eq!(i, 200);
        assert!((rep.unwrap()[0] - 20.0025).abs() < 1e-12);
    }

    #[test]
    fn quantize_upper_edge_is_closed() {
        let (i, _) = room_grid().quantize(&[21.0]);
        assert_eq!(i, 399);
    }

    #[test]
    fn quantize_outside_is_absorbing() {
        let g = room_grid();
        let (i, rep) = g.quantize(&[25.0]);
        assert_eq!(i, g.absorbing_index());
        assert!(rep.is_none());
        assert_eq!(g.quantize(&[f64::NAN]).0, g.absorbing_index());
    }

    #[test]
    fn representative_is_fixed_point() {
        let g = room_grid();
        for i in 0..g.num_cells() {
            let r = g.representative(i);
            let (j, q) = g.quantize(&r);
            assert_eq!(i, j);
            assert_eq!(q.unwrap(), r);
        }
    }

    #[test]
    fn cells_tile_the_domain() {
        let g = Grid::new(HyperRect::new(vec![-1.0, 0.0, 2.0], vec![1.5, 0.3, 7.0]).unwrap(), vec![7, 3, 11])
            .unwrap();
        let total: f64 = (0..g.num_cells())
            .map(|i| g.cell_bounds(i).iter().map(|(l, h)| h - l).product::<f64>())
            .sum();
        assert!((total - g.domain().volume()).abs() <= 1e-9 * g.domain().volume());
    }

    #[test]
    fn input_linspace() {
        let s = InputSet::linspace(0.0, 0.6, 3).unwrap();
        assert_eq!(s.representatives(), vec![vec![0.0], vec![0.3], vec![0.6]]);
    }

    proptest! {
        #[test]
        fn quantization_error_within_half_delta(x in 19.0..=21.0f64, y in -3.0..=4.0f64) {
            let g = Grid::new(HyperRect::new(vec![19.0, -3.0], vec![21.0, 4.0]).unwrap(), vec![40, 13]).unwrap();
            let (i, rep) = g.quantize(&[x, y]);
            prop_assert!(i < g.num_cells());
            let rep = rep.unwrap();
            let err = (rep[0] - x).abs().max((rep[1] - y).abs());
            prop_assert!(err <= g.delta() / 2.0 + 1e-12);
            let b = g.cell_bounds(i);
            prop_assert!(b[0].0 <= x && x <= b[0].1 && b[1].0 <= y && y <= b[1].1);
        }
    }
}
