//! Finite MDP abstraction of a [`LinearDtScs`] over a state grid.
//!
//! For every pair of state representative `x̄` and input `ū` the successor
//! distribution is the Gaussian kernel integrated over each cell of the state
//! grid. Mass that leaves the domain, together with any entry dropped by the
//! truncation threshold, is routed to a single absorbing state, so the MDP
//! under-approximates every safety-type probability.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::interval_probability;
use crate::grid::{Grid, InputSet};
use crate::model::LinearDtScs;

/// Per-entry probability floor `γ ∈ [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    gamma: f64,
}

impl TruncationPolicy {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("truncation gamma must lie in [0, 1), got {gamma}")));
        }
        Ok(TruncationPolicy { gamma })
    }

    pub fn none() -> Self {
        TruncationPolicy { gamma: 0.0 }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractionOptions {
    pub truncation: TruncationPolicy,
    /// Refuse to build when the estimated storage exceeds this many bytes.
    pub max_bytes: Option<usize>,
}

impl Default for AbstractionOptions {
    fn default() -> Self {
        AbstractionOptions {
            truncation: TruncationPolicy::none(),
            max_bytes: Some(4 << 30),
        }
    }
}

/// Sparse successor distribution of one `(state, input)` pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    /// `(successor cell, probability)`; ascending by cell when built from a model.
    pub entries: Vec<(u32, f64)>,
    /// Mass of the absorbing state.
    pub absorbing: f64,
}

impl SparseRow {
    /// Row whose absorbing mass is whatever the entries leave over.
    pub fn with_remainder(entries: Vec<(u32, f64)>) -> Self {
        let kept: f64 = entries.iter().map(|(_, p)| p).sum();
        SparseRow {
            entries,
            absorbing: (1.0 - kept).max(0.0),
        }
    }

    pub fn kept_mass(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub model: String,
    pub state_grid: String,
    pub inputs: String,
    pub gamma: f64,
}

/// Sparse finite MDP over `num_cells` grid cells plus one absorbing state
/// (index `num_cells`), which self-loops under every input.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    num_cells: usize,
    num_inputs: usize,
    offsets: Vec<usize>,
    dst: Vec<u32>,
    prob: Vec<f64>,
    absorbing: Vec<f64>,
    state_reps: Option<Vec<Vec<f64>>>,
    input_reps: Option<Vec<Vec<f64>>>,
    provenance: Provenance,
}

impl FiniteMdp {
    /// Assembles an MDP from rows ordered by `state * num_inputs + input`.
    pub fn from_rows(num_cells: usize, num_inputs: usize, rows: Vec<SparseRow>) -> Result<Self> {
        check_dim("rows", num_cells * num_inputs, rows.len())?;
        if num_inputs == 0 {
            return Err(Error::InvalidArgument("MDP needs at least one input".into()));
        }
        if num_cells > u32::MAX as usize {
            return Err(Error::TooLarge("more than 2^32 cells".into()));
        }
        let total: usize = rows.iter().map(|r| r.entries.len()).sum();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut dst = Vec::with_capacity(total);
        let mut prob = Vec::with_capacity(total);
        let mut absorbing = Vec::with_capacity(rows.len());
        offsets.push(0);
        for row in rows {
            for (d, p) in row.entries {
                if d as usize >= num_cells {
                    return Err(Error::InvalidArgument(format!("successor {d} out of range")));
                }
                dst.push(d);
                prob.push(p);
            }
            absorbing.push(row.absorbing);
            offsets.push(dst.len());
        }
        Ok(FiniteMdp {
            num_cells,
            num_inputs,
            offsets,
            dst,
            prob,
            absorbing,
            state_reps: None,
            input_reps: None,
            provenance: Provenance::default(),
        })
    }

    /// Attaches representatives (e.g. to a hand-built or imported MDP).
    pub fn with_representatives(mut self, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("state representatives", self.num_cells, states.len())?;
        check_dim("input representatives", self.num_inputs, inputs.len())?;
        self.state_reps = Some(states);
        self.input_reps = Some(inputs);
        Ok(self)
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_states(&self) -> usize {
        self.num_cells + 1
    }

    pub fn absorbing_state(&self) -> usize {
        self.num_cells
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_entries(&self) -> usize {
        self.dst.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn state_representatives(&self) -> Option<&[Vec<f64>]> {
        self.state_reps.as_deref()
    }

    pub fn input_representatives(&self) -> Option<&[Vec<f64>]> {
        self.input_reps.as_deref()
    }

    /// Successor cells, their probabilities and the absorbing mass.
    /// The absorbing state itself returns no entries and mass 1.
    #[inline]
    pub fn row(&self, state: usize, input: usize) -> (&[u32], &[f64], f64) {
        if state >= self.num_cells {
            return (&[], &[], 1.0);
        }
        let r = state * self.num_inputs + input;
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.dst[a..b], &self.prob[a..b], self.absorbing[r])
    }

    /// Same MDP with states relabeled: new index of old cell `i` is `perm[i]`.
    /// Entries keep their original order, so sums over a row are bit-identical.
    pub fn permute_states(&self, perm: &[usize]) -> Result<FiniteMdp> {
        check_dim("permutation", self.num_cells, perm.len())?;
        let mut inverse = vec![usize::MAX; self.num_cells];
        for (old, &new) in perm.iter().enumerate() {
            if new >= self.num_cells || inverse[new] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let mut rows = Vec::with_capacity(self.num_cells * self.num_inputs);
        for &old in &inverse {
            for u in 0..self.num_inputs {
                let (d, p, abs) = self.row(old, u);
                let entries = d.iter().zip(p).map(|(d, p)| (perm[*d as usize] as u32, *p)).collect();
                rows.push(SparseRow { entries, absorbing: abs });
            }
        }
        FiniteMdp::from_rows(self.num_cells, self.num_inputs, rows)
    }

    /// Sub-MDP restricted to a subset of inputs, in the given order.
    pub fn select_inputs(&self, inputs: &[usize]) -> Result<FiniteMdp> {
        let mut rows = Vec::with_capacity(self.num_cells * inputs.len());
        for s in 0..self.num_cells {
            for &u in inputs {
                if u >= self.num_inputs {
                    return Err(Error::InvalidArgument(format!("input {u} out of range")));
                }
                let (d, p, abs) = self.row(s, u);
                rows.push(SparseRow {
                    entries: d.iter().copied().zip(p.iter().copied()).collect(),
                    absorbing: abs,
                });
            }
        }
        let mut m = FiniteMdp::from_rows(self.num_cells, inputs.len(), rows)?;
        m.state_reps = self.state_reps.clone();
        m.input_reps = self
            .input_reps
            .as_ref()
            .map(|r| inputs.iter().map(|&u| r[u].clone()).collect());
        m.provenance = self.provenance.clone();
        Ok(m)
    }

    /// Writes `src,input,dst,prob` triplets, including absorbing entries and
    /// the absorbing self-loops.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "src,input,dst,prob")?;
        let abs = self.absorbing_state();
        for s in 0..self.num_cells {
            for u in 0..self.num_inputs {
                let (d, p, a) = self.row(s, u);
                for (d, p) in d.iter().zip(p) {
                    writeln!(w, "{s},{u},{d},{}", fmt17(*p))?;
                }
                if a > 0.0 {
                    writeln!(w, "{s},{u},{abs},{}", fmt17(a))?;
                }
            }
        }
        for u in 0..self.num_inputs {
            writeln!(w, "{abs},{u},{abs},{}", fmt17(1.0))?;
        }
        Ok(())
    }

    /// Reads the format of [`FiniteMdp::write_csv`]. The highest state index
    /// is taken as the absorbing state; missing rows send all mass there.
    pub fn read_csv<R: BufRead>(r: R) -> Result<FiniteMdp> {
        let mut triples = Vec::new();
        let (mut max_state, mut max_input) = (0usize, 0usize);
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("src")) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("line {}: expected 4 fields", lineno + 1)));
            }
            let perr = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            let s: usize = f[0].parse().map_err(|_| perr("src"))?;
            let u: usize = f[1].parse().map_err(|_| perr("input"))?;
            let d: usize = f[2].parse().map_err(|_| perr("dst"))?;
            let p: f64 = f[3].parse().map_err(|_| perr("prob"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parse(format!("line {}: probability {p} outside [0, 1]", lineno + 1)));
            }
            max_state = max_state.max(s).max(d);
            max_input = max_input.max(u);
            triples.push((s, u, d, p));
        }
        if triples.is_empty() {
            return Err(Error::Parse("no transitions".into()));
        }
        let num_cells = max_state;
        let num_inputs = max_input + 1;
        let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); num_cells * num_inputs];
        let mut seen = vec![false; num_cells * num_inputs];
        for (s, u, d, p) in triples {
            if s == num_cells {
                if d != num_cells || p != 1.0 {
                    return Err(Error::Parse("absorbing state must self-loop with probability 1".into()));
                }
                continue;
            }
            let r = s * num_inputs + u;
            seen[r] = true;
            if d < num_cells {
                entries[r].push((d as u32, p));
            }
        }
        let rows = entries
            .into_iter()
            .zip(seen)
            .map(|(mut e, _)| {
                e.sort_by_key(|x| x.0);
                SparseRow::with_remainder(e)
            })
            .collect();
        FiniteMdp::from_rows(num_cells, num_inputs, rows)
    }
}

/// Format with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Successor distribution of `(x̄, ū)` over the cells of `grid`.
pub fn transition_row(
    model: &LinearDtScs,
    x: &[f64],
    u: &[f64],
    grid: &Grid,
    trunc: TruncationPolicy,
) -> Result<SparseRow> {
    check_dim("grid dimension", model.state_dim(), grid.dim())?;
    let (mean, std) = model.kernel_mean_std(x, u)?;
    Ok(row_from_kernel(&mean, &std, grid, trunc.gamma()))
}

fn row_from_kernel(mean: &[f64], std: &[f64], grid: &Grid, gamma: f64) -> SparseRow {
    let dims = grid.dim();
    // per-dimension cell masses restricted to their nonzero window
    let mut axes: Vec<(usize, Vec<f64>)> = Vec::with_capacity(dims);
    for d in 0..dims {
        let n = grid.cells_per_dim()[d];
        let (lo_i, hi_i) = support_window(grid, d, mean[d], std[d]);
        if lo_i > hi_i {
            return SparseRow {
                entries: Vec::new(),
                absorbing: 1.0,
            };
        }
        let mut probs = Vec::with_capacity(hi_i - lo_i + 1);
        let mut lower = grid.boundary(d, lo_i);
        for i in lo_i..=hi_i {
            let upper = grid.boundary(d, i + 1);
            probs.push(interval_probability(lower, upper, mean[d], std[d], i + 1 == n));
            lower = upper;
        }
        // trim zero (or sub-threshold) edges
        let keep = |p: &f64| *p > 0.0 && *p >= gamma;
        let first = probs.iter().position(keep);
        let Some(first) = first else {
            return SparseRow {
                entries: Vec::new(),
                absorbing: 1.0,
            };
        };
        let last = probs.iter().rposition(keep).unwrap_or(first);
        axes.push((lo_i + first, probs[first..=last].to_vec()));
    }

    let mut entries = Vec::new();
    let mut idx = vec![0usize; dims];
    'outer: loop {
        let mut p = 1.0;
        let mut flat = 0usize;
        for d in 0..dims {
            p *= axes[d].1[idx[d]];
            flat += (axes[d].0 + idx[d]) * stride(grid, d);
        }
        if p > 0.0 && p >= gamma {
            entries.push((flat as u32, p));
        }
        // odometer, last dimension fastest
        let mut d = dims;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].1.len() {
                break;
            }
            idx[d] = 0;
        }
    }
    SparseRow::with_remainder(entries)
}

#[inline]
fn stride(grid: &Grid, d: usize) -> usize {
    grid.cells_per_dim()[d + 1..].iter().product()
}

/// Range of cells along `d` that may carry non-negligible mass.
fn support_window(grid: &Grid, d: usize, mean: f64, std: f64) -> (usize, usize) {
    let n = grid.cells_per_dim()[d];
    if std == 0.0 {
        return match grid.axis_cell(d, mean) {
            Some(i) => (i, i),
            None => (1, 0),
        };
    }
    // 40σ is far beyond where erfc underflows to exactly zero (~38.5σ)
    let reach = 40.0 * std;
    let lo = mean - reach;
    let hi = mean + reach;
    let l = grid.domain().lower()[d];
    let u = grid.domain().upper()[d];
    if hi < l || lo > u {
        return (1, 0);
    }
    let w = grid.width(d);
    let lo_i = if lo <= l { 0 } else { (((lo - l) / w).floor() as usize).min(n - 1) };
    let hi_i = if hi >= u { n - 1 } else { (((hi - l) / w).ceil() as usize).min(n - 1) };
    (lo_i, hi_i)
}

fn estimate_bytes(model: &LinearDtScs, grid: &Grid, num_inputs: usize) -> f64 {
    let per_row: f64 = (0..grid.dim())
        .map(|d| {
            let s = model.r()[d];
            let n = grid.cells_per_dim()[d] as f64;
            if s == 0.0 {
                1.0
            } else {
                n.min((2.0 * 9.0 * s / grid.width(d)).ceil() + 2.0)
            }
        })
        .product();
    let rows = grid.num_cells() as f64 * num_inputs as f64;
    rows * (per_row * 12.0 + 16.0)
}

pub fn model_digest(model: &LinearDtScs) -> String {
    let mut h = Sha256::new();
    for m in [model.a(), model.b(), model.c()] {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    for v in model.c0().iter().chain(model.r().iter()) {
        h.update(v.to_le_bytes());
    }
    if let Some(g) = model.gain() {
        for (j, s) in g.slopes().iter().enumerate() {
            for (r, c, v) in s {
                h.update((j as u64).to_le_bytes());
                h.update((*r as u64).to_le_bytes());
                h.update((*c as u64).to_le_bytes());
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// Builds the finite MDP for every (state representative, input) pair.
///
/// Rows are independent and are computed in parallel; the result does not
/// depend on the number of worker threads.
pub fn abstract_system(
    model: &LinearDtScs,
    state_grid: &Grid,
    inputs: &InputSet,
    opts: &AbstractionOptions,
) -> Result<FiniteMdp> {
    check_dim("state grid dimension", model.state_dim(), state_grid.dim())?;
    check_dim("input dimension", model.input_dim(), inputs.dim())?;
    let input_reps = inputs.representatives();
    let est = estimate_bytes(model, state_grid, input_reps.len());
    if let Some(cap) = opts.max_bytes {
        if est > cap as f64 {
            return Err(Error::TooLarge(format!(
                "abstraction would need about {:.1} MiB ({} cells x {} inputs), cap is {:.1} MiB",
                est / (1 << 20) as f64,
                state_grid.num_cells(),
                input_reps.len(),
                cap as f64 / (1 << 20) as f64
            )));
        }
    }
    let num_cells = state_grid.num_cells();
    let num_inputs = input_reps.len();
    let gamma = opts.truncation.gamma();
    let rows: Vec<SparseRow> = (0..num_cells * num_inputs)
        .into_par_iter()
        .with_min_len(64)
        .map(|r| {
            let (s, u) = (r / num_inputs, r % num_inputs);
            let x = state_grid.representative(s);
            let mut mean = vec![0.0; model.state_dim()];
            model
                .mean_into(&x, &input_reps[u], &mut mean)
                .expect("dimensions checked above");
            let std: Vec<f64> = model.r().iter().copied().collect();
            row_from_kernel(&mean, &std, state_grid, gamma)
        })
        .collect();
    let mut mdp = FiniteMdp::from_rows(num_cells, num_inputs, rows)?;
    mdp.state_reps = Some(state_grid.representatives());
    mdp.input_reps = Some(input_reps);
    mdp.provenance = Provenance {
        model: model_digest(model),
        state_grid: state_grid.digest(),
        inputs: inputs.digest(),
        gamma,
    };
    Ok(mdp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpReport {
    pub rows: usize,
    pub entries: usize,
    /// Largest |stored + absorbing − 1| over all rows.
    pub max_deviation: f64,
    pub max_stored_sum: f64,
    pub negative_entries: usize,
}

impl MdpReport {
    pub fn is_valid(&self) -> bool {
        self.negative_entries == 0 && self.max_deviation <= 1e-9 && self.max_stored_sum <= 1.0 + 1e-9
    }
}

pub fn validate_mdp(mdp: &FiniteMdp) -> MdpReport {
    let mut report = MdpReport {
        rows: mdp.num_cells * mdp.num_inputs,
        entries: mdp.num_entries(),
        max_deviation: 0.0,
        max_stored_sum: 0.0,
        negative_entries: 0,
    };
    for s in 0..mdp.num_cells {
        for u in 0..mdp.num_inputs {
            let (_, p, a) = mdp.row(s, u);
            let kept: f64 = p.iter().sum();
            report.negative_entries += p.iter().filter(|v| **v < 0.0 || **v > 1.0).count();
            if a < 0.0 {
                report.negative_entries += 1;
            }
            report.max_stored_sum = report.max_stored_sum.max(kept);
            report.max_deviation = report.max_deviation.max((kept + a - 1.0).abs());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::std_normal_cdf;
    use crate::linalg::{Mat, Vector};
    use crate::model::HyperRect;

    fn scalar_model(a: f64, c0: f64, r: f64) -> LinearDtScs {
        LinearDtScs::new(
            Mat::from_element(1, 1, a),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, c0),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, r),
            None,
        )
        .unwrap()
    }

    fn room() -> LinearDtScs {
        LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6)
    }

    fn room_grid() -> Grid {
        Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![400]).unwrap()
    }

    #[test]
    fn wide_noise_row_is_normalized() {
        let g = Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![10]).unwrap();
        let m = scalar_model(0.0, 0.55, 100.0);
        let row = transition_row(&m, &[0.55], &[0.0], &g, TruncationPolicy::none()).unwrap();
        assert_eq!(row.entries.len(), 10);
        let spread = row.entries.iter().map(|e| e.1).fold(0.0f64, f64::max)
            - row.entries.iter().map(|e| e.1).fold(1.0f64, f64::min);
        assert!(spread < 1e-6);
        assert!((row.kept_mass() + row.absorbing - 1.0).abs() < 1e-15);
    }

    #[test]
    fn heater_off_leaves_domain() {
        let row = transition_row(&room(), &[20.0], &[0.0], &room_grid(), TruncationPolicy::none()).unwrap();
        assert!(row.kept_mass() < 1e-30);
        assert!((row.absorbing - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_cell_row() {
        let g = Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![2]).unwrap();
        let m = scalar_model(0.0, 0.5, 0.1);
        let row = transition_row(&m, &[0.2], &[0.0], &g, TruncationPolicy::none()).unwrap();
        let expected = std_normal_cdf(0.0) - std_normal_cdf(-5.0);
        assert_eq!(row.entries.len(), 2);
        assert!((row.entries[0].1 - expected).abs() < 1e-15);
        assert!((row.entries[1].1 - expected).abs() < 1e-15);
        assert!((row.absorbing - 2.0 * std_normal_cdf(-5.0)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_row_is_indicator() {
        let g = Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![4]).unwrap();
        let m = scalar_model(0.0, 0.6, 0.0);
        let row = transition_row(&m, &[0.0], &[0.0], &g, TruncationPolicy::none()).unwrap();
        assert_eq!(row.entries, vec![(2, 1.0)]);
        assert_eq!(row.absorbing, 0.0);
    }

    #[test]
    fn truncation_mass_goes_to_absorbing() {
        let g = Grid::new(HyperRect::interval(-5.0, 5.0).unwrap(), vec![100]).unwrap();
        let m = scalar_model(0.0, 0.0, 1.0);
        let full = transition_row(&m, &[0.0], &[0.0], &g, TruncationPolicy::none()).unwrap();
        let cut = transition_row(&m, &[0.0], &[0.0], &g, TruncationPolicy::new(1e-3).unwrap()).unwrap();
        assert!(cut.entries.len() < full.entries.len());
        assert!(cut.entries.iter().all(|e| e.1 >= 1e-3));
        assert!(cut.absorbing > full.absorbing);
        assert!((cut.kept_mass() + cut.absorbing - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_gamma_rejected() {
        assert!(TruncationPolicy::new(1.0).is_err());
        assert!(TruncationPolicy::new(-0.1).is_err());
    }

    #[test]
    fn running_example_shape() {
        let inputs = InputSet::linspace(0.0, 0.6, 3).unwrap();
        let mdp = abstract_system(&room(), &room_grid(), &inputs, &AbstractionOptions::default()).unwrap();
        assert_eq!(mdp.num_states(), 401);
        assert_eq!(mdp.num_inputs(), 3);
        assert!(validate_mdp(&mdp).is_valid());
        let (_, _, a) = mdp.row(mdp.absorbing_state(), 1);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn minimal_instance() {
        let g = Grid::new(HyperRect::interval(0.0, 1.0).unwrap(), vec![1]).unwrap();
        let mdp = abstract_system(
            &scalar_model(0.5, 0.0, 0.1),
            &g,
            &InputSet::list(vec![vec![0.0]]).unwrap(),
            &AbstractionOptions::default(),
        )
        .unwrap();
        assert_eq!(mdp.num_states(), 2);
    }

    #[test]
    fn sizing_guard_refuses() {
        let g = Grid::new(HyperRect::new(vec![0.0; 3], vec![1.0; 3]).unwrap(), vec![200, 200, 200]).unwrap();
        let m = LinearDtScs::new(
            Mat::identity(3, 3),
            Mat::zeros(3, 1),
            Vector::zeros(3),
            Mat::identity(3, 3),
            Vector::from_element(3, 1.0),
            None,
        )
        .unwrap();
        let err = abstract_system(&m, &g, &InputSet::list(vec![vec![0.0]]).unwrap(), &AbstractionOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::TooLarge(_)), "{err}");
    }

    #[test]
    fn validate_hand_rows() {
        let mdp = FiniteMdp::from_rows(2, 1, vec![
            SparseRow::with_remainder(vec![(0, 0.5), (1, 0.5)]),
            SparseRow::with_remainder(vec![(0, 0.97)]),
        ])
        .unwrap();
        let rep = validate_mdp(&mdp);
        assert_eq!(rep.max_deviation, 0.0);
        assert_eq!(rep.negative_entries, 0);
        assert!((mdp.row(1, 0).2 - 0.03).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_row_factorizes() {
        let g = Grid::new(HyperRect::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(), vec![5, 4]).unwrap();
        let m = LinearDtScs::new(
            Mat::zeros(2, 2),
            Mat::zeros(2, 1),
            Vector::from_row_slice(&[0.4, 1.1]),
            Mat::identity(2, 2),
            Vector::from_row_slice(&[0.2, 0.5]),
            None,
        )
        .unwrap();
        let row = transition_row(&m, &[0.0, 0.0], &[0.0], &g, TruncationPolicy::none()).unwrap();
        for &(cell, p) in &row.entries {
            let b = g.cell_bounds(cell as usize);
            let mi = g.multi_index(cell as usize);
            let px = interval_probability(b[0].0, b[0].1, 0.4, 0.2, mi[0] == 4);
            let py = interval_probability(b[1].0, b[1].1, 1.1, 0.5, mi[1] == 3);
            assert!((p - px * py).abs() < 1e-15);
        }
        assert_eq!(row.entries.len(), 20);
    }

    #[test]
    fn input_permutation_is_bit_exact() {
        let inputs = vec![vec![0.0], vec![0.3], vec![0.6]];
        let perm = vec![vec![0.6], vec![0.0], vec![0.3]];
        let g = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![50]).unwrap();
        let a = abstract_system(&room(), &g, &InputSet::list(inputs).unwrap(), &AbstractionOptions::default()).unwrap();
        let b = abstract_system(&room(), &g, &InputSet::list(perm).unwrap(), &AbstractionOptions::default()).unwrap();
        for s in 0..g.num_cells() {
            for (ia, ib) in [(0, 1), (1, 2), (2, 0)] {
                let ra = a.row(s, ia);
                let rb = b.row(s, ib);
                assert_eq!(ra.0, rb.0);
                assert_eq!(ra.1, rb.1);
                assert_eq!(ra.2.to_bits(), rb.2.to_bits());
            }
        }
    }

    #[test]
    fn refinement_does_not_grow_absorbing_mass() {
        let gamma = TruncationPolicy::new(1e-9).unwrap();
        let coarse = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![50]).unwrap();
        let fine = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![100]).unwrap();
        for x in [19.3, 20.0, 20.6] {
            for u in [0.5, 0.55, 0.6] {
                let rc = transition_row(&room(), &[x], &[u], &coarse, gamma).unwrap();
                let rf = transition_row(&room(), &[x], &[u], &fine, gamma).unwrap();
                let dropped = 100.0 * 1e-9;
                assert!(rf.absorbing <= rc.absorbing + dropped + 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let inputs = InputSet::linspace(0.0, 0.6, 2).unwrap();
        let g = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![8]).unwrap();
        let mdp = abstract_system(&room(), &g, &inputs, &AbstractionOptions::default()).unwrap();
        let mut buf = Vec::new();
        mdp.write_csv(&mut buf).unwrap();
        let back = FiniteMdp::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.num_states(), mdp.num_states());
        for s in 0..g.num_cells() {
            for u in 0..2 {
                let (d1, p1, a1) = mdp.row(s, u);
                let (d2, p2, a2) = back.row(s, u);
                assert_eq!(d1, d2);
                assert_eq!(p1, p2);
                assert!((a1 - a2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(FiniteMdp::read_csv(std::io::Cursor::new("src,input,dst,prob\n0,0,x,1\n")).is_err());
        assert!(FiniteMdp::read_csv(std::io::Cursor::new("0,0,1,1.5\n")).is_err());
    }
}
