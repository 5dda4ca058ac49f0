//! Bounded-horizon dynamic programming over a [`FiniteMdp`] and its product
//! with a DFA, policy extraction and refinement to the concrete system.
//!
//! Labels are read along outputs `y(0), y(1), …, y(T_d)`: the label of the
//! initial state is consumed at `k = 0`, so the horizon covers `T_d`
//! transitions and `T_d + 1` letters. The absorbing state of the MDP is worth
//! 0 unless the objective was already met before entering it.

use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::abstraction::{fmt17, FiniteMdp};
use crate::bounds::Interface;
use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::linalg::Mat;
use crate::model::Region;
use crate::spec::{Acceptance, Automaton, HorizonSpec, Letter, SpecKind};

const NONE: u32 = u32::MAX;

/// Satisfaction probabilities `V_k(s, q)` for `k = 0..=T_d`, where `q` is
/// the DFA location after reading the label of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    horizon: usize,
    num_cells: usize,
    num_locations: usize,
    values: Vec<Vec<f64>>,
    initial_location: Vec<usize>,
    kind: String,
}

impl ValueFunction {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    #[inline]
    pub fn at(&self, k: usize, state: usize, loc: usize) -> f64 {
        if state >= self.num_cells {
            return 0.0;
        }
        self.values[k][state * self.num_locations + loc]
    }

    /// Value of starting in cell `state` at time 0.
    pub fn initial(&self, state: usize) -> f64 {
        self.at(0, state, self.initial_location[state])
    }

    pub fn initial_values(&self) -> Vec<f64> {
        (0..self.num_cells).map(|s| self.initial(s)).collect()
    }

    /// Location after reading the label of `state` from the initial location.
    pub fn initial_location(&self, state: usize) -> usize {
        self.initial_location[state]
    }

    /// Checks the per-run invariants: values in `[0, 1]` (up to `tol`) and,
    /// for safety, values nonincreasing in the remaining horizon.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for (k, slice) in self.values.iter().enumerate() {
            if let Some(v) = slice.iter().find(|v| !(**v >= -tol && **v <= 1.0 + tol)) {
                return Err(Error::VerificationFailed(format!("value {v} outside [0, 1] at k={k}")));
            }
        }
        if self.kind == "safety" {
            for k in 1..self.values.len() {
                for (a, b) in self.values[k - 1].iter().zip(&self.values[k]) {
                    if *a > b + tol {
                        return Err(Error::VerificationFailed(format!(
                            "safety value grows with the horizon at k={k}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV `k,state_idx,dfa_loc,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,state_idx,dfa_loc,value")?;
        for (k, slice) in self.values.iter().enumerate() {
            for s in 0..self.num_cells {
                for q in 0..self.num_locations {
                    writeln!(w, "{k},{s},{q},{}", fmt17(slice[s * self.num_locations + q]))?;
                }
            }
        }
        Ok(())
    }
}

/// Time-varying product policy `(k, state, location) → input index`.
///
/// Pairs whose outcome is already decided (accepted for reach objectives,
/// violated for invariants) carry no input. Consecutive identical time
/// slices are stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPolicy {
    num_cells: usize,
    num_locations: usize,
    num_inputs: usize,
    slices: Vec<Vec<u32>>,
    slice_of: Vec<usize>,
}

impl ProductPolicy {
    /// Number of decision steps `T_d`.
    pub fn horizon(&self) -> usize {
        self.slice_of.len()
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }

    /// Number of distinct stored time slices.
    pub fn stored_slices(&self) -> usize {
        self.slices.len()
    }

    #[inline]
    pub fn input(&self, k: usize, state: usize, loc: usize) -> Option<usize> {
        if k >= self.slice_of.len() || state >= self.num_cells {
            return None;
        }
        let v = self.slices[self.slice_of[k]][state * self.num_locations + loc];
        (v != NONE).then_some(v as usize)
    }

    /// CSV `k,state_idx,dfa_loc,state_repr…,input_idx,input_repr…,value`.
    pub fn write_csv<W: Write>(&self, mut w: W, mdp: &FiniteMdp, values: &ValueFunction) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidArgument(format!("write failed: {e}"));
        let (Some(xs), Some(us)) = (mdp.state_representatives(), mdp.input_representatives()) else {
            return Err(Error::InvalidArgument("policy export needs representatives".into()));
        };
        let nx = xs.first().map_or(0, Vec::len);
        let nu = us.first().map_or(0, Vec::len);
        let mut header = String::from("k,state_idx,dfa_loc");
        (0..nx).for_each(|i| header.push_str(&format!(",x{i}")));
        header.push_str(",input_idx");
        (0..nu).for_each(|i| header.push_str(&format!(",u{i}")));
        header.push_str(",value");
        writeln!(w, "{header}").map_err(io)?;
        for k in 0..self.horizon() {
            for s in 0..self.num_cells {
                for q in 0..self.num_locations {
                    let Some(u) = self.input(k, s, q) else { continue };
                    let mut line = format!("{k},{s},{q}");
                    xs[s].iter().for_each(|v| line.push_str(&format!(",{}", fmt17(*v))));
                    line.push_str(&format!(",{u}"));
                    us[u].iter().for_each(|v| line.push_str(&format!(",{}", fmt17(*v))));
                    line.push_str(&format!(",{}", fmt17(values.at(k, s, q))));
                    writeln!(w, "{line}").map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    /// Output map applied to representatives before labeling (identity if absent).
    pub output: Option<Mat>,
    /// Grid used to check that regions are unions of cells.
    pub grid: Option<Grid>,
    /// Refuse regions whose boundaries cut through cells instead of warning.
    pub strict: bool,
}

/// Label of each cell's representative output.
pub fn cell_letters(mdp: &FiniteMdp, automaton: &Automaton, output: Option<&Mat>) -> Result<Vec<Letter>> {
    let reps = mdp
        .state_representatives()
        .ok_or_else(|| Error::InvalidArgument("labeling needs state representatives".into()))?;
    reps.iter()
        .map(|x| {
            let y = match output {
                Some(c) => {
                    check_dim("output map columns", x.len(), c.ncols())?;
                    (0..c.nrows()).map(|i| (0..x.len()).map(|j| c[(i, j)] * x[j]).sum()).collect()
                }
                None => x.clone(),
            };
            automaton.labels.letter_for(&automaton.dfa, &y)
        })
        .collect()
}

/// Whether every face of every box lies on a grid boundary or outside the domain.
pub fn region_is_cell_aligned(grid: &Grid, region: &Region) -> bool {
    let on_boundary = |d: usize, v: f64| {
        let (l, u) = (grid.domain().lower()[d], grid.domain().upper()[d]);
        if v <= l || v >= u {
            return true;
        }
        let pos = (v - l) / grid.width(d);
        (pos - pos.round()).abs() <= 1e-9 * pos.abs().max(1.0)
    };
    region.boxes().iter().all(|b| {
        (0..grid.dim()).all(|d| on_boundary(d, b.lower()[d]) && on_boundary(d, b.upper()[d]))
    })
}

fn spec_regions(spec: &HorizonSpec) -> Vec<&Region> {
    match &spec.kind {
        SpecKind::Safety { safe } => vec![safe],
        SpecKind::Reachability { target } => vec![target],
        SpecKind::ReachAvoid { safe, target } => vec![safe, target],
        SpecKind::Dfa { labels, .. } => labels.entries().iter().map(|(_, r)| r).collect(),
    }
}

/// Optimal satisfaction probabilities and a maximizing policy.
pub fn value_iterate(
    mdp: &FiniteMdp,
    spec: &HorizonSpec,
    opts: &SynthesisOptions,
) -> Result<(ValueFunction, ProductPolicy)> {
    if let Some(grid) = &opts.grid {
        check_dim("grid cells", mdp.num_cells(), grid.num_cells())?;
        let state_space_labels = opts.output.as_ref().is_none_or(|c| c.nrows() == c.ncols() && *c == Mat::identity(c.nrows(), c.ncols()));
        if state_space_labels {
            for r in spec_regions(spec) {
                if !region_is_cell_aligned(grid, r) {
                    if opts.strict {
                        return Err(Error::InvalidArgument("region boundary cuts grid cells".into()));
                    }
                    warn!("region boundary cuts grid cells; membership decided at representatives");
                }
            }
        }
    }
    let automaton = spec.automaton()?;
    let letters = cell_letters(mdp, &automaton, opts.output.as_ref())?;
    let (mut v, p) = value_iterate_labeled(mdp, &automaton, spec.horizon, &letters)?;
    v.kind = spec.kind_name().to_string();
    Ok((v, p))
}

/// Dynamic programming with precomputed cell letters.
pub fn value_iterate_labeled(
    mdp: &FiniteMdp,
    automaton: &Automaton,
    horizon: usize,
    letters: &[Letter],
) -> Result<(ValueFunction, ProductPolicy)> {
    let n = mdp.num_cells();
    check_dim("cell letters", n, letters.len())?;
    let dfa = &automaton.dfa;
    let nq = dfa.num_locations();
    if let Some(l) = letters.iter().find(|l| **l >= dfa.alphabet().len()) {
        return Err(Error::InvalidArgument(format!("letter {l} outside alphabet")));
    }
    let accepting: Vec<bool> = (0..nq).map(|q| dfa.is_accepting(q)).collect();
    // value of a location whose outcome no longer depends on the future
    let decided: Vec<bool> = (0..nq)
        .map(|q| match automaton.acceptance {
            Acceptance::Reach => accepting[q],
            Acceptance::Invariant => !accepting[q],
        })
        .collect();
    let terminal: Vec<f64> = (0..n * nq).map(|i| if accepting[i % nq] { 1.0 } else { 0.0 }).collect();
    let next_loc: Vec<usize> = (0..n * nq).map(|i| dfa.next(i % nq, letters[i / nq])).collect();

    let mut values = vec![terminal.clone(); horizon + 1];
    let mut slices: Vec<Vec<u32>> = Vec::new();
    let mut slice_of = vec![0usize; horizon];
    let num_inputs = mdp.num_inputs();

    for k in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut(k + 1);
        let next = &tail[0];
        let cur = &mut head[k];
        let mut pol = vec![NONE; n * nq];
        cur.par_chunks_mut(nq)
            .zip(pol.par_chunks_mut(nq))
            .enumerate()
            .with_min_len(32)
            .for_each(|(s, (vals, inputs))| {
                let mut acc = vec![0.0; nq];
                for q in 0..nq {
                    vals[q] = terminal[s * nq + q];
                }
                if (0..nq).all(|q| decided[q]) {
                    return;
                }
                let mut best = vec![f64::NEG_INFINITY; nq];
                for u in 0..num_inputs {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    let (dst, prob) = {
                        let (d, p, _) = mdp.row(s, u);
                        (d, p)
                    };
                    for (&d, &p) in dst.iter().zip(prob) {
                        let base = d as usize * nq;
                        for q in 0..nq {
                            acc[q] += p * next[base + next_loc[base + q]];
                        }
                    }
                    for q in 0..nq {
                        if !decided[q] && acc[q] > best[q] {
                            best[q] = acc[q];
                            inputs[q] = u as u32;
                        }
                    }
                }
                for q in 0..nq {
                    if !decided[q] {
                        vals[q] = best[q];
                    }
                }
            });
        // slices are produced backwards; reuse the previous one when equal
        match slices.last() {
            Some(last) if *last == pol => {}
            _ => slices.push(pol),
        }
        slice_of[k] = slices.len() - 1;
    }

    let initial_location = letters.iter().map(|&l| dfa.next(dfa.initial(), l)).collect();
    Ok((
        ValueFunction {
            horizon,
            num_cells: n,
            num_locations: nq,
            values,
            initial_location,
            kind: "dfa".into(),
        },
        ProductPolicy {
            num_cells: n,
            num_locations: nq,
            num_inputs,
            slices,
            slice_of,
        },
    ))
}

/// Exhaustive expectimax over all histories for tiny instances; acceptance
/// is evaluated on complete label words. Returns the value of each cell at
/// time 0.
pub fn brute_force_value(mdp: &FiniteMdp, automaton: &Automaton, horizon: usize, letters: &[Letter]) -> Result<Vec<f64>> {
    if horizon > 6 || mdp.num_states() > 8 {
        return Err(Error::TooLarge(format!(
            "brute force is limited to T_d <= 6 and 8 states (got {horizon}, {})",
            mdp.num_states()
        )));
    }
    check_dim("cell letters", mdp.num_cells(), letters.len())?;

    fn rec(
        mdp: &FiniteMdp,
        automaton: &Automaton,
        letters: &[Letter],
        steps_left: usize,
        word: &mut Vec<Letter>,
        s: usize,
    ) -> Result<f64> {
        if steps_left == 0 {
            return Ok(if automaton.accepts_word(word)? { 1.0 } else { 0.0 });
        }
        let mut best = f64::NEG_INFINITY;
        for u in 0..mdp.num_inputs() {
            let (dst, prob, abs) = mdp.row(s, u);
            let mut total = 0.0;
            for (&d, &p) in dst.iter().zip(prob) {
                word.push(letters[d as usize]);
                total += p * rec(mdp, automaton, letters, steps_left - 1, word, d as usize)?;
                word.pop();
            }
            // leaving the domain only keeps what the prefix already earned
            if abs > 0.0 && automaton.acceptance == Acceptance::Reach {
                let (_, flags) = automaton.dfa.run(word)?;
                if flags.iter().any(|f| *f) {
                    total += abs;
                }
            }
            best = best.max(total);
        }
        Ok(best)
    }

    (0..mdp.num_cells())
        .map(|s| {
            let mut word = vec![letters[s]];
            rec(mdp, automaton, letters, horizon, &mut word, s)
        })
        .collect()
}

/// What the concrete controller does at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    pub input: Vec<f64>,
    /// The state was outside the gridded domain.
    pub outside: bool,
    /// The fallback input was used (outside, or outcome already decided).
    pub fallback: bool,
}

/// Quantize-then-lookup state feedback, composed with an interface function.
/// Tracks the DFA location from labels of the observed concrete outputs.
#[derive(Debug, Clone)]
pub struct ConcreteController {
    policy: ProductPolicy,
    grid: Grid,
    inputs: Vec<Vec<f64>>,
    automaton: Automaton,
    output: Option<Mat>,
    interface: Interface,
    fallback: Vec<f64>,
}

/// Builds the concrete controller from an abstract policy.
pub fn refine_policy(
    policy: ProductPolicy,
    state_grid: Grid,
    inputs: Vec<Vec<f64>>,
    automaton: Automaton,
    output: Option<Mat>,
    interface: Interface,
    fallback: Vec<f64>,
) -> Result<ConcreteController> {
    check_dim("policy cells", state_grid.num_cells(), policy.num_cells)?;
    check_dim("policy inputs", inputs.len(), policy.num_inputs)?;
    check_dim("policy locations", automaton.dfa.num_locations(), policy.num_locations)?;
    if let Some(u) = inputs.first() {
        check_dim("fallback input", u.len(), fallback.len())?;
    }
    Ok(ConcreteController {
        policy,
        grid: state_grid,
        inputs,
        automaton,
        output,
        interface,
        fallback,
    })
}

impl ConcreteController {
    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.fallback.len()
    }

    fn letter(&self, x: &[f64]) -> Result<Letter> {
        let y = match &self.output {
            Some(c) => (0..c.nrows()).map(|i| (0..x.len()).map(|j| c[(i, j)] * x[j]).sum()).collect(),
            None => x.to_vec(),
        };
        self.automaton.labels.letter_for(&self.automaton.dfa, &y)
    }

    /// DFA location after reading the label of the initial state.
    pub fn initial_location(&self, x0: &[f64]) -> Result<usize> {
        Ok(self.automaton.dfa.next(self.automaton.dfa.initial(), self.letter(x0)?))
    }

    /// DFA location after observing the next state.
    pub fn advance(&self, loc: usize, x_next: &[f64]) -> Result<usize> {
        Ok(self.automaton.dfa.next(loc, self.letter(x_next)?))
    }

    pub fn is_accepting(&self, loc: usize) -> bool {
        self.automaton.dfa.is_accepting(loc)
    }

    pub fn automaton(&self) -> &Automaton {
        &self.automaton
    }

    /// Input at time `k` in concrete state `x` with DFA location `loc`.
    pub fn act(&self, k: usize, x: &[f64], loc: usize) -> Result<ControlAction> {
        check_dim("state", self.grid.dim(), x.len())?;
        let Some(cell) = self.grid.cell_of(x) else {
            return Ok(ControlAction {
                input: self.fallback.clone(),
                outside: true,
                fallback: true,
            });
        };
        match self.policy.input(k, cell, loc) {
            Some(u) => {
                let x_hat = self.grid.representative(cell);
                Ok(ControlAction {
                    input: self.interface.apply(x, &x_hat, &self.inputs[u])?,
                    outside: false,
                    fallback: false,
                })
            }
            None => Ok(ControlAction {
                input: self.fallback.clone(),
                outside: false,
                fallback: true,
            }),
        }
    }
}
