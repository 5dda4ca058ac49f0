//! Networks of subsystems coupled through internal inputs.
//!
//! Subsystem `i` evolves as `xᵢ⁺ = Aᵢ(uᵢ)xᵢ + Bᵢuᵢ + Dᵢwᵢ + c0ᵢ + Rᵢςᵢ` with
//! internal output `C₂ᵢxᵢ`. The coupling matrix maps stacked internal
//! outputs to stacked internal inputs. Gains are linear
//! (`κᵢⱼ(s) = gᵢⱼ·s`); small-gain conditions are checked on the gain digraph.

use std::collections::HashMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::abstraction::{abstract_system, model_digest, AbstractionOptions, FiniteMdp};
use crate::bounds::{PowerForm, SsfParams};
use crate::error::{check_dim, Error, Result};
use crate::grid::{Grid, InputSet};
use crate::linalg::{spectral_norm, Mat, Vector};
use crate::model::{InputGain, LinearDtScs};

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub model: LinearDtScs,
    /// Internal-input matrix (`n × p̄`).
    pub d: Mat,
    /// Internal output map (`q × n`).
    pub c2: Mat,
}

impl Subsystem {
    pub fn new(model: LinearDtScs, d: Mat, c2: Mat) -> Result<Self> {
        check_dim("D rows", model.state_dim(), d.nrows())?;
        check_dim("C2 columns", model.state_dim(), c2.ncols())?;
        Ok(Subsystem { model, d, c2 })
    }

    /// Room coupled to `ports` neighbors with conduction factor `sigma`:
    /// `a(u) = 1 − 2σ − θ − γu`, `B = γT_h`, `c0 = θT_e`, `D = σ·𝟙ᵀ`.
    pub fn room(theta: f64, gamma: f64, t_heater: f64, t_ext: f64, sigma: f64, noise: f64, ports: usize) -> Result<Self> {
        let (a, gain) = InputGain::scalar(1.0 - 2.0 * sigma - theta, -gamma, &Mat::identity(1, 1), 1);
        let model = LinearDtScs::new(
            a,
            Mat::from_element(1, 1, gamma * t_heater),
            Vector::from_element(1, theta * t_ext),
            Mat::identity(1, 1),
            Vector::from_element(1, noise),
            Some(gain),
        )?;
        Subsystem::new(model, Mat::from_element(1, ports, sigma), Mat::identity(1, 1))
    }

    pub fn internal_inputs(&self) -> usize {
        self.d.ncols()
    }

    pub fn internal_outputs(&self) -> usize {
        self.c2.nrows()
    }

    /// The subsystem with internal inputs appended to the external ones.
    pub fn augmented_model(&self) -> Result<LinearDtScs> {
        let m = &self.model;
        let (n, mu, p) = (m.state_dim(), m.input_dim(), self.internal_inputs());
        let mut b = Mat::zeros(n, mu + p);
        b.view_mut((0, 0), (n, mu)).copy_from(m.b());
        b.view_mut((0, mu), (n, p)).copy_from(&self.d);
        let gain = m.gain().map(|g| {
            let mut slopes = g.slopes().to_vec();
            slopes.resize(mu + p, Vec::new());
            InputGain::from_triplets(slopes)
        });
        LinearDtScs::new(m.a().clone(), b, m.c0().clone(), m.c().clone(), m.r().clone(), gain)
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(model_digest(&self.model).as_bytes());
        for m in [&self.d, &self.c2] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            m.iter().for_each(|v| h.update(v.to_le_bytes()));
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Subsystems plus a sparse coupling `w = M·y₂` given as
/// `(internal-input row, internal-output column, weight)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Interconnection {
    subsystems: Vec<Subsystem>,
    coupling: Vec<(usize, usize, f64)>,
    input_offsets: Vec<usize>,
    output_offsets: Vec<usize>,
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

fn owner(offsets: &[usize], idx: usize) -> (usize, usize) {
    let i = offsets.partition_point(|o| *o <= idx) - 1;
    (i, idx - offsets[i])
}

impl Interconnection {
    pub fn new(subsystems: Vec<Subsystem>, coupling: Vec<(usize, usize, f64)>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one subsystem".into()));
        }
        let input_offsets = offsets(subsystems.iter().map(Subsystem::internal_inputs));
        let output_offsets = offsets(subsystems.iter().map(Subsystem::internal_outputs));
        let (p, q) = (*input_offsets.last().unwrap(), *output_offsets.last().unwrap());
        for &(r, c, v) in &coupling {
            if r >= p || c >= q {
                return Err(Error::DimensionMismatch {
                    what: "coupling entry",
                    expected: p.max(q),
                    got: r.max(c),
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite coupling weight".into()));
            }
        }
        Ok(Interconnection {
            subsystems,
            coupling,
            input_offsets,
            output_offsets,
        })
    }

    /// Dense coupling matrix.
    pub fn from_matrix(subsystems: Vec<Subsystem>, m: &Mat) -> Result<Self> {
        let mut trip = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        let net = Interconnection::new(subsystems, trip)?;
        if !m.is_empty() {
            check_dim("coupling rows", *net.input_offsets.last().unwrap(), m.nrows())?;
            check_dim("coupling columns", *net.output_offsets.last().unwrap(), m.ncols())?;
        }
        Ok(net)
    }

    /// Ring of `n` identical two-port subsystems: port 0 reads the previous
    /// subsystem, port 1 the next one.
    pub fn ring(sub: Subsystem, n: usize) -> Result<Self> {
        check_dim("ring subsystem ports", 2, sub.internal_inputs())?;
        check_dim("ring subsystem outputs", 1, sub.internal_outputs())?;
        let coupling = (0..n)
            .flat_map(|i| [(2 * i, (i + n - 1) % n, 1.0), (2 * i + 1, (i + 1) % n, 1.0)])
            .collect();
        Interconnection::new(vec![sub; n], coupling)
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn coupling(&self) -> &[(usize, usize, f64)] {
        &self.coupling
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Monolithic model with the internal loop closed:
    /// `A = blockdiag(Aᵢ) + blockdiag(Dᵢ)·M·blockdiag(C₂ᵢ)`.
    pub fn interconnect(&self) -> Result<LinearDtScs> {
        let subs = &self.subsystems;
        let so = offsets(subs.iter().map(|s| s.model.state_dim()));
        let uo = offsets(subs.iter().map(|s| s.model.input_dim()));
        let (n, m) = (*so.last().unwrap(), *uo.last().unwrap());
        let yo = offsets(subs.iter().map(|s| s.model.output_dim()));
        let mut a = Mat::zeros(n, n);
        let mut b = Mat::zeros(n, m);
        let mut c = Mat::zeros(*yo.last().unwrap(), n);
        let mut c0 = Vector::zeros(n);
        let mut r = Vector::zeros(n);
        let mut slopes: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
        let mut any_gain = false;
        for (i, s) in subs.iter().enumerate() {
            let md = &s.model;
            let (ni, mi) = (md.state_dim(), md.input_dim());
            a.view_mut((so[i], so[i]), (ni, ni)).copy_from(md.a());
            b.view_mut((so[i], uo[i]), (ni, mi)).copy_from(md.b());
            c.view_mut((yo[i], so[i]), (md.output_dim(), ni)).copy_from(md.c());
            c0.rows_mut(so[i], ni).copy_from(md.c0());
            r.rows_mut(so[i], ni).copy_from(md.r());
            if let Some(g) = md.gain() {
                any_gain = true;
                for (j, sl) in g.slopes().iter().enumerate() {
                    slopes[uo[i] + j].extend(sl.iter().map(|&(rr, cc, v)| (rr + so[i], cc + so[i], v)));
                }
            }
        }
        for &(row, col, w) in &self.coupling {
            let (i, p) = owner(&self.input_offsets, row);
            let (j, q) = owner(&self.output_offsets, col);
            let (di, c2j) = (&subs[i].d, &subs[j].c2);
            for ra in 0..di.nrows() {
                let dv = di[(ra, p)];
                if dv == 0.0 {
                    continue;
                }
                for cb in 0..c2j.ncols() {
                    a[(so[i] + ra, so[j] + cb)] += dv * w * c2j[(q, cb)];
                }
            }
        }
        let gain = any_gain.then(|| InputGain::from_triplets(slopes));
        LinearDtScs::new(a, b, c0, c, r, gain)
    }

    /// Replaces the subsystems in `group` by their partial interconnection,
    /// placed first. Couplings inside the group are closed; the merged
    /// subsystem keeps all member ports for couplings to the rest.
    pub fn merge(&self, group: &[usize]) -> Result<Interconnection> {
        let mut in_group = vec![false; self.len()];
        for &g in group {
            if g >= self.len() || in_group[g] {
                return Err(Error::InvalidArgument("group must list distinct subsystem indices".into()));
            }
            in_group[g] = true;
        }
        let members: Vec<Subsystem> = group.iter().map(|&g| self.subsystems[g].clone()).collect();
        let (mut inner, mut outer) = (Vec::new(), Vec::new());
        // new port numbering: group members first (in group order), then the rest
        let order: Vec<usize> = group.iter().copied().chain((0..self.len()).filter(|i| !in_group[*i])).collect();
        let new_in = offsets(order.iter().map(|&i| self.subsystems[i].internal_inputs()));
        let new_out = offsets(order.iter().map(|&i| self.subsystems[i].internal_outputs()));
        let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        for &(row, col, w) in &self.coupling {
            let (i, p) = owner(&self.input_offsets, row);
            let (j, q) = owner(&self.output_offsets, col);
            let (ki, kj) = (pos[&i], pos[&j]);
            let entry = (new_in[ki] + p, new_out[kj] + q, w);
            if in_group[i] && in_group[j] {
                inner.push(entry);
            } else {
                outer.push(entry);
            }
        }
        let merged_model = Interconnection::new(members.clone(), inner)?.interconnect()?;
        let merged = Subsystem::new(
            merged_model,
            crate::linalg::block_diag(&members.iter().map(|s| s.d.clone()).collect::<Vec<_>>()),
            crate::linalg::block_diag(&members.iter().map(|s| s.c2.clone()).collect::<Vec<_>>()),
        )?;
        let mut subs = vec![merged];
        subs.extend(order[group.len()..].iter().map(|&i| self.subsystems[i].clone()));
        Interconnection::new(subs, outer)
    }

    /// Linear gains `g_ij = ρ_int,i·‖M_ij C₂ⱼ‖²·sᵢ / k_α,j`, where `M_ij` is
    /// the coupling block from subsystem `j`'s outputs to `i`'s inputs and
    /// `sᵢ` the largest number of sources feeding one port of `i`.
    pub fn gains(&self, ssfs: &[SubsystemSsf]) -> Result<GainData> {
        check_dim("subsystem SSFs", self.len(), ssfs.len())?;
        let n = self.len();
        let mut blocks: HashMap<(usize, usize), Vec<(usize, usize, f64)>> = HashMap::new();
        let mut sources: HashMap<usize, std::collections::BTreeSet<usize>> = HashMap::new();
        for &(row, col, w) in &self.coupling {
            let (i, p) = owner(&self.input_offsets, row);
            let (j, q) = owner(&self.output_offsets, col);
            blocks.entry((i, j)).or_default().push((p, q, w));
            sources.entry(row).or_default().insert(j);
        }
        let mut fan_in = vec![1usize; n];
        for (row, s) in &sources {
            let (i, _) = owner(&self.input_offsets, *row);
            fan_in[i] = fan_in[i].max(s.len());
        }
        let mut g = Mat::zeros(n, n);
        for (&(i, j), entries) in &blocks {
            if i == j {
                continue;
            }
            let (pi, qj) = (self.subsystems[i].internal_inputs(), self.subsystems[j].internal_outputs());
            let mut mij = Mat::zeros(pi, qj);
            for &(p, q, w) in entries {
                mij[(p, q)] += w;
            }
            let norm = spectral_norm(&(mij * &self.subsystems[j].c2));
            g[(i, j)] = ssfs[i].rho_int * norm * norm * fan_in[i] as f64 / ssfs[j].params.alpha.coef;
        }
        GainData::new(g, ssfs.iter().map(|s| s.params.psi).collect())
    }
}

/// Per-subsystem SSF with a quadratic internal-input gain
/// `ρ_int(‖w − ŵ‖) = rho_int·‖w − ŵ‖²`; `params.kappa` is the contraction
/// factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsystemSsf {
    pub params: SsfParams,
    pub rho_int: f64,
}

/// SSF between a subsystem and its grid abstraction driven by the same
/// noise and external input, with `V = ‖x − x̂‖²`:
///
/// `E[V⁺] ≤ (1+π₁)·max‖A(u)‖²·V + (1+1/π₁)(1+π₂)·‖D‖²·‖δy‖² + ψ`,
/// `ψ = (1+1/π₁)(1+1/π₂)·(‖D‖·q_w + q_x)²`,
///
/// where `q_x`, `q_w` are the half-diagonals of a state cell and of an
/// internal-input cell (the abstraction reads neighbors through the
/// internal-input grid).
pub fn subsystem_grid_ssf(
    sub: &Subsystem,
    state_grid: &Grid,
    internal_grid: Option<&Grid>,
    inputs: &[Vec<f64>],
    pi1: f64,
    pi2: f64,
) -> Result<SubsystemSsf> {
    if !(pi1 > 0.0 && pi2 > 0.0) {
        return Err(Error::InvalidArgument("Young parameters must be positive".into()));
    }
    let m = &sub.model;
    check_dim("state grid", m.state_dim(), state_grid.dim())?;
    let mut a2: f64 = 0.0;
    if m.has_input_gain() {
        for u in inputs {
            a2 = a2.max(spectral_norm(&m.effective_a(u)?).powi(2));
        }
    } else {
        a2 = spectral_norm(m.a()).powi(2);
    }
    let half_diag = |g: &Grid| (0..g.dim()).map(|d| (g.width(d) / 2.0).powi(2)).sum::<f64>().sqrt();
    let qx = half_diag(state_grid);
    let qw = internal_grid.map_or(0.0, half_diag);
    let dn = spectral_norm(&sub.d);
    let kappa = (1.0 + pi1) * a2;
    let psi = (1.0 + 1.0 / pi1) * (1.0 + 1.0 / pi2) * (dn * qw + qx).powi(2);
    let c = spectral_norm(m.c());
    Ok(SubsystemSsf {
        params: SsfParams::quadratic(1.0 / (c * c), kappa, psi)?,
        rho_int: (1.0 + 1.0 / pi1) * (1.0 + pi2) * dn * dn,
    })
}

/// Gain matrix (`g[i][j]`: influence of subsystem `j` on `i`) and
/// per-subsystem abstraction errors.
#[derive(Debug, Clone, PartialEq)]
pub struct GainData {
    pub g: Mat,
    pub psi: Vec<f64>,
}

impl GainData {
    pub fn new(g: Mat, psi: Vec<f64>) -> Result<Self> {
        check_dim("gain matrix columns", g.nrows(), g.ncols())?;
        check_dim("psi", g.nrows(), psi.len())?;
        if g.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("gains must be nonnegative".into()));
        }
        if (0..g.nrows()).any(|i| g[(i, i)] != 0.0) {
            return Err(Error::InvalidArgument("gain matrix must have a zero diagonal".into()));
        }
        Ok(GainData { g, psi })
    }

    pub fn len(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.g.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleCheck {
    pub holds: bool,
    /// Largest product of gains around a simple cycle (0 without cycles).
    pub max_cycle_product: f64,
    /// The maximizing cycle as a vertex sequence (first vertex not repeated).
    pub witness: Vec<usize>,
    pub method: &'static str,
}

/// Exhaustive enumeration is used up to this many subsystems.
pub const EXACT_CYCLE_LIMIT: usize = 12;

/// Max-type small-gain condition: every cycle product of the gain digraph
/// (edge `j → i` with weight `g_ij`) is below one.
pub fn small_gain_max(gains: &GainData) -> CycleCheck {
    if gains.len() <= EXACT_CYCLE_LIMIT {
        let (p, w) = max_cycle_product_exact(&gains.g);
        CycleCheck {
            holds: p < 1.0,
            max_cycle_product: p,
            witness: w,
            method: "enumeration",
        }
    } else {
        max_cycle_karp(&gains.g)
    }
}

fn edges(g: &Mat) -> Vec<Vec<(usize, f64)>> {
    // successors of j: i with g_ij > 0
    let n = g.nrows();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if g[(i, j)] > 0.0 {
                out[j].push((i, g[(i, j)]));
            }
        }
    }
    out
}

/// Depth-first enumeration of simple cycles; each cycle is rooted at its
/// smallest vertex.
pub fn max_cycle_product_exact(g: &Mat) -> (f64, Vec<usize>) {
    let succ = edges(g);
    let n = g.nrows();
    let mut best = (0.0, Vec::new());
    let mut path = Vec::new();
    let mut on_path = vec![false; n];

    fn dfs(
        v: usize,
        root: usize,
        prod: f64,
        succ: &[Vec<(usize, f64)>],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        best: &mut (f64, Vec<usize>),
    ) {
        for &(w, gw) in &succ[v] {
            if w == root {
                if prod * gw > best.0 {
                    *best = (prod * gw, path.clone());
                }
            } else if w > root && !on_path[w] {
                on_path[w] = true;
                path.push(w);
                dfs(w, root, prod * gw, succ, path, on_path, best);
                path.pop();
                on_path[w] = false;
            }
        }
    }

    for root in 0..n {
        path.clear();
        path.push(root);
        on_path[root] = true;
        dfs(root, root, 1.0, &succ, &mut path, &mut on_path, &mut best);
        on_path[root] = false;
    }
    best
}

/// Karp's maximum mean cycle on log-gains: all cycle products are below one
/// iff the maximum mean log-weight is negative. The witness is the best
/// cycle found on the critical walk.
fn max_cycle_karp(g: &Mat) -> CycleCheck {
    let n = g.nrows();
    let succ = edges(g);
    let neg = f64::NEG_INFINITY;
    // d[k][v]: heaviest walk with exactly k edges ending at v
    let mut d = vec![vec![neg; n]; n + 1];
    let mut parent = vec![vec![usize::MAX; n]; n + 1];
    d[0].iter_mut().for_each(|x| *x = 0.0);
    for k in 0..n {
        for u in 0..n {
            if d[k][u] == neg {
                continue;
            }
            for &(v, w) in &succ[u] {
                let cand = d[k][u] + w.ln();
                if cand > d[k + 1][v] {
                    d[k + 1][v] = cand;
                    parent[k + 1][v] = u;
                }
            }
        }
    }
    let mut lambda = neg;
    let mut arg = usize::MAX;
    for v in 0..n {
        if d[n][v] == neg {
            continue;
        }
        let worst = (0..n)
            .filter(|&k| d[k][v] != neg)
            .map(|k| (d[n][v] - d[k][v]) / (n - k) as f64)
            .fold(f64::INFINITY, f64::min);
        if worst > lambda {
            lambda = worst;
            arg = v;
        }
    }
    if arg == usize::MAX {
        return CycleCheck {
            holds: true,
            max_cycle_product: 0.0,
            witness: Vec::new(),
            method: "karp",
        };
    }
    // walk back n edges and extract the cycles it contains
    let mut walk = vec![arg];
    let mut v = arg;
    for k in (1..=n).rev() {
        v = parent[k][v];
        walk.push(v);
    }
    walk.reverse();
    let mut best = (0.0f64, Vec::new());
    let mut last_seen: HashMap<usize, usize> = HashMap::new();
    for (idx, &v) in walk.iter().enumerate() {
        if let Some(&start) = last_seen.get(&v) {
            let cyc = &walk[start..idx];
            let prod: f64 = (0..cyc.len()).map(|t| g[(cyc[(t + 1) % cyc.len()], cyc[t])]).product();
            let mean = prod.ln() / cyc.len() as f64;
            if best.1.is_empty() || mean > best.0.ln() / best.1.len() as f64 {
                best = (prod, cyc.to_vec());
            }
        }
        last_seen.insert(v, idx);
    }
    CycleCheck {
        holds: lambda < 0.0,
        max_cycle_product: best.0,
        witness: best.1,
        method: "karp",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCheck {
    pub holds: bool,
    pub rho: f64,
    /// Proven upper bound on the spectral radius.
    pub upper: f64,
    pub converged: bool,
}

/// Sum-type small-gain condition `ρ(G) < 1` by power iteration on `G + I`
/// with Collatz–Wielandt bracketing; falls back to the smaller of the row-
/// and column-sum (Gershgorin) bounds when the bracket does not close.
pub fn small_gain_sum(g: &Mat) -> Result<SpectralCheck> {
    let n = g.nrows();
    check_dim("gain matrix columns", n, g.ncols())?;
    if g.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("gain matrix must be nonnegative".into()));
    }
    if n == 0 {
        return Ok(SpectralCheck {
            holds: true,
            rho: 0.0,
            upper: 0.0,
            converged: true,
        });
    }
    let nz: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| g[(i, j)] != 0.0)
        .map(|(i, j)| (i, j, g[(i, j)]))
        .collect();
    // (G + I)x
    let apply = |x: &[f64]| {
        let mut y = x.to_vec();
        for &(i, j, v) in &nz {
            y[i] += v * x[j];
        }
        y
    };
    let mut x = vec![1.0; n];
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut converged = false;
    for _ in 0..20_000 {
        let y = apply(&x);
        let (l, h) = y
            .iter()
            .zip(&x)
            .map(|(a, b)| a / b)
            .fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r), h.max(r)));
        lo = f64::max(lo, l);
        hi = f64::min(hi, h);
        if hi - lo <= 1e-10 {
            converged = true;
            break;
        }
        let norm = y.iter().copied().fold(0.0, f64::max);
        x = y.iter().map(|v| v / norm).collect();
    }
    let gersh = (0..n)
        .map(|i| g.row(i).sum())
        .fold(0.0, f64::max)
        .min((0..n).map(|j| g.column(j).sum()).fold(0.0, f64::max));
    let upper = (hi - 1.0).min(gersh);
    let rho = if converged { 0.5 * (lo + hi) - 1.0 } else { upper };
    Ok(SpectralCheck {
        holds: if converged { rho < 1.0 } else { upper < 1.0 },
        rho,
        upper,
        converged,
    })
}

/// How output deviations are measured across the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputNorm {
    /// Largest per-subsystem deviation.
    Max,
    /// Euclidean norm of the stacked deviation.
    Euclidean,
}

/// Network SSF from per-subsystem SSFs under the max-type composition
/// `V = maxᵢ Vᵢ`: `κ = maxᵢ(κᵢ + Σⱼ gᵢⱼ)`, `ψ = maxᵢ ψᵢ`,
/// `α = min k_α,i` (max norm) or `min k_α,i / N` (Euclidean).
pub fn compose_error_max(ssfs: &[SubsystemSsf], gains: &GainData, norm: OutputNorm) -> Result<SsfParams> {
    check_dim("subsystem SSFs", gains.len(), ssfs.len())?;
    if ssfs.len() == 1 {
        return Ok(ssfs[0].params);
    }
    let sg = small_gain_max(gains);
    if !sg.holds {
        return Err(Error::VerificationFailed(format!(
            "small-gain condition fails on cycle {:?} with product {}",
            sg.witness, sg.max_cycle_product
        )));
    }
    let n = ssfs.len();
    let kappa = (0..n)
        .map(|i| ssfs[i].params.kappa + gains.g.row(i).sum())
        .fold(0.0, f64::max);
    if kappa >= 1.0 {
        return Err(Error::VerificationFailed(format!(
            "composed contraction factor {kappa} is not below one"
        )));
    }
    let psi = gains.psi.iter().copied().fold(0.0, f64::max);
    let k_min = ssfs.iter().map(|s| s.params.alpha.coef).fold(f64::INFINITY, f64::min);
    let k_alpha = match norm {
        OutputNorm::Max => k_min,
        OutputNorm::Euclidean => k_min / n as f64,
    };
    SsfParams::new(PowerForm { coef: k_alpha, exp: 2.0 }, kappa, None, psi)
}

/// Sum-type composition `V = Σ μᵢVᵢ` with positive weights:
/// `κ = maxⱼ (μⱼκⱼ + Σᵢ μᵢgᵢⱼ)/μⱼ`, `ψ = Σ μᵢψᵢ`, `α = minᵢ μᵢk_α,i`
/// (Euclidean output norm).
pub fn compose_error_sum(ssfs: &[SubsystemSsf], gains: &GainData, weights: &[f64]) -> Result<SsfParams> {
    check_dim("subsystem SSFs", gains.len(), ssfs.len())?;
    check_dim("weights", gains.len(), weights.len())?;
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let n = ssfs.len();
    let kappa = (0..n)
        .map(|j| (weights[j] * ssfs[j].params.kappa + (0..n).map(|i| weights[i] * gains.g[(i, j)]).sum::<f64>()) / weights[j])
        .fold(0.0, f64::max);
    if kappa >= 1.0 {
        return Err(Error::VerificationFailed(format!(
            "composed contraction factor {kappa} is not below one"
        )));
    }
    let psi = (0..n).map(|i| weights[i] * gains.psi[i]).sum();
    let k_alpha = (0..n).map(|i| weights[i] * ssfs[i].params.alpha.coef).fold(f64::INFINITY, f64::min);
    SsfParams::new(PowerForm { coef: k_alpha, exp: 2.0 }, kappa, None, psi)
}

/// Grid abstraction of one subsystem; internal inputs are treated as extra
/// inputs ranging over the representatives of `internal_grid`.
pub fn subsystem_abstraction(
    sub: &Subsystem,
    state_grid: &Grid,
    external: &InputSet,
    internal_grid: &Grid,
    opts: &AbstractionOptions,
) -> Result<FiniteMdp> {
    check_dim("internal grid", sub.internal_inputs(), internal_grid.dim())?;
    let model = sub.augmented_model()?;
    let ext = external.representatives();
    let int = internal_grid.representatives();
    let inputs: Vec<Vec<f64>> = ext
        .iter()
        .flat_map(|u| int.iter().map(move |w| u.iter().chain(w).copied().collect()))
        .collect();
    abstract_system(&model, state_grid, &InputSet::list(inputs)?, opts)
}

/// Summary of one per-subsystem abstraction job.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionSummary {
    pub digest: String,
    pub states: usize,
    pub inputs: usize,
    pub entries: usize,
    pub max_deviation: f64,
}

/// Abstracts every subsystem, building each distinct subsystem once.
/// Returns one summary per subsystem (shared between identical ones).
pub fn abstract_subsystems(
    net: &Interconnection,
    state_grids: &[Grid],
    external: &[InputSet],
    internal_grids: &[Grid],
    opts: &AbstractionOptions,
) -> Result<Vec<AbstractionSummary>> {
    let n = net.len();
    check_dim("state grids", n, state_grids.len())?;
    check_dim("external input sets", n, external.len())?;
    check_dim("internal grids", n, internal_grids.len())?;
    let keys: Vec<String> = (0..n)
        .map(|i| {
            format!(
                "{}:{}:{}:{}",
                net.subsystems[i].digest(),
                state_grids[i].digest(),
                external[i].digest(),
                internal_grids[i].digest()
            )
        })
        .collect();
    let mut first: Vec<usize> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, k) in keys.iter().enumerate() {
        if !index.contains_key(k.as_str()) {
            index.insert(k, first.len());
            first.push(i);
        }
    }
    let built: Vec<AbstractionSummary> = first
        .par_iter()
        .map(|&i| {
            let mdp = subsystem_abstraction(&net.subsystems[i], &state_grids[i], &external[i], &internal_grids[i], opts)?;
            let rep = crate::abstraction::validate_mdp(&mdp);
            Ok(AbstractionSummary {
                digest: keys[i].clone(),
                states: mdp.num_states(),
                inputs: mdp.num_inputs(),
                entries: mdp.num_entries(),
                max_deviation: rep.max_deviation,
            })
        })
        .collect::<Result<_>>()?;
    Ok(keys.iter().map(|k| built[index[k.as_str()]].clone()).collect())
}
