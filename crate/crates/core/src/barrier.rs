//! Control barrier certificates: polynomial candidates, exact Gaussian
//! expectations, pointwise grid checks and Kushner-type safety bounds.
//!
//! The three certificate conditions are checked on a grid of points. With a
//! Lipschitz margin the thresholds are tightened by `L·h·√n/2` (the largest
//! distance from any point of a box to its nearest grid point), which
//! certifies the continuum; without it only the grid is certified.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{HyperRect, LinearDtScs, Region};

/// Multivariate polynomial as a list of `(exponents, coefficient)` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

pub const MAX_DEGREE: u32 = 6;

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        for (e, c) in &terms {
            check_dim("monomial exponents", dim, e.len())?;
            if !c.is_finite() {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
            if e.iter().sum::<u32>() > MAX_DEGREE {
                return Err(Error::Unsupported(format!("total degree above {MAX_DEGREE}")));
            }
        }
        Ok(Polynomial { dim, terms })
    }

    /// `Σ cᵢ xⁱ` for a scalar state, coefficients in ascending powers.
    pub fn univariate(coefs: &[f64]) -> Result<Self> {
        Self::new(1, coefs.iter().enumerate().map(|(p, c)| (vec![p as u32], *c)).collect())
    }

    /// `(x − m)ᵀ diag(w) (x − m)`.
    pub fn diagonal_quadratic(vertex: &[f64], weights: &[f64]) -> Result<Self> {
        check_dim("weights", vertex.len(), weights.len())?;
        let n = vertex.len();
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for i in 0..n {
            let mut e2 = vec![0; n];
            e2[i] = 2;
            let mut e1 = vec![0; n];
            e1[i] = 1;
            terms.push((e2, weights[i]));
            terms.push((e1, -2.0 * weights[i] * vertex[i]));
            constant += weights[i] * vertex[i] * vertex[i];
        }
        terms.push((vec![0; n], constant));
        Self::new(n, terms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(p, v)| v.powi(*p as i32)).product::<f64>())
            .sum()
    }
}

/// `E[Z^k]` for a standard normal: 0 for odd `k`, `(k−1)!!` for even `k`.
pub fn std_normal_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut m = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        m *= j as f64;
        j -= 2;
    }
    m
}

/// `E[(μ + σZ)^p]` by binomial expansion.
fn normal_raw_moment(mu: f64, sigma: f64, p: u32) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 0..=p {
        if k > 0 {
            binom = binom * (p - k + 1) as f64 / k as f64;
        }
        if k % 2 == 0 {
            total += binom * mu.powi((p - k) as i32) * sigma.powi(k as i32) * std_normal_moment(k);
        }
    }
    total
}

/// `E[B(x⁺) | x, u]` in closed form for a diagonal Gaussian kernel.
pub fn expected_barrier(b: &Polynomial, model: &LinearDtScs, x: &[f64], u: &[f64]) -> Result<f64> {
    check_dim("polynomial dimension", model.state_dim(), b.dim())?;
    let (mean, std) = model.kernel_mean_std(x, u)?;
    Ok(expected_at(b, &mean, &std))
}

fn expected_at(b: &Polynomial, mean: &[f64], std: &[f64]) -> f64 {
    b.terms
        .iter()
        .map(|(e, c)| {
            c * e
                .iter()
                .enumerate()
                .map(|(i, p)| normal_raw_moment(mean[i], std[i], *p))
                .product::<f64>()
        })
        .sum()
}

/// Candidate certificate with its constants and an optional affine
/// controller `u = Kx + k₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierCertificate {
    pub b: Polynomial,
    pub controller: Option<(Mat, Vector)>,
    pub eta: f64,
    pub beta: f64,
    pub kappa: f64,
    pub c: f64,
}

impl BarrierCertificate {
    pub fn new(b: Polynomial, controller: Option<(Mat, Vector)>, eta: f64, beta: f64, kappa: f64, c: f64) -> Result<Self> {
        if !(beta > eta) {
            return Err(Error::InvalidArgument(format!("need beta > eta, got beta={beta}, eta={eta}")));
        }
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1], got {kappa}")));
        }
        if !(c >= 0.0) || !(eta >= 0.0) {
            return Err(Error::InvalidArgument("eta and c must be nonnegative".into()));
        }
        if let Some((k, k0)) = &controller {
            check_dim("controller gain columns", b.dim(), k.ncols())?;
            check_dim("controller offset", k.nrows(), k0.len())?;
        }
        Ok(BarrierCertificate {
            b,
            controller,
            eta,
            beta,
            kappa,
            c,
        })
    }

    pub fn input(&self, x: &[f64], input_dim: usize) -> Vec<f64> {
        match &self.controller {
            Some((k, k0)) => (k * Vector::from_column_slice(x) + k0).iter().copied().collect(),
            None => vec![0.0; input_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbcCondition {
    pub name: &'static str,
    pub holds: bool,
    /// Smallest slack over the checked points (negative when violated).
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbcReport {
    pub conditions: Vec<CbcCondition>,
    pub spacing: f64,
    /// Whether the Lipschitz margin was applied, so the verdict covers the
    /// continuum rather than only the grid.
    pub continuum_certified: bool,
}

impl CbcReport {
    pub fn holds(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn condition(&self, name: &str) -> Option<&CbcCondition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn to_key_value(&self) -> String {
        let mut s = format!("spacing={}\ncontinuum_certified={}\n", self.spacing, self.continuum_certified);
        for c in &self.conditions {
            s.push_str(&format!(
                "{0}.holds={1}\n{0}.worst_margin={2}\n{0}.worst_point={3:?}\n{0}.points={4}\n",
                c.name, c.holds, c.worst_margin, c.worst_point, c.points
            ));
        }
        s
    }
}

/// Grid points covering a box with spacing at most `h` (at least two per
/// dimension, endpoints included).
fn box_points(b: &HyperRect, h: f64) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..b.dim())
        .map(|d| {
            let (l, u) = (b.lower()[d], b.upper()[d]);
            let count = (((u - l) / h).ceil() as usize + 1).max(2);
            (0..count)
                .map(|i| if i + 1 == count { u } else { l + (u - l) * i as f64 / (count - 1) as f64 })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

fn region_points(r: &Region, h: f64) -> Vec<Vec<f64>> {
    r.boxes().iter().flat_map(|b| box_points(b, h)).collect()
}

/// Smallest margin with the lowest point index on ties.
fn worst<F>(points: &[Vec<f64>], margin: F) -> (f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| (margin(p), i))
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        )
}

/// Checks `B ≤ η` on `X₀`, `B ≥ β` on `X_u` and
/// `E[B(f(x, u(x), ς))] ≤ max{κB(x), c}` on `X`, at grid spacing `h`.
/// `lipschitz` holds constants of the three condition functions.
pub fn check_cbc(
    cand: &BarrierCertificate,
    model: &LinearDtScs,
    x0: &Region,
    x_unsafe: &Region,
    x_all: &Region,
    spacing: f64,
    lipschitz: Option<[f64; 3]>,
) -> Result<CbcReport> {
    check_dim("certificate dimension", model.state_dim(), cand.b.dim())?;
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("check spacing must be positive".into()));
    }
    if let Some((k, _)) = &cand.controller {
        check_dim("controller inputs", model.input_dim(), k.nrows())?;
    }
    let reach = spacing * (model.state_dim() as f64).sqrt() / 2.0;
    let tighten = |i: usize| lipschitz.map_or(0.0, |l| l[i] * reach);
    let m = model.input_dim();

    let mut conditions = Vec::new();
    let mut run = |name: &'static str, region: &Region, margin: &(dyn Fn(&[f64]) -> f64 + Sync)| {
        let pts = region_points(region, spacing);
        let (w, i) = worst(&pts, margin);
        conditions.push(CbcCondition {
            name,
            holds: pts.is_empty() || w >= 0.0,
            worst_margin: w,
            worst_point: pts.get(i).cloned().unwrap_or_default(),
            points: pts.len(),
        });
    };
    let t0 = tighten(0);
    run("initial", x0, &|x| cand.eta - cand.b.eval(x) - t0);
    let t1 = tighten(1);
    run("unsafe", x_unsafe, &|x| cand.b.eval(x) - cand.beta - t1);
    let t2 = tighten(2);
    run("decrease", x_all, &|x| {
        let u = cand.input(x, m);
        let mut mean = vec![0.0; x.len()];
        if model.mean_into(x, &u, &mut mean).is_err() {
            return f64::NEG_INFINITY;
        }
        let std: Vec<f64> = model.r().iter().copied().collect();
        let e = expected_at(&cand.b, &mean, &std);
        (cand.kappa * cand.b.eval(x)).max(cand.c) - e - t2
    });
    Ok(CbcReport {
        conditions,
        spacing,
        continuum_certified: lipschitz.is_some(),
    })
}

/// Upper bound on the probability of reaching the unsafe set.
#[derive(Debug, Clone, PartialEq)]
pub struct KushnerBound {
    pub value: f64,
    /// Formula that produced the minimum.
    pub branch: &'static str,
    /// Every applicable formula and its (unclamped) value.
    pub candidates: Vec<(&'static str, f64)>,
}

/// Kushner-type bound for a certificate with constants `(η, β, κ, c)` over
/// `horizon` steps (`None` = infinite, which requires `c = 0`).
pub fn kushner_bound(eta: f64, beta: f64, kappa: f64, c: f64, horizon: Option<usize>) -> Result<KushnerBound> {
    if !(eta >= 0.0) || !(beta > eta) {
        return Err(Error::InvalidArgument("need beta > eta >= 0".into()));
    }
    if !(kappa > 0.0 && kappa <= 1.0) || !(c >= 0.0) {
        return Err(Error::InvalidArgument("need kappa in (0, 1] and c >= 0".into()));
    }
    let mut candidates = Vec::new();
    match horizon {
        None => {
            if c != 0.0 {
                return Err(Error::Unsupported("an infinite horizon needs c = 0".into()));
            }
            candidates.push(("ratio", eta / beta));
        }
        Some(t) => {
            let t = t as i32;
            if kappa < 1.0 {
                // c/(κ−1) ≤ 0 < β, so the second case is unreachable for valid inputs
                if beta >= c / (kappa - 1.0) {
                    // with c ≥ β the bound is vacuous and the power would alternate in sign
                    let keep = (1.0 - c / beta).max(0.0);
                    candidates.push(("geometric_c", 1.0 - (1.0 - eta / beta) * keep.powi(t)));
                } else {
                    candidates.push((
                        "geometric_kappa",
                        eta / beta * kappa.powi(t) + c / ((1.0 - kappa) * beta) * (1.0 - kappa.powi(t)),
                    ));
                }
            }
            candidates.push(("linear", (eta + c * t as f64) / beta));
            if c == 0.0 {
                candidates.push(("ratio", eta / beta));
            }
        }
    }
    let (branch, v) = candidates
        .iter()
        .copied()
        .fold(("", f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    Ok(KushnerBound {
        value: v.clamp(0.0, 1.0),
        branch,
        candidates,
    })
}

/// Parameter grid for [`search_quadratic_cbc`].
///
/// Certificates are `(x − m)ᵀ diag(w) (x − m)`; scaling `B` scales `η`, `β`
/// and `c` alike, so the first weight is fixed to 1 and only ratios in
/// `weights` matter.
#[derive(Debug, Clone, PartialEq)]
pub struct CbcSearch {
    pub vertices: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub controllers: Vec<(Mat, Vector)>,
    pub kappas: Vec<f64>,
    pub horizon: usize,
    pub spacing: f64,
}

/// Sweeps quadratic certificates and affine controllers; for each candidate
/// the tightest `η` (max over `X₀`), `β` (min over `X_u`) and `c` (largest
/// expectation where the `κ`-decrease fails) are derived, and the candidate
/// with the smallest Kushner bound is returned.
pub fn search_quadratic_cbc(
    model: &LinearDtScs,
    x0: &Region,
    x_unsafe: &Region,
    x_all: &Region,
    search: &CbcSearch,
) -> Result<Option<(BarrierCertificate, KushnerBound)>> {
    let n = model.state_dim();
    if n > 2 {
        return Err(Error::Unsupported("certificate sweep is limited to 1-D and 2-D states".into()));
    }
    if x0.boxes().iter().any(|a| x_unsafe.boxes().iter().any(|b| a.intersects(b))) {
        return Ok(None);
    }
    let p0 = region_points(x0, search.spacing);
    let pu = region_points(x_unsafe, search.spacing);
    let pa = region_points(x_all, search.spacing);
    let std: Vec<f64> = model.r().iter().copied().collect();

    let mut jobs = Vec::new();
    for v in &search.vertices {
        check_dim("vertex", n, v.len())?;
        for w in &search.weights {
            check_dim("weights", n, w.len())?;
            for (ci, (k, k0)) in search.controllers.iter().enumerate() {
                check_dim("controller inputs", model.input_dim(), k.nrows())?;
                check_dim("controller gain columns", n, k.ncols())?;
                check_dim("controller offset", k.nrows(), k0.len())?;
                jobs.push((v.clone(), w.clone(), ci));
            }
        }
    }
    let results: Vec<Option<(BarrierCertificate, KushnerBound)>> = jobs
        .par_iter()
        .map(|(v, w, ci)| -> Result<Option<(BarrierCertificate, KushnerBound)>> {
            let b = Polynomial::diagonal_quadratic(v, w)?;
            let eta = p0.iter().map(|x| b.eval(x)).fold(0.0, f64::max);
            let beta = pu.iter().map(|x| b.eval(x)).fold(f64::INFINITY, f64::min);
            if !(beta > eta) || !beta.is_finite() {
                return Ok(None);
            }
            let (k, k0) = &search.controllers[*ci];
            // (B(x), E[B(x⁺)]) over X
            let pairs: Vec<(f64, f64)> = pa
                .iter()
                .map(|x| {
                    let u: Vec<f64> = (k * Vector::from_column_slice(x) + k0).iter().copied().collect();
                    let mut mean = vec![0.0; n];
                    model.mean_into(x, &u, &mut mean)?;
                    Ok((b.eval(x), expected_at(&b, &mean, &std)))
                })
                .collect::<Result<_>>()?;
            let mut best: Option<(BarrierCertificate, KushnerBound)> = None;
            for &kappa in &search.kappas {
                let c = pairs
                    .iter()
                    .filter(|(bx, e)| *e > kappa * bx)
                    .map(|(_, e)| *e)
                    .fold(0.0, f64::max);
                let Ok(kb) = kushner_bound(eta, beta, kappa, c, Some(search.horizon)) else { continue };
                if best.as_ref().is_none_or(|(_, cur)| kb.value < cur.value) {
                    let cert = BarrierCertificate::new(b.clone(), Some((k.clone(), k0.clone())), eta, beta, kappa, c)?;
                    best = Some((cert, kb));
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    // first minimum in job order keeps the result independent of scheduling
    let mut best: Option<(BarrierCertificate, KushnerBound)> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(_, cur)| r.1.value < cur.value) {
            best = Some(r);
        }
    }
    Ok(best)
}
