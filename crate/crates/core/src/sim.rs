//! Monte Carlo simulation of closed loops, binomial confidence intervals and
//! empirical validation of the formal bounds.

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::linalg::{Mat, Vector};
use crate::model::{HyperRect, LinearDtScs, Region};
use crate::rng::{Lane, NormalStream};
use crate::spec::{Automaton, HorizonSpec};
use crate::synthesis::ConcreteController;

/// Distribution of the initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vec<f64>),
    Uniform(HyperRect),
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Point(x) => x.len(),
            InitialState::Uniform(b) => b.dim(),
        }
    }

    fn sample(&self, stream: &NormalStream, traj: u64) -> Vec<f64> {
        match self {
            InitialState::Point(x) => x.clone(),
            InitialState::Uniform(b) => (0..b.dim())
                .map(|i| {
                    let u = stream.uniform(Lane::Initial, traj, 0, i);
                    b.lower()[i] + u * (b.upper()[i] - b.lower()[i])
                })
                .collect(),
        }
    }
}

/// Feedback used in simulation.
#[derive(Debug, Clone)]
pub enum Controller {
    Constant(Vec<f64>),
    /// `u = Kx + k₀`.
    Affine { gain: Mat, offset: Vector },
    Refined(Box<ConcreteController>),
}

impl Controller {
    pub fn describe(&self) -> String {
        match self {
            Controller::Constant(u) => format!("constant {u:?}"),
            Controller::Affine { .. } => "affine state feedback".into(),
            Controller::Refined(c) => format!("refined product policy, horizon {}", c.horizon()),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Controller::Constant(u) => u.len(),
            Controller::Affine { gain, .. } => gain.nrows(),
            Controller::Refined(c) => c.input_dim(),
        }
    }
}

/// Simulated state sequences, trajectory-major: the state of trajectory `i`
/// at step `k` starts at `((i·(T+1)) + k)·n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub n_traj: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub seed: u64,
    pub controller: String,
    states: Vec<f64>,
    /// Steps at which the refined controller saw a state outside its grid.
    pub outside_steps: u64,
}

impl TrajectoryBatch {
    pub fn state(&self, traj: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let at = (traj * (self.horizon + 1) + k) * n;
        &self.states[at..at + n]
    }

    pub fn trajectory(&self, traj: usize) -> impl Iterator<Item = &[f64]> {
        (0..=self.horizon).map(move |k| self.state(traj, k))
    }

    /// CSV `traj,k,x0,x1,…`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("traj,k");
        (0..self.state_dim).for_each(|i| header.push_str(&format!(",x{i}")));
        writeln!(w, "{header}")?;
        for t in 0..self.n_traj {
            for k in 0..=self.horizon {
                let mut line = format!("{t},{k}");
                for v in self.state(t, k) {
                    line.push_str(&format!(",{v:.16e}"));
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Simulates `n_traj` closed-loop trajectories of `horizon` steps.
pub fn simulate(
    model: &LinearDtScs,
    controller: &Controller,
    x0: &InitialState,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let n = model.state_dim();
    check_dim("initial state", n, x0.dim())?;
    check_dim("controller input", model.input_dim(), controller.input_dim())?;
    if let Controller::Refined(c) = controller {
        check_dim("controller state", n, c.state_dim())?;
        if c.horizon() < horizon {
            return Err(Error::InvalidArgument(format!(
                "policy covers {} steps, simulation asks for {horizon}",
                c.horizon()
            )));
        }
    }
    let stream = NormalStream::new(seed);
    let stride = (horizon + 1) * n;
    let mut states = vec![0.0; n_traj * stride];
    let outside: u64 = states
        .par_chunks_mut(stride)
        .enumerate()
        .with_min_len(16)
        .map(|(t, out)| -> Result<u64> {
            let t = t as u64;
            let mut x = x0.sample(&stream, t);
            out[..n].copy_from_slice(&x);
            let mut w = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut outside = 0;
            let mut loc = match controller {
                Controller::Refined(c) => c.initial_location(&x)?,
                _ => 0,
            };
            for k in 0..horizon {
                let u = match controller {
                    Controller::Constant(u) => u.clone(),
                    Controller::Affine { gain, offset } => (gain * Vector::from_column_slice(&x) + offset).iter().copied().collect(),
                    Controller::Refined(c) => {
                        let a = c.act(k, &x, loc)?;
                        outside += a.outside as u64;
                        a.input
                    }
                };
                stream.fill_normals(Lane::Noise, t, k as u32, &mut w);
                model.mean_into(&x, &u, &mut next)?;
                for i in 0..n {
                    next[i] += model.r()[i] * w[i];
                }
                std::mem::swap(&mut x, &mut next);
                out[(k + 1) * n..(k + 2) * n].copy_from_slice(&x);
                if let Controller::Refined(c) = controller {
                    loc = c.advance(loc, &x)?;
                }
            }
            Ok(outside)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(TrajectoryBatch {
        n_traj,
        horizon,
        state_dim: n,
        seed,
        controller: controller.describe(),
        states,
        outside_steps: outside,
    })
}

/// Binomial proportion with an exact (Clopper–Pearson) interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateCI {
    pub p_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: u64,
    pub successes: u64,
    pub confidence: f64,
}

impl EstimateCI {
    pub fn to_key_value(&self) -> String {
        format!(
            "p_hat={}\nci_lower={}\nci_upper={}\nn={}\nsuccesses={}\nconfidence={}\n",
            self.p_hat, self.lower, self.upper, self.n, self.successes, self.confidence
        )
    }
}

/// Solves `I_x(a, b) = target` for `x` by bisection.
fn beta_quantile(target: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided interval at level `confidence`.
pub fn clopper_pearson(successes: u64, n: u64, confidence: f64) -> Result<EstimateCI> {
    if n == 0 || successes > n {
        return Err(Error::InvalidArgument("need 0 <= successes <= n and n >= 1".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument("confidence must lie in (0, 1)".into()));
    }
    let alpha = 1.0 - confidence;
    let (k, nf) = (successes as f64, n as f64);
    let p_hat = k / nf;
    let lower = if successes == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, k, nf - k + 1.0).min(p_hat)
    };
    let upper = if successes == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, k + 1.0, nf - k).max(p_hat)
    };
    Ok(EstimateCI {
        p_hat,
        lower,
        upper,
        n,
        successes,
        confidence,
    })
}

fn outputs(x: &[f64], output: Option<&Mat>) -> Vec<f64> {
    match output {
        Some(c) => (0..c.nrows()).map(|i| (0..x.len()).map(|j| c[(i, j)] * x[j]).sum()).collect(),
        None => x.to_vec(),
    }
}

fn satisfies(automaton: &Automaton, batch: &TrajectoryBatch, t: usize, horizon: usize, output: Option<&Mat>) -> Result<bool> {
    let word = (0..=horizon)
        .map(|k| automaton.labels.letter_for(&automaton.dfa, &outputs(batch.state(t, k), output)))
        .collect::<Result<Vec<_>>>()?;
    automaton.accepts_word(&word)
}

/// Fraction of trajectories satisfying `event`, with a 99% exact interval.
pub fn empirical_probability(batch: &TrajectoryBatch, event: &HorizonSpec, output: Option<&Mat>) -> Result<EstimateCI> {
    if event.horizon > batch.horizon {
        return Err(Error::InvalidArgument("event horizon exceeds the simulated horizon".into()));
    }
    let automaton = event.automaton()?;
    let hits = (0..batch.n_traj)
        .into_par_iter()
        .map(|t| satisfies(&automaton, batch, t, event.horizon, output).map(u64::from))
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    clopper_pearson(hits, batch.n_traj as u64, 0.99)
}

/// Outcome of comparing an empirical frequency against a formal bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundValidation {
    pub kind: &'static str,
    pub bound: f64,
    pub empirical: EstimateCI,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
    pub passed: bool,
}

impl BoundValidation {
    fn upper(kind: &'static str, bound: f64, est: EstimateCI) -> Self {
        let slack = 3.0 * (bound.clamp(0.0, 1.0) * (1.0 - bound.clamp(0.0, 1.0)) / est.n as f64).sqrt();
        BoundValidation {
            kind,
            bound,
            passed: est.p_hat <= bound + slack,
            empirical: est,
            slack,
        }
    }

    fn lower(kind: &'static str, bound: f64, est: EstimateCI) -> Self {
        let slack = 3.0 * (bound.clamp(0.0, 1.0) * (1.0 - bound.clamp(0.0, 1.0)) / est.n as f64).sqrt();
        BoundValidation {
            kind,
            bound,
            passed: est.p_hat >= bound - slack,
            empirical: est,
            slack,
        }
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "kind={}\nbound={}\nempirical={}\nslack={}\nn={}\npassed={}\n",
            self.kind, self.bound, self.empirical.p_hat, self.slack, self.empirical.n, self.passed
        )
    }
}

/// Refuses when three standard deviations at p = ½ exceed `resolution`,
/// reporting the required sample size.
pub fn check_resolution(n: usize, resolution: Option<f64>) -> Result<()> {
    if let Some(res) = resolution {
        let required = (2.25 / (res * res)).ceil() as usize;
        if n < required {
            return Err(Error::InvalidArgument(format!(
                "{n} trajectories cannot resolve {res}; need at least {required}"
            )));
        }
    }
    Ok(())
}

/// Unsafe-hit frequency of a barrier-certificate closed loop against `δ̄`:
/// a trajectory counts when `x(k) ∈ X_u` for some `k ≤ T`.
#[allow(clippy::too_many_arguments)]
pub fn validate_kushner(
    model: &LinearDtScs,
    controller: &Controller,
    x0: &InitialState,
    unsafe_set: &Region,
    delta_bar: f64,
    horizon: usize,
    n_traj: usize,
    seed: u64,
    resolution: Option<f64>,
) -> Result<BoundValidation> {
    check_resolution(n_traj, resolution)?;
    let batch = simulate(model, controller, x0, horizon, n_traj, seed)?;
    let hits: u64 = (0..n_traj)
        .into_par_iter()
        .map(|t| batch.trajectory(t).any(|x| unsafe_set.contains(x)) as u64)
        .sum();
    Ok(BoundValidation::upper("kushner", delta_bar, clopper_pearson(hits, n_traj as u64, 0.99)?))
}

/// Concrete satisfaction under a refined policy against the abstract value:
/// passes when the empirical probability is at least the value minus slack.
#[allow(clippy::too_many_arguments)]
pub fn validate_pro4(
    model: &LinearDtScs,
    controller: ConcreteController,
    spec: &HorizonSpec,
    x0: &[f64],
    abstract_value: f64,
    n_traj: usize,
    seed: u64,
    resolution: Option<f64>,
) -> Result<BoundValidation> {
    check_resolution(n_traj, resolution)?;
    let output = model.c().clone();
    let batch = simulate(
        model,
        &Controller::Refined(Box::new(controller)),
        &InitialState::Point(x0.to_vec()),
        spec.horizon,
        n_traj,
        seed,
    )?;
    let est = empirical_probability(&batch, spec, Some(&output))?;
    Ok(BoundValidation::lower("pro4", abstract_value, est))
}

/// How the abstraction is driven in a coupled simulation.
#[derive(Debug, Clone)]
pub enum CoupledAbstraction {
    /// `x̂⁺ = Π(f(x̂, u, ς))`: same model and noise sample, quantized onto
    /// the grid representatives (leaving the grid stops the quantization).
    Grid { grid: Grid },
    /// Reduced-order linear model with its own noise and the affine
    /// interface `u = K(x − Px̂) + Qx̂ + û`.
    ReducedOrder {
        model: LinearDtScs,
        interface: crate::bounds::Interface,
    },
}

/// Frequency of `sup_{k ≤ T} ‖y(k) − ŷ(k)‖ ≥ ε` against a λ₂ bound.
///
/// Both systems receive the abstract input `û(k)` from `abstract_input`
/// (a function of the step and the abstract state).
#[allow(clippy::too_many_arguments)]
pub fn validate_pro2<F>(
    model: &LinearDtScs,
    abstraction: &CoupledAbstraction,
    abstract_input: F,
    x0: &[f64],
    x_hat0: &[f64],
    eps: f64,
    lambda2: f64,
    horizon: usize,
    n_traj: usize,
    seed: u64,
    resolution: Option<f64>,
) -> Result<BoundValidation>
where
    F: Fn(usize, &[f64]) -> Vec<f64> + Sync,
{
    check_resolution(n_traj, resolution)?;
    check_dim("initial state", model.state_dim(), x0.len())?;
    let stream = NormalStream::new(seed);
    let n = model.state_dim();
    let hits: u64 = (0..n_traj as u64)
        .into_par_iter()
        .map(|t| -> Result<u64> {
            let mut x = x0.to_vec();
            let mut xh = x_hat0.to_vec();
            let mut w = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut wh = vec![0.0; xh.len()];
            let mut next_h = vec![0.0; xh.len()];
            let deviates = |x: &[f64], xh: &[f64]| -> Result<bool> {
                let y = model.output(x)?;
                let yh = match abstraction {
                    CoupledAbstraction::Grid { .. } => model.output(xh)?,
                    CoupledAbstraction::ReducedOrder { model: m, .. } => m.output(xh)?,
                };
                let d: f64 = y.iter().zip(&yh).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                Ok(d >= eps)
            };
            if deviates(&x, &xh)? {
                return Ok(1);
            }
            for k in 0..horizon {
                let u_hat = abstract_input(k, &xh);
                stream.fill_normals(Lane::Noise, t, k as u32, &mut w);
                match abstraction {
                    CoupledAbstraction::Grid { grid } => {
                        model.mean_into(&x, &u_hat, &mut next)?;
                        model.mean_into(&xh, &u_hat, &mut next_h)?;
                        for i in 0..n {
                            next[i] += model.r()[i] * w[i];
                            next_h[i] += model.r()[i] * w[i];
                        }
                        if let Some(c) = grid.cell_of(&next_h) {
                            next_h = grid.representative(c);
                        }
                    }
                    CoupledAbstraction::ReducedOrder { model: m, interface } => {
                        let u = interface.apply(&x, &xh, &u_hat)?;
                        model.mean_into(&x, &u, &mut next)?;
                        for i in 0..n {
                            next[i] += model.r()[i] * w[i];
                        }
                        stream.fill_normals(Lane::AbstractNoise, t, k as u32, &mut wh);
                        m.mean_into(&xh, &u_hat, &mut next_h)?;
                        for i in 0..next_h.len() {
                            next_h[i] += m.r()[i] * wh[i];
                        }
                    }
                }
                std::mem::swap(&mut x, &mut next);
                std::mem::swap(&mut xh, &mut next_h);
                if deviates(&x, &xh)? {
                    return Ok(1);
                }
            }
            Ok(0)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(BoundValidation::upper("pro2", lambda2, clopper_pearson(hits, n_traj as u64, 0.99)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> LinearDtScs {
        LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6)
    }

    #[test]
    fn heater_off_decays() {
        let b = simulate(&room(), &Controller::Constant(vec![0.0]), &InitialState::Point(vec![15.0]), 100, 10, 1).unwrap();
        for t in 0..10 {
            let last = b.state(t, 100)[0];
            assert!((last + 1.0).abs() < 3.0, "{last}");
        }
        assert_eq!(b.state(3, 0), &[15.0]);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let m = room().with_noise(Vector::zeros(1)).unwrap();
        let b = simulate(&m, &Controller::Constant(vec![0.3]), &InitialState::Point(vec![20.0]), 20, 5, 9).unwrap();
        for t in 1..5 {
            assert_eq!(b.trajectory(t).collect::<Vec<_>>(), b.trajectory(0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn seeds_and_threads() {
        let run = |seed| simulate(&room(), &Controller::Constant(vec![0.5]), &InitialState::Point(vec![20.0]), 30, 64, seed).unwrap();
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).states, run(6).states);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = single.install(|| run(5));
        assert_eq!(one, run(5));
    }

    #[test]
    fn clopper_pearson_reference() {
        // 5/20 at 95%: (0.0865715, 0.4910459)
        let ci = clopper_pearson(5, 20, 0.95).unwrap();
        assert!((ci.lower - 0.086_571_5).abs() < 1e-6, "{}", ci.lower);
        assert!((ci.upper - 0.491_045_9).abs() < 1e-6, "{}", ci.upper);
        let all = clopper_pearson(10, 10, 0.99).unwrap();
        assert_eq!((all.p_hat, all.upper), (1.0, 1.0));
        let none = clopper_pearson(0, 10, 0.99).unwrap();
        assert_eq!(none.lower, 0.0);
        assert!(clopper_pearson(3, 2, 0.9).is_err());
    }

    #[test]
    fn always_true_event() {
        let b = simulate(&room(), &Controller::Constant(vec![0.5]), &InitialState::Point(vec![20.0]), 5, 50, 3).unwrap();
        let everywhere = Region::single(HyperRect::interval(-1e9, 1e9).unwrap());
        let est = empirical_probability(&b, &HorizonSpec::safety(everywhere, 5), None).unwrap();
        assert_eq!((est.p_hat, est.upper), (1.0, 1.0));
    }

    #[test]
    fn fair_coin_event() {
        // x⁺ = w: P(x(1) ≥ 0) = ½
        let m = LinearDtScs::new(
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Vector::zeros(1),
            Mat::identity(1, 1),
            Vector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        let b = simulate(&m, &Controller::Constant(vec![0.0]), &InitialState::Point(vec![-5.0]), 1, 10_000, 11).unwrap();
        let target = Region::single(HyperRect::interval(0.0, 1e9).unwrap());
        let est = empirical_probability(&b, &HorizonSpec::reachability(target, 1), None).unwrap();
        assert!((0.48..=0.52).contains(&est.p_hat), "{}", est.p_hat);
        assert!(est.upper - est.lower < 0.03);
    }

    #[test]
    fn unreachable_unsafe_set() {
        let far = Region::single(HyperRect::interval(1e6, 2e6).unwrap());
        let v = validate_kushner(
            &room(),
            &Controller::Constant(vec![0.5]),
            &InitialState::Point(vec![20.0]),
            &far,
            0.0,
            10,
            1000,
            1,
            None,
        )
        .unwrap();
        assert_eq!(v.empirical.successes, 0);
        assert!(v.passed);
    }

    #[test]
    fn resolution_guard() {
        assert!(check_resolution(100, Some(0.01)).is_err());
        assert!(check_resolution(30_000, Some(0.01)).is_ok());
    }

    #[test]
    fn grid_coupling_tracks_closely() {
        let g = Grid::new(HyperRect::interval(19.0, 21.0).unwrap(), vec![4000]).unwrap();
        let v = validate_pro2(
            &room(),
            &CoupledAbstraction::Grid { grid: g },
            |_, _| vec![0.55],
            &[20.0],
            &[20.0],
            0.01,
            0.5,
            20,
            2000,
            4,
            None,
        )
        .unwrap();
        assert_eq!(v.empirical.successes, 0);
        assert!(v.passed);
    }
}
