//! Closeness guarantees between a concrete system and its abstraction.
//!
//! * λ₁-type bounds from Lipschitz constants of the transition density,
//! * λ₂ from a stochastic simulation function (SSF) with power-form
//!   class-K parameters,
//! * matrix-condition checks for quadratic SSFs of linear systems,
//! * a quadratic δ-ISS test and the interface function that refines
//!   abstract inputs.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::linalg::{check_psd, frobenius, is_symmetric, max_eigenvalue, max_generalized_eigenvalue, spectral_norm, Mat, Vector};
use crate::model::LinearDtScs;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzData {
    /// Constant for a fixed policy (state only).
    pub h: f64,
    /// Constant in state and input.
    pub h_bar: f64,
    /// Lebesgue-measure factor.
    pub l_b: f64,
}

/// `H = Σᵢⱼ 2|aᵢⱼ|/(σᵢ√(2π))` and `H̄ = H + Σᵢⱼ 2|bᵢⱼ|/(σᵢ√(2π))`.
///
/// With an input-dependent gain the state matrix is taken at `u`. `L_b`
/// defaults to 1 and can be replaced with [`LipschitzData::with_domain_measure`].
pub fn lipschitz_constants(model: &LinearDtScs, u: Option<&[f64]>) -> Result<LipschitzData> {
    if let Some(i) = model.r().iter().position(|s| *s == 0.0) {
        return Err(Error::Unsupported(format!("noise deviation of coordinate {i} is zero; constants diverge")));
    }
    let a = match (model.has_input_gain(), u) {
        (false, _) => model.a().clone(),
        (true, Some(u)) => model.effective_a(u)?,
        (true, None) => {
            return Err(Error::InvalidArgument("input-dependent gain needs the input at which to evaluate A".into()))
        }
    };
    let norm = (2.0 * PI).sqrt();
    let weighted = |m: &Mat| -> f64 {
        (0..m.nrows())
            .map(|i| m.row(i).iter().map(|v| 2.0 * v.abs()).sum::<f64>() / (model.r()[i] * norm))
            .sum()
    };
    let h = weighted(&a);
    Ok(LipschitzData {
        h,
        h_bar: h + weighted(model.b()),
        l_b: 1.0,
    })
}

impl LipschitzData {
    /// Uses the measure of the gridded domain as `L_b`.
    pub fn with_domain_measure(mut self, grid: &Grid) -> Self {
        self.l_b = grid.domain().volume();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Lambda1,
    Lambda1Bar,
    TwoLambda1Bar,
    Lambda2,
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Lambda1 => "lambda1",
            BoundKind::Lambda1Bar => "lambda1_bar",
            BoundKind::TwoLambda1Bar => "two_lambda1_bar",
            BoundKind::Lambda2 => "lambda2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosenessReport {
    pub kind: BoundKind,
    pub value: f64,
    /// Every constant that entered the value, by name.
    pub constants: Vec<(String, f64)>,
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    /// Which case of a piecewise formula produced the value.
    pub branch: Option<String>,
}

impl ClosenessReport {
    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = format!("kind={}\nvalue={}\n", self.kind.name(), self.value);
        for (k, v) in &self.constants {
            s.push_str(&format!("{k}={v}\n"));
        }
        if let Some(e) = self.epsilon {
            s.push_str(&format!("epsilon={e}\n"));
        }
        if let Some(t) = self.horizon {
            s.push_str(&format!("horizon={t}\n"));
        }
        if let Some(b) = &self.branch {
            s.push_str(&format!("branch={b}\n"));
        }
        s
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("kind,value");
        for (k, _) in &self.constants {
            h.push(',');
            h.push_str(k);
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{:.16e}", self.kind.name(), self.value);
        for (_, v) in &self.constants {
            r.push_str(&format!(",{v:.16e}"));
        }
        r
    }
}

/// `T_d·δ·H·L_b`; `kind` selects which constant was passed. The doubled
/// variant multiplies by two.
pub fn lambda1(kind: BoundKind, constant: f64, delta: f64, horizon: usize, l_b: f64) -> Result<ClosenessReport> {
    if [constant, delta, l_b].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("lambda1 arguments must be finite and nonnegative".into()));
    }
    let base = horizon as f64 * delta * constant * l_b;
    let (value, name) = match kind {
        BoundKind::Lambda1 => (base, "H"),
        BoundKind::Lambda1Bar => (base, "H_bar"),
        BoundKind::TwoLambda1Bar => (2.0 * base, "H_bar"),
        BoundKind::Lambda2 => return Err(Error::InvalidArgument("lambda1 cannot produce a lambda2 report".into())),
    };
    Ok(ClosenessReport {
        kind,
        value,
        constants: vec![
            (name.into(), constant),
            ("delta".into(), delta),
            ("T_d".into(), horizon as f64),
            ("L_b".into(), l_b),
        ],
        epsilon: None,
        horizon: Some(horizon),
        branch: None,
    })
}

/// `k·s^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerForm {
    pub coef: f64,
    pub exp: f64,
}

impl PowerForm {
    pub fn eval(&self, s: f64) -> f64 {
        self.coef * s.powf(self.exp)
    }
}

/// Power-form parameters of a stochastic simulation function:
/// `α(‖y − ŷ‖) ≤ V`, and `E[V⁺] ≤ κ·V + ρ_ext(‖û‖) + ψ` with `κ` the
/// one-step contraction factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsfParams {
    pub alpha: PowerForm,
    pub kappa: f64,
    pub rho_ext: Option<PowerForm>,
    pub psi: f64,
}

impl SsfParams {
    pub fn new(alpha: PowerForm, kappa: f64, rho_ext: Option<PowerForm>, psi: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        if !(alpha.coef > 0.0) || !(alpha.exp > 0.0) {
            return Err(Error::InvalidArgument("alpha must be a positive power form".into()));
        }
        if !(psi >= 0.0) {
            return Err(Error::InvalidArgument(format!("psi must be nonnegative, got {psi}")));
        }
        if let Some(r) = rho_ext {
            if !(r.coef >= 0.0) || !(r.exp > 0.0) {
                return Err(Error::InvalidArgument("rho_ext must be a nonnegative power form".into()));
            }
        }
        Ok(SsfParams { alpha, kappa, rho_ext, psi })
    }

    /// Quadratic `α(s) = k·s²` without external input gain.
    pub fn quadratic(k_alpha: f64, kappa: f64, psi: f64) -> Result<Self> {
        Self::new(PowerForm { coef: k_alpha, exp: 2.0 }, kappa, None, psi)
    }
}

/// Probability that output trajectories drift more than `ε` apart within
/// `T` steps, given `V(x₀, x̂₀) = V0`.
pub fn lambda2(ssf: &SsfParams, v0: f64, u_sup: f64, eps: f64, horizon: usize) -> Result<ClosenessReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if !(v0 >= 0.0) || !(u_sup >= 0.0) {
        return Err(Error::InvalidArgument("V0 and the input bound must be nonnegative".into()));
    }
    let alpha = ssf.alpha.eval(eps);
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("alpha(epsilon) is zero".into()));
    }
    let kappa = ssf.kappa;
    let psi_hat = ssf.rho_ext.map_or(0.0, |r| r.eval(u_sup)) + ssf.psi;
    let t = horizon as i32;
    let (raw, branch) = if alpha >= psi_hat / (1.0 - kappa) {
        (1.0 - (1.0 - v0 / alpha) * (1.0 - psi_hat / alpha).powi(t), "alpha_above")
    } else {
        (
            v0 / alpha * kappa.powi(t) + psi_hat / ((1.0 - kappa) * alpha) * (1.0 - kappa.powi(t)),
            "alpha_below",
        )
    };
    Ok(ClosenessReport {
        kind: BoundKind::Lambda2,
        value: raw.clamp(0.0, 1.0),
        constants: vec![
            ("kappa".into(), kappa),
            ("alpha_eps".into(), alpha),
            ("psi_hat".into(), psi_hat),
            ("V0".into(), v0),
        ],
        epsilon: Some(eps),
        horizon: Some(horizon),
        branch: Some(branch.into()),
    })
}

/// Candidate quadratic SSF `V(x, x̂) = (x − Px̂)ᵀM(x − Px̂)` with interface
/// `u = K(x − Px̂) + Qx̂ + û`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSsf {
    pub m: Mat,
    pub p: Mat,
    pub k: Mat,
    pub q: Mat,
    pub pi: f64,
    pub kappa_hat: f64,
}

impl QuadraticSsf {
    pub fn value(&self, x: &[f64], x_hat: &[f64]) -> Result<f64> {
        check_dim("state", self.m.nrows(), x.len())?;
        check_dim("abstract state", self.p.ncols(), x_hat.len())?;
        let e = Vector::from_column_slice(x) - &self.p * Vector::from_column_slice(x_hat);
        Ok((e.transpose() * &self.m * &e)[(0, 0)])
    }

    pub fn interface(&self) -> Interface {
        Interface::Affine {
            k: self.k.clone(),
            p: self.p.clone(),
            q: self.q.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub holds: bool,
    /// Smallest eigenvalue for semidefinite conditions, `tol − residual` for
    /// equalities.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsfVerification {
    pub conditions: Vec<ConditionCheck>,
    /// Derived parameters, present when every condition holds.
    pub params: Option<SsfParams>,
}

impl SsfVerification {
    pub fn holds(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

fn equality_tol(operands: &[&Mat]) -> f64 {
    1e-9 * (1.0 + operands.iter().map(|m| frobenius(m)).sum::<f64>())
}

/// Checks the four matrix conditions of a quadratic SSF between a linear
/// model and a (possibly reduced-order) linear abstraction:
///
/// 1. `M − CᵀC ⪰ 0`
/// 2. `−κ̂M − ((1+π)(A+BK)ᵀM(A+BK) − M) ⪰ 0`
/// 3. `AP − PÂ + BQ = 0`
/// 4. `CP − Ĉ = 0`
///
/// On success the derived parameters are `κ = 1 − κ̂`,
/// `ψ = Tr(RᵀMR + R̂ᵀPᵀMPR̂)` (independent noises),
/// `α(s) = k_α s²` with `k_α = 1/λ_max(M⁻¹CᵀC)` and
/// `ρ_ext(s) = (1 + 1/π)·λ_max((B − PB̂)ᵀM(B − PB̂))·s²`.
pub fn verify_quadratic_ssf(model: &LinearDtScs, abstraction: &LinearDtScs, cand: &QuadraticSsf) -> Result<SsfVerification> {
    if model.has_input_gain() || abstraction.has_input_gain() {
        return Err(Error::Unsupported("quadratic SSF check needs constant state matrices".into()));
    }
    let (n, nh, m) = (model.state_dim(), abstraction.state_dim(), model.input_dim());
    check_dim("M rows", n, cand.m.nrows())?;
    check_dim("M columns", n, cand.m.ncols())?;
    check_dim("P rows", n, cand.p.nrows())?;
    check_dim("P columns", nh, cand.p.ncols())?;
    check_dim("K rows", m, cand.k.nrows())?;
    check_dim("K columns", n, cand.k.ncols())?;
    check_dim("Q rows", m, cand.q.nrows())?;
    check_dim("Q columns", nh, cand.q.ncols())?;
    check_dim("output dimension", model.output_dim(), abstraction.output_dim())?;
    if !is_symmetric(&cand.m, 1e-12) {
        return Err(Error::InvalidArgument("M must be symmetric".into()));
    }
    if !(cand.pi > 0.0) || !(cand.kappa_hat > 0.0 && cand.kappa_hat < 1.0) {
        return Err(Error::InvalidArgument("need pi > 0 and kappa_hat in (0, 1)".into()));
    }
    let (a, b, c) = (model.a(), model.b(), model.c());
    let (ah, ch) = (abstraction.a(), abstraction.c());
    let mm = &cand.m;

    let c1 = check_psd(&(mm - c.transpose() * c));
    let abk = a + b * &cand.k;
    let lhs = -mm * cand.kappa_hat - ((abk.transpose() * mm * &abk) * (1.0 + cand.pi) - mm);
    let c2 = check_psd(&lhs);
    let ap = a * &cand.p;
    let pah = &cand.p * ah;
    let bq = b * &cand.q;
    let r3 = frobenius(&(&ap - &pah + &bq));
    let tol3 = equality_tol(&[&ap, &pah, &bq]);
    let cp = c * &cand.p;
    let r4 = frobenius(&(&cp - ch));
    let tol4 = equality_tol(&[&cp, ch]);

    let conditions = vec![
        ConditionCheck {
            name: "output_domination",
            holds: c1.holds,
            margin: c1.margin,
        },
        ConditionCheck {
            name: "contraction",
            holds: c2.holds,
            margin: c2.margin,
        },
        ConditionCheck {
            name: "state_matching",
            holds: r3 <= tol3,
            margin: tol3 - r3,
        },
        ConditionCheck {
            name: "output_matching",
            holds: r4 <= tol4,
            margin: tol4 - r4,
        },
    ];
    let params = if conditions.iter().all(|c| c.holds) {
        let r = Mat::from_diagonal(model.r());
        let rh = Mat::from_diagonal(abstraction.r());
        let pr = &cand.p * rh;
        let psi = (r.transpose() * mm * &r).trace() + (pr.transpose() * mm * &pr).trace();
        let ctc = c.transpose() * c;
        let lam = max_generalized_eigenvalue(&ctc, mm)?;
        let k_alpha = if lam > 0.0 { 1.0 / lam } else { 1.0 };
        let rho = if abstraction.input_dim() == m {
            let d = b - &cand.p * abstraction.b();
            let g = max_eigenvalue(&(d.transpose() * mm * &d)).max(0.0);
            (g > 0.0).then(|| PowerForm {
                coef: (1.0 + 1.0 / cand.pi) * g,
                exp: 2.0,
            })
        } else {
            None
        };
        Some(SsfParams::new(
            PowerForm { coef: k_alpha, exp: 2.0 },
            1.0 - cand.kappa_hat,
            rho,
            psi,
        )?)
    } else {
        None
    };
    Ok(SsfVerification { conditions, params })
}

/// Largest `κ̄` with `AᵀMA ⪯ (1 − κ̄)M`; the quadratic δ-ISS condition holds
/// iff `κ̄ > 0`.
pub fn check_delta_iss_quadratic(model: &LinearDtScs, m: &Mat) -> Result<(bool, f64)> {
    if model.has_input_gain() {
        return Err(Error::Unsupported("state matrix depends on the input".into()));
    }
    check_dim("M rows", model.state_dim(), m.nrows())?;
    check_dim("M columns", model.state_dim(), m.ncols())?;
    if !is_symmetric(m, 1e-12) {
        return Err(Error::InvalidArgument("M must be symmetric".into()));
    }
    let a = model.a();
    let lam = max_generalized_eigenvalue(&(a.transpose() * m * a), m)?;
    let kappa_bar = 1.0 - lam;
    Ok((kappa_bar > 0.0, kappa_bar))
}

/// SSF parameters between a model and its grid abstraction driven by the
/// same noise and input: `V = ‖x − x̂‖²`, `κ = (1+π)·max_u ‖A(u)‖₂²`,
/// `ψ = (1 + 1/π)·Σ_d w_d²/4`, `α(s) = s²/‖C‖₂²`.
pub fn grid_abstraction_ssf(model: &LinearDtScs, grid: &Grid, inputs: &[Vec<f64>], pi: f64) -> Result<SsfParams> {
    check_dim("grid dimension", model.state_dim(), grid.dim())?;
    if !(pi > 0.0) {
        return Err(Error::InvalidArgument("pi must be positive".into()));
    }
    let mut norm2: f64 = 0.0;
    if model.has_input_gain() {
        for u in inputs {
            norm2 = norm2.max(spectral_norm(&model.effective_a(u)?).powi(2));
        }
    } else {
        norm2 = spectral_norm(model.a()).powi(2);
    }
    let kappa = (1.0 + pi) * norm2;
    let quant: f64 = (0..grid.dim()).map(|d| grid.width(d).powi(2) / 4.0).sum();
    let c = spectral_norm(model.c());
    SsfParams::quadratic(1.0 / (c * c), kappa, (1.0 + 1.0 / pi) * quant)
}

/// Refinement of abstract inputs to concrete inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Interface {
    /// `u = û` (grid abstraction in the same coordinates).
    Identity,
    /// `u = K(x − Px̂) + Qx̂ + û` (reduced-order abstraction).
    Affine { k: Mat, p: Mat, q: Mat },
}

impl Interface {
    pub fn apply(&self, x: &[f64], x_hat: &[f64], u_hat: &[f64]) -> Result<Vec<f64>> {
        match self {
            Interface::Identity => Ok(u_hat.to_vec()),
            Interface::Affine { k, p, q } => {
                check_dim("state", k.ncols(), x.len())?;
                check_dim("abstract state", p.ncols(), x_hat.len())?;
                check_dim("abstract input", k.nrows(), u_hat.len())?;
                let xv = Vector::from_column_slice(x);
                let xh = Vector::from_column_slice(x_hat);
                let u = k * (xv - p * &xh) + q * xh + Vector::from_column_slice(u_hat);
                Ok(u.iter().copied().collect())
            }
        }
    }
}

impl fmt::Display for ClosenessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {:.6}", self.kind.name(), self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use proptest::prelude::*;

    fn two_room(c_scale: f64, a_hat: f64) -> (LinearDtScs, LinearDtScs, QuadraticSsf) {
        let model = LinearDtScs::new(
            from_rows(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap(),
            Mat::identity(2, 2) * 25.0,
            Vector::from_element(2, -0.4),
            Mat::from_element(1, 2, c_scale),
            Vector::from_element(2, 0.01),
            None,
        )
        .unwrap();
        let abs = LinearDtScs::new(
            Mat::from_element(1, 1, a_hat),
            Mat::from_row_slice(1, 2, &[12.5, 12.5]),
            Vector::zeros(1),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, 0.01),
            None,
        )
        .unwrap();
        let cand = QuadraticSsf {
            m: Mat::identity(2, 2),
            p: Mat::from_element(2, 1, 1.0),
            k: Mat::zeros(2, 2),
            q: Mat::from_element(2, 1, 1.0),
            pi: 1.0,
            kappa_hat: 0.34,
        };
        (model, abs, cand)
    }

    #[test]
    fn running_example_h() {
        let m = LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6);
        let l = lipschitz_constants(&m, Some(&[0.6])).unwrap();
        let expected = 2.0 * 0.3 / (0.6 * (2.0 * PI).sqrt());
        assert!((l.h - expected).abs() < 1e-12);
        assert!((l.h - 0.3989).abs() < 1e-4);
        assert!(l.h <= l.h_bar);
        assert!(lipschitz_constants(&m, None).is_err());
    }

    #[test]
    fn lipschitz_trivial_cases() {
        let m = LinearDtScs::new(
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Vector::zeros(1),
            Mat::identity(1, 1),
            Vector::from_element(1, 1.0),
            None,
        )
        .unwrap();
        let l = lipschitz_constants(&m, None).unwrap();
        assert_eq!(l.h, 0.0);
        assert_eq!(l.h_bar, l.h);
        let z = m.with_noise(Vector::zeros(1)).unwrap();
        assert!(matches!(lipschitz_constants(&z, None), Err(Error::Unsupported(_))));
    }

    #[test]
    fn lambda1_values() {
        let r = lambda1(BoundKind::Lambda1, 0.39, 0.005, 100, 1.0).unwrap();
        assert!((r.value - 0.195).abs() < 1e-12);
        let r = lambda1(BoundKind::Lambda1Bar, 17.02, 0.005, 100, 1.0).unwrap();
        assert!((r.value - 8.51).abs() < 1e-12);
        let r = lambda1(BoundKind::TwoLambda1Bar, 17.02, 0.005, 100, 1.0).unwrap();
        assert!((r.value - 17.02).abs() < 1e-12);
        assert_eq!(lambda1(BoundKind::Lambda1, 0.39, 0.0, 100, 1.0).unwrap().value, 0.0);
        assert!(lambda1(BoundKind::Lambda1, -1.0, 0.1, 1, 1.0).is_err());
    }

    #[test]
    fn lambda2_examples() {
        let zero = SsfParams::quadratic(1.0, 0.5, 0.0).unwrap();
        for t in [0, 1, 10, 100] {
            assert_eq!(lambda2(&zero, 0.0, 0.0, 1.0, t).unwrap().value, 0.0);
        }
        let p = SsfParams::new(PowerForm { coef: 10.0, exp: 1.0 }, 0.5, None, 1.0).unwrap();
        let r = lambda2(&p, 1.0, 0.0, 1.0, 1).unwrap();
        assert!((r.value - 0.19).abs() < 1e-12);
        assert_eq!(r.branch.as_deref(), Some("alpha_above"));
        let p = SsfParams::new(PowerForm { coef: 1.0, exp: 1.0 }, 0.9, None, 0.5).unwrap();
        let r = lambda2(&p, 0.5, 0.0, 1.0, 2).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.branch.as_deref(), Some("alpha_below"));
    }

    #[test]
    fn lambda2_rejects_bad_eps() {
        let p = SsfParams::quadratic(1.0, 0.5, 0.0).unwrap();
        assert!(lambda2(&p, 0.0, 0.0, 0.0, 1).is_err());
        assert!(SsfParams::quadratic(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn two_room_reduced_order() {
        let (model, abs, cand) = two_room(0.5, 25.5);
        let v = verify_quadratic_ssf(&model, &abs, &cand).unwrap();
        assert!(v.holds(), "{v:?}");
        for c in &v.conditions[..2] {
            assert!(c.margin > 0.0);
        }
        assert!((v.condition("contraction").unwrap().margin - 0.16).abs() < 1e-12);
        let params = v.params.unwrap();
        assert!((params.kappa - 0.66).abs() < 1e-15);
        // Tr(0.01²I₂) + Tr(0.01²·𝟙ᵀ𝟙)
        assert!((params.psi - 4e-4).abs() < 1e-15);
    }

    #[test]
    fn two_room_perturbed_a_hat() {
        let (model, abs, cand) = two_room(0.5, 25.6);
        let v = verify_quadratic_ssf(&model, &abs, &cand).unwrap();
        let c3 = v.condition("state_matching").unwrap();
        assert!(!c3.holds);
        let tol = c3.margin + 0.1 * 2f64.sqrt();
        assert!(tol > 0.0 && tol < 1e-6);
        assert!(v.params.is_none());
    }

    #[test]
    fn literal_sum_output_violates_domination() {
        // C = 𝟙ᵀ: CᵀC has eigenvalue 2 > 1 and CP = 2 ≠ Ĉ
        let (model, abs, cand) = two_room(1.0, 25.5);
        let v = verify_quadratic_ssf(&model, &abs, &cand).unwrap();
        assert!(!v.condition("output_domination").unwrap().holds);
        assert!(!v.condition("output_matching").unwrap().holds);
        assert!(v.condition("state_matching").unwrap().holds);
        assert!(v.condition("contraction").unwrap().holds);
    }

    #[test]
    fn identity_reduction_passes() {
        let (model, _, _) = two_room(0.5, 25.5);
        let cand = QuadraticSsf {
            m: Mat::identity(2, 2),
            p: Mat::identity(2, 2),
            k: Mat::zeros(2, 2),
            q: Mat::zeros(2, 2),
            pi: 0.5,
            kappa_hat: 0.1,
        };
        let v = verify_quadratic_ssf(&model, &model, &cand).unwrap();
        assert!(v.holds());
        assert!(v.params.unwrap().rho_ext.is_none());
    }

    #[test]
    fn non_symmetric_m_rejected() {
        let (model, abs, mut cand) = two_room(0.5, 25.5);
        cand.m[(0, 1)] = 0.3;
        assert!(matches!(verify_quadratic_ssf(&model, &abs, &cand), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn delta_iss_examples() {
        let scalar = |a: f64| {
            LinearDtScs::new(
                Mat::from_element(1, 1, a),
                Mat::zeros(1, 1),
                Vector::zeros(1),
                Mat::identity(1, 1),
                Vector::from_element(1, 0.1),
                None,
            )
            .unwrap()
        };
        let (ok, k) = check_delta_iss_quadratic(&scalar(0.6), &Mat::identity(1, 1)).unwrap();
        assert!(ok && (k - 0.64).abs() < 1e-12);
        let (_, k) = check_delta_iss_quadratic(&scalar(0.0), &Mat::identity(1, 1)).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        let (model, _, _) = two_room(0.5, 25.5);
        let (ok, k) = check_delta_iss_quadratic(&model, &Mat::identity(2, 2)).unwrap();
        assert!(ok && (k - 0.75).abs() < 1e-12);
        let room = LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6);
        assert!(matches!(check_delta_iss_quadratic(&room, &Mat::identity(1, 1)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn interface_modes() {
        assert_eq!(Interface::Identity.apply(&[20.0], &[20.0], &[0.3]).unwrap(), vec![0.3]);
        let (_, _, cand) = two_room(0.5, 25.5);
        let i = cand.interface();
        assert_eq!(i.apply(&[1.0, 3.0], &[2.0], &[0.1, 0.2]).unwrap(), vec![2.1, 2.2]);
        let k = Interface::Affine {
            k: Mat::identity(2, 2),
            p: Mat::from_element(2, 1, 1.0),
            q: Mat::from_element(2, 1, 1.0),
        };
        assert_eq!(k.apply(&[2.0, 2.0], &[2.0], &[0.1, 0.2]).unwrap(), vec![2.1, 2.2]);
        assert_eq!(k.apply(&[3.0, 2.0], &[2.0], &[0.0, 0.0]).unwrap(), vec![3.0, 2.0]);
        assert!(k.apply(&[3.0], &[2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn grid_ssf_running_example() {
        let m = LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6);
        let g = Grid::new(crate::model::HyperRect::interval(19.0, 21.0).unwrap(), vec![400]).unwrap();
        let p = grid_abstraction_ssf(&m, &g, &[vec![0.0], vec![0.6]], 1.0).unwrap();
        assert!((p.kappa - 0.72).abs() < 1e-12);
        assert!((p.psi - 2.0 * 0.005f64.powi(2) / 4.0).abs() < 1e-18);
    }

    fn random_orthogonal(angle: f64) -> Mat {
        let (s, c) = angle.sin_cos();
        from_rows(&[vec![c, -s], vec![s, c]]).unwrap()
    }

    proptest! {
        #[test]
        fn lambda1_is_linear(h in 0.0..10.0f64, d in 0.0..0.1f64, t in 0usize..200, l in 0.0..5.0f64, s in 0.1..4.0f64) {
            let base = lambda1(BoundKind::Lambda1, h, d, t, l).unwrap().value;
            let scaled_h = lambda1(BoundKind::Lambda1, s * h, d, t, l).unwrap().value;
            let scaled_d = lambda1(BoundKind::Lambda1, h, s * d, t, l).unwrap().value;
            let scaled_l = lambda1(BoundKind::Lambda1, h, d, t, s * l).unwrap().value;
            let doubled_t = lambda1(BoundKind::Lambda1, h, d, 2 * t, l).unwrap().value;
            let tol = 1e-12 * (1.0 + s * base);
            prop_assert!((scaled_h - s * base).abs() <= tol);
            prop_assert!((scaled_d - s * base).abs() <= tol);
            prop_assert!((scaled_l - s * base).abs() <= tol);
            prop_assert!((doubled_t - 2.0 * base).abs() <= tol);
        }

        #[test]
        fn lambda2_monotone(
            kappa in 0.05..0.95f64, k_alpha in 0.1..10.0f64, v0 in 0.0..2.0f64,
            psi in 0.0..0.5f64, t in 0usize..50, dv in 0.0..1.0f64, dpsi in 0.0..0.2f64, dk in 0.0..5.0f64,
        ) {
            let p = SsfParams::quadratic(k_alpha, kappa, psi).unwrap();
            let base = lambda2(&p, v0, 0.0, 1.0, t).unwrap().value;
            let tol = 1e-12;
            prop_assert!(lambda2(&p, v0, 0.0, 1.0, t + 1).unwrap().value >= base - tol);
            prop_assert!(lambda2(&p, v0 + dv, 0.0, 1.0, t).unwrap().value >= base - tol);
            let more_psi = SsfParams::quadratic(k_alpha, kappa, psi + dpsi).unwrap();
            prop_assert!(lambda2(&more_psi, v0, 0.0, 1.0, t).unwrap().value >= base - tol);
            let more_alpha = SsfParams::quadratic(k_alpha + dk, kappa, psi).unwrap();
            prop_assert!(lambda2(&more_alpha, v0, 0.0, 1.0, t).unwrap().value <= base + tol);
        }

        #[test]
        fn quadratic_ssf_basis_invariance(angle in 0.0..std::f64::consts::TAU, a_hat in 25.0..26.0f64) {
            let (model, abs, cand) = two_room(0.5, a_hat);
            let t = random_orthogonal(angle);
            let tt = t.transpose();
            let rotated = LinearDtScs::new(
                &tt * model.a() * &t,
                &tt * model.b(),
                &tt * model.c0(),
                model.c() * &t,
                model.r().clone(),
                None,
            ).unwrap();
            let rc = QuadraticSsf {
                m: &tt * &cand.m * &t,
                p: &tt * &cand.p,
                k: &cand.k * &t,
                q: cand.q.clone(),
                pi: cand.pi,
                kappa_hat: cand.kappa_hat,
            };
            let v1 = verify_quadratic_ssf(&model, &abs, &cand).unwrap();
            let v2 = verify_quadratic_ssf(&rotated, &abs, &rc).unwrap();
            for (a, b) in v1.conditions.iter().zip(&v2.conditions) {
                prop_assert_eq!(a.holds, b.holds);
                prop_assert!((a.margin - b.margin).abs() < 1e-8);
            }
        }
    }
}
