//! Discrete-time stochastic control systems with diagonal Gaussian noise.
//!
//! A [`LinearDtScs`] evolves as
//!
//! ```text
//! x⁺ = A(u)·x + B·u + c0 + diag(R)·w,     y = C·x,     w ~ N(0, I)
//! ```
//!
//! where `A(u) = A` unless an [`InputGain`] is attached. Everything here is
//! immutable after construction and cheap to share across threads.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, Vector};

/// Input-dependent part of the state matrix: `A(u) = A + Σⱼ uⱼ·Sⱼ`.
///
/// Each `Sⱼ` is stored as sparse `(row, col, coefficient)` triplets so that
/// composed networks with thousands of inputs stay small. The scalar gain
/// `a(u)·A_base` with `a(u) = offset + slope·u` is the special case
/// `A = offset·A_base`, `S₀ = slope·A_base` (see [`InputGain::scalar`]).
#[derive(Debug, Clone, PartialEq)]
pub struct InputGain {
    slopes: Vec<Vec<(usize, usize, f64)>>,
}

impl InputGain {
    pub fn from_triplets(slopes: Vec<Vec<(usize, usize, f64)>>) -> Self {
        InputGain { slopes }
    }

    /// `a(u) = offset + slope·u₀` multiplying `a_base`. Returns the constant
    /// part of the state matrix together with the gain.
    pub fn scalar(offset: f64, slope: f64, a_base: &Mat, input_dim: usize) -> (Mat, InputGain) {
        let mut s0 = Vec::new();
        for i in 0..a_base.nrows() {
            for j in 0..a_base.ncols() {
                let v = a_base[(i, j)];
                if v != 0.0 {
                    s0.push((i, j, slope * v));
                }
            }
        }
        let mut slopes = vec![Vec::new(); input_dim.max(1)];
        slopes[0] = s0;
        (a_base * offset, InputGain { slopes })
    }

    /// The heater-style gain `a(u) = 1 − θ − γ·u`.
    pub fn theta_gamma(theta: f64, gamma: f64, a_base: &Mat, input_dim: usize) -> (Mat, InputGain) {
        Self::scalar(1.0 - theta, -gamma, a_base, input_dim)
    }

    pub fn slopes(&self) -> &[Vec<(usize, usize, f64)>] {
        &self.slopes
    }

    pub fn input_dim(&self) -> usize {
        self.slopes.len()
    }

    fn is_trivial(&self) -> bool {
        self.slopes.iter().all(Vec::is_empty)
    }
}

/// Linear (affine) dt-SCS with diagonal Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDtScs {
    a: Mat,
    b: Mat,
    c0: Vector,
    c: Mat,
    r: Vector,
    gain: Option<InputGain>,
}

impl LinearDtScs {
    pub fn new(a: Mat, b: Mat, c0: Vector, c: Mat, r: Vector, gain: Option<InputGain>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("B rows", n, b.nrows())?;
        check_dim("c0 length", n, c0.len())?;
        check_dim("C columns", n, c.ncols())?;
        check_dim("R length", n, r.len())?;
        if r.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("noise deviations R must be finite and >= 0".into()));
        }
        if a.iter().chain(b.iter()).chain(c0.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model entries must be finite".into()));
        }
        let gain = match gain {
            Some(g) if g.is_trivial() => None,
            Some(g) => {
                check_dim("gain inputs", b.ncols(), g.input_dim())?;
                for &(i, j, v) in g.slopes.iter().flatten() {
                    if i >= n || j >= n || !v.is_finite() {
                        return Err(Error::InvalidArgument("gain entry out of range".into()));
                    }
                }
                Some(g)
            }
            None => None,
        };
        Ok(LinearDtScs { a, b, c0, c, r, gain })
    }

    /// The single-room heater model `T⁺ = (1−θ−γu)T + γT_h·u + θT_e + R·w`.
    pub fn heated_room(theta: f64, gamma: f64, t_heater: f64, t_ext: f64, noise: f64) -> Self {
        let base = Mat::from_element(1, 1, 1.0);
        let (a, gain) = InputGain::theta_gamma(theta, gamma, &base, 1);
        LinearDtScs::new(
            a,
            Mat::from_element(1, 1, gamma * t_heater),
            Vector::from_element(1, theta * t_ext),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, noise),
            Some(gain),
        )
        .expect("heated room model is well formed")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c0(&self) -> &Vector {
        &self.c0
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn r(&self) -> &Vector {
        &self.r
    }

    pub fn gain(&self) -> Option<&InputGain> {
        self.gain.as_ref()
    }

    pub fn has_input_gain(&self) -> bool {
        self.gain.is_some()
    }

    /// State matrix at a given input.
    pub fn effective_a(&self, u: &[f64]) -> Result<Mat> {
        check_dim("input", self.input_dim(), u.len())?;
        let mut a = self.a.clone();
        if let Some(g) = &self.gain {
            for (j, slope) in g.slopes.iter().enumerate() {
                for &(r, c, v) in slope {
                    a[(r, c)] += u[j] * v;
                }
            }
        }
        Ok(a)
    }

    /// Writes `A(u)x + Bu + c0` into `out` without allocating.
    pub fn mean_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.state_dim();
        check_dim("state", n, x.len())?;
        check_dim("input", self.input_dim(), u.len())?;
        check_dim("output buffer", n, out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.c0[i];
            for (j, xj) in x.iter().enumerate() {
                acc += self.a[(i, j)] * xj;
            }
            for (j, uj) in u.iter().enumerate() {
                acc += self.b[(i, j)] * uj;
            }
            *o = acc;
        }
        if let Some(g) = &self.gain {
            for (j, slope) in g.slopes.iter().enumerate() {
                if u[j] == 0.0 {
                    continue;
                }
                for &(r, c, v) in slope {
                    out[r] += u[j] * v * x[c];
                }
            }
        }
        Ok(())
    }

    /// One step of the dynamics with a standard-normal sample `w`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim("noise", self.state_dim(), w.len())?;
        let mut out = vec![0.0; self.state_dim()];
        self.mean_into(x, u, &mut out)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.r[i] * w[i];
        }
        Ok(out)
    }

    /// Mean and per-coordinate standard deviation of the transition kernel.
    pub fn kernel_mean_std(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mean = vec![0.0; self.state_dim()];
        self.mean_into(x, u, &mut mean)?;
        Ok((mean, self.r.iter().copied().collect()))
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        Ok((0..self.output_dim())
            .map(|i| (0..x.len()).map(|j| self.c[(i, j)] * x[j]).sum())
            .collect())
    }

    /// Same model with a different noise vector.
    pub fn with_noise(&self, r: Vector) -> Result<Self> {
        LinearDtScs::new(self.a.clone(), self.b.clone(), self.c0.clone(), self.c.clone(), r, self.gain.clone())
    }
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperRect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl HyperRect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box upper", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box bounds must be finite with lower <= upper: {lower:?} / {upper:?}"
            )));
        }
        Ok(HyperRect { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// True when the boxes share interior points (touching faces do not count).
    pub fn overlaps_interior(&self, other: &HyperRect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.lower[i].max(other.lower[i]) < self.upper[i].min(other.upper[i]))
    }

    pub fn intersects(&self, other: &HyperRect) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.lower[i].max(other.lower[i]) <= self.upper[i].min(other.upper[i]))
    }
}

/// Finite union of boxes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    boxes: Vec<HyperRect>,
}

impl Region {
    pub fn new(boxes: Vec<HyperRect>) -> Result<Self> {
        if let Some(first) = boxes.first() {
            if boxes.iter().any(|b| b.dim() != first.dim()) {
                return Err(Error::InvalidArgument("region boxes differ in dimension".into()));
            }
        }
        Ok(Region { boxes })
    }

    pub fn single(b: HyperRect) -> Self {
        Region { boxes: vec![b] }
    }

    pub fn boxes(&self) -> &[HyperRect] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    pub fn overlaps_interior(&self, other: &Region) -> bool {
        self.boxes
            .iter()
            .any(|a| other.boxes.iter().any(|b| a.overlaps_interior(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn running_example() -> LinearDtScs {
        LinearDtScs::heated_room(0.4, 0.5, 50.0, -1.0, 0.6)
    }

    #[test]
    fn step_running_example_heater_off() {
        let m = running_example();
        let x = m.step(&[15.0], &[0.0], &[0.0]).unwrap();
        assert!((x[0] - 8.6).abs() < 1e-12);
    }

    #[test]
    fn step_running_example_heater_on_with_noise() {
        let m = running_example();
        let x = m.step(&[20.0], &[1.0], &[1.0]).unwrap();
        assert!((x[0] - 27.2).abs() < 1e-12, "{}", x[0]);
    }

    #[test]
    fn identity_dynamics_ignore_noise_when_r_zero() {
        let m = LinearDtScs::new(
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Vector::zeros(2),
            Mat::identity(2, 2),
            Vector::zeros(2),
            None,
        )
        .unwrap();
        let x = m.step(&[3.0, -1.5], &[7.0], &[100.0, -4.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.5]);
    }

    #[test]
    fn kernel_running_example() {
        let (mean, std) = running_example().kernel_mean_std(&[15.0], &[0.0]).unwrap();
        assert!((mean[0] - 8.6).abs() < 1e-12);
        assert_eq!(std, vec![0.6]);
    }

    #[test]
    fn kernel_network_room() {
        // Room of the two-room network: x⁺ = 0.4x + 25u + 0.1w − 0.4 + 0.3ς,
        // internal input folded in as a second input column.
        let m = LinearDtScs::new(
            Mat::from_element(1, 1, 0.4),
            Mat::from_row_slice(1, 2, &[25.0, 0.1]),
            Vector::from_element(1, -0.4),
            Mat::from_element(1, 1, 1.0),
            Vector::from_element(1, 0.3),
            None,
        )
        .unwrap();
        let (mean, std) = m.kernel_mean_std(&[20.0], &[0.0, 20.0]).unwrap();
        assert!((mean[0] - 9.6).abs() < 1e-12);
        assert_eq!(std, vec![0.3]);
    }

    #[test]
    fn zero_noise_std() {
        let m = running_example().with_noise(Vector::zeros(1)).unwrap();
        let (_, std) = m.kernel_mean_std(&[20.0], &[0.3]).unwrap();
        assert_eq!(std, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = running_example();
        assert!(matches!(
            m.step(&[1.0, 2.0], &[0.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(LinearDtScs::new(
            Mat::identity(2, 2),
            Mat::zeros(3, 1),
            Vector::zeros(2),
            Mat::identity(2, 2),
            Vector::zeros(2),
            None
        )
        .is_err());
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(running_example().with_noise(Vector::from_element(1, -0.1)).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(HyperRect::interval(2.0, 1.0).is_err());
        let b = HyperRect::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert!(b.contains(&[2.0, 1.0]));
        assert!(!b.contains(&[2.0001, 1.0]));
        assert_eq!(b.volume(), 2.0);
    }

    proptest! {
        #[test]
        fn noiseless_step_equals_kernel_mean(x in -50.0..50.0f64, u in 0.0..1.0f64) {
            let m = running_example();
            let s = m.step(&[x], &[u], &[0.0]).unwrap();
            let (mean, _) = m.kernel_mean_std(&[x], &[u]).unwrap();
            prop_assert_eq!(s, mean);
        }

        #[test]
        fn linear_in_state_without_gain(
            x1 in prop::collection::vec(-10.0..10.0f64, 2),
            x2 in prop::collection::vec(-10.0..10.0f64, 2),
            u in -1.0..1.0f64,
        ) {
            let m = LinearDtScs::new(
                Mat::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.4]),
                Mat::from_row_slice(2, 1, &[25.0, 3.0]),
                Vector::from_row_slice(&[-0.4, 1.0]),
                Mat::identity(2, 2),
                Vector::from_row_slice(&[0.3, 0.3]),
                None,
            ).unwrap();
            let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let lhs: Vec<f64> = m.step(&sum, &[u], &[0.0, 0.0]).unwrap().iter()
                .zip(m.step(&x2, &[u], &[0.0, 0.0]).unwrap()).map(|(a, b)| a - b).collect();
            let rhs: Vec<f64> = m.step(&x1, &[0.0], &[0.0, 0.0]).unwrap().iter()
                .zip(m.step(&[0.0, 0.0], &[0.0], &[0.0, 0.0]).unwrap()).map(|(a, b)| a - b).collect();
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }
    }
}
