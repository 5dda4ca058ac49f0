//! Counter-based random numbers: Philox4x32-10 with Box–Muller normals.
//!
//! Every draw is a pure function of `(seed, lane, trajectory, step, index)`,
//! so parallel trajectory generation gives the same numbers regardless of
//! scheduling.

use std::f64::consts::TAU;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 block function with 10 rounds.
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Independent sub-streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    Noise = 0,
    Initial = 1,
    AbstractNoise = 2,
    Aux = 3,
}

/// Keyed stream of uniform and standard-normal draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalStream {
    key: [u32; 2],
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            key: [seed as u32, (seed >> 32) as u32],
        }
    }

    #[inline]
    fn block(&self, lane: Lane, traj: u64, step: u32, block: u32) -> [u32; 4] {
        debug_assert!(block < 1 << 28);
        philox4x32_10(
            [traj as u32, (traj >> 32) as u32, step, ((lane as u32) << 28) | block],
            self.key,
        )
    }

    /// Two uniforms in the open interval (0, 1).
    #[inline]
    fn uniform_pair(&self, lane: Lane, traj: u64, step: u32, block: u32) -> (f64, f64) {
        let r = self.block(lane, traj, step, block);
        let to_unit = |hi: u32, lo: u32| {
            let bits = ((hi as u64) << 32 | lo as u64) >> 11;
            (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
        };
        (to_unit(r[0], r[1]), to_unit(r[2], r[3]))
    }

    /// Uniform draw in (0, 1).
    pub fn uniform(&self, lane: Lane, traj: u64, step: u32, index: usize) -> f64 {
        let (a, b) = self.uniform_pair(lane, traj, step, (index / 2) as u32);
        if index % 2 == 0 {
            a
        } else {
            b
        }
    }

    /// Standard-normal draw; coordinates `2j` and `2j+1` share one block.
    pub fn normal(&self, lane: Lane, traj: u64, step: u32, index: usize) -> f64 {
        let (u1, u2) = self.uniform_pair(lane, traj, step, (index / 2) as u32);
        let r = (-2.0 * u1.ln()).sqrt();
        if index % 2 == 0 {
            r * (TAU * u2).cos()
        } else {
            r * (TAU * u2).sin()
        }
    }

    /// Fills `out` with the normals of one `(trajectory, step)`.
    pub fn fill_normals(&self, lane: Lane, traj: u64, step: u32, out: &mut [f64]) {
        for (j, pair) in out.chunks_mut(2).enumerate() {
            let (u1, u2) = self.uniform_pair(lane, traj, step, j as u32);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (TAU * u2).sin_cos();
            pair[0] = r * c;
            if pair.len() > 1 {
                pair[1] = r * s;
            }
        }
    }
}
