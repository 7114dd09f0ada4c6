use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{ensure_finite, Mat, Vector};

/// Piecewise-constant input: column `j` of `levels` is applied on
/// `[j * hold, (j + 1) * hold)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Excitation {
    hold: f64,
    levels: Mat,
}

const EDGE_TOL: f64 = 1e-9;

impl Excitation {
    pub fn new(levels: Mat, hold: f64) -> Result<Self> {
        if !(hold > 0.0 && hold.is_finite()) {
            return Err(Error::Input(format!("hold time must be positive, got {hold}")));
        }
        ensure_finite(&levels, "excitation levels")?;
        if levels.ncols() == 0 {
            return Err(Error::Input("excitation has no levels".into()));
        }
        Ok(Self { hold, levels })
    }

    /// Uniform random levels in `offset ± amplitude`, reproducible from `seed`.
    pub fn random(m: usize, holds: usize, hold: f64, amplitude: f64, offset: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // column-major draw order: one hold at a time
        let mut levels = Mat::zeros(m, holds);
        for j in 0..holds {
            for i in 0..m {
                levels[(i, j)] = offset + amplitude * rng.random_range(-1.0..=1.0);
            }
        }
        Self::new(levels, hold)
    }

    pub fn hold(&self) -> f64 {
        self.hold
    }

    pub fn levels(&self) -> &Mat {
        &self.levels
    }

    pub fn inputs(&self) -> usize {
        self.levels.nrows()
    }

    pub fn horizon(&self) -> f64 {
        self.hold * self.levels.ncols() as f64
    }

    /// Index of the hold interval containing `t` (right-continuous).
    pub(crate) fn segment(&self, t: f64) -> Result<usize> {
        let idx = (t / self.hold + EDGE_TOL).floor();
        if t < -EDGE_TOL * self.hold || idx as usize >= self.levels.ncols() {
            return Err(Error::Input(format!(
                "time {t} lies outside the excitation horizon [0, {})",
                self.horizon()
            )));
        }
        Ok(idx.max(0.0) as usize)
    }

    pub fn value_at(&self, t: f64) -> Result<Vector> {
        Ok(self.levels.column(self.segment(t)?).into_owned())
    }

    /// Breakpoints of the input strictly inside `(t0, t1)`.
    pub(crate) fn switches_between(&self, t0: f64, t1: f64) -> Vec<f64> {
        let first = (t0 / self.hold + EDGE_TOL).floor() as i64 + 1;
        let mut out = Vec::new();
        let mut k = first.max(1);
        loop {
            let t = k as f64 * self.hold;
            if t >= t1 - EDGE_TOL * self.hold {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }
}
