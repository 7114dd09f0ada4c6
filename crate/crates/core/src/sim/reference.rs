use crate::error::{Error, Result};
use crate::kernels::Vector;

/// Piecewise-constant reference. Each breakpoint's value holds from its time
/// until the next breakpoint; before the first breakpoint the first value
/// applies.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProfile {
    breakpoints: Vec<(f64, Vector)>,
}

impl ReferenceProfile {
    pub fn new(breakpoints: Vec<(f64, Vector)>) -> Result<Self> {
        let Some((_, first)) = breakpoints.first() else {
            return Err(Error::Input("reference profile needs at least one breakpoint".into()));
        };
        let dim = first.len();
        for (i, (t, v)) in breakpoints.iter().enumerate() {
            if !t.is_finite() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("reference profile"));
            }
            if v.len() != dim {
                return Err(Error::dim("reference breakpoint", dim, v.len()));
            }
            if i > 0 && *t <= breakpoints[i - 1].0 {
                return Err(Error::Input(format!(
                    "reference breakpoint times must increase strictly ({} after {})",
                    t,
                    breakpoints[i - 1].0
                )));
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(value: Vector) -> Result<Self> {
        Self::new(vec![(0.0, value)])
    }

    /// Single-output profile from `(time, value)` pairs.
    pub fn scalar(steps: &[(f64, f64)]) -> Result<Self> {
        Self::new(steps.iter().map(|&(t, v)| (t, Vector::from_element(1, v))).collect())
    }

    pub fn dim(&self) -> usize {
        self.breakpoints[0].1.len()
    }

    pub fn breakpoints(&self) -> &[(f64, Vector)] {
        &self.breakpoints
    }

    pub fn value_at(&self, t: f64) -> &Vector {
        let idx = self.breakpoints.partition_point(|(bt, _)| *bt <= t);
        &self.breakpoints[idx.saturating_sub(1)].1
    }
}
