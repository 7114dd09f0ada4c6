use serde::{Deserialize, Serialize};

use super::{Excitation, LtiModel};
use crate::error::{Error, Result};
use crate::kernels::{ensure_finite, matrix_exponential, Mat, Vector};

/// How the state-derivative information was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingVariant {
    /// Point samples of `x`, `u` and `x' = A x + B u`.
    Derivative,
    /// Window integrals of `x`, `u`, `y` and state increments over each window.
    Integral,
}

/// Raw experiment matrices, one column per sample (or per window).
///
/// For the integral variant `x`, `u`, `y` hold window integrals and `xp`
/// holds the state increment across each window.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub x: Mat,
    pub u: Mat,
    pub xp: Mat,
    pub y: Mat,
    pub variant: SamplingVariant,
    /// Spacing between sample instants (window starts for the integral variant).
    pub dt: f64,
    /// Window length, integral variant only.
    pub window: Option<f64>,
    /// Non-fatal observations made during collection.
    pub notes: Vec<String>,
}

impl DataBatch {
    pub fn new(
        x: Mat,
        u: Mat,
        xp: Mat,
        y: Mat,
        variant: SamplingVariant,
        dt: f64,
        window: Option<f64>,
    ) -> Result<Self> {
        let t = x.ncols();
        for (m, what) in [(&u, "U"), (&xp, "X'"), (&y, "Y")] {
            if m.ncols() != t {
                return Err(Error::dim(what, format!("{t} columns"), m.ncols()));
            }
        }
        if xp.nrows() != x.nrows() {
            return Err(Error::dim("X'", format!("{} rows", x.nrows()), xp.nrows()));
        }
        if t == 0 {
            return Err(Error::Input("data batch has no samples".into()));
        }
        for (m, what) in [(&x, "X"), (&u, "U"), (&xp, "X'"), (&y, "Y")] {
            ensure_finite(m, what)?;
        }
        if variant == SamplingVariant::Integral && window.is_none() {
            return Err(Error::Input("integral batch needs a window length".into()));
        }
        Ok(Self {
            x,
            u,
            xp,
            y,
            variant,
            dt,
            window,
            notes: Vec::new(),
        })
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    /// Joins the samples of independent experiments on the same plant.
    /// All parts must share the variant and, for window integrals, the window.
    pub fn concat(parts: &[DataBatch]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("nothing to concatenate".into()))?;
        for p in &parts[1..] {
            if p.variant != first.variant || p.window != first.window {
                return Err(Error::Input("batches differ in sampling variant or window".into()));
            }
            if p.x.nrows() != first.x.nrows() || p.u.nrows() != first.u.nrows() || p.y.nrows() != first.y.nrows() {
                return Err(Error::Input("batches come from plants of different dimensions".into()));
            }
        }
        let join = |get: fn(&DataBatch) -> &Mat| {
            let rows = get(first).nrows();
            let cols = parts.iter().map(|p| get(p).ncols()).sum();
            let mut out = Mat::zeros(rows, cols);
            let mut at = 0;
            for p in parts {
                let m = get(p);
                out.columns_mut(at, m.ncols()).copy_from(m);
                at += m.ncols();
            }
            out
        };
        let mut batch = Self::new(
            join(|b| &b.x),
            join(|b| &b.u),
            join(|b| &b.xp),
            join(|b| &b.y),
            first.variant,
            first.dt,
            first.window,
        )?;
        batch.notes = parts.iter().flat_map(|p| p.notes.iter().cloned()).collect();
        Ok(batch)
    }

    /// `||X' - A X - B U||_F / (1 + ||X'||_F)` against a known model.
    pub fn relation_residual(&self, model: &LtiModel) -> f64 {
        let r = &self.xp - model.a() * &self.x - model.b() * &self.u;
        r.norm() / (1.0 + self.xp.norm())
    }
}

/// Exact zero-order-hold simulation.
///
/// Returns the `n x (N+1)` trajectory sampled at `k * dt`.
pub fn simulate_zoh(model: &LtiModel, u_samples: &Mat, x0: &Vector, dt: f64) -> Result<Mat> {
    let (n, m) = (model.n(), model.m());
    if u_samples.nrows() != m {
        return Err(Error::dim("input samples", format!("{m} rows"), u_samples.nrows()));
    }
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input(format!("sample time must be positive, got {dt}")));
    }
    let (phi, gamma) = zoh_matrices(model, dt)?;
    let steps = u_samples.ncols();
    let mut traj = Mat::zeros(n, steps + 1);
    traj.set_column(0, x0);
    for k in 0..steps {
        let next = &phi * traj.column(k) + &gamma * u_samples.column(k);
        traj.set_column(k + 1, &next);
    }
    Ok(traj)
}

/// `(e^{A dt}, int_0^dt e^{A s} ds B)` from `exp([[A, B], [0, 0]] dt)`.
pub(crate) fn zoh_matrices(model: &LtiModel, dt: f64) -> Result<(Mat, Mat)> {
    let (n, m) = (model.n(), model.m());
    let mut big = Mat::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(model.a());
    big.view_mut((0, n), (n, m)).copy_from(model.b());
    let e = matrix_exponential(&big, dt)?;
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Exact propagation of `x` from `t0` to `t1` under the excitation.
///
/// Returns `(x(t1), int_{t0}^{t1} x, int_{t0}^{t1} u)`.
pub(crate) fn advance(
    model: &LtiModel,
    exc: &Excitation,
    x0: &Vector,
    t0: f64,
    t1: f64,
) -> Result<(Vector, Vector, Vector)> {
    let (n, m) = (model.n(), model.m());
    // xi = [x; u; w], w' = x
    let mut gen = Mat::zeros(2 * n + m, 2 * n + m);
    gen.view_mut((0, 0), (n, n)).copy_from(model.a());
    gen.view_mut((0, n), (n, m)).copy_from(model.b());
    gen.view_mut((n + m, 0), (n, n)).fill_with_identity();

    let mut knots = vec![t0];
    knots.extend(exc.switches_between(t0, t1));
    knots.push(t1);

    let mut x = x0.clone();
    let mut x_int = Vector::zeros(n);
    let mut u_int = Vector::zeros(m);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let u = exc.value_at(a)?;
        let e = matrix_exponential(&gen, h)?;
        let mut xi = Vector::zeros(2 * n + m);
        xi.rows_mut(0, n).copy_from(&x);
        xi.rows_mut(n, m).copy_from(&u);
        let out = e * xi;
        x = out.rows(0, n).into_owned();
        x_int += out.rows(n + m, n);
        u_int += u * h;
    }
    Ok((x, x_int, u_int))
}

fn persistency_note(model: &LtiModel, samples: usize) -> Option<String> {
    let (n, m) = (model.n(), model.m());
    let bound = (m + 1) * n + m;
    (samples < bound).then(|| {
        format!(
            "{samples} samples is below the persistency bound (m+1)n+m = {bound}; rank is checked on the covariances"
        )
    })
}

fn check_common(model: &LtiModel, exc: &Excitation, dt: f64, samples: usize, x0: &Vector) -> Result<()> {
    if exc.inputs() != model.m() {
        return Err(Error::dim("excitation", format!("{} inputs", model.m()), exc.inputs()));
    }
    if x0.len() != model.n() {
        return Err(Error::dim("initial state", model.n(), x0.len()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input(format!("sample spacing must be positive, got {dt}")));
    }
    if samples == 0 {
        return Err(Error::Input("at least one sample is required".into()));
    }
    Ok(())
}

/// Samples `x(k dt)`, `u(k dt)` and the ideal derivative `A x + B u`.
pub fn collect_derivative_data(
    model: &LtiModel,
    exc: &Excitation,
    dt: f64,
    samples: usize,
    x0: &Vector,
) -> Result<DataBatch> {
    check_common(model, exc, dt, samples, x0)?;
    let (n, m, p) = (model.n(), model.m(), model.p());
    let mut x_mat = Mat::zeros(n, samples);
    let mut u_mat = Mat::zeros(m, samples);
    let mut x = x0.clone();
    let mut t = 0.0;
    for k in 0..samples {
        let tk = k as f64 * dt;
        if k > 0 {
            x = advance(model, exc, &x, t, tk)?.0;
        }
        t = tk;
        x_mat.set_column(k, &x);
        u_mat.set_column(k, &exc.value_at(tk)?);
    }
    let xp = model.a() * &x_mat + model.b() * &u_mat;
    let y = model.c() * &x_mat;
    debug_assert_eq!(y.nrows(), p);
    let mut batch = DataBatch::new(x_mat, u_mat, xp, y, SamplingVariant::Derivative, dt, None)?;
    batch.notes.extend(persistency_note(model, samples));
    Ok(batch)
}

/// Window integrals over `[i dt, i dt + window]`, `i = 0..samples`.
pub fn collect_integral_data(
    model: &LtiModel,
    exc: &Excitation,
    dt: f64,
    window: f64,
    samples: usize,
    x0: &Vector,
) -> Result<DataBatch> {
    check_common(model, exc, dt, samples, x0)?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::Input(format!("window must be positive, got {window}")));
    }
    let last_end = (samples - 1) as f64 * dt + window;
    if last_end > exc.horizon() * (1.0 + 1e-12) {
        return Err(Error::Input(format!(
            "last window ends at {last_end} s, beyond the excitation horizon {} s",
            exc.horizon()
        )));
    }
    let (n, m) = (model.n(), model.m());
    let mut x_int = Mat::zeros(n, samples);
    let mut u_int = Mat::zeros(m, samples);
    let mut incr = Mat::zeros(n, samples);
    let mut x = x0.clone();
    let mut t = 0.0;
    for i in 0..samples {
        let ti = i as f64 * dt;
        if i > 0 {
            x = advance(model, exc, &x, t, ti)?.0;
        }
        t = ti;
        let (x_end, xi, ui) = advance(model, exc, &x, ti, ti + window)?;
        x_int.set_column(i, &xi);
        u_int.set_column(i, &ui);
        incr.set_column(i, &(x_end - &x));
    }
    let y = model.c() * &x_int;
    let mut batch = DataBatch::new(x_int, u_int, incr, y, SamplingVariant::Integral, dt, Some(window))?;
    batch.notes.extend(persistency_note(model, samples));
    Ok(batch)
}
