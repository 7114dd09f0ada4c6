use super::LtiModel;
use crate::error::{Error, Result};
use crate::kernels::{ensure_shape, hstack, Mat};

/// Augmented state-feedback gain realizing a PID law.
///
/// With `M = I + Kd C B`, returns `[M^{-1}(Kp C + Kd C A), M^{-1} Ki]`.
/// The derivative action folds into the state block.
pub fn pid_to_augmented_gain(kp: &Mat, ki: &Mat, kd: &Mat, model: &LtiModel) -> Result<Mat> {
    let (m, p) = (model.m(), model.p());
    ensure_shape(kp, m, p, "Kp")?;
    ensure_shape(ki, m, p, "Ki")?;
    ensure_shape(kd, m, p, "Kd")?;
    let c = model.c();
    let coupling = Mat::identity(m, m) + kd * c * model.b();
    let lu = coupling.lu();
    let state = kp * c + kd * c * model.a();
    let k_pd = lu.solve(&state).ok_or(Error::Singular("I + Kd C B"))?;
    let k_i = lu.solve(ki).ok_or(Error::Singular("I + Kd C B"))?;
    if !k_pd.iter().chain(k_i.iter()).all(|v| v.is_finite()) {
        return Err(Error::Singular("I + Kd C B"));
    }
    Ok(hstack(&k_pd, &k_i))
}
