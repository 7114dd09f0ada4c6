use crate::error::{Error, Result};
use crate::kernels::mat;
use crate::lti::LtiModel;

/// Buck-converter DGU with an RLC filter feeding a constant-admittance load.
///
/// States are bus voltage `v` and filter current `i`; the input is the
/// converter voltage and the measured output is `v`.
pub fn dgu_model(resistance: f64, inductance: f64, capacitance: f64, admittance: f64) -> Result<LtiModel> {
    let params = [resistance, inductance, capacitance, admittance];
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("DGU parameters must be finite".into()));
    }
    if inductance <= 0.0 || capacitance <= 0.0 {
        return Err(Error::Input(format!(
            "filter inductance and capacitance must be positive (L = {inductance}, C = {capacitance})"
        )));
    }
    if resistance <= 0.0 {
        return Err(Error::Input(format!(
            "filter resistance must be positive, got {resistance}"
        )));
    }
    if admittance < 0.0 {
        return Err(Error::Input(format!(
            "load admittance must be nonnegative, got {admittance}"
        )));
    }
    let a = mat(&[
        &[-admittance / capacitance, 1.0 / capacitance],
        &[-1.0 / inductance, -resistance / inductance],
    ]);
    let b = mat(&[&[0.0], &[1.0 / inductance]]);
    let c = mat(&[&[1.0, 0.0]]);
    LtiModel::new(a, b, c)
}

/// Nominal filter and load parameters.
pub fn nominal_dgu() -> LtiModel {
    dgu_model(0.2, 2e-3, 2e-3, 0.02).expect("nominal parameters are valid")
}
