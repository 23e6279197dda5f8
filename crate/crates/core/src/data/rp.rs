//! Predefined clinical reward over aPTT.

use crate::error::{Error, Result};

/// Overflow-safe logistic sigmoid.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Predefined reward: close to 1 inside the therapeutic aPTT band
/// (60–100 sec) and close to −1 outside it.
///
/// `r_p = 2/(1+e^{−(aPTT−60)}) − 2/(1+e^{−(aPTT−100)}) − 1`, computed with
/// overflow-safe sigmoids; the value lies in (−1, 1), though at extreme
/// aPTT the fp64 result rounds onto −1 itself.
pub fn rp_reward(aptt: f64) -> Result<f64> {
    if !aptt.is_finite() {
        return Err(Error::Numeric(format!("non-finite aPTT {aptt}")));
    }
    Ok(2.0 * sigmoid(aptt - 60.0) - 2.0 * sigmoid(aptt - 100.0) - 1.0)
}
