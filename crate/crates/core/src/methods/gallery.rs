use nalgebra::DVector;

use super::{ExplicitOracle, MethodError, OracleFamily};

/// The piecewise-cubic `f_rho` on which gradient descent with step 1 runs the
/// logistic map `x -> rho x (1 - x)` on `[0, 1]`. It is `(1 + rho)`-smooth
/// and convex for `rho <= 1`; pieces meet at `|x| = 1` and `|x| = 3/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FRho {
    pub rho: f64,
}

pub fn gallery_f_rho(rho: f64) -> Result<FRho, MethodError> {
    if !(rho > 0.0 && rho <= 4.0) {
        return Err(MethodError::InvalidParameters(format!(
            "rho must lie in (0, 4], got {rho}"
        )));
    }
    Ok(FRho { rho })
}

impl FRho {
    pub fn value(&self, x: f64) -> f64 {
        let r = self.rho;
        let a = x.abs();
        let c = (r - 1.0).powi(3);
        if a <= 1.0 {
            r / 3.0 * a.powi(3) + (1.0 - r) / 2.0 * x * x + c / (6.0 * r * r)
        } else if a <= 1.5 {
            -r / 3.0 * a.powi(3) + (1.0 + 3.0 * r) / 2.0 * x * x - 2.0 * r * a
                + (c + 4.0 * r.powi(3)) / (6.0 * r * r)
        } else {
            0.5 * x * x + r / 4.0 * a + (4.0 * c - 11.0 * r.powi(3)) / (24.0 * r * r)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let r = self.rho;
        let a = x.abs();
        let s = x.signum();
        if a <= 1.0 {
            r * x * a + (1.0 - r) * x
        } else if a <= 1.5 {
            -r * x * a + (1.0 + 3.0 * r) * x - 2.0 * r * s
        } else {
            x + r / 4.0 * s
        }
    }

    /// One step of gradient descent with unit step.
    pub fn gd_step(&self, x: f64) -> f64 {
        x - self.derivative(x)
    }
}

impl ExplicitOracle for FRho {
    fn gradient(&self, family: OracleFamily, x: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        if family != OracleFamily::Objective || x.len() != 1 {
            return None;
        }
        Some((DVector::from_element(1, self.derivative(x[0])), self.value(x[0])))
    }
}

/// The 2-cycle `{x-, x+}` of the logistic map, which exists for `rho > 3`.
pub fn logistic_two_cycle(rho: f64) -> Option<(f64, f64)> {
    let disc = (rho - 3.0) * (rho + 1.0);
    if !(disc > 0.0) {
        return None;
    }
    let s = disc.sqrt();
    Some(((rho + 1.0 - s) / (2.0 * rho), (rho + 1.0 + s) / (2.0 * rho)))
}
