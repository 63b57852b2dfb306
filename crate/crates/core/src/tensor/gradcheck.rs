//! Central finite-difference gradient verification.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` gradients against `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h` for
/// every coordinate of every parameter in `params`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &ParamStore,
    analytic: &BTreeMap<String, Vec<f64>>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(params.len());
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let numel = params.get(&name)?.len();
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::invalid(format!("no analytic gradient for `{name}`")))?;
        if grad.len() != numel {
            return Err(Error::shape(format!(
                "gradient of `{name}` has {} values, expected {numel}",
                grad.len()
            )));
        }
        let mut worst: f64 = 0.0;
        for i in 0..numel {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + h;
            let plus = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - h;
            let minus = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite difference of `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        groups.push(GroupError {
            name,
            numel,
            max_rel_err: worst,
        });
    }
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_err,
        tol,
    })
}
