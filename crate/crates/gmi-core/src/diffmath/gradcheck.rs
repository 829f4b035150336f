use super::{DiffError, Matrix};

/// Outcome of a finite-difference sweep. `max_rel_err` is the worst
/// coordinate's relative error |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst: Option<WorstCoordinate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    /// Position of the parameter in the checked list.
    pub param: usize,
    /// Flat row-major index inside that parameter.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares analytic gradients against central finite differences of `f`.
///
/// `f` must be deterministic in its parameters: any sampling it performs has
/// to be frozen before the sweep, otherwise the differences measure noise.
/// `analytic` holds one gradient per parameter, shape-matched.
pub fn grad_check<F>(
    mut f: F,
    params: &[Matrix],
    analytic: &[Matrix],
    eps: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: FnMut(&[Matrix]) -> Result<f64, DiffError>,
{
    if params.len() != analytic.len() {
        return Err(DiffError::BadShape {
            op: "grad_check",
            detail: format!("{} params but {} gradients", params.len(), analytic.len()),
        });
    }
    for (p, (pm, gm)) in params.iter().zip(analytic).enumerate() {
        if pm.shape() != gm.shape() {
            return Err(DiffError::BadShape {
                op: "grad_check",
                detail: format!(
                    "param {p} is {:?} but its gradient is {:?}",
                    pm.shape(),
                    gm.shape()
                ),
            });
        }
    }

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, coords_checked: 0, worst: None };
    for p in 0..params.len() {
        for index in 0..params[p].len() {
            let saved = work[p].data()[index];
            work[p].data_mut()[index] = saved + eps;
            let f_plus = f(&work)?;
            work[p].data_mut()[index] = saved - eps;
            let f_minus = f(&work)?;
            work[p].data_mut()[index] = saved;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[p].data()[index];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel;
                report.worst = Some(WorstCoordinate { param: p, index, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}
