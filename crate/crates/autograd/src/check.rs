//! Central finite differences over every scalar of a parameter store.

use crate::{Gradients, ParamId, ParamStore};

/// One compared coordinate.
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |m| m.rel_error)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
/// gradient is ~0 from being judged on round-off alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` with `(f(θ + h) - f(θ - h)) / 2h` for every scalar of
/// the selected parameters (all parameters when `only` is `None`).
pub fn check_gradients<F>(
    params: &ParamStore,
    analytic: &Gradients,
    h: f64,
    floor: f64,
    only: Option<&[ParamId]>,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        worst: None,
    };
    for id in ids {
        let n = params.get(id).len();
        for i in 0..n {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let plus = f(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let minus = f(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.as_ref().map_or(true, |w| rel > w.rel_error) {
                report.worst = Some(Mismatch {
                    param: params.name(id).to_string(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    report
}
