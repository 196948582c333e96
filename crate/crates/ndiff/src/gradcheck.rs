use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Denominator floor for the relative error; below it the comparison is absolute.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the tape gradient of `loss` against central differences
/// `(f(p + h) - f(p - h)) / 2h`.
///
/// `loss` builds the scalar on the supplied graph from the supplied store. At
/// most `max_coords` coordinates per parameter are probed (evenly strided);
/// `None` probes all of them. The store's gradients are overwritten.
pub fn grad_check<F>(
    store: &mut ParamStore,
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l, store)?;

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        coordinates_checked: 0,
        tolerance: tol,
    };
    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).item())
    };
    for name in names {
        let analytic = store.grad_or_zero(&name);
        let len = analytic.len();
        let stride = match max_coords {
            Some(k) if k > 0 && k < len => len.div_ceil(k),
            _ => 1,
        };
        for idx in (0..len).step_by(stride) {
            let original = store.get(&name).expect("name from store").data[idx];
            store.get_mut(&name).expect("name from store").data[idx] = original + h;
            let plus = eval(store)?;
            store.get_mut(&name).expect("name from store").data[idx] = original - h;
            let minus = eval(store)?;
            store.get_mut(&name).expect("name from store").data[idx] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = relative_error(analytic[idx], numeric);
            let abs = (analytic[idx] - numeric).abs();
            report.coordinates_checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}
