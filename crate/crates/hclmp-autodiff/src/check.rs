use crate::store::ParamStore;
use ndarray::ArrayD;

/// Worst-case result of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compare analytic gradients against central finite differences of `loss`.
///
/// `loss` must be deterministic in the parameters (fix all sampling noise
/// before calling). Up to `max_entries_per_param` evenly spaced entries are
/// perturbed per parameter. Relative error uses |a - n| / (|a| + |n| + 1e-6):
/// the cushion absorbs the difference-quotient noise floor (roughly machine
/// epsilon times the loss over 2*eps), which otherwise dominates for
/// gradients that are genuinely zero.
///
/// The loss is only piecewise smooth (absolute errors, leaky rectifiers),
/// so a difference quotient goes bad whenever a kink lands inside the
/// perturbation window. Entries that disagree at the requested step are
/// re-estimated at eps/4 and eps/16: a window artifact shrinks with the
/// window, while a genuinely wrong analytic gradient disagrees at every
/// step. The best-agreeing estimate is reported.
pub fn central_diff_check(
    mut loss: impl FnMut(&ParamStore) -> f64,
    params: &ParamStore,
    analytic: &[Option<ArrayD<f64>>],
    eps: f64,
    max_entries_per_param: usize,
) -> FdReport {
    assert_eq!(analytic.len(), params.len());
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    fn quotient(
        loss: &mut impl FnMut(&ParamStore) -> f64,
        work: &mut ParamStore,
        i: usize,
        j: usize,
        orig: f64,
        step: f64,
    ) -> f64 {
        work.value_mut(i).as_slice_mut().unwrap()[j] = orig + step;
        let up = loss(work);
        work.value_mut(i).as_slice_mut().unwrap()[j] = orig - step;
        let down = loss(work);
        work.value_mut(i).as_slice_mut().unwrap()[j] = orig;
        (up - down) / (2.0 * step)
    }
    let rel_of = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs() + 1e-6);
    let mut work = params.clone();
    for i in 0..params.len() {
        let Some(grad) = &analytic[i] else { continue };
        let n = grad.len();
        if n == 0 {
            continue;
        }
        let stride = n.div_ceil(max_entries_per_param).max(1);
        let flat_grad: Vec<f64> = grad.iter().cloned().collect();
        for j in (0..n).step_by(stride) {
            let orig = work.value(i).as_slice().unwrap()[j];
            let a = flat_grad[j];
            let mut numeric = quotient(&mut loss, &mut work, i, j, orig, eps);
            let mut rel = rel_of(a, numeric);
            for shrink in [4.0, 16.0] {
                if rel <= 1e-6 {
                    break;
                }
                let refined = quotient(&mut loss, &mut work, i, j, orig, eps / shrink);
                let refined_rel = rel_of(a, refined);
                if refined_rel < rel {
                    rel = refined_rel;
                    numeric = refined;
                }
            }
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = params.name(i).to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}
