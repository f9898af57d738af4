//! Central finite-difference gradient checking.

use super::params::Parameterized;
use crate::grid::Grid;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst `|a - n| / max(1, |a|, |n|)` over all checked entries, or
    /// infinity when any loss evaluation was non-finite.
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `param head.cls.kernel[3]`.
    pub worst: String,
    pub non_finite: bool,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        !self.non_finite && self.max_rel_error < tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares analytic gradients against central differences with step `h`.
///
/// `eval` returns `(loss, parameter gradients, input gradients)` for the given
/// parameters and inputs; only the loss is used for the perturbed calls.
pub fn grad_check<P, F>(params: &P, inputs: &[Grid], h: f64, mut eval: F) -> GradCheck
where
    P: Parameterized + Clone,
    F: FnMut(&P, &[Grid]) -> (f64, P, Vec<Grid>),
{
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        non_finite: false,
        checked: 0,
    };
    let (loss, pgrads, igrads) = eval(params, inputs);
    if !loss.is_finite() {
        report.non_finite = true;
        report.max_rel_error = f64::INFINITY;
        report.worst = "base loss".into();
        return report;
    }

    let record = |report: &mut GradCheck, analytic: f64, lp: f64, lm: f64, at: String| {
        report.checked += 1;
        if !(lp.is_finite() && lm.is_finite()) {
            report.non_finite = true;
            report.max_rel_error = f64::INFINITY;
            report.worst = at;
            return;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let e = rel_err(analytic, numeric);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = at;
        }
    };

    let mut p = params.clone();
    let analytic: Vec<(String, Vec<f64>)> = pgrads
        .params()
        .into_iter()
        .map(|(n, g)| (n, g.data().to_vec()))
        .collect();
    for (k, (name, grad)) in analytic.iter().enumerate() {
        for (e, &a) in grad.iter().enumerate() {
            let orig = p.params()[k].1.data()[e];
            p.params_mut()[k].1.data_mut()[e] = orig + h;
            let lp = eval(&p, inputs).0;
            p.params_mut()[k].1.data_mut()[e] = orig - h;
            let lm = eval(&p, inputs).0;
            p.params_mut()[k].1.data_mut()[e] = orig;
            record(&mut report, a, lp, lm, format!("param {name}[{e}]"));
        }
    }

    let mut xs = inputs.to_vec();
    for (k, ig) in igrads.iter().enumerate() {
        for (e, &a) in ig.data().iter().enumerate() {
            let orig = xs[k].data()[e];
            xs[k].data_mut()[e] = orig + h;
            let lp = eval(params, &xs).0;
            xs[k].data_mut()[e] = orig - h;
            let lm = eval(params, &xs).0;
            xs[k].data_mut()[e] = orig;
            record(&mut report, a, lp, lm, format!("input {k}[{e}]"));
        }
    }
    report
}

/// A fixed random weighting used to turn a grid output into a scalar loss
/// with a dense upstream gradient.
pub fn probe_loss(y: &Grid, probe: &Grid) -> (f64, Grid) {
    let loss = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
    (loss, probe.clone())
}
