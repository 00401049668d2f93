//! Central finite-difference checks for analytic gradients.

/// Outcome of comparing one analytic partial derivative with its numeric
/// estimate.
#[derive(Debug, Clone, Copy)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for one coordinate.
pub fn central_difference<Fn: FnMut(&[f64]) -> f64>(f: &mut Fn, x: &[f64], i: usize, h: f64) -> f64 {
    let mut v = x.to_vec();
    v[i] = x[i] + h;
    let up = f(&v);
    v[i] = x[i] - h;
    let down = f(&v);
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor so that coordinates whose true
/// derivative is zero do not fail on rounding noise.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `analytic[i]` against central differences of `f` at `x` for the
/// coordinates in `indices`.
pub fn check<Fn: FnMut(&[f64]) -> f64>(
    mut f: Fn,
    x: &[f64],
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    step: f64,
    tolerance: f64,
    floor: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for i in indices {
        let numeric = central_difference(&mut f, x, i, step);
        let err = rel_error(analytic[i], numeric, floor);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if !(err <= tolerance) {
            report.failures.push(Mismatch {
                index: i,
                analytic: analytic[i],
                numeric,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let x = [1.5, -2.0];
        let g = [2.0 * 1.5 + 3.0 * -2.0, 3.0 * 1.5];
        let r = check(f, &x, &g, 0..2, 1e-5, 1e-8, 1e-6);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let f = |x: &[f64]| x[0].sin();
        let r = check(f, &[0.3], &[0.3_f64.cos() + 0.01], 0..1, 1e-5, 1e-6, 1e-6);
        assert!(!r.passed());
    }
}
