//! Finite-difference checks against reverse-mode gradients.
//!
//! Two flavors: per-coordinate central differences for small parameter sets,
//! and directional derivatives along random unit directions when perturbing
//! every coordinate would be too slow. Both treat the loss function as a
//! black box over a list of flat parameter vectors.

/// Worst observed disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub max_abs: f64,
    /// (parameter group, coordinate) of the worst relative error.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Relative disagreement with a floor that keeps near-zero gradients from
/// amplifying finite-difference noise.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference check of every coordinate.
///
/// `f` must be deterministic in the parameters; it is called twice per
/// coordinate with the perturbed values and must not retain state. The
/// parameters are restored exactly before returning.
pub fn per_coordinate(
    params: &mut [Vec<f64>],
    mut f: impl FnMut(&[Vec<f64>]) -> f64,
    analytic: &[Vec<f64>],
    step: f64,
    floor: f64,
) -> FdReport {
    let mut report = FdReport {
        max_rel: 0.0,
        max_abs: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    for pi in 0..params.len() {
        for j in 0..params[pi].len() {
            let orig = params[pi][j];
            params[pi][j] = orig + step;
            let hi = f(params);
            params[pi][j] = orig - step;
            let lo = f(params);
            params[pi][j] = orig;

            let numeric = (hi - lo) / (2.0 * step);
            let a = analytic[pi][j];
            let rel = rel_err(a, numeric, floor);
            report.max_abs = report.max_abs.max((a - numeric).abs());
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = (pi, j);
            }
            report.coords_checked += 1;
        }
    }
    report
}

/// Directional derivative along `dir` versus the analytic dot product.
/// Returns (numeric, analytic) so the caller applies its own tolerance.
pub fn directional(
    params: &mut [Vec<f64>],
    mut f: impl FnMut(&[Vec<f64>]) -> f64,
    analytic: &[Vec<f64>],
    dir: &[Vec<f64>],
    step: f64,
) -> (f64, f64) {
    let shift = |params: &mut [Vec<f64>], sign: f64| {
        for (p, d) in params.iter_mut().zip(dir) {
            for (pv, dv) in p.iter_mut().zip(d) {
                *pv += sign * step * dv;
            }
        }
    };
    shift(params, 1.0);
    let hi = f(params);
    shift(params, -2.0);
    let lo = f(params);
    shift(params, 1.0);

    let numeric = (hi - lo) / (2.0 * step);
    let dot: f64 = analytic
        .iter()
        .zip(dir)
        .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    (numeric, dot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_exactly() {
        // f(w) = sum w_i^2, gradient 2w.
        let mut params = vec![vec![0.3, -1.2, 2.0]];
        let analytic = vec![params[0].iter().map(|v| 2.0 * v).collect::<Vec<_>>()];
        let report = per_coordinate(
            &mut params,
            |p| p[0].iter().map(|v| v * v).sum(),
            &analytic,
            1e-5,
            1e-6,
        );
        assert!(report.max_rel < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut params = vec![vec![1.0]];
        let analytic = vec![vec![3.0]]; // true grad is 2.0
        let report = per_coordinate(&mut params, |p| p[0][0] * p[0][0], &analytic, 1e-5, 1e-6);
        assert!(report.max_rel > 0.1);
    }

    #[test]
    fn directional_matches_on_quadratic() {
        let mut params = vec![vec![0.5, -0.25]];
        let analytic = vec![vec![1.0, -0.5]];
        let dir = vec![vec![0.6, 0.8]];
        let (numeric, dot) =
            directional(&mut params, |p| p[0].iter().map(|v| v * v).sum(), &analytic, &dir, 1e-5);
        assert!(rel_err(dot, numeric, 1e-6) < 1e-8);
    }
}
