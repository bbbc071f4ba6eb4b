//! Log-log slope fits used by the classification and rate reports.

use serde::Serialize;

/// Values at or below this level are treated as numerically zero by
/// [`decay_fit`].
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-12;

/// Least-squares slope of `ln y` against `ln n` over points with `y > 0`.
///
/// Returns `−∞` when fewer than two positive values remain and at least one
/// value is zero (a net that vanishes), and `NaN` for an empty input.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, y)| *n > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(n, y)| (n.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return if points.is_empty() { f64::NAN } else { f64::NEG_INFINITY };
    }
    least_squares_slope(&logs)
}

pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Fitted log-log slope; `−∞` when the values reach the floor.
    pub slope: f64,
    /// Samples that entered the fit.
    pub used: Vec<(f64, f64)>,
    pub floor: f64,
}

impl DecayFit {
    /// True when the fitted slope is at most `bound` (a floored fit passes).
    pub fn at_most(&self, bound: f64) -> bool {
        self.slope <= bound
    }
}

/// Asymptotic decay rate of an error net.
///
/// Samples at or below `floor` are discarded because they carry only
/// rounding noise. The slope is fitted over the last `max(3, ⌈m/2⌉)` of the
/// `m` remaining samples so the pre-asymptotic head does not dominate. With
/// at most one sample above the floor the net is reported as floored (`−∞`).
pub fn decay_fit(points: &[(f64, f64)], floor: f64) -> DecayFit {
    let mut above: Vec<(f64, f64)> = points.iter().copied().filter(|(_, y)| *y > floor).collect();
    above.sort_by(|a, b| a.0.total_cmp(&b.0));
    if above.iter().any(|(_, y)| !y.is_finite()) {
        return DecayFit { slope: f64::INFINITY, used: above, floor };
    }
    let m = above.len();
    if m <= 1 {
        return DecayFit { slope: f64::NEG_INFINITY, used: above, floor };
    }
    let take = m.min(3.max(m.div_ceil(2)));
    let used = above[m - take..].to_vec();
    let slope = loglog_slope(&used);
    DecayFit { slope, used, floor }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = (1..10).map(|i| (2f64.powi(i), 3.0 * 2f64.powi(i).powf(-2.5))).collect();
        assert_abs_diff_eq!(loglog_slope(&pts), -2.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_net_is_floored() {
        let pts = vec![(2.0, 0.0), (4.0, 0.0)];
        assert_eq!(loglog_slope(&pts), f64::NEG_INFINITY);
        assert_eq!(decay_fit(&pts, 1e-12).slope, f64::NEG_INFINITY);
    }

    #[test]
    fn decay_fit_ignores_noise_and_head() {
        // head with slope −1, tail with slope −4, then noise below the floor
        let mut pts = vec![(2.0, 0.5), (4.0, 0.25)];
        for i in 3..9 {
            let n = 2f64.powi(i);
            pts.push((n, 0.25 * (n / 4.0).powi(-4)));
        }
        pts.push((1024.0, 1e-15));
        let fit = decay_fit(&pts, 1e-12);
        assert_abs_diff_eq!(fit.slope, -4.0, epsilon = 1e-12);
        assert!(fit.used.iter().all(|p| p.1 > 1e-12));
    }
}
