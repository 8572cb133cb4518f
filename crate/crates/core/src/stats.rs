//! Small numeric helpers shared by the probes and the studies.

/// Ordinary least-squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y = intercept + slope * x`. Returns `None` for fewer than two points
/// or when all `x` coincide.
pub fn ols(points: &[(f64, f64)]) -> Option<LineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = pairwise_sum_by(points, |p| p.0) / n;
    let my = pairwise_sum_by(points, |p| p.1) / n;
    let sxx = pairwise_sum_by(points, |p| (p.0 - mx) * (p.0 - mx));
    if sxx <= 0.0 {
        return None;
    }
    let sxy = pairwise_sum_by(points, |p| (p.0 - mx) * (p.1 - my));
    let syy = pairwise_sum_by(points, |p| (p.1 - my) * (p.1 - my));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Pairwise (cascade) summation: the result depends only on the input order,
/// never on how the caller scheduled the work that produced it.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn pairwise_sum_by<T, F: Fn(&T) -> f64>(xs: &[T], f: F) -> f64 {
    let v: Vec<f64> = xs.iter().map(f).collect();
    pairwise_sum(&v)
}

/// Mean and standard error of the mean (zero for a single sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let fit = ols(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14);
        assert!((fit.intercept - 3.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(ols(&[(1.0, 2.0)]).is_none());
        assert!(ols(&[(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, se) = mean_stderr(&[2.0; 7]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
