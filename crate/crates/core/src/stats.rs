//! Small descriptive statistics used by the experiment reports.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with Bessel's correction; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Population skewness `m3 / m2^1.5`.
pub fn skewness(xs: &[f64]) -> f64 {
    let (m2, m3, _) = central_moments(xs);
    m3 / m2.powf(1.5)
}

/// Population excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let (m2, _, m4) = central_moments(xs);
    m4 / (m2 * m2) - 3.0
}

/// Uniform histogram with `bins` bins over `[lo, hi]`. Values outside the
/// range are counted in the edge bins.
pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &x in xs {
        let k = ((x - lo) / width).floor();
        let k = if k.is_nan() {
            0
        } else {
            (k.max(0.0) as usize).min(bins - 1)
        };
        counts[k] += 1;
    }
    counts
}

/// `bins + 1` edges of a uniform histogram over `[lo, hi]`.
pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect()
}
