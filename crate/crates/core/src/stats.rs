//! Small descriptive-statistics helpers shared across modules.

/// Neumaier-compensated sum. Loss reductions go through this so that
/// sharded evaluation agrees with sequential evaluation to ~1 ulp.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Standard deviation with denominator N.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / values.len() as f64).sqrt()
}

/// Median of a non-empty slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Quantile by linear interpolation between order statistics at position
/// `q * (n - 1)`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Population skewness; zero for degenerate input.
pub fn skewness(values: &[f64]) -> f64 {
    let sd = population_std(values);
    if values.len() < 3 || sd < 1e-12 {
        return 0.0;
    }
    let m = mean(values);
    let m3 = compensated_sum(values.iter().map(|v| ((v - m) / sd).powi(3)));
    m3 / values.len() as f64
}

/// Population excess kurtosis; zero for degenerate input.
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    let sd = population_std(values);
    if values.len() < 4 || sd < 1e-12 {
        return 0.0;
    }
    let m = mean(values);
    let m4 = compensated_sum(values.iter().map(|v| ((v - m) / sd).powi(4)));
    m4 / values.len() as f64 - 3.0
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
