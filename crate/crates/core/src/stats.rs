//! Order-fixed reductions and small summary statistics.
//!
//! Every reduction here has a summation tree that depends only on the input
//! length, never on how work was scheduled, so results are bit-identical
//! across worker counts.

use rayon::prelude::*;

const LEAF: usize = 8;

/// Pairwise (cascade) summation in index-ascending order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Element-wise pairwise sum of `rows.len() / width` rows laid out row-major.
///
/// The tree splits on row index exactly like [`pairwise_sum`]; the two halves
/// may be evaluated on different workers without changing the result.
pub fn pairwise_row_sum(rows: &[f64], width: usize) -> Vec<f64> {
    let n_rows = rows.len() / width;
    if n_rows <= LEAF {
        let mut acc = vec![0.0; width];
        for row in rows.chunks_exact(width) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        return acc;
    }
    let mid = n_rows / 2;
    let (lo, hi) = rows.split_at(mid * width);
    let (mut a, b) = if rows.len() >= 1 << 14 {
        rayon::join(|| pairwise_row_sum(lo, width), || pairwise_row_sum(hi, width))
    } else {
        (pairwise_row_sum(lo, width), pairwise_row_sum(hi, width))
    };
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    a
}

/// Element-wise mean over rows, see [`pairwise_row_sum`].
pub fn pairwise_row_mean(rows: &[f64], width: usize) -> Vec<f64> {
    let n = (rows.len() / width) as f64;
    let mut s = pairwise_row_sum(rows, width);
    s.iter_mut().for_each(|v| *v /= n);
    s
}

/// Unbiased sample variance (pairwise sums).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = pairwise_mean(values);
    let sq: Vec<f64> = values.par_iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(values: &[f64]) -> f64 {
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Median of a sample (average of the two middle order statistics).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Maximum of absolute values; 0 for an empty slice.
pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
