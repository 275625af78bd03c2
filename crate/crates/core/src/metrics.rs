//! Deep neural collapse measurements.
//!
//! * DNC1: `‖Σ_W Σ_B†‖²_F`, within-class against between-class covariance.
//! * DNC2: ratio of the top two singular values of a feature matrix.
//! * DNC3: norm-weighted mean sine between the rows of `W_l` and their
//!   closest column of `σ(H_l)`.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::linalg::{pseudo_inverse, singular_values, DEFAULT_PINV_RTOL};
use crate::matrix::DenseMatrix;
use crate::model::{DufmDims, DufmParams, ForwardTrace, NUM_CLASSES};

/// Rows of `W` with a smaller norm are ignored by [`dnc3`].
pub const DNC3_MIN_ROW_NORM: f64 = 1e-6;
/// `s₂ / s₁` below this makes [`dnc2`] degenerate.
pub const DNC2_DEGENERATE_RATIO: f64 = 1e-14;

/// A metric value, or the marker for an undefined ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Degenerate,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Metric::Degenerate)
    }
}

impl fmt::Display for Metric {
    /// 17 significant digits, or the literal `degenerate`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{}", format_f64(*v)),
            Metric::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

/// Lossless 17-significant-digit rendering used by the CSV writers.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Per-layer collapse measurements (1-based `layer`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetrics {
    pub layer: usize,
    pub dnc1_pre: Metric,
    pub dnc1_post: Metric,
    pub dnc2_pre: Metric,
    pub dnc2_post: Metric,
    pub dnc3: f64,
}

fn class_means(f: &DenseMatrix, n: usize) -> [Vec<f64>; NUM_CLASSES] {
    let mean = |c: usize| -> Vec<f64> {
        (0..f.rows())
            .map(|i| (0..n).map(|j| f[(i, c * n + j)]).sum::<f64>() / n as f64)
            .collect()
    };
    [mean(0), mean(1)]
}

/// `‖Σ_W Σ_B†‖²_F` for a `d × 2n` feature matrix with columns grouped by class.
///
/// Degenerate when the two class means coincide (`Σ_B = 0`).
pub fn dnc1(f: &DenseMatrix, dims: &DufmDims) -> Result<Metric> {
    if f.cols() % NUM_CLASSES != 0 {
        return Err(invalid(format!("column count {} is not divisible by 2", f.cols())));
    }
    if f.cols() != dims.samples() {
        return Err(invalid(format!("expected {} columns, got {}", dims.samples(), f.cols())));
    }
    let n = dims.n;
    let d = f.rows();
    let means = class_means(f, n);
    let global: Vec<f64> = (0..d).map(|i| 0.5 * (means[0][i] + means[1][i])).collect();

    let spread = means[0].iter().zip(&means[1]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if spread == 0.0 || spread <= 1e-14 * f.max_abs() {
        return Ok(Metric::Degenerate);
    }

    let mut centered = DenseMatrix::zeros(d, f.cols());
    for j in 0..f.cols() {
        let c = j / n;
        for i in 0..d {
            centered[(i, j)] = f[(i, j)] - means[c][i];
        }
    }
    let sigma_w = centered.gram_rows().scale(1.0 / f.cols() as f64);
    let between = DenseMatrix::from_fn(d, NUM_CLASSES, |i, c| means[c][i] - global[i]);
    let sigma_b = between.gram_rows().scale(1.0 / NUM_CLASSES as f64);
    let pinv = pseudo_inverse(&sigma_b, DEFAULT_PINV_RTOL)?;
    Ok(Metric::Value(sigma_w.matmul(&pinv)?.frobenius_sq()))
}

/// `s₁ / s₂` of `f`.
pub fn dnc2(f: &DenseMatrix) -> Result<Metric> {
    if f.cols() < 2 {
        return Err(invalid("dnc2 needs at least two columns"));
    }
    let s = singular_values(f);
    if s.len() < 2 || s[0] == 0.0 || s[1] < DNC2_DEGENERATE_RATIO * s[0] {
        return Ok(Metric::Degenerate);
    }
    Ok(Metric::Value(s[0] / s[1]))
}

/// Sine of the angle between two non-zero vectors, via `2·atan2(‖û−v̂‖, ‖û+v̂‖)`
/// which stays accurate for nearly parallel inputs.
fn sine_between(u: &[f64], u_norm: f64, v: &[f64], v_norm: f64) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a / u_norm, b / v_norm);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    (2.0 * diff.sqrt().atan2(sum.sqrt())).sin().abs()
}

/// Norm-weighted mean over rows `w` of `W` of `min_a sin∠(w, a)` over the
/// columns `a` of `A`. Rows with `‖w‖ < 1e-6` and zero columns are skipped;
/// returns 0 when every row is skipped.
pub fn dnc3(w: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    if w.cols() != a.rows() {
        return Err(Error::ShapeMismatch { op: "dnc3", left: w.shape(), right: a.shape() });
    }
    let columns: Vec<(Vec<f64>, f64)> = (0..a.cols())
        .map(|j| {
            let c = a.column(j);
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .filter(|(_, norm)| *norm > 0.0)
        .collect();

    let (mut weighted, mut total) = (0.0, 0.0);
    for i in 0..w.rows() {
        let row = w.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < DNC3_MIN_ROW_NORM {
            continue;
        }
        let sine = columns
            .iter()
            .map(|(c, cn)| sine_between(row, norm, c, *cn))
            .fold(1.0f64, f64::min);
        weighted += norm * sine;
        total += norm;
    }
    Ok(if total == 0.0 { 0.0 } else { weighted / total })
}

/// All metrics for layers `1 … L` of a forward trace.
pub fn layer_metrics(params: &DufmParams, dims: &DufmDims, trace: &ForwardTrace) -> Result<Vec<LayerMetrics>> {
    (0..dims.layers())
        .map(|l| {
            Ok(LayerMetrics {
                layer: l + 1,
                dnc1_pre: dnc1(&trace.h[l], dims)?,
                dnc1_post: dnc1(&trace.a[l], dims)?,
                dnc2_pre: dnc2(&trace.h[l])?,
                dnc2_post: dnc2(&trace.a[l])?,
                dnc3: dnc3(&params.w[l], &trace.a[l])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian, Rng};

    #[test]
    fn collapsed_features_have_zero_dnc1() {
        let dims = DufmDims::new(vec![3, 3], 4).unwrap();
        let means = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]]).unwrap();
        let f = means.repeat_columns(4);
        assert_eq!(dnc1(&f, &dims).unwrap(), Metric::Value(0.0));
    }

    #[test]
    fn single_sample_per_class() {
        let dims = DufmDims::new(vec![3, 3], 1).unwrap();
        let f = gaussian(&mut Rng::new(2), 5, 2, 1.0);
        assert_eq!(dnc1(&f, &dims).unwrap(), Metric::Value(0.0));
    }

    #[test]
    fn equal_means_are_degenerate() {
        let dims = DufmDims::new(vec![3, 3], 2).unwrap();
        let f = DenseMatrix::from_rows(&[[1.0, -1.0, 2.0, -2.0], [0.0, 0.0, 0.0, 0.0]]).unwrap();
        assert!(dnc1(&f, &dims).unwrap().is_degenerate());
        assert!(dnc1(&DenseMatrix::zeros(3, 4), &dims).unwrap().is_degenerate());
        assert!(dnc1(&DenseMatrix::zeros(3, 6), &dims).is_err());
    }

    #[test]
    fn dnc2_basic() {
        let f = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(dnc2(&f).unwrap(), Metric::Value(1.0));
        let g = DenseMatrix::from_diag(5, 2, &[2.0, 1.0]);
        let v = dnc2(&g).unwrap().value().unwrap();
        assert!((v - 2.0).abs() < 1e-14);
        let rank1 = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(dnc2(&rank1).unwrap().is_degenerate());
        assert!(dnc2(&DenseMatrix::zeros(3, 2)).unwrap().is_degenerate());
    }

    #[test]
    fn dnc3_alignment_cases() {
        let a = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap();
        let aligned = DenseMatrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 0.5, 0.0]]).unwrap();
        assert_eq!(dnc3(&aligned, &a).unwrap(), 0.0);
        let orthogonal = DenseMatrix::from_rows(&[[0.0, 0.0, 4.0]]).unwrap();
        assert!((dnc3(&orthogonal, &a).unwrap() - 1.0).abs() < 1e-15);
        let tiny = DenseMatrix::from_rows(&[[0.0, 0.0, 1e-7]]).unwrap();
        assert_eq!(dnc3(&tiny, &a).unwrap(), 0.0);
        assert!(dnc3(&DenseMatrix::zeros(2, 2), &a).is_err());
    }

    #[test]
    fn degenerate_renders_as_token() {
        assert_eq!(Metric::Degenerate.to_string(), "degenerate");
        assert_eq!(Metric::Value(0.1).to_string(), "1.0000000000000001e-1");
    }
}
