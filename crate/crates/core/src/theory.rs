//! Closed-form description of the global optimum for binary classification.
//!
//! With DNC1 the `n`-sample problem reduces to `n = 1` with `λ_{H₁}` replaced
//! by `n·λ_{H₁}`. The reduced objective depends on the two singular values of
//! every `σ(H_l)`, `l ≥ 2`, and splits into two identical scalar problems in
//! `x_l = s_l²`:
//!
//! ```text
//! λ_{W_L} / (2(x_L + 2λ_{W_L})) + Σ_{l=2}^{L−1} (λ_{W_l}/2)·x_{l+1}/x_l + sqrt(λ_{W₁}λ_{H₁})·sqrt(x₂)
//! ```
//!
//! For `L ≥ 3` the interior stationary points form a curve parametrized by
//! `q = x_L / x_{L−1}`, along which the objective becomes
//! `λ_{W_L} / (2(x_L(q) + 2λ_{W_L})) + (L·λ_{W_{L−1}}/2)·q`; for `L = 2` the
//! problem is one-dimensional in `y = sqrt(x₂)` directly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{nuclear_norm, pseudo_inverse, singular_values, svd, DEFAULT_PINV_RTOL};
use crate::matrix::DenseMatrix;
use crate::model::{DufmDims, DufmParams, RegConfig};

/// Relative band around the threshold reported as [`Regime::Boundary`].
pub const BOUNDARY_RTOL: f64 = 1e-12;
/// Points of the dense grid used before golden-section refinement.
pub const GRID_POINTS: usize = 10_000;

/// `(L−1)^{L−1} / (2^{L+1} L^{2L})`, evaluated exactly and then rounded.
pub fn dnc_threshold(layers: usize) -> Result<f64> {
    if layers < 2 {
        return Err(invalid(format!("threshold needs L >= 2, got {layers}")));
    }
    let l = BigInt::from(layers);
    let num = num_traits::pow(l.clone() - 1, layers - 1);
    let den = num_traits::pow(BigInt::from(2), layers + 1) * num_traits::pow(l, 2 * layers);
    BigRational::new(num, den)
        .to_f64()
        .ok_or_else(|| invalid("threshold not representable"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Below the threshold: the unique optimum is collapsed and non-zero.
    Collapse,
    /// At the threshold: collapsed and all-zero optima tie.
    Boundary,
    /// Above the threshold: the only optimum is zero.
    Zero,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Collapse => "collapse",
            Regime::Boundary => "boundary",
            Regime::Zero => "zero",
        })
    }
}

pub fn classify(product: f64, threshold: f64) -> Regime {
    if (product - threshold).abs() <= BOUNDARY_RTOL * threshold {
        Regime::Boundary
    } else if product < threshold {
        Regime::Collapse
    } else {
        Regime::Zero
    }
}

/// Compares `n·λ_{H₁}·Π λ_{W_l}` against [`dnc_threshold`].
pub fn regime(dims: &DufmDims, reg: &RegConfig) -> Result<Regime> {
    dims.validate()?;
    reg.validate(dims)?;
    Ok(classify(reg.product(dims.n), dnc_threshold(dims.layers())?))
}

/// Ordered pair of singular values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPair {
    pub s1: f64,
    pub s2: f64,
}

impl SpectrumPair {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        if !(s2 >= 0.0 && s1 >= s2 && s1.is_finite()) {
            return Err(invalid(format!("need s1 >= s2 >= 0, got ({s1}, {s2})")));
        }
        Ok(Self { s1, s2 })
    }

    /// Top two singular values of a two-column matrix.
    pub fn of(m: &DenseMatrix) -> Result<Self> {
        if m.cols() != 2 {
            return Err(invalid(format!("expected two columns, got {}", m.cols())));
        }
        let s = singular_values(m);
        Self::new(s[0], s.get(1).copied().unwrap_or(0.0))
    }

    /// Number of singular values above `1e-14 · s1`.
    pub fn rank(&self) -> usize {
        if self.s1 == 0.0 {
            0
        } else if self.s2 <= 1e-14 * self.s1 {
            1
        } else {
            2
        }
    }
}

/// Conditionally optimal value of `¼‖W_L σ(H_L) − I₂‖² + (λ/2)‖W_L‖²` over `W_L`.
pub fn ridge_value(s: SpectrumPair, lambda_wl: f64) -> Result<f64> {
    if !(lambda_wl > 0.0) {
        return Err(invalid("lambda_wl must be positive"));
    }
    let term = |x: f64| lambda_wl / (2.0 * (x * x + 2.0 * lambda_wl));
    Ok(term(s.s1) + term(s.s2))
}

/// The ridge minimizer `Sᵀ(SSᵀ + 2λI)⁻¹` for a feature matrix `S` (`d × 2`).
pub fn ridge_classifier(features: &DenseMatrix, lambda_wl: f64) -> Result<DenseMatrix> {
    let d = features.rows();
    let mut system = features.gram_rows();
    for i in 0..d {
        system[(i, i)] += 2.0 * lambda_wl;
    }
    features.t_matmul(&pseudo_inverse(&system, DEFAULT_PINV_RTOL)?)
}

/// Minimum of `‖W‖²_F` subject to `σ(WX)` having spectrum `target`, where
/// `given` is the spectrum of `X`: `t₁²/g₁² + t₂²/g₂²`, with `0²/0² := 0`.
///
/// Returns [`Error::Infeasible`] when `target` has higher rank than `given`.
pub fn key_lemma_value(target: SpectrumPair, given: SpectrumPair) -> Result<f64> {
    key_lemma_terms(target, given).map(|(a, b)| a * a + b * b)
}

/// The unsquared `t₁/g₁ + t₂/g₂` variant; kept to test which convention holds.
pub fn key_lemma_value_unsquared(target: SpectrumPair, given: SpectrumPair) -> Result<f64> {
    key_lemma_terms(target, given).map(|(a, b)| a + b)
}

fn key_lemma_terms(target: SpectrumPair, given: SpectrumPair) -> Result<(f64, f64)> {
    if target.rank() > given.rank() {
        return Err(Error::Infeasible(format!(
            "target rank {} exceeds input rank {}",
            target.rank(),
            given.rank()
        )));
    }
    let ratio = |t: f64, g: f64| if t == 0.0 { 0.0 } else { t / g };
    match given.rank() {
        0 => Ok((0.0, 0.0)),
        1 => Ok((ratio(target.s1, given.s1), 0.0)),
        _ => Ok((ratio(target.s1, given.s1), ratio(target.s2, given.s2))),
    }
}

/// Minimum of `‖W‖²_F` subject to `σ(WX) = A` for non-negative two-column
/// `A = [a|b]` and `X = [x|y]`:
/// `(aᵀa·yᵀy − 2aᵀb·xᵀy + bᵀb·xᵀx) / (xᵀx·yᵀy − (xᵀy)²)`.
///
/// When `x = αy` the value is `bᵀb / yᵀy`, feasible only for `a = αb`.
pub fn row_kkt_value(a: &DenseMatrix, x: &DenseMatrix) -> Result<f64> {
    if a.cols() != 2 || x.cols() != 2 {
        return Err(invalid("row_kkt_value expects two-column matrices"));
    }
    let (ca, cb, cx, cy) = (a.column(0), a.column(1), x.column(0), x.column(1));
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let (xx, yy, xy) = (dot(&cx, &cx), dot(&cy, &cy), dot(&cx, &cy));
    let (aa, bb, ab) = (dot(&ca, &ca), dot(&cb, &cb), dot(&ca, &cb));
    let det = xx * yy - xy * xy;
    if det > 1e-12 * xx * yy {
        return Ok((aa * yy - 2.0 * ab * xy + bb * xx) / det);
    }
    if yy == 0.0 {
        return Err(Error::Infeasible("degenerate input columns".into()));
    }
    let alpha = xy / yy;
    let mismatch = ca.iter().zip(&cb).map(|(p, q)| (p - alpha * q).abs()).fold(0.0, f64::max);
    if mismatch > 1e-9 * (1.0 + a.max_abs()) {
        return Err(Error::Infeasible("aligned inputs need aligned outputs".into()));
    }
    Ok(bb / yy)
}

/// `(s₁ + s₂)^{2/L}`: the smallest `‖H‖_{S_{2/L}}^{2/L}` with `σ(H)` of spectrum `s`.
pub fn schatten_min_value(s: SpectrumPair, layers: usize) -> Result<f64> {
    if layers < 2 {
        return Err(invalid(format!("need L >= 2, got {layers}")));
    }
    Ok((s.s1 + s.s2).powf(2.0 / layers as f64))
}

/// `min (λ_a/2)‖A‖² + (λ_b/2)‖B‖²` subject to `AB = C`, i.e. `sqrt(λ_a λ_b)·‖C‖_*`.
pub fn variational_min_value(c: &DenseMatrix, lambda_a: f64, lambda_b: f64) -> Result<f64> {
    if !(lambda_a > 0.0 && lambda_b > 0.0) {
        return Err(invalid("regularization strengths must be positive"));
    }
    Ok((lambda_a * lambda_b).sqrt() * nuclear_norm(c))
}

/// Balanced factors `A = γ_A U Σ^{1/2} Rᵀ`, `B = γ_B R Σ^{1/2} Vᵀ` attaining
/// [`variational_min_value`], with `γ_A = (λ_b/λ_a)^{1/4}`, `γ_B = 1/γ_A` and
/// `R` the leading `inner_dim × rank` block of the identity.
pub fn variational_factors(
    c: &DenseMatrix,
    lambda_a: f64,
    lambda_b: f64,
    inner_dim: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(lambda_a > 0.0 && lambda_b > 0.0) {
        return Err(invalid("regularization strengths must be positive"));
    }
    let d = svd(c);
    let rank = d.rank(1e-12);
    if inner_dim < rank {
        return Err(invalid(format!("inner_dim {inner_dim} is below rank {rank}")));
    }
    let gamma_a = (lambda_b / lambda_a).powf(0.25);
    let gamma_b = 1.0 / gamma_a;
    let mut a = DenseMatrix::zeros(c.rows(), inner_dim);
    let mut b = DenseMatrix::zeros(inner_dim, c.cols());
    for k in 0..rank {
        let root = d.s[k].sqrt();
        for i in 0..c.rows() {
            a[(i, k)] = gamma_a * root * d.u[(i, k)];
        }
        for j in 0..c.cols() {
            b[(k, j)] = gamma_b * root * d.v[(j, k)];
        }
    }
    Ok((a, b))
}

/// The `n = 1` scalar problem with effective `λ_{H₁}' = n·λ_{H₁}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub lambda_h: f64,
    pub lambda_w: Vec<f64>,
}

impl ReducedProblem {
    pub fn new(dims: &DufmDims, reg: &RegConfig) -> Result<Self> {
        dims.validate()?;
        reg.validate(dims)?;
        Ok(Self { lambda_h: dims.n as f64 * reg.lambda_h1, lambda_w: reg.lambda_w.clone() })
    }

    pub fn layers(&self) -> usize {
        self.lambda_w.len()
    }

    /// `λ_{W_l}` for 1-based `l`.
    fn lw(&self, l: usize) -> f64 {
        self.lambda_w[l - 1]
    }

    /// Per-index objective at `x = (x₂ … x_L)`; `0/0` counts as 0.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let layers = self.layers();
        assert_eq!(x.len(), layers - 1, "expected x_2..x_L");
        let xl = |l: usize| x[l - 2];
        let ll = self.lw(layers);
        let mut value = ll / (2.0 * (xl(layers) + 2.0 * ll));
        for l in 2..layers {
            let (num, den) = (xl(l + 1), xl(l));
            let ratio = if num == 0.0 && den == 0.0 { 0.0 } else { num / den };
            value += 0.5 * self.lw(l) * ratio;
        }
        value + (self.lw(1) * self.lambda_h).sqrt() * xl(2).sqrt()
    }

    /// `x_L(q) = λ_{W_{L−1}}^{L−1} / (λ_{H₁} Π_{j=1}^{L−2} λ_{W_j}) · q^L`.
    fn x_last(&self, q: f64) -> f64 {
        let layers = self.layers();
        let lprev = self.lw(layers - 1);
        let denom = self.lambda_h * (1..=layers - 2).map(|j| self.lw(j)).product::<f64>();
        lprev.powi(layers as i32 - 1) / denom * q.powi(layers as i32)
    }

    /// Stationary profile `(x₂ … x_L)` at `q` for `L ≥ 3`.
    ///
    /// `x_L` comes from its closed form and
    /// `x_{L−k} = Π_{j=1}^{k−1} λ_{W_{L−j−1}} / λ_{W_{L−1}}^{k−1} · q^{−k} · x_L`.
    pub fn singular_profile(&self, q: f64) -> Result<Vec<f64>> {
        let layers = self.layers();
        if layers < 3 {
            return Err(invalid("singular_profile needs L >= 3; L = 2 is parametrized by y"));
        }
        if !(q >= 0.0) {
            return Err(invalid(format!("q must be non-negative, got {q}")));
        }
        if q == 0.0 {
            return Ok(vec![0.0; layers - 1]);
        }
        let x_l = self.x_last(q);
        let lprev = self.lw(layers - 1);
        let mut x = vec![0.0; layers - 1];
        x[layers - 2] = x_l;
        for k in 1..=layers - 2 {
            let num: f64 = (1..k).map(|j| self.lw(layers - j - 1)).product();
            x[layers - k - 2] = num / lprev.powi(k as i32 - 1) * q.powi(-(k as i32)) * x_l;
        }
        Ok(x)
    }

    /// Per-index objective along the stationary curve (`L ≥ 3`).
    pub fn curve_value(&self, q: f64) -> f64 {
        let layers = self.layers();
        let ll = self.lw(layers);
        ll / (2.0 * (self.x_last(q) + 2.0 * ll)) + 0.5 * layers as f64 * self.lw(layers - 1) * q
    }

    fn curve_slope(&self, q: f64) -> f64 {
        let layers = self.layers() as i32;
        let ll = self.lw(self.layers());
        let c = self.x_last(1.0);
        let denom = c * q.powi(layers) + 2.0 * ll;
        -ll * c * layers as f64 * q.powi(layers - 1) / (2.0 * denom * denom)
            + 0.5 * layers as f64 * self.lw(self.layers() - 1)
    }

    /// Per-index objective for `L = 2` as a function of `y = sqrt(x₂)`.
    pub fn two_layer_value(&self, y: f64) -> f64 {
        let l2 = self.lw(2);
        l2 / (2.0 * (y * y + 2.0 * l2)) + (self.lw(1) * self.lambda_h).sqrt() * y
    }

    fn two_layer_slope(&self, y: f64) -> f64 {
        let l2 = self.lw(2);
        let denom = y * y + 2.0 * l2;
        -l2 * y / (denom * denom) + (self.lw(1) * self.lambda_h).sqrt()
    }

    /// Upper end of the search interval: beyond it the linear term alone
    /// exceeds the value `1/4` at the origin.
    pub fn search_bound(&self) -> f64 {
        let layers = self.layers();
        if layers == 2 {
            1.0 / (4.0 * (self.lw(1) * self.lambda_h).sqrt())
        } else {
            1.0 / (2.0 * layers as f64 * self.lw(layers - 1))
        }
    }

    /// Relative residuals of the interior stationarity equations at `x`.
    pub fn stationarity_residuals(&self, x: &[f64]) -> Vec<f64> {
        let layers = self.layers();
        let xl = |l: usize| x[l - 2];
        let rel = |lhs: f64, rhs: f64| (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        if layers == 2 {
            let y = xl(2).sqrt();
            return vec![self.two_layer_slope(y).abs() / (self.lw(1) * self.lambda_h).sqrt()];
        }
        let ll = self.lw(layers);
        let mut out = Vec::with_capacity(layers - 1);
        out.push(rel((ll / self.lw(layers - 1)).sqrt() * xl(layers - 1).sqrt(), xl(layers) + 2.0 * ll));
        for l in 3..layers {
            out.push(rel(xl(l) * xl(l), self.lw(l) / self.lw(l - 1) * xl(l + 1) * xl(l - 1)));
        }
        out.push(rel(xl(2).powf(1.5), self.lw(2) / (self.lw(1) * self.lambda_h).sqrt() * xl(3)));
        out
    }
}

/// Global optimum of the full objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub threshold: f64,
    /// `n·λ_{H₁}·Π λ_{W_l}`.
    pub product: f64,
    pub regime: Regime,
    /// Minimizing `q` for `L ≥ 3`; for `L = 2` the minimizing `y = sqrt(x₂)`.
    pub q_star: f64,
    /// Squared singular values `x₂ … x_L` of `σ(H_l)` at the optimum.
    pub x: Vec<f64>,
    pub optimal_loss: f64,
}

/// Leftmost best point of a dense grid on `(0, hi]` (uniform plus
/// log-spaced), refined by golden section and then by bisection on `slope`
/// when it brackets a sign change.
fn minimize_on_interval(f: impl Fn(f64) -> f64, slope: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let mut grid: Vec<f64> = (1..=GRID_POINTS).map(|i| hi * i as f64 / GRID_POINTS as f64).collect();
    grid.extend((0..GRID_POINTS).map(|i| hi * 10f64.powf(-12.0 * (1.0 - i as f64 / GRID_POINTS as f64))));
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, &q) in grid.iter().enumerate() {
        let v = f(q);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let mut up = grid[(best + 1).min(grid.len() - 1)];

    // golden section
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, up);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-12 * b.abs().max(f64::MIN_POSITIVE) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut q = 0.5 * (a + b);

    // the objective is flat at its minimum, so finish on the derivative
    if slope(lo) < 0.0 && slope(up) > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + up);
            if mid <= lo || mid >= up {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                up = mid;
            }
        }
        q = 0.5 * (lo + up);
    }
    q
}

/// Optimal loss of the full problem, together with the optimal spectrum.
pub fn theoretical_optimum(dims: &DufmDims, reg: &RegConfig) -> Result<OptimumReport> {
    let problem = ReducedProblem::new(dims, reg)?;
    let layers = dims.layers();
    let threshold = dnc_threshold(layers)?;
    let product = reg.product(dims.n);
    let regime = classify(product, threshold);
    let zero = OptimumReport {
        threshold,
        product,
        regime,
        q_star: 0.0,
        x: vec![0.0; layers - 1],
        optimal_loss: 0.5,
    };
    if regime == Regime::Zero {
        return Ok(zero);
    }

    let hi = problem.search_bound();
    let (arg, value, x) = if layers == 2 {
        let y = minimize_on_interval(|y| problem.two_layer_value(y), |y| problem.two_layer_slope(y), hi);
        (y, problem.two_layer_value(y), vec![y * y])
    } else {
        let q = minimize_on_interval(|q| problem.curve_value(q), |q| problem.curve_slope(q), hi);
        (q, problem.curve_value(q), problem.singular_profile(q)?)
    };
    // per-index value at the origin is exactly 1/4
    if value > 0.25 {
        return Ok(zero);
    }
    Ok(OptimumReport { threshold, product, regime, q_star: arg, x, optimal_loss: 2.0 * value })
}

/// An explicit collapsed global optimum.
///
/// Every `σ(H_l)`, `l ≥ 2`, is `sqrt(x_l)·[e₁|e₂]`, the middle layers map
/// `e_i` to `sqrt(x_{l+1}/x_l)·e_i`, `W_L` is the ridge classifier, `H₂` is
/// taken non-negative and `(W₁, H₁)` are balanced factors of `H₂`; each class
/// column of the reduced `H₁` is repeated `n` times.
pub fn construct_collapsed_solution(dims: &DufmDims, reg: &RegConfig) -> Result<DufmParams> {
    let report = theoretical_optimum(dims, reg)?;
    if report.regime != Regime::Collapse {
        return Err(Error::RegimeMismatch { expected: "collapse".into(), found: report.regime.to_string() });
    }
    let layers = dims.layers();
    let x = |l: usize| report.x[l - 2];
    let frame = |l: usize| {
        let root = x(l).sqrt();
        DenseMatrix::from_fn(dims.widths[l - 1], 2, |i, j| if i == j { root } else { 0.0 })
    };

    let mut w = Vec::with_capacity(layers);
    let h2 = frame(2);
    let (w1, h1_reduced) = variational_factors(&h2, reg.lambda_w[0], dims.n as f64 * reg.lambda_h1, dims.widths[0])?;
    w.push(w1);
    for l in 2..layers {
        let scale = (x(l + 1) / x(l)).sqrt();
        let (rows, cols) = dims.weight_shape(l);
        w.push(DenseMatrix::from_fn(rows, cols, |i, j| if i == j && i < 2 { scale } else { 0.0 }));
    }
    w.push(ridge_classifier(&frame(layers), reg.lambda_w[layers - 1])?);
    Ok(DufmParams { h1: h1_reduced.repeat_columns(dims.n), w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pair(a: f64, b: f64) -> SpectrumPair {
        SpectrumPair::new(a, b).unwrap()
    }

    #[test]
    fn thresholds() {
        assert_eq!(dnc_threshold(2).unwrap(), 1.0 / 128.0);
        assert_relative_eq!(dnc_threshold(3).unwrap(), 1.0 / 2916.0, max_relative = 1e-15);
        assert!(dnc_threshold(1).is_err());
        for l in 2..10 {
            assert!(dnc_threshold(l + 1).unwrap() < dnc_threshold(l).unwrap());
        }
    }

    #[test]
    fn regimes() {
        let dims = DufmDims::uniform(3, 64, 50).unwrap();
        assert_eq!(regime(&dims, &RegConfig::uniform(3, 5e-4).unwrap()).unwrap(), Regime::Collapse);
        let dims2 = DufmDims::uniform(2, 4, 1).unwrap();
        assert_eq!(regime(&dims2, &RegConfig::uniform(2, 0.2).unwrap()).unwrap(), Regime::Zero);
        let lam = (1.0f64 / 128.0).cbrt();
        let reg = RegConfig::new(1.0 / 128.0 / (lam * lam), vec![lam, lam]).unwrap();
        assert_eq!(regime(&dims2, &reg).unwrap(), Regime::Boundary);
    }

    #[test]
    fn ridge_values() {
        assert_eq!(ridge_value(pair(0.0, 0.0), 0.37).unwrap(), 0.5);
        assert_relative_eq!(ridge_value(pair(1.0, 1.0), 0.5).unwrap(), 0.25);
    }

    #[test]
    fn key_lemma_cases() {
        assert_relative_eq!(key_lemma_value(pair(2.0, 1.0), pair(2.0, 1.0)).unwrap(), 2.0);
        assert_relative_eq!(key_lemma_value(pair(2.0, 1.0), pair(1.0, 1.0)).unwrap(), 5.0);
        assert_relative_eq!(key_lemma_value_unsquared(pair(2.0, 1.0), pair(1.0, 1.0)).unwrap(), 3.0);
        assert!(matches!(key_lemma_value(pair(1.0, 1.0), pair(1.0, 0.0)), Err(Error::Infeasible(_))));
        assert_relative_eq!(key_lemma_value(pair(3.0, 0.0), pair(2.0, 0.0)).unwrap(), 2.25);
        assert_eq!(key_lemma_value(pair(0.0, 0.0), pair(0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(key_lemma_value(pair(1.5, 1.5), pair(1.5, 1.5)).unwrap(), 2.0);
    }

    #[test]
    fn schatten_values() {
        assert_relative_eq!(schatten_min_value(pair(1.0, 1.0), 2).unwrap(), 2.0);
        assert_relative_eq!(schatten_min_value(pair(3.0, 1.0), 2).unwrap(), 4.0);
        assert_relative_eq!(schatten_min_value(pair(2.0, 0.0), 3).unwrap(), 2f64.powf(2.0 / 3.0));
    }

    #[test]
    fn variational_cases() {
        let c = DenseMatrix::from_diag(2, 2, &[3.0, 1.0]);
        assert_relative_eq!(variational_min_value(&c, 1.0, 1.0).unwrap(), 4.0, max_relative = 1e-14);
        let (a, b) = variational_factors(&DenseMatrix::zeros(3, 2), 1.0, 2.0, 2).unwrap();
        assert_eq!(a.max_abs() + b.max_abs(), 0.0);
        let c = DenseMatrix::from_diag(2, 2, &[1.0, 0.0]);
        assert_relative_eq!(variational_min_value(&c, 4.0, 1.0).unwrap(), 2.0);
        let (a, b) = variational_factors(&c, 4.0, 1.0, 3).unwrap();
        assert_relative_eq!(4.0 * a.frobenius_sq(), b.frobenius_sq(), max_relative = 1e-12);
        assert!(variational_factors(&DenseMatrix::identity(3), 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn profile_at_unit_lambdas() {
        let p = ReducedProblem { lambda_h: 1.0, lambda_w: vec![1.0; 3] };
        let x = p.singular_profile(1.0).unwrap();
        assert_relative_eq!(x[0], 1.0);
        assert_relative_eq!(x[1], 1.0);
        assert_eq!(p.singular_profile(0.0).unwrap(), vec![0.0, 0.0]);
        let two = ReducedProblem { lambda_h: 1.0, lambda_w: vec![1.0; 2] };
        assert!(two.singular_profile(1.0).is_err());
    }

    #[test]
    fn zero_regime_optimum() {
        let dims = DufmDims::uniform(2, 4, 1).unwrap();
        let r = theoretical_optimum(&dims, &RegConfig::uniform(2, 0.2).unwrap()).unwrap();
        assert_eq!(r.regime, Regime::Zero);
        assert_eq!(r.q_star, 0.0);
        assert_eq!(r.optimal_loss, 0.5);
        assert!(construct_collapsed_solution(&dims, &RegConfig::uniform(2, 0.2).unwrap()).is_err());
    }

    #[test]
    fn construction_is_stationary_and_attains_optimum() {
        for (layers, lambda) in [(2, 5e-3), (3, 5e-4), (4, 1e-3), (6, 5e-4)] {
            let dims = DufmDims::uniform(layers, 8, 5).unwrap();
            let reg = RegConfig::uniform(layers, lambda).unwrap();
            let report = theoretical_optimum(&dims, &reg).unwrap();
            let params = construct_collapsed_solution(&dims, &reg).unwrap();
            let value = crate::model::loss(&params, &dims, &reg).unwrap().total;
            assert_relative_eq!(value, report.optimal_loss, max_relative = 1e-10);
            let grad = crate::model::gradient(&params, &dims, &reg).unwrap();
            assert!(grad.norm_sq().sqrt() < 1e-8, "L={layers} grad {}", grad.norm_sq().sqrt());
            let residuals = ReducedProblem::new(&dims, &reg).unwrap().stationarity_residuals(&report.x);
            assert!(residuals.iter().all(|r| *r < 1e-8), "{residuals:?}");
        }
    }
}
