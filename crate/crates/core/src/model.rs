//! The L-layer deep unconstrained features model.
//!
//! Free features `H₁` pass through `L` bias-free fully connected layers with
//! ReLU between consecutive layers:
//!
//! ```text
//! H₂ = W₁H₁,   H_l = W_{l−1} σ(H_{l−1}) (l ≥ 3),   logits = W_L σ(H_L)
//! ```
//!
//! and the objective is `(1/2N)‖logits − Y‖²_F + Σ_l (λ_{W_l}/2)‖W_l‖²_F +
//! (λ_{H₁}/2)‖H₁‖²_F` with `Y = I_K ⊗ 1_nᵀ`. Only binary classification
//! (`K = 2`) is supported.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{relu, relu_mask};
use crate::matrix::DenseMatrix;
use crate::rng::{gaussian, Rng};

/// Number of classes.
pub const NUM_CLASSES: usize = 2;

/// Layer widths and samples per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DufmDims {
    /// Input widths `d₁ … d_L`; the layer count is `widths.len()`.
    pub widths: Vec<usize>,
    /// Samples per class.
    pub n: usize,
}

impl DufmDims {
    pub fn new(widths: Vec<usize>, n: usize) -> Result<Self> {
        let dims = Self { widths, n };
        dims.validate()?;
        Ok(dims)
    }

    /// Constant width across all `layers`.
    pub fn uniform(layers: usize, width: usize, n: usize) -> Result<Self> {
        Self::new(vec![width; layers], n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(invalid(format!("need at least 2 layers, got {}", self.widths.len())));
        }
        if let Some(d) = self.widths.iter().find(|&&d| d < 2) {
            return Err(invalid(format!("every width must be >= 2, got {d}")));
        }
        if self.n == 0 {
            return Err(invalid("samples per class must be >= 1"));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    /// Total sample count `N = K·n`.
    pub fn samples(&self) -> usize {
        NUM_CLASSES * self.n
    }

    /// Shape of `W_l` for 1-based `l`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        let out = if l == self.layers() { NUM_CLASSES } else { self.widths[l] };
        (out, self.widths[l - 1])
    }
}

/// Regularization strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub lambda_h1: f64,
    /// `λ_{W₁} … λ_{W_L}`.
    pub lambda_w: Vec<f64>,
}

impl RegConfig {
    pub fn new(lambda_h1: f64, lambda_w: Vec<f64>) -> Result<Self> {
        let reg = Self { lambda_h1, lambda_w };
        if !(reg.lambda_h1 > 0.0 && reg.lambda_h1.is_finite()) {
            return Err(invalid(format!("lambda_h1 must be positive, got {}", reg.lambda_h1)));
        }
        if let Some(l) = reg.lambda_w.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(invalid(format!("lambda_w entries must be positive, got {l}")));
        }
        Ok(reg)
    }

    /// Same strength for `H₁` and every layer.
    pub fn uniform(layers: usize, lambda: f64) -> Result<Self> {
        Self::new(lambda, vec![lambda; layers])
    }

    pub fn validate(&self, dims: &DufmDims) -> Result<()> {
        Self::new(self.lambda_h1, self.lambda_w.clone())?;
        if self.lambda_w.len() != dims.layers() {
            return Err(invalid(format!(
                "expected {} lambda_w values, got {}",
                dims.layers(),
                self.lambda_w.len()
            )));
        }
        Ok(())
    }

    /// `n · λ_{H₁} · Π λ_{W_l}`.
    pub fn product(&self, n: usize) -> f64 {
        n as f64 * self.lambda_h1 * self.lambda_w.iter().product::<f64>()
    }
}

/// Optimization variables `H₁, W₁ … W_L`. Also used for gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DufmParams {
    pub h1: DenseMatrix,
    pub w: Vec<DenseMatrix>,
}

/// Initialization scales. Weights get `gain / sqrt(d_l)` standard deviation,
/// features `feature_std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitScale {
    pub weight_gain: f64,
    pub feature_std: f64,
}

impl Default for InitScale {
    fn default() -> Self {
        Self { weight_gain: 1.0, feature_std: 1.0 }
    }
}

impl DufmParams {
    pub fn zeros(dims: &DufmDims) -> Self {
        let h1 = DenseMatrix::zeros(dims.widths[0], dims.samples());
        let w = (1..=dims.layers())
            .map(|l| {
                let (r, c) = dims.weight_shape(l);
                DenseMatrix::zeros(r, c)
            })
            .collect();
        Self { h1, w }
    }

    /// Gaussian initialization; draws `H₁` first, then `W₁ … W_L`.
    pub fn random(dims: &DufmDims, rng: &mut Rng, init: InitScale) -> Self {
        let h1 = gaussian(rng, dims.widths[0], dims.samples(), init.feature_std);
        let w = (1..=dims.layers())
            .map(|l| {
                let (r, c) = dims.weight_shape(l);
                gaussian(rng, r, c, init.weight_gain / (c as f64).sqrt())
            })
            .collect();
        Self { h1, w }
    }

    pub fn check(&self, dims: &DufmDims) -> Result<()> {
        let expect_h1 = (dims.widths[0], dims.samples());
        if self.h1.shape() != expect_h1 {
            return Err(Error::ShapeMismatch { op: "H1", left: self.h1.shape(), right: expect_h1 });
        }
        if self.w.len() != dims.layers() {
            return Err(invalid(format!("expected {} weight matrices, got {}", dims.layers(), self.w.len())));
        }
        for (i, w) in self.w.iter().enumerate() {
            let expect = dims.weight_shape(i + 1);
            if w.shape() != expect {
                return Err(Error::ShapeMismatch { op: "W", left: w.shape(), right: expect });
            }
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.h1.frobenius_sq() + self.w.iter().map(DenseMatrix::frobenius_sq).sum::<f64>()
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.h1.axpy(alpha, &other.h1)?;
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.h1.is_finite() && self.w.iter().all(DenseMatrix::is_finite)
    }
}

/// Every intermediate quantity of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activations `H₁ … H_L`.
    pub h: Vec<DenseMatrix>,
    /// Post-activations `σ(H₁) … σ(H_L)`; `σ(H₁)` is only for metrics.
    pub a: Vec<DenseMatrix>,
    /// `K × N` network output.
    pub logits: DenseMatrix,
}

/// Per-term objective values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub fit: f64,
    pub reg_h1: f64,
    pub reg_w: Vec<f64>,
}

/// `Y = I_K ⊗ 1_nᵀ`, samples arranged class by class.
pub fn label_matrix(dims: &DufmDims) -> DenseMatrix {
    DenseMatrix::from_fn(NUM_CLASSES, dims.samples(), |c, j| if j / dims.n == c { 1.0 } else { 0.0 })
}

pub fn forward(params: &DufmParams, dims: &DufmDims) -> Result<ForwardTrace> {
    params.check(dims)?;
    let layers = dims.layers();
    let mut h = Vec::with_capacity(layers);
    let mut a = Vec::with_capacity(layers);
    h.push(params.h1.clone());
    a.push(relu(&params.h1));
    h.push(params.w[0].matmul(&params.h1)?);
    a.push(relu(&h[1]));
    for l in 2..layers {
        let next = params.w[l - 1].matmul(&a[l - 1])?;
        a.push(relu(&next));
        h.push(next);
    }
    let logits = params.w[layers - 1].matmul(&a[layers - 1])?;
    Ok(ForwardTrace { h, a, logits })
}

fn breakdown(params: &DufmParams, dims: &DufmDims, reg: &RegConfig, logits: &DenseMatrix) -> Result<LossBreakdown> {
    let y = label_matrix(dims);
    let fit = logits.sub(&y)?.frobenius_sq() / (2.0 * dims.samples() as f64);
    let reg_h1 = 0.5 * reg.lambda_h1 * params.h1.frobenius_sq();
    let reg_w: Vec<f64> =
        params.w.iter().zip(&reg.lambda_w).map(|(w, l)| 0.5 * l * w.frobenius_sq()).collect();
    let total = fit + reg_h1 + reg_w.iter().sum::<f64>();
    Ok(LossBreakdown { total, fit, reg_h1, reg_w })
}

pub fn loss(params: &DufmParams, dims: &DufmDims, reg: &RegConfig) -> Result<LossBreakdown> {
    reg.validate(dims)?;
    let trace = forward(params, dims)?;
    breakdown(params, dims, reg, &trace.logits)
}

/// Loss and its gradient from a single forward pass.
///
/// The ReLU masks come from the stored pre-activations, with `σ'(0) = 0`.
pub fn loss_and_gradient(
    params: &DufmParams,
    dims: &DufmDims,
    reg: &RegConfig,
) -> Result<(LossBreakdown, DufmParams, ForwardTrace)> {
    reg.validate(dims)?;
    let trace = forward(params, dims)?;
    let loss = breakdown(params, dims, reg, &trace.logits)?;
    let layers = dims.layers();
    let y = label_matrix(dims);
    let residual = trace.logits.sub(&y)?.scale(1.0 / dims.samples() as f64);

    let mut grad_w: Vec<DenseMatrix> = Vec::with_capacity(layers);
    let mut last = residual.matmul_t(&trace.a[layers - 1])?;
    last.axpy(reg.lambda_w[layers - 1], &params.w[layers - 1])?;
    grad_w.push(last);

    // gradient w.r.t. H_{l+1} in 0-based storage index l
    let mut g = params.w[layers - 1].t_matmul(&residual)?.hadamard(&relu_mask(&trace.h[layers - 1]))?;
    for l in (1..layers - 1).rev() {
        let mut gw = g.matmul_t(&trace.a[l])?;
        gw.axpy(reg.lambda_w[l], &params.w[l])?;
        grad_w.push(gw);
        g = params.w[l].t_matmul(&g)?.hadamard(&relu_mask(&trace.h[l]))?;
    }
    let mut gw1 = g.matmul_t(&params.h1)?;
    gw1.axpy(reg.lambda_w[0], &params.w[0])?;
    grad_w.push(gw1);
    grad_w.reverse();

    let mut gh1 = params.w[0].t_matmul(&g)?;
    gh1.axpy(reg.lambda_h1, &params.h1)?;
    Ok((loss, DufmParams { h1: gh1, w: grad_w }, trace))
}

pub fn gradient(params: &DufmParams, dims: &DufmDims, reg: &RegConfig) -> Result<DufmParams> {
    loss_and_gradient(params, dims, reg).map(|(_, g, _)| g)
}

/// On-disk parameter document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub dims: DufmDims,
    pub seed: Option<u64>,
    pub matrices: DufmParams,
}
