//! Sparse regression of targets onto a candidate library: LASSO, STLSQ and SR3.
//!
//! Every solver works on the normalized sufficient statistics of the problem,
//! so the cost after accumulation depends on the library size only.

mod linalg;
mod stats;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use linalg::{solve_shifted, SpdFactor};
pub use stats::{normalize, GramStats, NormalizedProblem, DEGENERATE_RMS, ZERO_TARGET_RMS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Lasso { alpha: f64 },
    Stlsq { alpha: f64, threshold: f64 },
    Sr3 { lambda: f64, nu: f64 },
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Lasso { .. } => "lasso",
            Optimizer::Stlsq { .. } => "stlsq",
            Optimizer::Sr3 { .. } => "sr3",
        }
    }
}

fn default_max_iterations() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub optimizer: Optimizer,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

impl OptimizerConfig {
    pub fn new(optimizer: Optimizer) -> Self {
        OptimizerConfig {
            optimizer,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            normalize: true,
        }
    }

    pub fn lasso(alpha: f64) -> Self {
        Self::new(Optimizer::Lasso { alpha })
    }

    pub fn stlsq(alpha: f64, threshold: f64) -> Self {
        Self::new(Optimizer::Stlsq { alpha, threshold })
    }

    pub fn sr3(lambda: f64, nu: f64) -> Self {
        Self::new(Optimizer::Sr3 { lambda, nu })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let good = match self.optimizer {
            Optimizer::Lasso { alpha } => ok(alpha),
            Optimizer::Stlsq { alpha, threshold } => ok(alpha) && ok(threshold) && threshold > 0.0,
            Optimizer::Sr3 { lambda, nu } => ok(lambda) && ok(nu) && nu > 0.0,
        };
        if !good {
            return Err(Error::invalid(format!(
                "invalid optimizer parameters {:?}",
                self.optimizer
            )));
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::invalid("iteration cap and tolerance must be positive"));
        }
        Ok(())
    }
}

/// Dense coefficients; the sparsity pattern is the set of exact nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    coefficients: DMatrix<f64>,
}

impl WeightMatrix {
    pub fn new(coefficients: DMatrix<f64>) -> Self {
        WeightMatrix { coefficients }
    }

    pub fn zeros(rows: usize, terms: usize) -> Self {
        WeightMatrix::new(DMatrix::zeros(rows, terms))
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn rows(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn terms(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn mask(&self) -> DMatrix<bool> {
        self.coefficients.map(|c| c != 0.0)
    }

    pub fn active_counts(&self) -> Vec<usize> {
        active_term_count(&self.coefficients)
    }

    pub fn total_active(&self) -> usize {
        self.active_counts().iter().sum()
    }
}

/// Exact nonzero count of each row.
pub fn active_term_count(xi: &DMatrix<f64>) -> Vec<usize> {
    xi.row_iter().map(|r| r.iter().filter(|&&c| c != 0.0).count()).collect()
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    /// STLSQ removed every term.
    pub empty_support: bool,
    /// The target row was below the noise floor and fixed at zero.
    pub zero_target: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficients for the original (un-normalized) library and targets.
    pub weights: WeightMatrix,
    /// Coefficients in normalized coordinates.
    pub normalized: DMatrix<f64>,
    pub scales: Vec<f64>,
    pub target_scales: Vec<f64>,
    pub rows: Vec<RowDiagnostics>,
    pub degenerate_terms: Vec<usize>,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

pub fn fit(stats: &GramStats, cfg: &OptimizerConfig) -> Result<FitResult> {
    cfg.validate()?;
    if stats
        .gram
        .iter()
        .chain(stats.cross.iter())
        .chain(stats.target_sq.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("regression statistics".into()));
    }
    let np = normalize(stats, cfg.normalize);
    fit_normalized(&np, cfg)
}

pub fn fit_lasso(stats: &GramStats, alpha: f64) -> Result<FitResult> {
    fit(stats, &OptimizerConfig::lasso(alpha))
}

pub fn fit_stlsq(stats: &GramStats, alpha: f64, threshold: f64) -> Result<FitResult> {
    fit(stats, &OptimizerConfig::stlsq(alpha, threshold))
}

pub fn fit_sr3(stats: &GramStats, lambda: f64, nu: f64) -> Result<FitResult> {
    fit(stats, &OptimizerConfig::sr3(lambda, nu))
}

/// Solves every target row of an already normalized problem.
pub fn fit_normalized(np: &NormalizedProblem, cfg: &OptimizerConfig) -> Result<FitResult> {
    cfg.validate()?;
    let p = np.a.nrows();
    let r = np.b.nrows();
    let free = np.free_terms();
    let a = DMatrix::from_fn(free.len(), free.len(), |i, j| np.a[(free[i], free[j])]);
    let mut xi = DMatrix::zeros(r, p);
    let mut rows = Vec::with_capacity(r);
    let sr3_factor = match cfg.optimizer {
        Optimizer::Sr3 { nu, .. } if !free.is_empty() => {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += nu;
            }
            Some(SpdFactor::new(m))
        }
        _ => None,
    };
    for i in 0..r {
        if np.zero_targets[i] || free.is_empty() {
            rows.push(RowDiagnostics {
                converged: true,
                iterations: 0,
                empty_support: free.is_empty(),
                zero_target: np.zero_targets[i],
            });
            continue;
        }
        let b = DVector::from_fn(free.len(), |j, _| np.b[(i, free[j])]);
        let (x, diag) = match cfg.optimizer {
            Optimizer::Lasso { alpha } => lasso_row(&a, &b, alpha, cfg),
            Optimizer::Stlsq { alpha, threshold } => stlsq_row(&a, &b, alpha, threshold, cfg),
            Optimizer::Sr3 { lambda, nu } => sr3_row(sr3_factor.as_ref().expect("factor"), &b, lambda, nu, cfg),
        };
        for (j, &t) in free.iter().enumerate() {
            xi[(i, t)] = x[j];
        }
        rows.push(diag);
    }
    let original = DMatrix::from_fn(r, p, |i, j| xi[(i, j)] * np.scales[j] * np.target_scales[i]);
    Ok(FitResult {
        weights: WeightMatrix::new(original),
        normalized: xi,
        scales: np.scales.clone(),
        target_scales: np.target_scales.clone(),
        rows,
        degenerate_terms: (0..p).filter(|&j| np.degenerate[j]).collect(),
    })
}

/// Cyclic coordinate descent on ½ξᵀAξ − bᵀξ + α‖ξ‖₁, keeping the
/// gradient residual `q = b − Aξ` up to date.
fn lasso_row(a: &DMatrix<f64>, b: &DVector<f64>, alpha: f64, cfg: &OptimizerConfig) -> (DVector<f64>, RowDiagnostics) {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let mut q = b.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..n {
            let ajj = a[(j, j)];
            if ajj <= 0.0 {
                continue;
            }
            let rho = q[j] + ajj * x[j];
            let new = soft_threshold(rho, alpha) / ajj;
            let delta = new - x[j];
            if delta != 0.0 {
                x[j] = new;
                q.axpy(-delta, &a.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    (
        x,
        RowDiagnostics {
            converged,
            iterations,
            empty_support: false,
            zero_target: false,
        },
    )
}

fn stlsq_row(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    alpha: f64,
    threshold: f64,
    cfg: &OptimizerConfig,
) -> (DVector<f64>, RowDiagnostics) {
    let n = b.len();
    let mut support: Vec<usize> = (0..n).collect();
    let mut x = DVector::zeros(n);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (sa, sb) = linalg::restrict(a, b, &support);
        let sol = solve_shifted(&sa, alpha, &sb);
        let kept: Vec<usize> = (0..support.len()).filter(|&k| sol[k].abs() >= threshold).collect();
        x.fill(0.0);
        if kept.len() == support.len() {
            for (k, &j) in support.iter().enumerate() {
                x[j] = sol[k];
            }
            converged = true;
            break;
        }
        support = kept.iter().map(|&k| support[k]).collect();
        if support.is_empty() {
            converged = true;
            break;
        }
    }
    let empty = support.is_empty();
    (
        x,
        RowDiagnostics {
            converged,
            iterations,
            empty_support: empty,
            zero_target: false,
        },
    )
}

/// Alternates `(A + νI)ξ = b + νw` with `w = S(ξ, λ/ν)`.
fn sr3_row(
    factor: &SpdFactor,
    b: &DVector<f64>,
    lambda: f64,
    nu: f64,
    cfg: &OptimizerConfig,
) -> (DVector<f64>, RowDiagnostics) {
    let n = b.len();
    let kappa = lambda / nu;
    let mut w = DVector::zeros(n);
    let mut xi = factor.solve(b);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let w_new = xi.map(|v| soft_threshold(v, kappa));
        let change = (&w_new - &w).amax();
        w = w_new;
        if change < cfg.tolerance && iterations > 1 {
            converged = true;
            break;
        }
        xi = factor.solve(&(b + &w * nu));
    }
    let out = DVector::from_fn(n, |j, _| if w[j] != 0.0 { xi[j] } else { 0.0 });
    (
        out,
        RowDiagnostics {
            converged,
            iterations,
            empty_support: false,
            zero_target: false,
        },
    )
}
