use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::library::CandidateLibrary;

/// Columns per evaluation chunk.
const CHUNK: usize = 1024;
/// Fixed number of accumulation segments, so sums are grouped the same way
/// regardless of how many worker threads run.
const SEGMENTS: usize = 16;

/// Sufficient statistics of a least-squares problem Θ (p × h), Y (r × h).
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    /// ΘΘᵀ
    pub gram: DMatrix<f64>,
    /// YΘᵀ
    pub cross: DMatrix<f64>,
    /// Σ_n y_n² per target row.
    pub target_sq: DVector<f64>,
    pub row_min: Vec<f64>,
    pub row_max: Vec<f64>,
    pub samples: usize,
}

impl GramStats {
    fn zeros(p: usize, r: usize) -> Self {
        GramStats {
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(r, p),
            target_sq: DVector::zeros(r),
            row_min: vec![f64::INFINITY; p],
            row_max: vec![f64::NEG_INFINITY; p],
            samples: 0,
        }
    }

    pub fn terms(&self) -> usize {
        self.gram.nrows()
    }

    pub fn targets(&self) -> usize {
        self.cross.nrows()
    }

    fn add_chunk(&mut self, theta: &DMatrix<f64>, y: &DMatrix<f64>) {
        self.gram.gemm(1.0, theta, &theta.transpose(), 1.0);
        self.cross.gemm(1.0, y, &theta.transpose(), 1.0);
        for r in 0..y.nrows() {
            self.target_sq[r] += y.row(r).iter().map(|v| v * v).sum::<f64>();
        }
        for (j, row) in theta.row_iter().enumerate() {
            for &v in row.iter() {
                self.row_min[j] = self.row_min[j].min(v);
                self.row_max[j] = self.row_max[j].max(v);
            }
        }
        self.samples += theta.ncols();
    }

    /// Adds the statistics of a disjoint block of samples.
    pub fn merge(&mut self, other: &GramStats) -> Result<()> {
        if other.terms() != self.terms() || other.targets() != self.targets() {
            return Err(Error::mismatch("statistics shape", self.terms(), other.terms()));
        }
        self.gram += &other.gram;
        self.cross += &other.cross;
        self.target_sq += &other.target_sq;
        for j in 0..self.terms() {
            self.row_min[j] = self.row_min[j].min(other.row_min[j]);
            self.row_max[j] = self.row_max[j].max(other.row_max[j]);
        }
        self.samples += other.samples;
        Ok(())
    }

    /// Accumulates over `h` columns produced chunk by chunk by `block`.
    pub fn accumulate<F>(p: usize, r: usize, h: usize, block: F) -> Result<Self>
    where
        F: Fn(Range<usize>) -> Result<(DMatrix<f64>, DMatrix<f64>)> + Sync,
    {
        if h == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let per = h.div_ceil(SEGMENTS);
        let parts: Vec<Result<GramStats>> = (0..SEGMENTS)
            .into_par_iter()
            .map(|s| {
                let mut acc = GramStats::zeros(p, r);
                let end = ((s + 1) * per).min(h);
                let mut start = s * per;
                while start < end {
                    let stop = (start + CHUNK).min(end);
                    let (theta, y) = block(start..stop)?;
                    if theta.nrows() != p
                        || y.nrows() != r
                        || theta.ncols() != stop - start
                        || y.ncols() != theta.ncols()
                    {
                        return Err(Error::mismatch("statistics block", p, theta.nrows()));
                    }
                    acc.add_chunk(&theta, &y);
                    start = stop;
                }
                Ok(acc)
            })
            .collect();
        let mut total = GramStats::zeros(p, r);
        for part in parts {
            total.merge(&part?)?;
        }
        Ok(total)
    }

    pub fn from_matrices(theta: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Self> {
        if theta.ncols() != targets.ncols() {
            return Err(Error::mismatch("snapshot columns", theta.ncols(), targets.ncols()));
        }
        Self::accumulate(theta.nrows(), targets.nrows(), theta.ncols(), |cols| {
            Ok((
                theta.columns(cols.start, cols.len()).into_owned(),
                targets.columns(cols.start, cols.len()).into_owned(),
            ))
        })
    }

    /// Statistics of Θ(X, Υ) against `targets`, evaluating the library in
    /// chunks so Θ is never held in full.
    pub fn from_library(
        lib: &CandidateLibrary,
        x: &DMatrix<f64>,
        u: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<Self> {
        if targets.ncols() != x.ncols() {
            return Err(Error::mismatch("target columns", x.ncols(), targets.ncols()));
        }
        Self::accumulate(lib.len(), targets.nrows(), x.ncols(), |cols| {
            let theta = lib.evaluate_batch(
                &x.columns(cols.start, cols.len()).into_owned(),
                &u.columns(cols.start, cols.len()).into_owned(),
            )?;
            Ok((theta, targets.columns(cols.start, cols.len()).into_owned()))
        })
    }
}

/// Relative RMS below which a non-constant term counts as degenerate.
pub const DEGENERATE_RMS: f64 = 1e-9;
/// Relative RMS below which a target row is treated as numerically zero.
pub const ZERO_TARGET_RMS: f64 = 1e-10;

/// Normalized least-squares problem:
/// `A = D G D / h`, `b = T C D / h` with `D = diag(scales)` and `T = diag(1/target_scales)`.
#[derive(Debug, Clone)]
pub struct NormalizedProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Multipliers applied to each Θ row; a coefficient fitted on the
    /// normalized row maps back as `ξ = ξ̃ · scale`.
    pub scales: Vec<f64>,
    /// RMS of each target row (1 when the row is zero).
    pub target_scales: Vec<f64>,
    /// Mean of ỹ² per row (1 unless the row is zero).
    pub target_mean_sq: Vec<f64>,
    /// Terms excluded from every fit because their RMS vanishes.
    pub degenerate: Vec<bool>,
    /// Target rows below the numerical noise floor of the problem.
    pub zero_targets: Vec<bool>,
    pub samples: usize,
}

impl NormalizedProblem {
    /// Indices of the terms available to the optimizers.
    pub fn free_terms(&self) -> Vec<usize> {
        (0..self.degenerate.len()).filter(|&j| !self.degenerate[j]).collect()
    }
}

/// Scales every Θ row to unit RMS (constant rows keep scale 1) and every
/// target row to unit RMS.
pub fn normalize(stats: &GramStats, normalize_columns: bool) -> NormalizedProblem {
    let p = stats.terms();
    let r = stats.targets();
    let h = stats.samples as f64;
    let rms: Vec<f64> = (0..p).map(|j| (stats.gram[(j, j)] / h).sqrt()).collect();
    let max_rms = rms.iter().cloned().fold(0.0, f64::max);
    let mut scales = vec![1.0; p];
    let mut degenerate = vec![false; p];
    for j in 0..p {
        let constant = stats.row_min[j] == stats.row_max[j];
        if rms[j] == 0.0 || rms[j] <= DEGENERATE_RMS * max_rms {
            degenerate[j] = true;
            log::warn!("term {j} has vanishing RMS ({:e}); it is left out of the fit", rms[j]);
        } else if normalize_columns && !constant {
            scales[j] = 1.0 / rms[j];
        }
    }
    if stats.samples < p {
        log::warn!("fewer samples ({}) than library terms ({p})", stats.samples);
    }
    let t_rms: Vec<f64> = (0..r).map(|i| (stats.target_sq[i] / h).sqrt()).collect();
    let t_max = t_rms.iter().cloned().fold(0.0, f64::max);
    let zero_targets: Vec<bool> = t_rms
        .iter()
        .map(|&v| v == 0.0 || v <= ZERO_TARGET_RMS * t_max)
        .collect();
    let target_scales: Vec<f64> = (0..r).map(|i| if zero_targets[i] { 1.0 } else { t_rms[i] }).collect();
    let a = DMatrix::from_fn(p, p, |i, j| stats.gram[(i, j)] * scales[i] * scales[j] / h);
    let b = DMatrix::from_fn(r, p, |i, j| stats.cross[(i, j)] * scales[j] / (target_scales[i] * h));
    let target_mean_sq = (0..r)
        .map(|i| {
            if zero_targets[i] {
                0.0
            } else {
                stats.target_sq[i] / (h * target_scales[i].powi(2))
            }
        })
        .collect();
    NormalizedProblem {
        a,
        b,
        scales,
        target_scales,
        target_mean_sq,
        degenerate,
        zero_targets,
        samples: stats.samples,
    }
}
