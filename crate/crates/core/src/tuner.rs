//! Randomized hyperparameter search with Pareto selection.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, AnyModel, MappingModel, MappingTarget, SindycModel};
use crate::error::{Error, Result};
use crate::library::{preset_library, CandidateLibrary};
use crate::regression::{self, GramStats, Optimizer, OptimizerConfig, ZERO_TARGET_RMS};
use crate::transforms::SnapshotSet;

/// Validation columns are streamed through the library in chunks of this size.
const VALIDATION_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Lasso,
    Stlsq,
    Sr3,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Lasso => "lasso",
            OptimizerKind::Stlsq => "stlsq",
            OptimizerKind::Sr3 => "sr3",
        }
    }
}

/// Quantity a search fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneTarget {
    Dynamics,
    Torque,
    Ump,
}

impl TuneTarget {
    pub fn mapping(&self) -> Option<MappingTarget> {
        match self {
            TuneTarget::Dynamics => None,
            TuneTarget::Torque => Some(MappingTarget::Torque),
            TuneTarget::Ump => Some(MappingTarget::Ump),
        }
    }

    fn targets(&self, snaps: &SnapshotSet) -> Result<DMatrix<f64>> {
        match self.mapping() {
            None => Ok(snaps.dxdt.clone()),
            Some(m) => {
                let y = snaps
                    .outputs
                    .as_ref()
                    .ok_or_else(|| Error::MissingChannel("output matrix Y".into()))?;
                let rows: Vec<usize> = m.channels().iter().map(|c| c.row()).collect();
                Ok(y.select_rows(rows.iter()))
            }
        }
    }

    fn stats(&self, snaps: &SnapshotSet, lib: &CandidateLibrary) -> Result<GramStats> {
        match self.mapping() {
            None => engine::dynamics_stats(snaps, lib),
            Some(m) => engine::mapping_stats(snaps, lib, m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub low: f64,
    pub high: f64,
}

impl LogRange {
    pub const fn new(low: f64, high: f64) -> Self {
        LogRange { low, high }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.high && self.high.is_finite()) {
            return Err(Error::invalid(format!(
                "{name} range needs 0 < low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (a, b) = (self.low.log10(), self.high.log10());
        10f64.powf(a + (b - a) * rng.gen::<f64>()).clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub libraries: Vec<u8>,
    pub optimizers: Vec<OptimizerKind>,
    pub alpha: LogRange,
    pub threshold: LogRange,
    pub lambda: LogRange,
    pub nu: LogRange,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            libraries: vec![1, 2, 3, 4, 5],
            optimizers: vec![OptimizerKind::Lasso, OptimizerKind::Stlsq, OptimizerKind::Sr3],
            alpha: LogRange::new(1e-10, 1.0),
            threshold: LogRange::new(1e-6, 1.0),
            lambda: LogRange::new(1e-6, 1e2),
            nu: LogRange::new(1e-12, 1.0),
            trials: 100,
            seed: 2024,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.libraries.is_empty() || self.optimizers.is_empty() {
            return Err(Error::invalid(
                "search space needs at least one library and one optimizer",
            ));
        }
        if let Some(id) = self.libraries.iter().find(|id| !(1..=5).contains(*id)) {
            return Err(Error::invalid(format!("unknown library preset {id}")));
        }
        self.alpha.check("alpha")?;
        self.threshold.check("threshold")?;
        self.lambda.check("lambda")?;
        self.nu.check("nu")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub index: usize,
    pub library: u8,
    pub optimizer: OptimizerConfig,
}

/// Draws trial `index`; each index has its own stream of the master seed.
pub fn sample_trial(space: &SearchSpace, index: usize) -> Result<TrialConfig> {
    space.validate()?;
    if index >= space.trials {
        return Err(Error::invalid(format!("trial {index} out of {} trials", space.trials)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    rng.set_stream(index as u64);
    let library = space.libraries[rng.gen_range(0..space.libraries.len())];
    let kind = space.optimizers[rng.gen_range(0..space.optimizers.len())];
    let optimizer = match kind {
        OptimizerKind::Lasso => Optimizer::Lasso {
            alpha: space.alpha.sample(&mut rng),
        },
        OptimizerKind::Stlsq => {
            let alpha = space.alpha.sample(&mut rng);
            Optimizer::Stlsq {
                alpha,
                threshold: space.threshold.sample(&mut rng),
            }
        }
        OptimizerKind::Sr3 => {
            let lambda = space.lambda.sample(&mut rng);
            Optimizer::Sr3 {
                lambda,
                nu: space.nu.sample(&mut rng),
            }
        }
    };
    Ok(TrialConfig {
        index,
        library,
        optimizer: OptimizerConfig::new(optimizer),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config: TrialConfig,
    /// Validation mean squared error, averaged over target rows.
    pub mse: f64,
    /// Validation MSE of each row divided by that row's mean square, averaged.
    pub normalized_mse: f64,
    pub row_mse: Vec<f64>,
    pub terms: usize,
    pub converged: bool,
    pub wall_time: f64,
    pub error: Option<String>,
    pub model: Option<AnyModel>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    fn failure(config: TrialConfig, err: &Error, wall_time: f64) -> Self {
        TrialResult {
            config,
            mse: f64::INFINITY,
            normalized_mse: f64::INFINITY,
            row_mse: Vec::new(),
            terms: 0,
            converged: false,
            wall_time,
            error: Some(err.to_string()),
            model: None,
        }
    }
}

/// Held-out part of a training snapshot set: the last 20% of its subsets,
/// or the last 20% of columns when there is only one subset.
pub fn validation_split(snaps: &SnapshotSet) -> Result<(SnapshotSet, SnapshotSet)> {
    let n = snaps.columns();
    let subsets = snaps.subset_columns.len();
    let cut = if subsets > 1 {
        let held = ((subsets as f64 * 0.2).round() as usize).clamp(1, subsets - 1);
        snaps.subset_columns[..subsets - held].iter().sum()
    } else {
        n - (n / 5).max(1)
    };
    if cut == 0 || cut >= n {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut train = snaps.select_columns(0..cut)?;
    let mut val = snaps.select_columns(cut..n)?;
    if subsets > 1 {
        let mut acc = 0;
        let split = snaps.subset_columns.iter().take_while(|c| {
            acc += **c;
            acc <= cut
        });
        train.subset_columns = split.copied().collect();
        val.subset_columns = snaps.subset_columns[train.subset_columns.len()..].to_vec();
    }
    Ok((train, val))
}

fn residual_mse(model: &AnyModel, val: &SnapshotSet, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    let core = model.core();
    let n = val.columns();
    let mut sse = vec![0.0; targets.nrows()];
    let mut start = 0;
    while start < n {
        let len = VALIDATION_CHUNK.min(n - start);
        let pred = core.predict_series(
            &val.x.columns(start, len).into_owned(),
            &val.inputs.columns(start, len).into_owned(),
        )?;
        for (r, acc) in sse.iter_mut().enumerate() {
            for k in 0..len {
                let e = pred[(r, k)] - targets[(r, start + k)];
                *acc += e * e;
            }
        }
        start += len;
    }
    Ok(sse.into_iter().map(|s| s / n.max(1) as f64).collect())
}

fn normalized(row_mse: &[f64], targets: &DMatrix<f64>) -> f64 {
    let h = targets.ncols().max(1) as f64;
    let ms: Vec<f64> = targets
        .row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() / h)
        .collect();
    let max = ms.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return row_mse.iter().sum::<f64>() / row_mse.len().max(1) as f64;
    }
    // numerically zero rows are measured against the largest row instead
    let floor = ZERO_TARGET_RMS * ZERO_TARGET_RMS * max;
    row_mse
        .iter()
        .zip(&ms)
        .map(|(e, m)| if *m <= floor { e / max } else { e / m })
        .sum::<f64>()
        / row_mse.len().max(1) as f64
}

fn build_model(
    target: TuneTarget,
    lib: &CandidateLibrary,
    fit: regression::FitResult,
    config: &TrialConfig,
    digest: &str,
) -> AnyModel {
    let mut model = match target.mapping() {
        None => AnyModel::Dynamics(SindycModel::from_fit(
            lib.clone(),
            fit,
            &config.optimizer,
            digest.to_string(),
        )),
        Some(m) => AnyModel::Mapping(MappingModel::from_fit(
            lib.clone(),
            fit,
            m,
            &config.optimizer,
            digest.to_string(),
        )),
    };
    let core = match &mut model {
        AnyModel::Dynamics(m) => &mut m.core,
        AnyModel::Mapping(m) => &mut m.core,
    };
    core.provenance.library_id = Some(config.library);
    model
}

struct Prepared<'a> {
    target: TuneTarget,
    lib: &'a CandidateLibrary,
    stats: &'a GramStats,
    val: &'a SnapshotSet,
    val_targets: &'a DMatrix<f64>,
    digest: &'a str,
}

fn evaluate_trial(config: TrialConfig, p: &Prepared) -> TrialResult {
    let started = Instant::now();
    let run = || -> Result<TrialResult> {
        let fit = regression::fit(p.stats, &config.optimizer)?;
        let converged = fit.converged();
        let terms = fit.weights.total_active();
        let model = build_model(p.target, p.lib, fit, &config, p.digest);
        let row_mse = residual_mse(&model, p.val, p.val_targets)?;
        if row_mse.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                quantity: "validation residual".into(),
                time: 0.0,
            });
        }
        Ok(TrialResult {
            config,
            mse: row_mse.iter().sum::<f64>() / row_mse.len().max(1) as f64,
            normalized_mse: normalized(&row_mse, p.val_targets),
            row_mse,
            terms,
            converged,
            wall_time: 0.0,
            error: None,
            model: Some(model),
        })
    };
    let mut result = run().unwrap_or_else(|e| TrialResult::failure(config, &e, 0.0));
    result.wall_time = started.elapsed().as_secs_f64();
    result
}

fn digest_for(target: TuneTarget, snaps: &SnapshotSet) -> Result<String> {
    match target.mapping() {
        None => Ok(engine::dynamics_digest(snaps)),
        Some(m) => engine::mapping_digest(snaps, m),
    }
}

/// Fits one configuration on `train` and scores it on `validation`. Fitting
/// failures are recorded in the result.
pub fn run_trial(
    config: &TrialConfig,
    target: TuneTarget,
    train: &SnapshotSet,
    validation: &SnapshotSet,
) -> Result<TrialResult> {
    let lib = preset_library(config.library)?;
    run_trial_with_library(config, &lib, target, train, validation)
}

/// Like [`run_trial`] with an explicit library in place of the preset.
pub fn run_trial_with_library(
    config: &TrialConfig,
    lib: &CandidateLibrary,
    target: TuneTarget,
    train: &SnapshotSet,
    validation: &SnapshotSet,
) -> Result<TrialResult> {
    let stats = target.stats(train, lib)?;
    let val_targets = target.targets(validation)?;
    let digest = digest_for(target, train)?;
    let p = Prepared {
        target,
        lib,
        stats: &stats,
        val: validation,
        val_targets: &val_targets,
        digest: &digest,
    };
    Ok(evaluate_trial(*config, &p))
}

/// Runs every trial of `space` on a train/validation split of `snaps`.
/// Results are ordered by trial index whatever order they ran in.
pub fn run_search(space: &SearchSpace, target: TuneTarget, snaps: &SnapshotSet) -> Result<Vec<TrialResult>> {
    let (train, val) = validation_split(snaps)?;
    run_search_split(space, target, &train, &val)
}

pub fn run_search_split(
    space: &SearchSpace,
    target: TuneTarget,
    train: &SnapshotSet,
    val: &SnapshotSet,
) -> Result<Vec<TrialResult>> {
    space.validate()?;
    let configs = (0..space.trials)
        .map(|i| sample_trial(space, i))
        .collect::<Result<Vec<_>>>()?;
    let val_targets = target.targets(val)?;
    let digest = digest_for(target, train)?;
    let mut libraries: BTreeMap<u8, (CandidateLibrary, GramStats)> = BTreeMap::new();
    for c in &configs {
        if let std::collections::btree_map::Entry::Vacant(slot) = libraries.entry(c.library) {
            let lib = preset_library(c.library)?;
            let stats = target.stats(train, &lib)?;
            log::info!("library {} ({} terms) statistics ready", c.library, lib.len());
            slot.insert((lib, stats));
        }
    }
    Ok(configs
        .par_iter()
        .map(|c| {
            let (lib, stats) = &libraries[&c.library];
            let p = Prepared {
                target,
                lib,
                stats,
                val,
                val_targets: &val_targets,
                digest: &digest,
            };
            evaluate_trial(*c, &p)
        })
        .collect())
}

/// Trials not dominated in (terms, normalized MSE). Failed trials never
/// enter the front; of trials equal on both axes only the lowest index is
/// kept. The front is sorted by term count.
pub fn pareto_front(results: &[TrialResult]) -> Vec<TrialResult> {
    let ok: Vec<&TrialResult> = results
        .iter()
        .filter(|r| !r.failed() && r.normalized_mse.is_finite())
        .collect();
    let dominates = |a: &TrialResult, b: &TrialResult| {
        a.terms <= b.terms
            && a.normalized_mse <= b.normalized_mse
            && (a.terms < b.terms || a.normalized_mse < b.normalized_mse)
    };
    let mut front: Vec<TrialResult> = ok
        .iter()
        .filter(|r| {
            !ok.iter().any(|o| {
                dominates(o, r)
                    || (o.terms == r.terms && o.normalized_mse == r.normalized_mse && o.config.index < r.config.index)
            })
        })
        .map(|r| (*r).clone())
        .collect();
    front.sort_by(|a, b| {
        a.terms
            .cmp(&b.terms)
            .then(a.normalized_mse.total_cmp(&b.normalized_mse))
            .then(a.config.index.cmp(&b.config.index))
    });
    front
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionPolicy {
    MinError,
    MaxSparsity,
    Knee,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-error" => Ok(SelectionPolicy::MinError),
            "max-sparsity" => Ok(SelectionPolicy::MaxSparsity),
            "knee" => Ok(SelectionPolicy::Knee),
            _ => Err(Error::invalid(format!("unknown selection policy {s:?}"))),
        }
    }
}

fn log_error(r: &TrialResult) -> f64 {
    r.normalized_mse.max(f64::MIN_POSITIVE).log10()
}

/// Picks one member of a front. The knee is the point farthest from the line
/// through the two extremes, with both axes scaled to the extremes' span;
/// without an interior point off that line the lower-error extreme is taken.
pub fn select_trial(front: &[TrialResult], policy: SelectionPolicy) -> Result<&TrialResult> {
    if front.is_empty() {
        return Err(Error::EmptyFront);
    }
    let by_error = |a: &&TrialResult, b: &&TrialResult| {
        a.normalized_mse
            .total_cmp(&b.normalized_mse)
            .then(a.terms.cmp(&b.terms))
            .then(a.config.index.cmp(&b.config.index))
    };
    let by_terms = |a: &&TrialResult, b: &&TrialResult| {
        a.terms
            .cmp(&b.terms)
            .then(a.normalized_mse.total_cmp(&b.normalized_mse))
            .then(a.config.index.cmp(&b.config.index))
    };
    let min_error = front.iter().min_by(by_error).expect("non-empty");
    let sparse = front.iter().min_by(by_terms).expect("non-empty");
    match policy {
        SelectionPolicy::MinError => Ok(min_error),
        SelectionPolicy::MaxSparsity => Ok(sparse),
        SelectionPolicy::Knee => {
            let (x0, y0) = (log_error(sparse), sparse.terms as f64);
            let (x1, y1) = (log_error(min_error), min_error.terms as f64);
            let sx = (x1 - x0).abs();
            let sy = (y1 - y0).abs();
            if sx == 0.0 || sy == 0.0 {
                return Ok(min_error);
            }
            let (dx, dy) = ((x1 - x0) / sx, (y1 - y0) / sy);
            let norm = (dx * dx + dy * dy).sqrt();
            let mut best: Option<(&TrialResult, f64)> = None;
            for r in front {
                let px = (log_error(r) - x0) / sx;
                let py = (r.terms as f64 - y0) / sy;
                let d = (dx * py - dy * px).abs() / norm;
                if d > 1e-12 && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((r, d));
                }
            }
            Ok(best.map(|(r, _)| r).unwrap_or(min_error))
        }
    }
}

pub const TRACE_HEADER: [&str; 14] = [
    "trial[-]",
    "library[-]",
    "optimizer[-]",
    "alpha[-]",
    "threshold[-]",
    "lambda[-]",
    "nu[-]",
    "mse[target^2]",
    "normalized_mse[-]",
    "terms[-]",
    "converged[-]",
    "failed[-]",
    "wall_time[s]",
    "error[-]",
];

/// One search-trace row; parameters the optimizer does not use are empty.
pub fn trace_record(r: &TrialResult) -> Vec<String> {
    let f = |v: f64| format!("{v:?}");
    let (mut alpha, mut threshold, mut lambda, mut nu) = (String::new(), String::new(), String::new(), String::new());
    match r.config.optimizer.optimizer {
        Optimizer::Lasso { alpha: a } => alpha = f(a),
        Optimizer::Stlsq { alpha: a, threshold: t } => {
            alpha = f(a);
            threshold = f(t);
        }
        Optimizer::Sr3 { lambda: l, nu: n } => {
            lambda = f(l);
            nu = f(n);
        }
    }
    vec![
        r.config.index.to_string(),
        r.config.library.to_string(),
        r.config.optimizer.optimizer.name().to_string(),
        alpha,
        threshold,
        lambda,
        nu,
        f(r.mse),
        f(r.normalized_mse),
        r.terms.to_string(),
        r.converged.to_string(),
        r.failed().to_string(),
        f(r.wall_time),
        r.error.clone().unwrap_or_default(),
    ]
}
