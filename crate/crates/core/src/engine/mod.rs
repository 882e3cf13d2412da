//! Identified models: state-derivative dynamics and output mappings, with
//! fitting, prediction, persistence, rollout and evaluation.

mod evaluate;
mod rollout;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::library::{CandidateLibrary, LibraryDims, TermDescriptor};
use crate::regression::{self, FitResult, GramStats, OptimizerConfig, WeightMatrix};
use crate::transforms::{InputVector, SnapshotSet, StateVector};

pub use evaluate::{
    comparison_torque, comparison_torque_series, evaluate, mean_absolute_error, ChannelReport, EvaluationOptions,
    EvaluationReport, EvaluationSeries,
};
pub use rollout::{rollout, rollout_dataset, Rollout, RolloutMode, DIVERGENCE_BOUND};

pub const SCHEMA_VERSION: u32 = 1;

/// Rows of the output matrix `Y` assembled from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputChannel {
    #[serde(rename = "T_e")]
    Torque,
    #[serde(rename = "F_x")]
    UmpX,
    #[serde(rename = "F_y")]
    UmpY,
}

impl OutputChannel {
    pub fn row(&self) -> usize {
        match self {
            OutputChannel::Torque => 0,
            OutputChannel::UmpX => 1,
            OutputChannel::UmpY => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OutputChannel::Torque => "T_e",
            OutputChannel::UmpX => "F_x",
            OutputChannel::UmpY => "F_y",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            OutputChannel::Torque => "N*m",
            _ => "N",
        }
    }
}

/// Target family of a mapping fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingTarget {
    Torque,
    Ump,
}

impl MappingTarget {
    pub fn channels(&self) -> Vec<OutputChannel> {
        match self {
            MappingTarget::Torque => vec![OutputChannel::Torque],
            MappingTarget::Ump => vec![OutputChannel::UmpX, OutputChannel::UmpY],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub optimizer: OptimizerConfig,
    /// SHA-256 of the training snapshots.
    pub training_digest: String,
    #[serde(default)]
    pub library_id: Option<u8>,
    /// Terms left out of the fit because they vanish on the training data.
    #[serde(default)]
    pub degenerate_terms: Vec<usize>,
}

/// Library, coefficients and bookkeeping shared by both model kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCore {
    pub library: CandidateLibrary,
    pub weights: WeightMatrix,
    pub scales: Vec<f64>,
    pub target_scales: Vec<f64>,
    pub provenance: Provenance,
}

impl ModelCore {
    fn from_fit(library: CandidateLibrary, fit: FitResult, provenance: Provenance) -> Self {
        ModelCore {
            library,
            weights: fit.weights,
            scales: fit.scales,
            target_scales: fit.target_scales,
            provenance,
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.weights.active_counts()
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.library.dims().variables();
        Workspace {
            xu: vec![0.0; n],
            scratch: vec![0.0; 2 * n],
            theta: vec![0.0; self.library.len()],
        }
    }

    /// `Ξ Θ(xu)` written to `out`, using the buffers of `ws`.
    #[inline]
    pub fn predict_into(&self, ws: &mut Workspace, out: &mut [f64]) {
        self.library.evaluate_into(&ws.xu, &mut ws.scratch, &mut ws.theta);
        let c = self.weights.coefficients();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, t) in ws.theta.iter().enumerate() {
                acc += c[(i, j)] * t;
            }
            *o = acc;
        }
    }

    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let dims = self.library.dims();
        if x.len() != dims.state {
            return Err(Error::mismatch("state dimension", dims.state, x.len()));
        }
        if u.len() != dims.input {
            return Err(Error::mismatch("input dimension", dims.input, u.len()));
        }
        let mut ws = self.workspace();
        ws.xu[..x.len()].copy_from_slice(x);
        ws.xu[x.len()..].copy_from_slice(u);
        let mut out = vec![0.0; self.rows()];
        self.predict_into(&mut ws, &mut out);
        Ok(out)
    }

    /// Predictions for every column of `X`, `Υ`.
    pub fn predict_series(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let theta = self.library.evaluate_batch(x, u)?;
        Ok(self.weights.coefficients() * theta)
    }
}

/// Reusable buffers for allocation-free prediction.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Concatenated `[x; u]` to evaluate at.
    pub xu: Vec<f64>,
    scratch: Vec<f64>,
    theta: Vec<f64>,
}

/// Identified current dynamics `dx/dt = Ξ Θ(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SindycModel {
    pub core: ModelCore,
}

/// Identified output mapping `y = Ξ_M Θ_M(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel {
    pub core: ModelCore,
    pub outputs: Vec<OutputChannel>,
}

/// SHA-256 over the bit patterns of the given matrices.
pub fn matrix_digest(parts: &[&DMatrix<f64>]) -> String {
    let mut h = Sha256::new();
    for m in parts {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn check_library(lib: &CandidateLibrary, snapshots: &SnapshotSet) -> Result<()> {
    let dims = lib.dims();
    if dims.state != snapshots.x.nrows() {
        return Err(Error::mismatch(
            "library state dimension",
            snapshots.x.nrows(),
            dims.state,
        ));
    }
    if dims.input != snapshots.inputs.nrows() {
        return Err(Error::mismatch(
            "library input dimension",
            snapshots.inputs.nrows(),
            dims.input,
        ));
    }
    Ok(())
}

/// Statistics for the dynamics regression of `dX/dt` on `Θ(X, Υ)`.
pub fn dynamics_stats(snapshots: &SnapshotSet, lib: &CandidateLibrary) -> Result<GramStats> {
    check_library(lib, snapshots)?;
    GramStats::from_library(lib, &snapshots.x, &snapshots.inputs, &snapshots.dxdt)
}

fn mapping_targets(snapshots: &SnapshotSet, target: MappingTarget) -> Result<DMatrix<f64>> {
    let y = snapshots
        .outputs
        .as_ref()
        .ok_or_else(|| Error::MissingChannel("output matrix Y".into()))?;
    let rows: Vec<usize> = target.channels().iter().map(|c| c.row()).collect();
    Ok(y.select_rows(rows.iter()))
}

/// Statistics for the mapping regression of the selected `Y` rows.
pub fn mapping_stats(snapshots: &SnapshotSet, lib: &CandidateLibrary, target: MappingTarget) -> Result<GramStats> {
    check_library(lib, snapshots)?;
    let y = mapping_targets(snapshots, target)?;
    GramStats::from_library(lib, &snapshots.x, &snapshots.inputs, &y)
}

pub fn dynamics_digest(snapshots: &SnapshotSet) -> String {
    matrix_digest(&[&snapshots.x, &snapshots.inputs, &snapshots.dxdt])
}

pub fn mapping_digest(snapshots: &SnapshotSet, target: MappingTarget) -> Result<String> {
    let y = mapping_targets(snapshots, target)?;
    Ok(matrix_digest(&[&snapshots.x, &snapshots.inputs, &y]))
}

pub fn fit_dynamics(
    snapshots: &SnapshotSet,
    lib: &CandidateLibrary,
    optimizer: &OptimizerConfig,
) -> Result<SindycModel> {
    let stats = dynamics_stats(snapshots, lib)?;
    let fit = regression::fit(&stats, optimizer)?;
    Ok(SindycModel::from_fit(
        lib.clone(),
        fit,
        optimizer,
        dynamics_digest(snapshots),
    ))
}

pub fn fit_mapping(
    snapshots: &SnapshotSet,
    lib: &CandidateLibrary,
    target: MappingTarget,
    optimizer: &OptimizerConfig,
) -> Result<MappingModel> {
    let stats = mapping_stats(snapshots, lib, target)?;
    let fit = regression::fit(&stats, optimizer)?;
    Ok(MappingModel::from_fit(
        lib.clone(),
        fit,
        target,
        optimizer,
        mapping_digest(snapshots, target)?,
    ))
}

fn provenance(fit: &FitResult, optimizer: &OptimizerConfig, digest: String) -> Provenance {
    Provenance {
        optimizer: *optimizer,
        training_digest: digest,
        library_id: None,
        degenerate_terms: fit.degenerate_terms.clone(),
    }
}

impl SindycModel {
    pub fn from_fit(library: CandidateLibrary, fit: FitResult, optimizer: &OptimizerConfig, digest: String) -> Self {
        let prov = provenance(&fit, optimizer, digest);
        SindycModel {
            core: ModelCore::from_fit(library, fit, prov),
        }
    }

    pub fn predict_derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.core.predict(x, u)
    }

    pub fn predict_motor(&self, x: &StateVector, u: &InputVector) -> Result<Vec<f64>> {
        self.core.predict(&x.as_array(), &u.as_array())
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.core.active_counts()
    }
}

impl MappingModel {
    pub fn from_fit(
        library: CandidateLibrary,
        fit: FitResult,
        target: MappingTarget,
        optimizer: &OptimizerConfig,
        digest: String,
    ) -> Self {
        let prov = provenance(&fit, optimizer, digest);
        MappingModel {
            core: ModelCore::from_fit(library, fit, prov),
            outputs: target.channels(),
        }
    }

    pub fn predict_output(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.core.predict(x, u)
    }

    pub fn predict_motor(&self, x: &StateVector, u: &InputVector) -> Result<Vec<f64>> {
        self.core.predict(&x.as_array(), &u.as_array())
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.core.active_counts()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dynamics,
    Mapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub state: usize,
    pub input: usize,
    pub rows: usize,
    pub terms: usize,
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    schema_version: u32,
    kind: ModelKind,
    dims: ModelDims,
    #[serde(default)]
    outputs: Vec<OutputChannel>,
    library: Vec<TermDescriptor>,
    coefficients: Vec<f64>,
    scales: Vec<f64>,
    target_scales: Vec<f64>,
    provenance: Provenance,
}

/// Either model kind, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Dynamics(SindycModel),
    Mapping(MappingModel),
}

impl AnyModel {
    pub fn core(&self) -> &ModelCore {
        match self {
            AnyModel::Dynamics(m) => &m.core,
            AnyModel::Mapping(m) => &m.core,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let (kind, core, outputs) = match self {
            AnyModel::Dynamics(m) => (ModelKind::Dynamics, &m.core, Vec::new()),
            AnyModel::Mapping(m) => (ModelKind::Mapping, &m.core, m.outputs.clone()),
        };
        let c = core.weights.coefficients();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("model has non-finite coefficients".into()));
        }
        let dims = core.library.dims();
        let doc = ModelDocument {
            schema_version: SCHEMA_VERSION,
            kind,
            dims: ModelDims {
                state: dims.state,
                input: dims.input,
                rows: c.nrows(),
                terms: c.ncols(),
            },
            outputs,
            library: core.library.terms().to_vec(),
            coefficients: c.transpose().as_slice().to_vec(),
            scales: core.scales.clone(),
            target_scales: core.target_scales.clone(),
            provenance: core.provenance.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Schema("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let doc: ModelDocument = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        let d = doc.dims;
        if doc.library.len() != d.terms {
            return Err(Error::Schema(format!(
                "{} library terms, dims say {}",
                doc.library.len(),
                d.terms
            )));
        }
        if doc.coefficients.len() != d.rows * d.terms {
            return Err(Error::Schema(format!(
                "{} coefficients for a {} x {} matrix",
                doc.coefficients.len(),
                d.rows,
                d.terms
            )));
        }
        if doc.scales.len() != d.terms || doc.target_scales.len() != d.rows {
            return Err(Error::Schema("scale vector lengths do not match dims".into()));
        }
        let library = crate::library::build_library(
            doc.library,
            LibraryDims {
                state: d.state,
                input: d.input,
            },
        )
        .map_err(|e| Error::Schema(e.to_string()))?;
        if library.len() != d.terms {
            return Err(Error::Schema("library contains duplicate terms".into()));
        }
        let core = ModelCore {
            library,
            weights: WeightMatrix::new(DMatrix::from_row_slice(d.rows, d.terms, &doc.coefficients)),
            scales: doc.scales,
            target_scales: doc.target_scales,
            provenance: doc.provenance,
        };
        match doc.kind {
            ModelKind::Dynamics => {
                if d.rows != d.state {
                    return Err(Error::Schema(format!(
                        "dynamics model with {} rows for {} states",
                        d.rows, d.state
                    )));
                }
                Ok(AnyModel::Dynamics(SindycModel { core }))
            }
            ModelKind::Mapping => {
                if doc.outputs.len() != d.rows || doc.outputs.is_empty() || d.rows > 2 {
                    return Err(Error::Schema("mapping output labels do not match rows".into()));
                }
                Ok(AnyModel::Mapping(MappingModel {
                    core,
                    outputs: doc.outputs,
                }))
            }
        }
    }
}

impl SindycModel {
    pub fn to_json(&self) -> Result<String> {
        AnyModel::Dynamics(self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match AnyModel::from_json(text)? {
            AnyModel::Dynamics(m) => Ok(m),
            AnyModel::Mapping(_) => Err(Error::Schema("expected a dynamics model, found a mapping".into())),
        }
    }
}

impl MappingModel {
    pub fn to_json(&self) -> Result<String> {
        AnyModel::Mapping(self.clone()).to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match AnyModel::from_json(text)? {
            AnyModel::Mapping(m) => Ok(m),
            AnyModel::Dynamics(_) => Err(Error::Schema("expected a mapping model, found dynamics".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{build_library, polynomial_terms, preset_library};

    fn single_term_model(coef: f64) -> SindycModel {
        let lib = build_library(vec![TermDescriptor::monomial(&[0])], LibraryDims { state: 1, input: 0 }).unwrap();
        SindycModel {
            core: ModelCore {
                library: lib,
                weights: WeightMatrix::new(DMatrix::from_element(1, 1, coef)),
                scales: vec![1.0],
                target_scales: vec![1.0],
                provenance: Provenance {
                    optimizer: OptimizerConfig::lasso(0.0),
                    training_digest: String::new(),
                    library_id: None,
                    degenerate_terms: vec![],
                },
            },
        }
    }

    fn zero_motor_model(lib_id: u8) -> SindycModel {
        let lib = preset_library(lib_id).unwrap();
        let p = lib.len();
        SindycModel {
            core: ModelCore {
                library: lib,
                weights: WeightMatrix::zeros(3, p),
                scales: vec![1.0; p],
                target_scales: vec![1.0; 3],
                provenance: Provenance {
                    optimizer: OptimizerConfig::stlsq(1e-3, 0.1),
                    training_digest: "abc".into(),
                    library_id: Some(lib_id),
                    degenerate_terms: vec![],
                },
            },
        }
    }

    #[test]
    fn predict_examples() {
        let m = single_term_model(1.0);
        assert_eq!(m.predict_derivative(&[5.0], &[]).unwrap(), vec![5.0]);
        let doubled = single_term_model(2.0);
        assert_eq!(doubled.predict_derivative(&[5.0], &[]).unwrap(), vec![10.0]);
        let z = zero_motor_model(1);
        assert_eq!(z.predict_derivative(&[1.0; 3], &[2.0; 11]).unwrap(), vec![0.0; 3]);
        assert!(z.predict_derivative(&[1.0; 2], &[2.0; 11]).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let lib = preset_library(1).unwrap();
        let p = lib.len();
        let coefs = DMatrix::from_fn(3, p, |i, j| {
            if (i + j) % 7 == 0 {
                (i as f64 + 1.0) / (j as f64 + 3.0)
            } else {
                0.0
            }
        });
        let mut m = zero_motor_model(1);
        m.core.weights = WeightMatrix::new(coefs);
        m.core.scales = (0..p).map(|j| 1.0 / (j as f64 + 0.1)).collect();
        let text = m.to_json().unwrap();
        let back = SindycModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        let x = [0.3, -1.2, 1e-17];
        let u = [1.0, 2.0, 0.0, 0.1, 0.2, 0.0, 0.5, 0.6, 0.0, 1.1, 250.0];
        let a = m.predict_derivative(&x, &u).unwrap();
        let b = back.predict_derivative(&x, &u).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));

        let zero = zero_motor_model(3);
        assert_eq!(SindycModel::from_json(&zero.to_json().unwrap()).unwrap(), zero);
    }

    #[test]
    fn tampered_documents_are_rejected() {
        let m = zero_motor_model(3);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["coefficients"].as_array_mut().unwrap().pop();
        assert!(matches!(AnyModel::from_json(&v.to_string()), Err(Error::Schema(_))));

        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["schema_version"] = 2.into();
        assert!(matches!(
            AnyModel::from_json(&v.to_string()),
            Err(Error::SchemaVersion { found: 2, expected: 1 })
        ));
        assert!(MappingModel::from_json(&m.to_json().unwrap()).is_err());
    }

    #[test]
    fn mapping_requires_outputs() {
        let lib = build_library(polynomial_terms(&[0], 1, true), LibraryDims { state: 1, input: 0 }).unwrap();
        let x = DMatrix::from_fn(1, 20, |_, k| k as f64);
        let snaps = SnapshotSet {
            x: x.clone(),
            x_plus: x.clone(),
            inputs: DMatrix::zeros(0, 20),
            dxdt: DMatrix::zeros(1, 20),
            outputs: None,
            dt: 1.0,
            subset_columns: vec![20],
        };
        let err = fit_mapping(&snaps, &lib, MappingTarget::Torque, &OptimizerConfig::lasso(0.0)).unwrap_err();
        assert!(matches!(err, Error::MissingChannel(_)));
    }
}
