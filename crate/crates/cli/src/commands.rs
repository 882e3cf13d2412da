use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sindyc::engine::{
    evaluate, fit_dynamics, fit_mapping, AnyModel, EvaluationOptions, EvaluationReport, EvaluationSeries, MappingModel,
    RolloutMode, SindycModel,
};
use sindyc::library::preset_library;
use sindyc::motor::{
    check_nameplate, generate_dataset_suite, DatasetSuite, MotorParameters, SimulationConfig, SuiteConfig,
};
use sindyc::regression::{Optimizer, OptimizerConfig};
use sindyc::transforms::assemble_snapshots;
use sindyc::tuner::{
    pareto_front, run_search, select_trial, trace_record, OptimizerKind, SearchSpace, SelectionPolicy, TrialResult,
    TuneTarget, TRACE_HEADER,
};

use crate::error::{io_error, CliError, CliResult, Context};
use crate::files::*;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub motor: MotorParameters,
    pub simulation: SimulationConfig,
    pub suite: SuiteConfig,
}

pub fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let mut cfg: SimulateConfig = match config {
        Some(p) => read_json(p)?,
        None => SimulateConfig::default(),
    };
    if let Some(s) = seed {
        cfg.suite.seed = s;
    }
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("simulate", config, Some(cfg.suite.seed));
    if let Some(p) = config {
        manifest.input(p)?;
    }
    let suite = generate_dataset_suite(&cfg.motor, &cfg.simulation, &cfg.suite)?;
    let parts = [("train", &suite.train), ("test", &suite.test)];
    for (role, sets) in parts {
        for (label, (ecc, ds)) in DatasetSuite::LABELS.iter().zip(sets.iter()) {
            let name = format!("{label}_{role}.csv");
            write_dataset(&out.join(&name), ds)?;
            manifest.output(out, &name)?;
            manifest.output(out, &format!("{label}_{role}.meta.json"))?;
            log::info!(
                "{name}: {:?} rotor, {} subsets, {} rows",
                ecc.kind,
                ds.subset_count(),
                ds.len()
            );
        }
    }
    let check = check_nameplate(&cfg.motor)?;
    write_json(&out.join("nameplate.json"), &check)?;
    manifest.output(out, "nameplate.json")?;
    manifest.write(out)?;
    println!(
        "wrote 6 datasets to {}; nameplate speed {:.1} rpm (target {:.0} rpm)",
        out.display(),
        check.speed_rpm,
        check.target_rpm
    );
    Ok(())
}

pub struct TuneArgs {
    pub dataset: PathBuf,
    pub target: TuneTarget,
    pub config: Option<PathBuf>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub libraries: Option<Vec<u8>>,
    pub optimizers: Option<Vec<OptimizerKind>>,
    pub policy: SelectionPolicy,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Selection {
    policy: SelectionPolicy,
    trial: usize,
    library: u8,
    optimizer: OptimizerConfig,
    mse: f64,
    normalized_mse: f64,
    terms: usize,
    front: Vec<usize>,
}

fn write_trace(path: &Path, rows: &[TrialResult]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(|e| io_error(path, e))?;
    for r in rows {
        w.write_record(trace_record(r)).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn tune(args: &TuneArgs) -> CliResult<()> {
    let mut space: SearchSpace = match &args.config {
        Some(p) => read_json(p)?,
        None => SearchSpace::default(),
    };
    if let Some(n) = args.trials {
        space.trials = n;
    }
    if let Some(s) = args.seed {
        space.seed = s;
    }
    if let Some(l) = &args.libraries {
        space.libraries = l.clone();
    }
    if let Some(o) = &args.optimizers {
        space.optimizers = o.clone();
    }
    if space.trials == 0 {
        return Err(CliError::Usage("at least one trial is needed".into()));
    }
    space.validate()?;
    let ds = read_dataset(&args.dataset)?;
    let snaps = assemble_snapshots(&ds, args.target != TuneTarget::Dynamics).at(args.dataset.display())?;
    let results = run_search(&space, args.target, &snaps)?;
    ensure_dir(&args.out)?;
    let mut manifest = RunManifest::new("tune", args.config.as_deref(), Some(space.seed));
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    manifest.input(&args.dataset)?;
    write_trace(&args.out.join("trace.csv"), &results)?;
    manifest.output(&args.out, "trace.csv")?;
    let front = pareto_front(&results);
    write_trace(&args.out.join("front.csv"), &front)?;
    manifest.output(&args.out, "front.csv")?;
    let failed = results.iter().filter(|r| r.failed()).count();
    let best = select_trial(&front, args.policy)
        .map_err(|_| CliError::Numerical(format!("all {} trials failed; see trace.csv", results.len())))?;
    let model = best.model.as_ref().expect("successful trials carry a model");
    write_text(&args.out.join("model.json"), &model.to_json()?)?;
    manifest.output(&args.out, "model.json")?;
    let sel = Selection {
        policy: args.policy,
        trial: best.config.index,
        library: best.config.library,
        optimizer: best.config.optimizer,
        mse: best.mse,
        normalized_mse: best.normalized_mse,
        terms: best.terms,
        front: front.iter().map(|r| r.config.index).collect(),
    };
    write_json(&args.out.join("selection.json"), &sel)?;
    manifest.output(&args.out, "selection.json")?;
    manifest.write(&args.out)?;
    println!(
        "{} trials ({failed} failed), front of {}; selected trial {} (library {}, {}) with {} terms, normalized MSE {:.3e}",
        results.len(),
        front.len(),
        best.config.index,
        best.config.library,
        best.config.optimizer.optimizer.name(),
        best.terms,
        best.normalized_mse
    );
    Ok(())
}

pub struct FitArgs {
    pub dataset: PathBuf,
    pub target: TuneTarget,
    pub library: u8,
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    pub threshold: f64,
    pub lambda: f64,
    pub nu: f64,
    pub out: PathBuf,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let optimizer = OptimizerConfig::new(match args.optimizer {
        OptimizerKind::Lasso => Optimizer::Lasso { alpha: args.alpha },
        OptimizerKind::Stlsq => Optimizer::Stlsq {
            alpha: args.alpha,
            threshold: args.threshold,
        },
        OptimizerKind::Sr3 => Optimizer::Sr3 {
            lambda: args.lambda,
            nu: args.nu,
        },
    });
    optimizer.validate()?;
    let lib = preset_library(args.library).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = read_dataset(&args.dataset)?;
    let snaps = assemble_snapshots(&ds, args.target != TuneTarget::Dynamics).at(args.dataset.display())?;
    let mut model = match args.target.mapping() {
        None => AnyModel::Dynamics(fit_dynamics(&snaps, &lib, &optimizer)?),
        Some(t) => AnyModel::Mapping(fit_mapping(&snaps, &lib, t, &optimizer)?),
    };
    match &mut model {
        AnyModel::Dynamics(m) => m.core.provenance.library_id = Some(args.library),
        AnyModel::Mapping(m) => m.core.provenance.library_id = Some(args.library),
    }
    ensure_dir(&args.out)?;
    write_text(&args.out.join("model.json"), &model.to_json()?)?;
    let mut manifest = RunManifest::new("fit", None, None);
    manifest.input(&args.dataset)?;
    manifest.output(&args.out, "model.json")?;
    manifest.write(&args.out)?;
    println!(
        "library {} ({} terms), {}: active terms per row {:?}",
        args.library,
        lib.len(),
        optimizer.optimizer.name(),
        model.core().active_counts()
    );
    Ok(())
}

pub fn read_model(path: &Path) -> CliResult<AnyModel> {
    verify_against_manifest(path)?;
    AnyModel::from_json(&read_text(path)?).at(path.display())
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    dataset: String,
    models: Vec<String>,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

fn write_series(path: &Path, series: &EvaluationSeries, names: &[&str], unit: &str) -> CliResult<bool> {
    let cols: Vec<&(String, String, Vec<f64>, Vec<f64>)> = names
        .iter()
        .filter_map(|n| series.channels.iter().find(|c| c.0 == *n))
        .collect();
    if cols.is_empty() {
        return Ok(false);
    }
    let mut w = csv_writer(path)?;
    let mut head = vec![header("time", "s"), header("subset_id", "-")];
    for c in &cols {
        if c.0 == "T_e_comp" {
            head.push(header("T_e_comp", unit));
        } else {
            head.push(header(&format!("{}_ref", c.0), unit));
            head.push(header(&format!("{}_pred", c.0), unit));
        }
    }
    w.write_record(&head).map_err(|e| io_error(path, e))?;
    for k in 0..series.time.len() {
        let mut row = vec![num(series.time[k]), series.subset[k].to_string()];
        for c in &cols {
            if c.0 == "T_e_comp" {
                row.push(num(c.3[k]));
            } else {
                row.push(num(c.2[k]));
                row.push(num(c.3[k]));
            }
        }
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))?;
    Ok(true)
}

fn row_labels(model: &AnyModel) -> Vec<String> {
    match model {
        AnyModel::Dynamics(m) => (0..m.core.rows())
            .map(|r| {
                ["di_d/dt", "di_q/dt", "di_0/dt"]
                    .get(r)
                    .map_or(format!("dx{}/dt", r + 1), |s| s.to_string())
            })
            .collect(),
        AnyModel::Mapping(m) => m.outputs.iter().map(|c| c.label().to_string()).collect(),
    }
}

/// Coefficient matrix with one row per library term.
fn write_coefficients(path: &Path, model: &AnyModel) -> CliResult<()> {
    let core = model.core();
    let c = core.weights.coefficients();
    let mut w = csv_writer(path)?;
    let mut head = vec![header("term", "-")];
    head.extend(row_labels(model).iter().map(|l| header(l, "coefficient")));
    w.write_record(&head).map_err(|e| io_error(path, e))?;
    for (j, name) in core.library.names().iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend((0..c.nrows()).map(|r| num(c[(r, j)])));
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn evaluate_cmd(models: &[PathBuf], dataset: &Path, mode: RolloutMode, out: &Path) -> CliResult<()> {
    if models.is_empty() {
        return Err(CliError::Usage("at least one --model is needed".into()));
    }
    let loaded: Vec<AnyModel> = models.iter().map(|p| read_model(p)).collect::<CliResult<_>>()?;
    let ds = read_dataset(dataset)?;
    let mut dynamics: Option<&SindycModel> = None;
    let mut mappings: Vec<&MappingModel> = Vec::new();
    for (m, path) in loaded.iter().zip(models) {
        let dims = m.core().library.dims();
        if dims != sindyc::library::LibraryDims::MOTOR {
            return Err(CliError::Data(format!(
                "model {} has {} states and {} inputs; dataset {} has 3 and 11",
                path.display(),
                dims.state,
                dims.input,
                dataset.display()
            )));
        }
        match m {
            AnyModel::Dynamics(d) if dynamics.is_none() => dynamics = Some(d),
            AnyModel::Dynamics(_) => {
                return Err(CliError::Usage(format!(
                    "{}: only one dynamics model per evaluation",
                    path.display()
                )))
            }
            AnyModel::Mapping(mm) => mappings.push(mm),
        }
    }
    let opts = EvaluationOptions::from_dataset(&ds, mode).at(dataset.display())?;
    let (report, series) =
        evaluate(dynamics, &mappings, &ds, &opts).at(format!("evaluating on {}", dataset.display()))?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("evaluate", None, None);
    for p in models {
        manifest.input(p)?;
    }
    manifest.input(dataset)?;
    let file = ReportFile {
        dataset: dataset.display().to_string(),
        models: models.iter().map(|p| p.display().to_string()).collect(),
        report: &report,
    };
    write_json(&out.join("report.json"), &file)?;
    manifest.output(out, "report.json")?;
    for (name, channels, unit) in [
        ("currents.csv", &["i_d", "i_q", "i_0"][..], "A"),
        ("torque.csv", &["T_e", "T_e_comp"][..], "N*m"),
        ("ump.csv", &["F_x", "F_y"][..], "N"),
    ] {
        if write_series(&out.join(name), &series, channels, unit)? {
            manifest.output(out, name)?;
        }
    }
    for (k, m) in loaded.iter().enumerate() {
        let name = format!("coefficients_{k}.csv");
        write_coefficients(&out.join(&name), m)?;
        manifest.output(out, &name)?;
    }
    manifest.write(out)?;
    for c in &report.channels {
        let terms = c.active_terms.map_or("-".to_string(), |t| t.to_string());
        println!("{:<9} MAE {:.4e} {:<4} terms {terms}", c.name, c.mae, c.unit);
    }
    if report.diverged {
        log::warn!("a current rollout diverged; its MAE covers the steps before divergence");
    }
    Ok(())
}
