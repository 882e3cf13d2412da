//! On-disk formats: dataset CSV with a metadata sidecar, JSON documents and
//! run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sindyc::dataset::{DatasetMeta, Sample, TimeSeriesDataset};

use crate::error::{io_error, CliError, CliResult, Context};

pub const MANIFEST: &str = "manifest.json";

/// Fixed dataset column order.
pub const DATASET_COLUMNS: [(&str, &str); 20] = [
    ("time", "s"),
    ("i_a", "A"),
    ("i_b", "A"),
    ("i_c", "A"),
    ("v_a", "V"),
    ("v_b", "V"),
    ("v_c", "V"),
    ("i_d", "A"),
    ("i_q", "A"),
    ("i_0", "A"),
    ("v_d", "V"),
    ("v_q", "V"),
    ("v_0", "V"),
    ("gamma_r", "rad"),
    ("omega_r", "rad/s"),
    ("T_e", "N*m"),
    ("T_load", "N*m"),
    ("F_x", "N"),
    ("F_y", "N"),
    ("subset_id", "-"),
];

pub fn header(name: &str, unit: &str) -> String {
    format!("{name}[{unit}]")
}

/// Shortest decimal text that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub dt: f64,
    pub subset_lengths: Vec<usize>,
    pub meta: Option<DatasetMeta>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_error(path, e))
}

pub fn write_dataset(path: &Path, ds: &TimeSeriesDataset) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(DATASET_COLUMNS.iter().map(|(n, u)| header(n, u)))
        .map_err(|e| io_error(path, e))?;
    for (id, range) in ds.subset_ranges().iter().enumerate() {
        for s in &ds.samples()[range.clone()] {
            let mut row: Vec<String> = Vec::with_capacity(20);
            row.push(num(s.time));
            row.extend(
                s.i_abc
                    .iter()
                    .chain(&s.v_abc)
                    .chain(&s.i_dq0)
                    .chain(&s.v_dq0)
                    .map(|v| num(*v)),
            );
            row.extend([s.gamma, s.omega, s.torque, s.load, s.ump[0], s.ump[1]].map(num));
            row.push(id.to_string());
            w.write_record(&row).map_err(|e| io_error(path, e))?;
        }
    }
    w.flush().map_err(|e| io_error(path, e))?;
    let sidecar = Sidecar {
        dt: ds.dt(),
        subset_lengths: ds.subset_ranges().iter().map(|r| r.len()).collect(),
        meta: ds.meta.clone(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_dataset(path: &Path) -> CliResult<TimeSeriesDataset> {
    verify_against_manifest(path)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let head = r.headers().map_err(|e| io_error(path, e))?.clone();
    let expected: Vec<String> = DATASET_COLUMNS.iter().map(|(n, u)| header(n, u)).collect();
    for (i, h) in head.iter().enumerate() {
        match expected.get(i) {
            Some(e) if e == h => {}
            Some(e) => {
                return Err(CliError::Data(format!(
                    "{}: column {} is {h:?}, expected {e:?}",
                    path.display(),
                    i + 1
                )))
            }
            None => return Err(CliError::Data(format!("{}: unknown column {h:?}", path.display()))),
        }
    }
    if head.len() != expected.len() {
        return Err(CliError::Data(format!(
            "{}: missing columns, expected {}",
            path.display(),
            expected[head.len()..].join(",")
        )));
    }
    let mut samples = Vec::new();
    let mut lengths: Vec<usize> = Vec::new();
    let mut last_id: Option<usize> = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_error(path, e))?;
        let at = || format!("{} row {}", path.display(), line + 2);
        let f = |i: usize| -> CliResult<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| CliError::Data(format!("{}: {} {e}", at(), expected[i])))
        };
        let id: usize = rec[19]
            .trim()
            .parse()
            .map_err(|e| CliError::Data(format!("{}: subset_id {e}", at())))?;
        match last_id {
            Some(prev) if prev == id => *lengths.last_mut().expect("open subset") += 1,
            Some(prev) if id == prev + 1 => lengths.push(1),
            None if id == 0 => lengths.push(1),
            _ => return Err(CliError::Data(format!("{}: subset ids must count up from 0", at()))),
        }
        last_id = Some(id);
        samples.push(Sample {
            time: f(0)?,
            i_abc: [f(1)?, f(2)?, f(3)?],
            v_abc: [f(4)?, f(5)?, f(6)?],
            i_dq0: [f(7)?, f(8)?, f(9)?],
            v_dq0: [f(10)?, f(11)?, f(12)?],
            gamma: f(13)?,
            omega: f(14)?,
            torque: f(15)?,
            load: f(16)?,
            ump: [f(17)?, f(18)?],
        });
    }
    let side = sidecar_path(path);
    let (dt, meta) = if side.exists() {
        verify_against_manifest(&side)?;
        let s: Sidecar = read_json(&side)?;
        if s.subset_lengths != lengths {
            return Err(CliError::Data(format!(
                "{}: subset lengths {:?} disagree with {}",
                side.display(),
                s.subset_lengths,
                path.display()
            )));
        }
        (s.dt, s.meta)
    } else {
        if samples.len() < 2 || lengths[0] < 2 {
            return Err(CliError::Data(format!(
                "{}: cannot infer the time step",
                path.display()
            )));
        }
        (samples[1].time - samples[0].time, None)
    };
    let ds = TimeSeriesDataset::new(dt, samples, &lengths).at(path.display())?;
    Ok(match meta {
        Some(m) => ds.with_meta(m),
        None => ds,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut s = text.to_string();
    if !s.ends_with('\n') {
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| io_error(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| io_error(path, e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest directory.
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            config: config.map(|p| p.display().to_string()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, dir: &Path, name: &str) -> CliResult<()> {
        self.outputs.push(FileDigest {
            path: name.into(),
            sha256: sha256_file(&dir.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join(MANIFEST), self)
    }
}

/// Re-hashes `path` if a manifest next to it lists the file.
pub fn verify_against_manifest(path: &Path) -> CliResult<()> {
    let Some(dir) = path.parent() else { return Ok(()) };
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    let manifest = dir.join(MANIFEST);
    if !manifest.exists() {
        return Ok(());
    }
    let m: RunManifest = read_json(&manifest)?;
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return Ok(());
    };
    for entry in m.outputs.iter().filter(|e| e.path == name) {
        let found = sha256_file(path)?;
        if found != entry.sha256 {
            return Err(CliError::Data(format!(
                "{}: digest {found} does not match {} ({})",
                path.display(),
                manifest.display(),
                entry.sha256
            )));
        }
    }
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}
