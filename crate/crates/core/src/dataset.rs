//! Uniformly sampled motor recordings.
//!
//! A dataset is an agglomeration of independent runs ("subsets"). Every
//! subset restarts its own time axis at zero; processing that integrates or
//! differentiates along time must therefore work per subset.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::motor::{EccentricityConfig, MotorParameters, SimulationConfig};

/// One recorded time instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub i_abc: [f64; 3],
    pub v_abc: [f64; 3],
    pub i_dq0: [f64; 3],
    pub v_dq0: [f64; 3],
    /// Rotor mechanical angle, wrapped to [0, 2π).
    pub gamma: f64,
    pub omega: f64,
    pub torque: f64,
    pub load: f64,
    pub ump: [f64; 2],
}

/// Per-run bookkeeping recorded by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub line_voltage: f64,
    pub frequency: f64,
    pub seed: u64,
}

/// Provenance of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub motor: MotorParameters,
    pub eccentricity: EccentricityConfig,
    pub simulation: SimulationConfig,
    pub runs: Vec<RunInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    dt: f64,
    samples: Vec<Sample>,
    subsets: Vec<Range<usize>>,
    pub meta: Option<DatasetMeta>,
}

impl TimeSeriesDataset {
    /// Builds a dataset from samples and the lengths of its consecutive subsets.
    pub fn new(dt: f64, samples: Vec<Sample>, subset_lengths: &[usize]) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        let total: usize = subset_lengths.iter().sum();
        if total != samples.len() {
            return Err(Error::mismatch("subset lengths", samples.len(), total));
        }
        let mut subsets = Vec::with_capacity(subset_lengths.len());
        let mut start = 0;
        for &len in subset_lengths {
            if len == 0 {
                return Err(Error::invalid("empty subset"));
            }
            subsets.push(start..start + len);
            start += len;
        }
        let ds = TimeSeriesDataset {
            dt,
            samples,
            subsets,
            meta: None,
        };
        ds.check_uniform_grid()?;
        Ok(ds)
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    fn check_uniform_grid(&self) -> Result<()> {
        for (index, range) in self.subsets.iter().enumerate() {
            let run = &self.samples[range.clone()];
            let t0 = run[0].time;
            for (k, s) in run.iter().enumerate() {
                let expected = t0 + k as f64 * self.dt;
                if (s.time - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                    return Err(Error::invalid(format!(
                        "subset {index}: non-uniform time grid at sample {k} (t = {}, expected {expected})",
                        s.time
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset_count(&self) -> usize {
        self.subsets.len()
    }

    pub fn subset_ranges(&self) -> &[Range<usize>] {
        &self.subsets
    }

    pub fn subset(&self, index: usize) -> &[Sample] {
        &self.samples[self.subsets[index].clone()]
    }

    /// Subset index of every sample, in order.
    pub fn subset_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.subsets
            .iter()
            .enumerate()
            .flat_map(|(i, r)| std::iter::repeat_n(i, r.len()))
    }

    /// Keeps the subsets in `range`, renumbered from zero.
    pub fn select_subsets(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.subsets.len() {
            return Err(Error::invalid(format!(
                "subset range {range:?} out of bounds for {} subsets",
                self.subsets.len()
            )));
        }
        let first = self.subsets[range.start].start;
        let last = self.subsets[range.end - 1].end;
        let lengths: Vec<usize> = self.subsets[range.clone()].iter().map(|r| r.len()).collect();
        let mut out = TimeSeriesDataset::new(self.dt, self.samples[first..last].to_vec(), &lengths)?;
        out.meta = self.meta.clone().map(|mut m| {
            if m.runs.len() == self.subsets.len() {
                m.runs = m.runs[range].to_vec();
            }
            m
        });
        Ok(out)
    }

    /// Concatenates datasets that share a time step.
    pub fn concat(parts: &[TimeSeriesDataset]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut samples = Vec::new();
        let mut lengths = Vec::new();
        let mut runs = Vec::new();
        for p in parts {
            if (p.dt - first.dt).abs() > 1e-15 * first.dt {
                return Err(Error::invalid("cannot concatenate datasets with different time steps"));
            }
            samples.extend_from_slice(&p.samples);
            lengths.extend(p.subsets.iter().map(|r| r.len()));
            if let Some(m) = &p.meta {
                runs.extend(m.runs.iter().cloned());
            }
        }
        let mut out = TimeSeriesDataset::new(first.dt, samples, &lengths)?;
        out.meta = first.meta.clone().map(|mut m| {
            m.runs = runs;
            m
        });
        Ok(out)
    }

    /// SHA-256 over the bit patterns of every recorded value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dt.to_le_bytes());
        for r in &self.subsets {
            h.update((r.len() as u64).to_le_bytes());
        }
        for s in &self.samples {
            let vals = [
                s.time, s.i_abc[0], s.i_abc[1], s.i_abc[2], s.v_abc[0], s.v_abc[1], s.v_abc[2], s.i_dq0[0], s.i_dq0[1],
                s.i_dq0[2], s.v_dq0[0], s.v_dq0[1], s.v_dq0[2], s.gamma, s.omega, s.torque, s.load, s.ump[0], s.ump[1],
            ];
            for v in vals {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
