use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::library::LibraryDims;
use crate::transforms::{flux_from_measurables, subset_series, SubsetSeries};

use super::{rollout, MappingModel, OutputChannel, RolloutMode, SindycModel, DIVERGENCE_BOUND};

/// Per-channel mean absolute error between two equally shaped series.
pub fn mean_absolute_error(predicted: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Vec<f64>> {
    if predicted.shape() != reference.shape() {
        return Err(Error::mismatch("series length", reference.ncols(), predicted.ncols()));
    }
    if predicted.ncols() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((0..predicted.nrows())
        .map(|r| {
            predicted
                .row(r)
                .iter()
                .zip(reference.row(r).iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / predicted.ncols() as f64
        })
        .collect())
}

/// Flux-current torque estimate `p(λ_d i_q − λ_q i_d)`.
pub fn comparison_torque(lambda_dq: [f64; 2], i_dq: [f64; 2], pole_pairs: u32) -> f64 {
    pole_pairs as f64 * (lambda_dq[0] * i_dq[1] - lambda_dq[1] * i_dq[0])
}

/// Comparison torque of one subset, with the stator flux integrated from
/// the recorded voltages and currents.
pub fn comparison_torque_series(series: &SubsetSeries, stator_resistance: f64, pole_pairs: u32) -> Result<Vec<f64>> {
    let v = series.inputs.rows(crate::transforms::input::VOLTAGE, 3).into_owned();
    let flux = flux_from_measurables(&series.states, &v, [stator_resistance; 3], series.dt)?;
    Ok((0..series.states.ncols())
        .map(|k| {
            comparison_torque(
                [flux[(0, k)], flux[(1, k)]],
                [series.states[(0, k)], series.states[(1, k)]],
                pole_pairs,
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    pub unit: String,
    pub mae: f64,
    /// RMS of the reference signal, for relative comparisons.
    pub reference_rms: f64,
    /// Active terms of the model row; absent for baselines.
    pub active_terms: Option<usize>,
}

impl ChannelReport {
    pub fn relative_mae(&self) -> f64 {
        if self.reference_rms > 0.0 {
            self.mae / self.reference_rms
        } else {
            self.mae
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub channels: Vec<ChannelReport>,
    pub rollout_mode: RolloutMode,
    pub test_digest: String,
    /// True when any current rollout left the divergence bound.
    pub diverged: bool,
    /// Mean absolute error of the predicted derivative at the recorded
    /// states, per current channel.
    #[serde(default)]
    pub one_step_mae: Vec<f64>,
}

impl EvaluationReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelReport> {
        self.channels.iter().find(|c| c.name == name)
    }
}

/// Reference and predicted series, concatenated over subsets, for plotting.
#[derive(Debug, Clone, Default)]
pub struct EvaluationSeries {
    pub time: Vec<f64>,
    pub subset: Vec<usize>,
    /// (name, unit, reference, predicted)
    pub channels: Vec<(String, String, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationOptions {
    pub mode: RolloutMode,
    pub stator_resistance: f64,
    pub pole_pairs: u32,
}

impl EvaluationOptions {
    /// Uses the motor constants recorded with the dataset.
    pub fn from_dataset(dataset: &TimeSeriesDataset, mode: RolloutMode) -> Result<Self> {
        let meta = dataset
            .meta
            .as_ref()
            .ok_or_else(|| Error::MissingChannel("motor metadata (stator resistance, pole pairs)".into()))?;
        Ok(EvaluationOptions {
            mode,
            stator_resistance: meta.motor.stator_resistance,
            pole_pairs: meta.motor.pole_pairs,
        })
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

fn check_motor(core: &super::ModelCore, what: &str) -> Result<()> {
    let dims = core.library.dims();
    if dims != LibraryDims::MOTOR {
        return Err(Error::Schema(format!(
            "{what} model expects {} states and {} inputs, the dataset has {} and {}",
            dims.state,
            dims.input,
            LibraryDims::MOTOR.state,
            LibraryDims::MOTOR.input
        )));
    }
    Ok(())
}

/// Evaluates whichever models are given on a test dataset. Current dynamics
/// are rolled out from the recorded initial state; mappings are evaluated at
/// the recorded states and inputs; the comparison torque is reported next to
/// the torque mapping.
pub fn evaluate(
    dynamics: Option<&SindycModel>,
    mappings: &[&MappingModel],
    test: &TimeSeriesDataset,
    options: &EvaluationOptions,
) -> Result<(EvaluationReport, EvaluationSeries)> {
    let needs_outputs = !mappings.is_empty();
    let series = subset_series(test, needs_outputs)?;
    let mut out = EvaluationSeries::default();
    for (index, range) in test.subset_ranges().iter().enumerate() {
        out.time.extend(test.samples()[range.clone()].iter().map(|s| s.time));
        out.subset.extend(std::iter::repeat_n(index, range.len()));
    }
    let mut channels = Vec::new();
    let mut diverged = false;
    let mut one_step_mae = Vec::new();

    if let Some(model) = dynamics {
        check_motor(&model.core, "dynamics")?;
        let counts = model.active_counts();
        let names = ["i_d", "i_q", "i_0"];
        let mut reference = vec![Vec::new(); 3];
        let mut predicted = vec![Vec::new(); 3];
        for s in &series {
            let x0: Vec<f64> = s.states.column(0).iter().copied().collect();
            let r = rollout(model, &s.inputs, &x0, s.dt, options.mode, DIVERGENCE_BOUND)?;
            diverged |= r.diverged_at.is_some();
            let n = s.states.ncols();
            for c in 0..3 {
                reference[c].extend(s.states.row(c).iter());
                // a diverged rollout is padded with NaN so the plot columns stay aligned
                predicted[c].extend((0..n).map(|k| {
                    if k < r.states.ncols() {
                        r.states[(c, k)]
                    } else {
                        f64::NAN
                    }
                }));
            }
        }
        for c in 0..3 {
            let valid: Vec<(f64, f64)> = reference[c]
                .iter()
                .zip(&predicted[c])
                .filter(|(_, p)| p.is_finite())
                .map(|(a, b)| (*a, *b))
                .collect();
            let (r, p): (Vec<f64>, Vec<f64>) = valid.into_iter().unzip();
            channels.push(ChannelReport {
                name: names[c].into(),
                unit: "A".into(),
                mae: mae(&p, &r),
                reference_rms: rms(&reference[c]),
                active_terms: Some(counts[c]),
            });
        }
        let snaps = crate::transforms::assemble_snapshots(test, false)?;
        let pred = model.core.predict_series(&snaps.x, &snaps.inputs)?;
        one_step_mae = mean_absolute_error(&pred, &snaps.dxdt)?;
        for c in 0..3 {
            out.channels
                .push((names[c].into(), "A".into(), reference[c].clone(), predicted[c].clone()));
        }
    }

    for model in mappings {
        check_motor(&model.core, "mapping")?;
        let counts = model.active_counts();
        for (row, channel) in model.outputs.iter().enumerate() {
            let mut reference = Vec::new();
            let mut predicted = Vec::new();
            let mut comparison = Vec::new();
            for s in &series {
                let y = s.outputs.as_ref().expect("outputs requested");
                reference.extend(y.row(channel.row()).iter());
                let pred = model.core.predict_series(&s.states, &s.inputs)?;
                predicted.extend(pred.row(row).iter());
                if *channel == OutputChannel::Torque {
                    comparison.extend(comparison_torque_series(
                        s,
                        options.stator_resistance,
                        options.pole_pairs,
                    )?);
                }
            }
            let name = channel.label();
            channels.push(ChannelReport {
                name: name.into(),
                unit: channel.unit().into(),
                mae: mae(&predicted, &reference),
                reference_rms: rms(&reference),
                active_terms: Some(counts[row]),
            });
            if *channel == OutputChannel::Torque {
                channels.push(ChannelReport {
                    name: "T_e_comp".into(),
                    unit: "N*m".into(),
                    mae: mae(&comparison, &reference),
                    reference_rms: rms(&reference),
                    active_terms: None,
                });
            }
            out.channels
                .push((name.into(), channel.unit().into(), reference.clone(), predicted));
            if *channel == OutputChannel::Torque {
                out.channels
                    .push(("T_e_comp".into(), "N*m".into(), reference, comparison));
            }
        }
    }
    let report = EvaluationReport {
        channels,
        rollout_mode: options.mode,
        test_digest: test.digest(),
        diverged,
        one_step_mae,
    };
    Ok((report, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn comparison_examples() {
        assert_eq!(comparison_torque([1.0, 1.0], [1.0, 1.0], 1), 0.0);
        assert_eq!(comparison_torque([0.5, 0.0], [3.0, 2.0], 2), 2.0);
        assert_eq!(comparison_torque([0.0, 0.0], [3.0, 2.0], 1), 0.0);
    }

    #[test]
    fn mae_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(mean_absolute_error(&a, &b).unwrap(), vec![1.0]);
        assert_eq!(mean_absolute_error(&a, &a).unwrap(), vec![0.0]);
        assert!(mean_absolute_error(&a, &DMatrix::zeros(1, 3)).is_err());
    }

    proptest! {
        #[test]
        fn mae_permutation_invariant(v in proptest::collection::vec(-10.0f64..10.0, 2..40), shift in 1usize..39) {
            let n = v.len();
            let a = DMatrix::from_fn(1, n, |_, k| v[k]);
            let b = DMatrix::from_fn(1, n, |_, k| (k as f64).sin());
            let pa = DMatrix::from_fn(1, n, |_, k| v[(k + shift) % n]);
            let pb = DMatrix::from_fn(1, n, |_, k| ((k + shift) % n) as f64).map(f64::sin);
            let x = mean_absolute_error(&a, &b).unwrap()[0];
            let y = mean_absolute_error(&pa, &pb).unwrap()[0];
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
        }
    }
}
