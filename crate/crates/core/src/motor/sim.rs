use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, RunInfo, Sample, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::transforms::{clarke_unchecked, inverse_clarke_unchecked, wrap_angle};

use super::machine::{Machine, MachineState};
use super::params::{EccentricityConfig, LoadProfile, MotorParameters, SimulationConfig};

/// Balanced three-phase supply whose amplitude and frequency ramp linearly
/// from zero; the phase is the integral of the ramped frequency.
pub fn supply_profile(t: f64, cfg: &SimulationConfig) -> [f64; 3] {
    let amplitude = cfg.line_voltage * 2f64.sqrt() / 3f64.sqrt();
    let f = cfg.supply_frequency();
    let ramp = cfg.ramp_duration;
    let (scale, phase) = if ramp > 0.0 && t < ramp {
        (t / ramp, TAU * f * t * t / (2.0 * ramp))
    } else {
        (1.0, TAU * f * (t - 0.5 * ramp))
    };
    let a = amplitude * scale;
    let third = 2.0 * PI / 3.0;
    [a * phase.cos(), a * (phase - third).cos(), a * (phase + third).cos()]
}

struct LoadSchedule {
    rng: ChaCha8Rng,
    profile: LoadProfile,
    line_voltage: f64,
    started: bool,
    steady_for: f64,
    current: f64,
}

impl LoadSchedule {
    fn draw(&mut self) -> f64 {
        match self.profile {
            LoadProfile::Random {
                max_torque,
                nominal_voltage,
            } => {
                let hi = max_torque * self.line_voltage / nominal_voltage;
                if hi > 0.0 {
                    self.rng.gen_range(0.0..hi)
                } else {
                    0.0
                }
            }
            LoadProfile::Constant { torque } => torque,
        }
    }
}

/// Simulates one run and records every channel at each time step.
pub fn simulate_run(
    params: &MotorParameters,
    ecc: &EccentricityConfig,
    cfg: &SimulationConfig,
) -> Result<TimeSeriesDataset> {
    cfg.validate()?;
    let machine = Machine::new(params.clone(), *ecc)?;
    let dt = cfg.time_step;
    let n = cfg.sample_count();
    let supply = |t: f64| supply_profile(t, cfg);
    let mut load = LoadSchedule {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        profile: cfg.load,
        line_voltage: cfg.line_voltage,
        started: false,
        steady_for: 0.0,
        current: 0.0,
    };
    // steps are counted rather than accumulated so the ramp end lands on a step
    let ramp_steps = (cfg.ramp_duration / dt).round() as usize;
    let hold_steps = (cfg.steady_state.hold_time / dt).round().max(1.0) as usize;
    let mut steady_steps = 0usize;

    let mut state = MachineState::default();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        if !load.started && k >= ramp_steps {
            load.started = true;
            load.current = load.draw();
            steady_steps = 0;
        }
        let v_abc = supply(t);
        let v_dq0 = clarke_unchecked(v_abc);
        if load.started && matches!(cfg.load, LoadProfile::Random { .. }) {
            let accel = machine.derivative(&state, [v_dq0[0], v_dq0[1]], load.current).omega;
            if accel.abs() < cfg.steady_state.accel_threshold {
                steady_steps += 1;
            } else {
                steady_steps = 0;
            }
            if steady_steps >= hold_steps {
                load.current = load.draw();
                steady_steps = 0;
            }
        }
        load.steady_for = steady_steps as f64 * dt;

        let obs = machine.observe(&state);
        let i_abc = inverse_clarke_unchecked([obs.currents.stator[0], obs.currents.stator[1], 0.0]);
        samples.push(Sample {
            time: t,
            i_abc,
            v_abc,
            i_dq0: clarke_unchecked(i_abc),
            v_dq0,
            gamma: wrap_angle(state.gamma),
            omega: machine.locked_speed().unwrap_or(state.omega),
            torque: obs.torque,
            load: load.current,
            ump: obs.ump,
        });
        if k + 1 < n {
            state = machine.step(&state, t, &supply, load.current, dt)?;
        }
    }
    let meta = DatasetMeta {
        motor: params.clone(),
        eccentricity: *ecc,
        simulation: cfg.clone(),
        runs: vec![RunInfo {
            line_voltage: cfg.line_voltage,
            frequency: cfg.supply_frequency(),
            seed: cfg.seed,
        }],
    };
    Ok(TimeSeriesDataset::new(dt, samples, &[n])?.with_meta(meta))
}

/// Parameters of a train/test dataset collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub subsets: usize,
    pub seed: u64,
    pub severity: f64,
    pub orientation: f64,
    /// Range of the RMS line voltage drawn per subset, V.
    pub voltage_range: [f64; 2],
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            subsets: 5,
            seed: 2024,
            severity: 0.5,
            orientation: 0.3,
            voltage_range: [40.0, 400.0],
        }
    }
}

/// Datasets A (centric), B (static) and C (dynamic) plus one held-out test
/// subset per rotor configuration.
#[derive(Debug, Clone)]
pub struct DatasetSuite {
    pub train: Vec<(EccentricityConfig, TimeSeriesDataset)>,
    pub test: Vec<(EccentricityConfig, TimeSeriesDataset)>,
}

impl DatasetSuite {
    pub const LABELS: [&'static str; 3] = ["A", "B", "C"];
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of one run, derived from the master seed, the rotor configuration,
/// the role (0 train, 1 test) and the subset index.
pub fn derive_seed(master: u64, config: usize, role: usize, subset: usize) -> u64 {
    let tag = ((config as u64) << 48) | ((role as u64) << 40) | subset as u64;
    splitmix64(splitmix64(master) ^ splitmix64(tag))
}

pub fn eccentricity_configs(suite: &SuiteConfig) -> [EccentricityConfig; 3] {
    [
        EccentricityConfig::centric(),
        EccentricityConfig::static_offset(suite.severity, suite.orientation),
        EccentricityConfig::dynamic(suite.severity, suite.orientation),
    ]
}

pub fn generate_dataset_suite(
    params: &MotorParameters,
    base: &SimulationConfig,
    suite: &SuiteConfig,
) -> Result<DatasetSuite> {
    if suite.subsets == 0 {
        return Err(Error::invalid("at least one subset is required"));
    }
    let [lo, hi] = suite.voltage_range;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::invalid(format!("invalid voltage range [{lo}, {hi}]")));
    }
    let configs = eccentricity_configs(suite);
    let mut jobs = Vec::new();
    for (c, _) in configs.iter().enumerate() {
        for s in 0..suite.subsets {
            jobs.push((c, 0usize, s));
        }
        jobs.push((c, 1usize, 0));
    }
    let runs: Vec<Result<TimeSeriesDataset>> = jobs
        .par_iter()
        .map(|&(c, role, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(suite.seed, c, role, s));
            let line_voltage = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let cfg = SimulationConfig {
                line_voltage,
                seed: rng.gen(),
                ..base.clone()
            };
            simulate_run(params, &configs[c], &cfg).map_err(|e| Error::Subset {
                index: s,
                source: Box::new(e),
            })
        })
        .collect();
    let mut runs = runs.into_iter();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ecc in configs {
        let parts = (0..suite.subsets)
            .map(|_| runs.next().expect("job count"))
            .collect::<Result<Vec<_>>>()?;
        train.push((ecc, TimeSeriesDataset::concat(&parts)?));
        test.push((ecc, runs.next().expect("job count")?));
    }
    Ok(DatasetSuite { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NameplateCheck {
    pub speed_rpm: f64,
    pub target_rpm: f64,
    pub relative_error: f64,
}

impl NameplateCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative_error <= tolerance
    }
}

/// Runs the machine at nameplate voltage, frequency and torque and reports
/// the settled speed, averaged over the final quarter second.
pub fn check_nameplate(params: &MotorParameters) -> Result<NameplateCheck> {
    let np = &params.nameplate;
    let cfg = SimulationConfig {
        line_voltage: np.line_voltage,
        frequency: Some(np.frequency),
        ramp_duration: 0.5,
        duration: 3.0,
        load: LoadProfile::Constant { torque: np.torque },
        ..SimulationConfig::default()
    };
    let ds = simulate_run(params, &EccentricityConfig::centric(), &cfg)?;
    let tail = (0.25 / cfg.time_step) as usize;
    let s = ds.samples();
    let mean = s[s.len() - tail..].iter().map(|x| x.omega).sum::<f64>() / tail as f64;
    let speed_rpm = mean * 60.0 / TAU;
    Ok(NameplateCheck {
        speed_rpm,
        target_rpm: np.speed_rpm,
        relative_error: (speed_rpm - np.speed_rpm).abs() / np.speed_rpm,
    })
}
