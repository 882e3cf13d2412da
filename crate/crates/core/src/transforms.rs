//! Three-phase to dq0 conversion, time integrals, numerical derivatives and
//! snapshot assembly.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::ops::Range;

use nalgebra::DMatrix;

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Number of state entries (i_d, i_q, i_0).
pub const STATE_DIM: usize = 3;
/// Number of input entries (v_dq0, I_dq0, V_dq0, γ_r, ω_r).
pub const INPUT_DIM: usize = 11;
/// Number of output rows assembled into `Y` (T_e, F_x, F_y).
pub const OUTPUT_DIM: usize = 3;

/// Offsets inside the input vector.
pub mod input {
    pub const VOLTAGE: usize = 0;
    pub const CURRENT_INTEGRAL: usize = 3;
    pub const VOLTAGE_INTEGRAL: usize = 6;
    pub const ANGLE: usize = 9;
    pub const SPEED: usize = 10;
}

/// Names of the concatenated `[x; u]` variables, in index order.
pub const VARIABLE_NAMES: [&str; STATE_DIM + INPUT_DIM] = [
    "i_d", "i_q", "i_0", "v_d", "v_q", "v_0", "I_d", "I_q", "I_0", "V_d", "V_q", "V_0", "gamma_r", "omega_r",
];

const SQRT_3_2: f64 = 0.866_025_403_784_438_6;

fn check_finite(v: &[f64; 3], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what}: non-finite component in {v:?}")))
    }
}

/// Power-invariant abc → dq0 transform in the stator frame.
pub fn clarke_dq0(abc: [f64; 3]) -> Result<[f64; 3]> {
    check_finite(&abc, "clarke_dq0")?;
    Ok(clarke_unchecked(abc))
}

#[inline]
pub(crate) fn clarke_unchecked([a, b, c]: [f64; 3]) -> [f64; 3] {
    let k = (2.0f64 / 3.0).sqrt();
    [
        k * (a - 0.5 * b - 0.5 * c),
        k * (SQRT_3_2 * b - SQRT_3_2 * c),
        k * FRAC_1_SQRT_2 * (a + b + c),
    ]
}

/// Transpose of [`clarke_dq0`]; the transform is orthonormal.
pub fn inverse_clarke(dq0: [f64; 3]) -> Result<[f64; 3]> {
    check_finite(&dq0, "inverse_clarke")?;
    Ok(inverse_clarke_unchecked(dq0))
}

#[inline]
pub(crate) fn inverse_clarke_unchecked([d, q, z]: [f64; 3]) -> [f64; 3] {
    let k = (2.0f64 / 3.0).sqrt();
    let zc = FRAC_1_SQRT_2 * z;
    [
        k * (d + zc),
        k * (-0.5 * d + SQRT_3_2 * q + zc),
        k * (-0.5 * d - SQRT_3_2 * q + zc),
    ]
}

/// Trapezoidal cumulative integral along columns, starting from zero.
pub fn cumulative_integral(series: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let (rows, cols) = series.shape();
    let mut out = DMatrix::zeros(rows, cols);
    for n in 1..cols {
        for r in 0..rows {
            out[(r, n)] = out[(r, n - 1)] + 0.5 * dt * (series[(r, n - 1)] + series[(r, n)]);
        }
    }
    Ok(out)
}

/// Second-order central difference. The two endpoint columns are dropped;
/// the returned range gives the source indices of the result columns.
pub fn central_difference(x: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, Range<usize>)> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let (rows, cols) = x.shape();
    if cols < 3 {
        return Err(Error::InsufficientData { needed: 3, got: cols });
    }
    let inv = 1.0 / (2.0 * dt);
    let out = DMatrix::from_fn(rows, cols - 2, |r, n| (x[(r, n + 2)] - x[(r, n)]) * inv);
    Ok((out, 1..cols - 1))
}

/// Stator flux linkage from terminal quantities: ∫(v − R·i) dt.
pub fn flux_from_measurables(
    i_dq0: &DMatrix<f64>,
    v_dq0: &DMatrix<f64>,
    resistance: [f64; 3],
    dt: f64,
) -> Result<DMatrix<f64>> {
    if i_dq0.shape() != v_dq0.shape() {
        return Err(Error::mismatch(
            "flux_from_measurables columns",
            i_dq0.ncols(),
            v_dq0.ncols(),
        ));
    }
    if i_dq0.nrows() != 3 {
        return Err(Error::mismatch("flux_from_measurables rows", 3, i_dq0.nrows()));
    }
    if resistance.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::invalid(format!("negative stator resistance {resistance:?}")));
    }
    let emf = DMatrix::from_fn(3, i_dq0.ncols(), |r, n| v_dq0[(r, n)] - resistance[r] * i_dq0[(r, n)]);
    cumulative_integral(&emf, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Current,
    Voltage,
}

/// Raw three-phase samples, one column per time instant.
#[derive(Debug, Clone)]
pub struct PhaseSignal {
    samples: DMatrix<f64>,
    quantity: Quantity,
    dt: f64,
}

impl PhaseSignal {
    /// `wye` asserts an isolated star point, so phase currents must sum to zero.
    pub fn new(samples: DMatrix<f64>, quantity: Quantity, dt: f64, wye: bool) -> Result<Self> {
        if samples.nrows() != 3 {
            return Err(Error::mismatch("phase signal rows", 3, samples.nrows()));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if samples.ncols() < 3 {
            return Err(Error::InsufficientData {
                needed: 3,
                got: samples.ncols(),
            });
        }
        if wye && quantity == Quantity::Current {
            for (n, col) in samples.column_iter().enumerate() {
                let sum = col[0] + col[1] + col[2];
                if !(sum.abs() < 1e-9) {
                    return Err(Error::invalid(format!(
                        "wye current sum {sum:e} A at sample {n} violates the star-point constraint"
                    )));
                }
            }
        }
        Ok(PhaseSignal { samples, quantity, dt })
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn to_dq0(&self) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(3, self.samples.ncols());
        for (n, col) in self.samples.column_iter().enumerate() {
            let dq0 = clarke_dq0([col[0], col[1], col[2]])?;
            out.column_mut(n).copy_from_slice(&dq0);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub i_dq0: [f64; 3],
}

impl StateVector {
    pub fn as_array(&self) -> [f64; STATE_DIM] {
        self.i_dq0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputVector {
    pub v_dq0: [f64; 3],
    pub current_integral: [f64; 3],
    pub voltage_integral: [f64; 3],
    gamma: f64,
    pub omega: f64,
}

impl InputVector {
    pub fn new(
        v_dq0: [f64; 3],
        current_integral: [f64; 3],
        voltage_integral: [f64; 3],
        gamma: f64,
        omega: f64,
    ) -> Self {
        InputVector {
            v_dq0,
            current_integral,
            voltage_integral,
            gamma: wrap_angle(gamma),
            omega,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn as_array(&self) -> [f64; INPUT_DIM] {
        let mut u = [0.0; INPUT_DIM];
        u[0..3].copy_from_slice(&self.v_dq0);
        u[3..6].copy_from_slice(&self.current_integral);
        u[6..9].copy_from_slice(&self.voltage_integral);
        u[input::ANGLE] = self.gamma;
        u[input::SPEED] = self.omega;
        u
    }
}

/// Wraps an angle into [0, 2π).
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Full-length state/input/output sequences of one subset.
#[derive(Debug, Clone)]
pub struct SubsetSeries {
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub outputs: Option<DMatrix<f64>>,
    pub dt: f64,
}

/// Builds the per-subset state and input sequences. Current and voltage
/// integrals restart from zero at the beginning of every subset.
pub fn subset_series(dataset: &TimeSeriesDataset, outputs_requested: bool) -> Result<Vec<SubsetSeries>> {
    let dt = dataset.dt();
    (0..dataset.subset_count())
        .map(|index| {
            let run = dataset.subset(index);
            let n = run.len();
            let states = DMatrix::from_fn(3, n, |r, k| run[k].i_dq0[r]);
            let voltages = DMatrix::from_fn(3, n, |r, k| run[k].v_dq0[r]);
            let i_int = cumulative_integral(&states, dt)?;
            let v_int = cumulative_integral(&voltages, dt)?;
            let mut inputs = DMatrix::zeros(INPUT_DIM, n);
            for k in 0..n {
                for r in 0..3 {
                    inputs[(input::VOLTAGE + r, k)] = voltages[(r, k)];
                    inputs[(input::CURRENT_INTEGRAL + r, k)] = i_int[(r, k)];
                    inputs[(input::VOLTAGE_INTEGRAL + r, k)] = v_int[(r, k)];
                }
                inputs[(input::ANGLE, k)] = wrap_angle(run[k].gamma);
                inputs[(input::SPEED, k)] = run[k].omega;
            }
            let outputs = if outputs_requested {
                let y = DMatrix::from_fn(OUTPUT_DIM, n, |r, k| match r {
                    0 => run[k].torque,
                    1 => run[k].ump[0],
                    _ => run[k].ump[1],
                });
                if let Some(bad) = y.row_iter().position(|row| row.iter().any(|v| !v.is_finite())) {
                    let name = ["T_e", "F_x", "F_y"][bad];
                    return Err(Error::MissingChannel(format!("{name} (subset {index})")));
                }
                Some(y)
            } else {
                None
            };
            Ok(SubsetSeries {
                states,
                inputs,
                outputs,
                dt,
            })
        })
        .collect()
}

/// Regression-ready snapshot matrices; column `n` of every matrix refers to
/// the same time instant.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub x: DMatrix<f64>,
    pub x_plus: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub dxdt: DMatrix<f64>,
    pub outputs: Option<DMatrix<f64>>,
    pub dt: f64,
    /// Number of columns contributed by each subset.
    pub subset_columns: Vec<usize>,
}

impl SnapshotSet {
    pub fn columns(&self) -> usize {
        self.x.ncols()
    }

    /// Keeps the columns in `range`.
    pub fn select_columns(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.columns() {
            return Err(Error::invalid(format!("column range {range:?} out of bounds")));
        }
        let len = range.len();
        let cols = |m: &DMatrix<f64>| m.columns(range.start, len).into_owned();
        Ok(SnapshotSet {
            x: cols(&self.x),
            x_plus: cols(&self.x_plus),
            inputs: cols(&self.inputs),
            dxdt: cols(&self.dxdt),
            outputs: self.outputs.as_ref().map(cols),
            dt: self.dt,
            subset_columns: vec![len],
        })
    }
}

fn hstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts[0].nrows();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    out
}

/// Assembles `X`, `X⁺`, `Υ`, `dX/dt` (and `Y` when requested) per subset and
/// concatenates the results; differences never straddle a subset boundary.
pub fn assemble_snapshots(dataset: &TimeSeriesDataset, outputs_requested: bool) -> Result<SnapshotSet> {
    let series = subset_series(dataset, outputs_requested)?;
    let mut xs = Vec::new();
    let mut xps = Vec::new();
    let mut us = Vec::new();
    let mut ds = Vec::new();
    let mut ys = Vec::new();
    let mut subset_columns = Vec::new();
    for s in &series {
        let (dxdt, interior) = central_difference(&s.states, s.dt)?;
        let len = interior.len();
        xs.push(s.states.columns(interior.start, len).into_owned());
        xps.push(s.states.columns(interior.start + 1, len).into_owned());
        us.push(s.inputs.columns(interior.start, len).into_owned());
        ds.push(dxdt);
        if let Some(y) = &s.outputs {
            ys.push(y.columns(interior.start, len).into_owned());
        }
        subset_columns.push(len);
    }
    if series.is_empty() {
        return Err(Error::InsufficientData { needed: 3, got: 0 });
    }
    Ok(SnapshotSet {
        x: hstack(&xs),
        x_plus: hstack(&xps),
        inputs: hstack(&us),
        dxdt: hstack(&ds),
        outputs: outputs_requested.then(|| hstack(&ys)),
        dt: dataset.dt(),
        subset_columns,
    })
}
