use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::library::LibraryDims;
use crate::transforms::{input, subset_series, STATE_DIM};

use super::SindycModel;

/// Default bound on any predicted state entry.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutMode {
    /// Current integrals are read from the recording.
    TeacherForced,
    /// Current integrals accumulate the predicted current.
    ClosedLoop,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// Predicted states, one column per step; shorter than the input series
    /// when the prediction diverged.
    pub states: DMatrix<f64>,
    /// Step at which a state left the divergence bound.
    pub diverged_at: Option<usize>,
    pub mode: RolloutMode,
}

/// Integrates `dx/dt = Ξ Θ(x, u)` with RK4 at step `dt`, holding the inputs
/// of column k constant over step k.
pub fn rollout(
    model: &SindycModel,
    inputs: &DMatrix<f64>,
    x0: &[f64],
    dt: f64,
    mode: RolloutMode,
    bound: f64,
) -> Result<Rollout> {
    let core = &model.core;
    let dims = core.library.dims();
    if x0.len() != dims.state {
        return Err(Error::mismatch("initial state", dims.state, x0.len()));
    }
    if inputs.nrows() != dims.input {
        return Err(Error::mismatch("rollout inputs", dims.input, inputs.nrows()));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("rollout step must be positive"));
    }
    let m = dims.state;
    let n = inputs.ncols();
    // integrals of the predicted current only exist for the motor layout
    let accumulate = mode == RolloutMode::ClosedLoop && dims == LibraryDims::MOTOR;
    let mut ws = core.workspace();
    let mut states = DMatrix::zeros(m, n);
    let mut x = x0.to_vec();
    let mut u: Vec<f64> = inputs.column(0).iter().copied().collect();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    let eval = |state: &[f64], u: &[f64], out: &mut [f64], ws: &mut super::Workspace| {
        ws.xu[..m].copy_from_slice(state);
        ws.xu[m..].copy_from_slice(u);
        core.predict_into(ws, out);
    };
    let out_of_bounds = |x: &[f64]| x.iter().any(|v| !(v.abs() <= bound));
    if out_of_bounds(&x) {
        return Ok(Rollout {
            states: DMatrix::zeros(m, 0),
            diverged_at: Some(0),
            mode,
        });
    }
    for k in 0..n {
        states.column_mut(k).copy_from_slice(&x);
        if k + 1 == n {
            break;
        }
        eval(&x, &u, &mut k1, &mut ws);
        for i in 0..m {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        eval(&tmp, &u, &mut k2, &mut ws);
        for i in 0..m {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        eval(&tmp, &u, &mut k3, &mut ws);
        for i in 0..m {
            tmp[i] = x[i] + dt * k3[i];
        }
        eval(&tmp, &u, &mut k4, &mut ws);
        let prev = x.clone();
        for i in 0..m {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if out_of_bounds(&x) {
            return Ok(Rollout {
                states: states.columns(0, k + 1).into_owned(),
                diverged_at: Some(k + 1),
                mode,
            });
        }
        if accumulate {
            let integral: [f64; STATE_DIM] =
                std::array::from_fn(|r| u[input::CURRENT_INTEGRAL + r] + 0.5 * dt * (prev[r] + x[r]));
            u.copy_from_slice(inputs.column(k + 1).as_slice());
            u[input::CURRENT_INTEGRAL..input::CURRENT_INTEGRAL + STATE_DIM].copy_from_slice(&integral);
        } else {
            u.copy_from_slice(inputs.column(k + 1).as_slice());
        }
    }
    Ok(Rollout {
        states,
        diverged_at: None,
        mode,
    })
}

/// Rolls out every subset of `dataset` from its recorded initial current.
pub fn rollout_dataset(model: &SindycModel, dataset: &TimeSeriesDataset, mode: RolloutMode) -> Result<Vec<Rollout>> {
    if model.core.library.dims() != LibraryDims::MOTOR {
        return Err(Error::mismatch(
            "model state dimension",
            STATE_DIM,
            model.core.library.dims().state,
        ));
    }
    subset_series(dataset, false)?
        .iter()
        .map(|s| {
            let x0: Vec<f64> = s.states.column(0).iter().copied().collect();
            rollout(model, &s.inputs, &x0, s.dt, mode, DIVERGENCE_BOUND)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ModelCore, Provenance};
    use crate::library::{build_library, preset_library, TermDescriptor};
    use crate::regression::{OptimizerConfig, WeightMatrix};

    fn model(lib: crate::library::CandidateLibrary, coefs: DMatrix<f64>) -> SindycModel {
        let p = lib.len();
        let r = coefs.nrows();
        SindycModel {
            core: ModelCore {
                library: lib,
                weights: WeightMatrix::new(coefs),
                scales: vec![1.0; p],
                target_scales: vec![1.0; r],
                provenance: Provenance {
                    optimizer: OptimizerConfig::lasso(0.0),
                    training_digest: String::new(),
                    library_id: None,
                    degenerate_terms: vec![],
                },
            },
        }
    }

    fn linear_model(a: &[f64], dims: LibraryDims) -> SindycModel {
        let m = dims.state;
        let lib = build_library((0..m).map(|i| TermDescriptor::monomial(&[i])).collect(), dims).unwrap();
        model(lib, DMatrix::from_row_slice(m, m, a))
    }

    #[test]
    fn zero_model_stays_at_zero() {
        let lib = preset_library(1).unwrap();
        let p = lib.len();
        let m = model(lib, DMatrix::zeros(3, p));
        let u = DMatrix::from_fn(11, 50, |r, k| (r * k) as f64 * 0.01);
        let mut u0 = u.clone();
        u0.fixed_rows_mut::<3>(3).fill(0.0);
        let r = rollout(&m, &u0, &[0.0; 3], 1e-3, RolloutMode::ClosedLoop, DIVERGENCE_BOUND).unwrap();
        assert!(r.states.iter().all(|&v| v == 0.0));
        assert_eq!(r.states.ncols(), 50);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let dims = LibraryDims { state: 1, input: 0 };
        let m = linear_model(&[-2.0], dims);
        let n = 10_001;
        let r = rollout(
            &m,
            &DMatrix::zeros(0, n),
            &[1.0],
            1e-4,
            RolloutMode::ClosedLoop,
            DIVERGENCE_BOUND,
        )
        .unwrap();
        for k in (0..n).step_by(500) {
            let exact = (-2.0 * k as f64 * 1e-4).exp();
            assert!((r.states[(0, k)] - exact).abs() <= 1e-5 * exact);
        }
    }

    #[test]
    fn rk4_step_matches_matrix_exponential() {
        // rotation with decay: eigenvalues -0.1 ± 2i
        let dims = LibraryDims { state: 2, input: 0 };
        let m = linear_model(&[-0.1, 2.0, -2.0, -0.1], dims);
        let exact = |h: f64| {
            let e = (-0.1 * h).exp();
            [e * (2.0 * h).cos(), -e * (2.0 * h).sin()]
        };
        let mut errs = Vec::new();
        for h in [0.1, 0.05] {
            let r = rollout(
                &m,
                &DMatrix::zeros(0, 2),
                &[1.0, 0.0],
                h,
                RolloutMode::TeacherForced,
                DIVERGENCE_BOUND,
            )
            .unwrap();
            let e = exact(h);
            errs.push(((r.states[(0, 1)] - e[0]).powi(2) + (r.states[(1, 1)] - e[1]).powi(2)).sqrt());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 4.7, "local order {order}, errors {errs:?}");
    }

    #[test]
    fn divergence_truncates() {
        let dims = LibraryDims { state: 1, input: 0 };
        let m = linear_model(&[50.0], dims);
        let r = rollout(
            &m,
            &DMatrix::zeros(0, 10_000),
            &[1.0],
            1e-2,
            RolloutMode::ClosedLoop,
            1e6,
        )
        .unwrap();
        let k = r.diverged_at.unwrap();
        assert_eq!(r.states.ncols(), k);
        assert!(r.states.iter().all(|v| v.abs() <= 1e6));
        assert!(k < 200);
    }

    #[test]
    fn modes_agree_when_recorded_current_is_the_prediction() {
        // di_d/dt = v_d - I_q, di_q/dt = I_d: the prediction depends on the
        // current integrals, so the two modes only agree if the recorded
        // integrals are exactly those of the predicted current
        let lib = build_library(
            vec![
                TermDescriptor::monomial(&[3]),
                TermDescriptor::monomial(&[6]),
                TermDescriptor::monomial(&[7]),
            ],
            LibraryDims::MOTOR,
        )
        .unwrap();
        let m = model(
            lib,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        );
        let n = 400;
        let dt = 1e-3;
        let mut u = DMatrix::zeros(11, n);
        u.row_mut(0).fill(1.0);
        let closed = rollout(&m, &u, &[0.0; 3], dt, RolloutMode::ClosedLoop, DIVERGENCE_BOUND).unwrap();
        let integral = crate::transforms::cumulative_integral(&closed.states, dt).unwrap();
        u.fixed_rows_mut::<3>(3).copy_from(&integral);
        let forced = rollout(&m, &u, &[0.0; 3], dt, RolloutMode::TeacherForced, DIVERGENCE_BOUND).unwrap();
        assert_eq!(closed.states, forced.states);
        assert!(closed.states[(1, n - 1)] > 0.0);

        let mut stale = u.clone();
        stale.fixed_rows_mut::<3>(3).fill(0.0);
        let forced_zero = rollout(&m, &stale, &[0.0; 3], dt, RolloutMode::TeacherForced, DIVERGENCE_BOUND).unwrap();
        assert_ne!(forced_zero.states, closed.states);
    }
}
