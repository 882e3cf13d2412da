//! Stationary-frame dq induction machine with a saturable magnetizing branch
//! and analytical eccentricity effects.
//!
//! States are the stator and rotor flux linkages (d/q), the rotor angle and
//! the mechanical speed. The zero-sequence axis carries no current because
//! the stator is wye connected with an isolated star point.

use crate::error::{Error, Result};
use crate::transforms::clarke_unchecked;

use super::params::{EccentricityConfig, EccentricityKind, MotorParameters};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MachineState {
    pub lambda_s: [f64; 2],
    pub lambda_r: [f64; 2],
    /// Unwrapped rotor mechanical angle, rad.
    pub gamma: f64,
    /// rad/s
    pub omega: f64,
}

impl MachineState {
    fn axpy(&self, h: f64, d: &MachineState) -> MachineState {
        MachineState {
            lambda_s: [
                self.lambda_s[0] + h * d.lambda_s[0],
                self.lambda_s[1] + h * d.lambda_s[1],
            ],
            lambda_r: [
                self.lambda_r[0] + h * d.lambda_r[0],
                self.lambda_r[1] + h * d.lambda_r[1],
            ],
            gamma: self.gamma + h * d.gamma,
            omega: self.omega + h * d.omega,
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        let checks = [
            ("lambda_s_d", self.lambda_s[0]),
            ("lambda_s_q", self.lambda_s[1]),
            ("lambda_r_d", self.lambda_r[0]),
            ("lambda_r_q", self.lambda_r[1]),
            ("gamma_r", self.gamma),
            ("omega_r", self.omega),
        ];
        checks.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Currents {
    pub stator: [f64; 2],
    pub rotor: [f64; 2],
    pub magnetizing_flux: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Machine {
    params: MotorParameters,
    ecc: EccentricityConfig,
    /// Unsaturated magnetizing inductance including the mean-permeance
    /// increase of the eccentric gap.
    lm0: f64,
    locked_speed: Option<f64>,
}

impl Machine {
    pub fn new(params: MotorParameters, ecc: EccentricityConfig) -> Result<Self> {
        params.validate()?;
        ecc.validate()?;
        let lm0 = params.magnetizing_inductance / (1.0 - ecc.severity * ecc.severity).sqrt();
        Ok(Machine {
            params,
            ecc,
            lm0,
            locked_speed: None,
        })
    }

    /// Holds the rotor at a fixed speed; the mechanical equation is ignored.
    pub fn with_locked_speed(mut self, omega: f64) -> Self {
        self.locked_speed = Some(omega);
        self
    }

    pub fn params(&self) -> &MotorParameters {
        &self.params
    }

    pub fn eccentricity(&self) -> &EccentricityConfig {
        &self.ecc
    }

    pub fn locked_speed(&self) -> Option<f64> {
        self.locked_speed
    }

    /// Effective magnetizing inductance at magnetizing flux magnitude `flux`.
    pub fn magnetizing_inductance(&self, flux: f64) -> f64 {
        let p = &self.params;
        self.lm0 / (1.0 + (flux / p.saturation_flux).powf(p.saturation_exponent))
    }

    /// Recovers currents from flux linkages.
    ///
    /// With isotropic saturation λ_m is parallel to λ_s/L_ls + λ_r/L_lr; its
    /// magnitude solves M·(1/L_m(M) + 1/L_ls + 1/L_lr) = |λ_s/L_ls + λ_r/L_lr|.
    /// The left side is convex and increasing, so Newton from the linear
    /// estimate (an upper bound) converges monotonically.
    pub fn currents(&self, state: &MachineState) -> Currents {
        let p = &self.params;
        let (lls, llr) = (p.stator_leakage, p.rotor_leakage);
        let c = 1.0 / lls + 1.0 / llr;
        let a = [
            state.lambda_s[0] / lls + state.lambda_r[0] / llr,
            state.lambda_s[1] / lls + state.lambda_r[1] / llr,
        ];
        let target = a[0].hypot(a[1]);
        let lm = if target == 0.0 {
            [0.0, 0.0]
        } else {
            let k = p.saturation_exponent;
            let inv_sat = 1.0 / p.saturation_flux;
            let mut m = target / (1.0 / self.lm0 + c);
            for _ in 0..60 {
                let r = (m * inv_sat).powf(k);
                let g = m * ((1.0 + r) / self.lm0 + c) - target;
                let dg = (1.0 + (k + 1.0) * r) / self.lm0 + c;
                let step = g / dg;
                m -= step;
                if step.abs() <= 1e-15 * m.abs() {
                    break;
                }
            }
            let s = m / target;
            [a[0] * s, a[1] * s]
        };
        Currents {
            stator: [(state.lambda_s[0] - lm[0]) / lls, (state.lambda_s[1] - lm[1]) / lls],
            rotor: [(state.lambda_r[0] - lm[0]) / llr, (state.lambda_r[1] - lm[1]) / llr],
            magnetizing_flux: lm,
        }
    }

    /// p(λ_d i_q − λ_q i_d) from the stator flux and current.
    pub fn electromagnetic_torque(&self, state: &MachineState, cur: &Currents) -> f64 {
        self.params.pole_pairs as f64 * (state.lambda_s[0] * cur.stator[1] - state.lambda_s[1] * cur.stator[0])
    }

    /// Reluctance torque of the eccentric gap:
    /// k_T·ε·|λ_m|²·sin(2θ_m − 2β), with θ_m the magnetizing flux angle and
    /// β the minimum-gap axis.
    pub fn ripple_torque(&self, state: &MachineState, cur: &Currents) -> f64 {
        if self.ecc.kind == EccentricityKind::Centric || self.ecc.severity == 0.0 {
            return 0.0;
        }
        let [md, mq] = cur.magnetizing_flux;
        let beta2 = 2.0 * self.ecc.axis(state.gamma);
        self.params.ripple_gain * self.ecc.severity * (2.0 * md * mq * beta2.cos() - (md * md - mq * mq) * beta2.sin())
    }

    pub fn compute_torque(&self, state: &MachineState) -> f64 {
        let cur = self.currents(state);
        self.torque_from(state, &cur)
    }

    fn torque_from(&self, state: &MachineState, cur: &Currents) -> f64 {
        self.electromagnetic_torque(state, cur) + self.ripple_torque(state, cur)
    }

    /// Unbalanced magnetic pull along the minimum-gap axis, N.
    pub fn compute_ump(&self, state: &MachineState) -> [f64; 2] {
        let cur = self.currents(state);
        self.ump_from(state, &cur)
    }

    fn ump_from(&self, state: &MachineState, cur: &Currents) -> [f64; 2] {
        if self.ecc.kind == EccentricityKind::Centric || self.ecc.severity == 0.0 {
            return [0.0, 0.0];
        }
        let [md, mq] = cur.magnetizing_flux;
        let mag = self.params.ump_gain * self.ecc.severity * (md * md + mq * mq);
        let beta = self.ecc.axis(state.gamma);
        [mag * beta.cos(), mag * beta.sin()]
    }

    /// Time derivative of the state for stator voltage `v_dq` (d and q only).
    pub fn derivative(&self, state: &MachineState, v_dq: [f64; 2], load: f64) -> MachineState {
        let cur = self.currents(state);
        self.derivative_with(state, &cur, v_dq, load)
    }

    fn derivative_with(&self, state: &MachineState, cur: &Currents, v_dq: [f64; 2], load: f64) -> MachineState {
        let p = &self.params;
        let we = p.pole_pairs as f64 * state.omega;
        let [rd, rq] = state.lambda_r;
        let domega = match self.locked_speed {
            Some(_) => 0.0,
            None => (self.torque_from(state, cur) - load - p.friction * state.omega) / p.inertia,
        };
        MachineState {
            lambda_s: [
                v_dq[0] - p.stator_resistance * cur.stator[0],
                v_dq[1] - p.stator_resistance * cur.stator[1],
            ],
            lambda_r: [
                -p.rotor_resistance * cur.rotor[0] - we * rq,
                -p.rotor_resistance * cur.rotor[1] + we * rd,
            ],
            gamma: state.omega,
            omega: domega,
        }
    }

    /// Advances one classical RK4 step. The supply is sampled at the start,
    /// midpoint and end of the step; the load is held constant.
    pub fn step<F>(&self, state: &MachineState, t: f64, supply: &F, load: f64, dt: f64) -> Result<MachineState>
    where
        F: Fn(f64) -> [f64; 3],
    {
        let v = |time: f64| {
            let dq0 = clarke_unchecked(supply(time));
            [dq0[0], dq0[1]]
        };
        let mut s0 = *state;
        if let Some(w) = self.locked_speed {
            s0.omega = w;
        }
        let (v0, vm, v1) = (v(t), v(t + 0.5 * dt), v(t + dt));
        let k1 = self.derivative(&s0, v0, load);
        let k2 = self.derivative(&s0.axpy(0.5 * dt, &k1), vm, load);
        let k3 = self.derivative(&s0.axpy(0.5 * dt, &k2), vm, load);
        let k4 = self.derivative(&s0.axpy(dt, &k3), v1, load);
        let next = MachineState {
            lambda_s: [
                s0.lambda_s[0]
                    + dt / 6.0 * (k1.lambda_s[0] + 2.0 * k2.lambda_s[0] + 2.0 * k3.lambda_s[0] + k4.lambda_s[0]),
                s0.lambda_s[1]
                    + dt / 6.0 * (k1.lambda_s[1] + 2.0 * k2.lambda_s[1] + 2.0 * k3.lambda_s[1] + k4.lambda_s[1]),
            ],
            lambda_r: [
                s0.lambda_r[0]
                    + dt / 6.0 * (k1.lambda_r[0] + 2.0 * k2.lambda_r[0] + 2.0 * k3.lambda_r[0] + k4.lambda_r[0]),
                s0.lambda_r[1]
                    + dt / 6.0 * (k1.lambda_r[1] + 2.0 * k2.lambda_r[1] + 2.0 * k3.lambda_r[1] + k4.lambda_r[1]),
            ],
            gamma: s0.gamma + dt / 6.0 * (k1.gamma + 2.0 * k2.gamma + 2.0 * k3.gamma + k4.gamma),
            omega: s0.omega + dt / 6.0 * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega),
        };
        match next.first_non_finite() {
            Some(q) => Err(Error::Divergence {
                quantity: q.to_string(),
                time: t + dt,
            }),
            None => Ok(next),
        }
    }

    /// Magnetic plus kinetic energy, J.
    pub fn stored_energy(&self, state: &MachineState) -> f64 {
        let p = &self.params;
        let cur = self.currents(state);
        let sq = |v: [f64; 2]| v[0] * v[0] + v[1] * v[1];
        let m = sq(cur.magnetizing_flux).sqrt();
        let k = p.saturation_exponent;
        let magnetizing = (0.5 * m * m + m.powf(k + 2.0) / ((k + 2.0) * p.saturation_flux.powf(k))) / self.lm0;
        0.5 * p.stator_leakage * sq(cur.stator)
            + 0.5 * p.rotor_leakage * sq(cur.rotor)
            + magnetizing
            + 0.5 * p.inertia * state.omega * state.omega
    }

    /// Torque, pull and stator currents observed at `state`.
    pub fn observe(&self, state: &MachineState) -> Observation {
        let cur = self.currents(state);
        Observation {
            torque: self.torque_from(state, &cur),
            ump: self.ump_from(state, &cur),
            currents: cur,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub torque: f64,
    pub ump: [f64; 2],
    pub currents: Currents,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn machine(ecc: EccentricityConfig) -> Machine {
        Machine::new(MotorParameters::default(), ecc).unwrap()
    }

    /// State with magnetizing flux (md, mq) and no stator current.
    fn no_stator_current(m: &Machine, md: f64, mq: f64, gamma: f64) -> MachineState {
        let lm = m.magnetizing_inductance(md.hypot(mq));
        let llr = m.params().rotor_leakage;
        MachineState {
            lambda_s: [md, mq],
            lambda_r: [md + llr * md / lm, mq + llr * mq / lm],
            gamma,
            omega: 0.0,
        }
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let m = machine(EccentricityConfig::centric());
        let mut s = MachineState::default();
        let zero = |_t: f64| [0.0; 3];
        for k in 0..1000 {
            s = m.step(&s, k as f64 * 1e-4, &zero, 0.0, 1e-4).unwrap();
        }
        assert_eq!(s, MachineState::default());
    }

    #[test]
    fn currents_invert_flux_equations() {
        let m = machine(EccentricityConfig::centric());
        let s = MachineState {
            lambda_s: [1.1, -0.4],
            lambda_r: [0.9, -0.5],
            gamma: 0.0,
            omega: 0.0,
        };
        let c = m.currents(&s);
        let p = m.params();
        let im = [c.stator[0] + c.rotor[0], c.stator[1] + c.rotor[1]];
        let mmag = c.magnetizing_flux[0].hypot(c.magnetizing_flux[1]);
        let lm = m.magnetizing_inductance(mmag);
        for k in 0..2 {
            assert!((p.stator_leakage * c.stator[k] + c.magnetizing_flux[k] - s.lambda_s[k]).abs() < 1e-12);
            assert!((p.rotor_leakage * c.rotor[k] + c.magnetizing_flux[k] - s.lambda_r[k]).abs() < 1e-12);
            assert!((lm * im[k] - c.magnetizing_flux[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn saturation_is_monotone() {
        let m = machine(EccentricityConfig::centric());
        let mut prev = f64::INFINITY;
        for k in 0..400 {
            let l = m.magnetizing_inductance(k as f64 * 0.01);
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn centric_torque_is_the_flux_current_product() {
        let m = machine(EccentricityConfig::centric());
        let s = MachineState {
            lambda_s: [1.1, -0.4],
            lambda_r: [0.9, -0.5],
            gamma: 1.3,
            omega: 100.0,
        };
        let c = m.currents(&s);
        let direct = s.lambda_s[0] * c.stator[1] - s.lambda_s[1] * c.stator[0];
        assert_eq!(m.compute_torque(&s), direct);
        assert_eq!(m.compute_ump(&s), [0.0, 0.0]);
        assert_eq!(m.compute_torque(&MachineState::default()), 0.0);
    }

    #[test]
    fn ripple_hand_value() {
        // ε = 0.5, |λ_m|² = 1, k_T = 0.1, 2θ − 2β = π/2
        let mut p = MotorParameters::default();
        p.ripple_gain = 0.1;
        let m = Machine::new(p, EccentricityConfig::static_offset(0.5, 0.0)).unwrap();
        let theta = PI / 4.0;
        let s = no_stator_current(&m, theta.cos(), theta.sin(), 0.7);
        let c = m.currents(&s);
        assert!(c.stator[0].abs() < 1e-12 && c.stator[1].abs() < 1e-12);
        assert!((m.ripple_torque(&s, &c) - 0.05).abs() < 1e-12);
        // with zero stator current the flux–current product vanishes
        assert!((m.compute_torque(&s) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ump_direction_follows_eccentricity_axis() {
        let m = machine(EccentricityConfig::static_offset(0.5, 0.0));
        let s = no_stator_current(&m, 1.0, 0.0, 0.0);
        let f = m.compute_ump(&s);
        assert!((f[0] - 600.0 * 0.5).abs() < 1e-9 && f[1].abs() < 1e-12);

        let dynamic = machine(EccentricityConfig::dynamic(0.5, 0.2));
        let s = no_stator_current(&dynamic, 1.0, 0.0, 1.0);
        let f = dynamic.compute_ump(&s);
        assert!((f[1].atan2(f[0]) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn locked_speed_holds_omega() {
        let m = machine(EccentricityConfig::centric()).with_locked_speed(10.0);
        let supply = |t: f64| [100.0 * t, -50.0 * t, -50.0 * t];
        let s = m.step(&MachineState::default(), 0.0, &supply, 0.0, 1e-4).unwrap();
        assert_eq!(s.omega, 10.0);
        assert!((s.gamma - 10.0 * 1e-4).abs() < 1e-15);
    }

    #[test]
    fn divergence_names_quantity() {
        let m = machine(EccentricityConfig::centric());
        let supply = |_t: f64| [f64::NAN, 0.0, 0.0];
        let err = m.step(&MachineState::default(), 0.5, &supply, 0.0, 1e-4).unwrap_err();
        match err {
            Error::Divergence { quantity, time } => {
                assert!(quantity.starts_with("lambda") || quantity == "omega_r");
                assert!((time - 0.5001).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
