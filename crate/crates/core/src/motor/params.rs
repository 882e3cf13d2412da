use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Catalogue data of the simulated machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nameplate {
    pub name: String,
    pub output_power: f64,
    pub line_voltage: f64,
    pub frequency: f64,
    pub torque: f64,
    pub speed_rpm: f64,
    pub pole_pairs: u32,
}

impl Default for Nameplate {
    fn default() -> Self {
        Nameplate {
            name: "Cantoni 2SIE 80-2B".into(),
            output_power: 1100.0,
            line_voltage: 400.0,
            frequency: 50.0,
            torque: 3.699,
            speed_rpm: 2840.0,
            pole_pairs: 1,
        }
    }
}

/// Electrical and mechanical constants of the surrogate machine.
///
/// All electrical quantities refer to the power-invariant dq0 frame, so the
/// resistances and inductances are per-phase equivalent-circuit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotorParameters {
    pub pole_pairs: u32,
    /// Ω
    pub stator_resistance: f64,
    /// Ω
    pub rotor_resistance: f64,
    /// H
    pub stator_leakage: f64,
    /// H
    pub rotor_leakage: f64,
    /// Unsaturated magnetizing inductance, H.
    pub magnetizing_inductance: f64,
    /// Wb
    pub saturation_flux: f64,
    pub saturation_exponent: f64,
    /// kg·m²
    pub inertia: f64,
    /// N·m·s
    pub friction: f64,
    /// N/Wb²
    pub ump_gain: f64,
    /// N·m/Wb²
    pub ripple_gain: f64,
    pub nameplate: Nameplate,
}

impl Default for MotorParameters {
    /// Values fitted against the nameplate: 3.699 N·m at 2840 rpm from a
    /// 400 V / 50 Hz supply, about 1.27 kW electrical input.
    fn default() -> Self {
        MotorParameters {
            pole_pairs: 1,
            stator_resistance: 7.0,
            rotor_resistance: 5.95,
            stator_leakage: 0.02,
            rotor_leakage: 0.02,
            magnetizing_inductance: 0.6,
            saturation_flux: 1.8,
            saturation_exponent: 4.0,
            inertia: 1.0e-3,
            friction: 1.0e-4,
            ump_gain: 600.0,
            ripple_gain: 0.07,
            nameplate: Nameplate::default(),
        }
    }
}

impl MotorParameters {
    pub fn validate(&self) -> Result<()> {
        if self.pole_pairs < 1 {
            return Err(Error::invalid("pole pair number must be at least 1"));
        }
        let positive = [
            ("stator_resistance", self.stator_resistance),
            ("rotor_resistance", self.rotor_resistance),
            ("stator_leakage", self.stator_leakage),
            ("rotor_leakage", self.rotor_leakage),
            ("magnetizing_inductance", self.magnetizing_inductance),
            ("saturation_flux", self.saturation_flux),
            ("saturation_exponent", self.saturation_exponent),
            ("inertia", self.inertia),
            ("friction", self.friction),
            ("ump_gain", self.ump_gain),
            ("ripple_gain", self.ripple_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EccentricityKind {
    Centric,
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EccentricityConfig {
    pub kind: EccentricityKind,
    /// Fraction of the mean air gap, in [0, 1).
    pub severity: f64,
    /// rad
    pub orientation: f64,
}

impl EccentricityConfig {
    pub fn centric() -> Self {
        EccentricityConfig {
            kind: EccentricityKind::Centric,
            severity: 0.0,
            orientation: 0.0,
        }
    }

    pub fn static_offset(severity: f64, orientation: f64) -> Self {
        EccentricityConfig {
            kind: EccentricityKind::Static,
            severity,
            orientation,
        }
    }

    pub fn dynamic(severity: f64, orientation: f64) -> Self {
        EccentricityConfig {
            kind: EccentricityKind::Dynamic,
            severity,
            orientation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.severity) {
            return Err(Error::invalid(format!(
                "eccentricity severity must lie in [0, 1), got {}",
                self.severity
            )));
        }
        if self.kind == EccentricityKind::Centric && self.severity != 0.0 {
            return Err(Error::invalid("a centric rotor has zero eccentricity"));
        }
        if !self.orientation.is_finite() {
            return Err(Error::invalid("eccentricity orientation must be finite"));
        }
        Ok(())
    }

    /// Direction of the minimum air gap at rotor angle `gamma`.
    pub fn axis(&self, gamma: f64) -> f64 {
        match self.kind {
            EccentricityKind::Dynamic => gamma + self.orientation,
            _ => self.orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LoadProfile {
    /// Uniform draws from [0, max_torque·V/nominal_voltage], redrawn at every steady state.
    Random { max_torque: f64, nominal_voltage: f64 },
    /// Fixed torque applied once the ramp completes.
    Constant { torque: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateDetector {
    /// rad/s²
    pub accel_threshold: f64,
    /// s
    pub hold_time: f64,
}

impl Default for SteadyStateDetector {
    fn default() -> Self {
        SteadyStateDetector {
            accel_threshold: 1.0,
            hold_time: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// RMS line voltage reached at the end of the ramp, V.
    pub line_voltage: f64,
    /// V_RMS/Hz
    pub vf_ratio: f64,
    /// Overrides V/f when set, Hz.
    pub frequency: Option<f64>,
    pub ramp_duration: f64,
    pub duration: f64,
    pub time_step: f64,
    pub load: LoadProfile,
    pub steady_state: SteadyStateDetector,
    pub seed: u64,
}

impl Default for SimulationConfig {
    /// One-second runs with a 0.3 s ramp.
    fn default() -> Self {
        SimulationConfig {
            line_voltage: 400.0,
            vf_ratio: 8.0,
            frequency: None,
            ramp_duration: 0.3,
            duration: 1.0,
            time_step: 1e-4,
            load: LoadProfile::Random {
                max_torque: 3.7,
                nominal_voltage: 400.0,
            },
            steady_state: SteadyStateDetector::default(),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    /// Five-second runs with a 1.5 s ramp.
    pub fn paper_scale() -> Self {
        SimulationConfig {
            ramp_duration: 1.5,
            duration: 5.0,
            ..SimulationConfig::default()
        }
    }

    pub fn supply_frequency(&self) -> f64 {
        self.frequency.unwrap_or(self.line_voltage / self.vf_ratio)
    }

    pub fn sample_count(&self) -> usize {
        (self.duration / self.time_step).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_step > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        if !(self.line_voltage >= 0.0) {
            return Err(Error::invalid("line voltage must be non-negative"));
        }
        if !(self.vf_ratio > 0.0) && self.frequency.is_none() {
            return Err(Error::invalid("V/f ratio must be positive"));
        }
        if !(self.ramp_duration >= 0.0) || !(self.duration >= self.ramp_duration) {
            return Err(Error::invalid(format!(
                "duration {} s must be at least the ramp duration {} s",
                self.duration, self.ramp_duration
            )));
        }
        if self.sample_count() < 3 {
            return Err(Error::InsufficientData {
                needed: 3,
                got: self.sample_count(),
            });
        }
        match self.load {
            LoadProfile::Random {
                max_torque,
                nominal_voltage,
            } => {
                if !(max_torque >= 0.0) || !(nominal_voltage > 0.0) {
                    return Err(Error::invalid("invalid random load range"));
                }
            }
            LoadProfile::Constant { torque } => {
                if !torque.is_finite() {
                    return Err(Error::invalid("load torque must be finite"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        MotorParameters::default().validate().unwrap();
        SimulationConfig::default().validate().unwrap();
        SimulationConfig::paper_scale().validate().unwrap();
        assert_eq!(SimulationConfig::default().supply_frequency(), 50.0);
    }

    #[test]
    fn rejects_bad_values() {
        let p = MotorParameters {
            rotor_resistance: -1.0,
            ..MotorParameters::default()
        };
        assert!(p.validate().is_err());
        let p = MotorParameters {
            pole_pairs: 0,
            ..MotorParameters::default()
        };
        assert!(p.validate().is_err());
        assert!(EccentricityConfig::static_offset(1.0, 0.0).validate().is_err());
        let bad = EccentricityConfig {
            kind: EccentricityKind::Centric,
            severity: 0.1,
            orientation: 0.0,
        };
        assert!(bad.validate().is_err());
        let c = SimulationConfig {
            duration: 0.1,
            ramp_duration: 0.2,
            ..SimulationConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = SimulationConfig::paper_scale();
        let s = serde_json::to_string(&c).unwrap();
        let back: SimulationConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        let partial: SimulationConfig = serde_json::from_str(r#"{"duration": 2.0}"#).unwrap();
        assert_eq!(partial.duration, 2.0);
        assert_eq!(partial.ramp_duration, 0.3);
    }
}
