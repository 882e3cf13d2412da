//! Induction-machine surrogate with air-gap eccentricity.

mod machine;
mod params;
mod sim;

pub use machine::{Currents, Machine, MachineState, Observation};
pub use params::{
    EccentricityConfig, EccentricityKind, LoadProfile, MotorParameters, Nameplate, SimulationConfig,
    SteadyStateDetector,
};
pub use sim::{
    check_nameplate, derive_seed, eccentricity_configs, generate_dataset_suite, simulate_run, supply_profile,
    DatasetSuite, NameplateCheck, SuiteConfig,
};
