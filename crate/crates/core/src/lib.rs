//! Simulation and analysis of distributed rendezvous for fleets of
//! thrust-and-torque actuated rigid bodies.
//!
//! Each vehicle senses the relative positions and velocities of its
//! neighbours in its own body frame and applies a thrust along its body
//! `−e₃` axis plus a body torque. A linear double-integrator consensus law
//! supplies the desired acceleration; an inner loop turns the thrust axis
//! toward it.

pub mod cli;
pub mod consensus;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod lie;
pub mod metrics;
pub mod monitor;
pub mod output;
pub mod scenario;
pub mod sim;

pub use consensus::{ConsensusLaw, EdgeGain, LyapunovForm, RelativeClosedLoop};
pub use control::{control, measure, BodyMeasurement, ControlGains};
pub use dynamics::{ControlOutput, VehicleParams, VehicleState, WorldConfig};
pub use error::{Error, Result};
pub use graph::SensorDigraph;
pub use lie::{Mat3, Rotation, Vec3};
pub use metrics::{compute_metrics, MetricsReport};
pub use monitor::{Monitor, MonitorConfig, MonitorSample};
pub use scenario::{emit_scenario, load_scenario, Scenario};
pub use sim::{run, DisturbanceSpec, Fleet, SimConfig, Trajectory};
