//! Local and distributed rendezvous feedback.
//!
//! Each vehicle sees only the positions and velocities of its neighbours
//! relative to itself, expressed in its own body frame, plus its own body
//! rate. From these it computes the consensus force `f` in body coordinates
//! and the thrust/torque pair
//!
//! ```text
//! u = −m (f · e₃)
//! τ = ω × Jω − k₁ J((ω × f) × e₃) − k₁² k₂ (ω − k₁ (f × e₃))
//! ```
//!
//! The inner loop steers `ω` toward `k₁ (f × e₃)`, which rotates the thrust
//! axis toward the desired force.

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusLaw;
use crate::dynamics::{ControlOutput, VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::graph::SensorDigraph;
use crate::lie::{e3, Vec3};

/// What vehicle `vehicle` can measure: per-neighbour relative position and
/// velocity in its body frame, in `neighbors()` order, and its own body rate.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyMeasurement {
    pub vehicle: usize,
    pub relative: Vec<(Vec3, Vec3)>,
    pub omega: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    pub k1: f64,
    pub k2: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self { k1: 2.0, k2: 0.45 }
    }
}

impl ControlGains {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1.is_finite() && k1 > 0.0 && k2.is_finite() && k2 > 0.0) {
            return Err(Error::InvalidParameter(format!("gains must be positive, got k1={k1}, k2={k2}")));
        }
        Ok(Self { k1, k2 })
    }

    /// Conditions under which the convergence guarantee is not known to hold.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k1 <= 1.0 {
            out.push(format!("k1 = {} <= 1: the rotational-decrease estimate requires k1 > 1", self.k1));
        }
        out
    }

    /// Damping rate `k₁² k₂` of the body-rate tracking loop, in N·m·s.
    pub fn rate_damping(&self) -> f64 {
        self.k1 * self.k1 * self.k2
    }
}

pub fn measure(states: &[VehicleState], graph: &SensorDigraph, i: usize) -> Result<BodyMeasurement> {
    if states.len() != graph.len() {
        return Err(Error::LengthMismatch { expected: graph.len(), actual: states.len() });
    }
    let own = states.get(i).ok_or(Error::IndexOutOfRange { index: i, n: states.len() })?;
    let relative = graph
        .neighbors(i)?
        .iter()
        .map(|&j| {
            let other = &states[j];
            (
                own.attitude.to_body(&(other.position - own.position)),
                own.attitude.to_body(&(other.velocity - own.velocity)),
            )
        })
        .collect();
    Ok(BodyMeasurement { vehicle: i, relative, omega: own.omega })
}

/// `k₁ (f × e₃)`: the body rate that turns the thrust axis toward `f`.
pub fn reference_omega(f_body: &Vec3, k1: f64) -> Vec3 {
    f_body.cross(&e3()) * k1
}

/// Thrust and torque from a body-frame consensus force and a body rate.
pub fn control_from_force(f_body: &Vec3, omega: &Vec3, gains: &ControlGains, params: &VehicleParams) -> ControlOutput {
    let j = params.inertia();
    let thrust = -params.mass() * f_body.dot(&e3());
    let gyroscopic = omega.cross(&(j * omega));
    let feedforward = j * omega.cross(f_body).cross(&e3()) * gains.k1;
    let tracking = (omega - reference_omega(f_body, gains.k1)) * gains.rate_damping();
    ControlOutput { thrust, torque: gyroscopic - feedforward - tracking }
}

pub fn control(
    meas: &BodyMeasurement,
    law: &ConsensusLaw,
    gains: &ControlGains,
    params: &VehicleParams,
) -> Result<ControlOutput> {
    let f = law.eval(meas.vehicle, &meas.relative)?;
    Ok(control_from_force(&f, &meas.omega, gains, params))
}

/// `f_i(y_i)` evaluated on inertial relative states.
pub fn ideal_inertial_force(states: &[VehicleState], law: &ConsensusLaw, i: usize) -> Result<Vec3> {
    let own = states.get(i).ok_or(Error::IndexOutOfRange { index: i, n: states.len() })?;
    let y: Vec<_> = law
        .graph()
        .neighbors(i)?
        .iter()
        .map(|&j| (states[j].position - own.position, states[j].velocity - own.velocity))
        .collect();
    law.eval(i, &y)
}
