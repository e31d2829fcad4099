//! Equations of motion of a single thrust-and-torque actuated rigid body.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{hat, Mat3, Rotation, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleParams {
    mass: f64,
    inertia: Mat3,
    inertia_inv: Mat3,
}

impl VehicleParams {
    pub fn new(mass: f64, inertia: Mat3) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {mass}")));
        }
        if !inertia.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter("inertia has non-finite entries".into()));
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm() {
            return Err(Error::InvalidParameter("inertia matrix is not symmetric".into()));
        }
        let min_eig = inertia.symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "inertia matrix must be positive definite (smallest eigenvalue {min_eig})"
            )));
        }
        let inertia_inv =
            inertia.try_inverse().ok_or_else(|| Error::InvalidParameter("inertia matrix is singular".into()))?;
        Ok(Self { mass, inertia, inertia_inv })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &Mat3 {
        &self.inertia_inv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Inertial position, m.
    pub position: Vec3,
    /// Inertial velocity, m/s.
    pub velocity: Vec3,
    pub attitude: Rotation,
    /// Angular velocity in the body frame, rad/s.
    pub omega: Vec3,
}

impl VehicleState {
    pub fn at_rest(position: Vec3, attitude: Rotation) -> Self {
        Self { position, velocity: Vec3::zeros(), attitude, omega: Vec3::zeros() }
    }

    /// Thrust direction `q = −R e₃`.
    pub fn thrust_direction(&self) -> Vec3 {
        -(self.attitude.matrix().column(2).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
            && self.attitude.matrix().iter().all(|x| x.is_finite())
    }

    /// Rigidly rotates the inertial description of the vehicle by `r0`.
    pub fn rotated(&self, r0: &Rotation) -> Self {
        Self {
            position: r0 * &self.position,
            velocity: r0 * &self.velocity,
            attitude: *r0 * self.attitude,
            omega: self.omega,
        }
    }
}

/// Thrust magnitude along `q` and body torque. Thrust may be negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    /// N.
    pub thrust: f64,
    /// Body-frame torque, N·m.
    pub torque: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Inertial gravity vector, m/s².
    pub gravity: Vec3,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { gravity: Vec3::zeros() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub position: Vec3,
    pub velocity: Vec3,
    pub attitude: Mat3,
    pub omega: Vec3,
}

/// Translational acceleration `−(u/m) R e₃ + g + f_ext/m` for an inertial
/// external force `f_ext`.
pub fn linear_acceleration(
    attitude: &Rotation,
    thrust: f64,
    external_force: &Vec3,
    params: &VehicleParams,
    world: &WorldConfig,
) -> Vec3 {
    let axis = attitude.matrix().column(2).into_owned();
    (external_force - axis * thrust) / params.mass + world.gravity
}

/// Euler's equation `J ω̇ = τ − ω × Jω`.
pub fn angular_acceleration(omega: &Vec3, torque: &Vec3, params: &VehicleParams) -> Vec3 {
    params.inertia_inv * (torque - omega.cross(&(params.inertia * omega)))
}

pub fn state_derivative(
    state: &VehicleState,
    control: &ControlOutput,
    params: &VehicleParams,
    world: &WorldConfig,
) -> StateDerivative {
    StateDerivative {
        position: state.velocity,
        velocity: linear_acceleration(&state.attitude, control.thrust, &Vec3::zeros(), params, world),
        attitude: state.attitude.matrix() * hat(&state.omega),
        omega: angular_acceleration(&state.omega, &control.torque, params),
    }
}

/// `½ ωᵀ J ω`.
pub fn rotational_energy(state: &VehicleState, params: &VehicleParams) -> f64 {
    0.5 * state.omega.dot(&(params.inertia * state.omega))
}

/// Inertial angular momentum `R J ω`.
pub fn angular_momentum(state: &VehicleState, params: &VehicleParams) -> Vec3 {
    state.attitude.matrix() * (params.inertia * state.omega)
}
