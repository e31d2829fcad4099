//! Control-effort and rendezvous metrics of a recorded run.
//!
//! Peaks and rms values are taken over every recorded sample. The steady-state
//! distance is the largest pairwise distance over the final fraction
//! `steady_window` of the run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Vec3;
use crate::sim::Trajectory;

pub const DEFAULT_STEADY_WINDOW: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub peak_thrust: f64,
    pub peak_torque: f64,
    pub rms_thrust: f64,
    pub rms_torque: f64,
    pub terminal_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vehicles: Vec<VehicleMetrics>,
    pub max_peak_thrust: f64,
    pub max_peak_torque: f64,
    pub max_rms_thrust: f64,
    pub max_rms_torque: f64,
    pub steady_window: f64,
    pub steady_state_max_distance: f64,
    pub initial_max_distance: f64,
    pub final_max_distance: f64,
    pub samples: usize,
    pub duration: f64,
}

pub fn max_pairwise_distance(positions: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            best = best.max((a - b).norm());
        }
    }
    best
}

pub fn compute_metrics(traj: &Trajectory) -> Result<MetricsReport> {
    compute_metrics_with_window(traj, DEFAULT_STEADY_WINDOW)
}

pub fn compute_metrics_with_window(traj: &Trajectory, steady_window: f64) -> Result<MetricsReport> {
    if traj.is_empty() {
        return Err(Error::Data("trajectory has no samples".into()));
    }
    if !(steady_window > 0.0 && steady_window <= 1.0) {
        return Err(Error::InvalidParameter(format!("steady window must be in (0, 1], got {steady_window}")));
    }
    let n = traj.vehicles();
    let count = traj.len() as f64;
    let vehicles: Vec<VehicleMetrics> = (0..n)
        .map(|i| {
            let thrust = traj.controls.iter().map(|c| c[i].thrust.abs());
            let torque = traj.controls.iter().map(|c| c[i].torque.norm());
            VehicleMetrics {
                peak_thrust: thrust.clone().fold(0.0, f64::max),
                peak_torque: torque.clone().fold(0.0, f64::max),
                rms_thrust: (thrust.map(|u| u * u).sum::<f64>() / count).sqrt(),
                rms_torque: (torque.map(|t| t * t).sum::<f64>() / count).sqrt(),
                terminal_speed: traj.states.last().expect("non-empty")[i].velocity.norm(),
            }
        })
        .collect();
    let network = |f: fn(&VehicleMetrics) -> f64| vehicles.iter().map(f).fold(0.0, f64::max);

    let t0 = traj.times[0];
    let t_end = *traj.times.last().expect("non-empty");
    let cutoff = t_end - steady_window * (t_end - t0);
    let distance = |states: &[crate::dynamics::VehicleState]| {
        max_pairwise_distance(&states.iter().map(|s| s.position).collect::<Vec<_>>())
    };
    let steady = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= cutoff)
        .map(|(_, s)| distance(s))
        .fold(0.0, f64::max);

    Ok(MetricsReport {
        max_peak_thrust: network(|v| v.peak_thrust),
        max_peak_torque: network(|v| v.peak_torque),
        max_rms_thrust: network(|v| v.rms_thrust),
        max_rms_torque: network(|v| v.rms_torque),
        vehicles,
        steady_window,
        steady_state_max_distance: steady,
        initial_max_distance: distance(&traj.states[0]),
        final_max_distance: distance(traj.states.last().expect("non-empty")),
        samples: traj.len(),
        duration: t_end - t0,
    })
}
