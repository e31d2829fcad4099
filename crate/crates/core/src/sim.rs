//! Fixed-step closed-loop simulation of the whole fleet.
//!
//! Translational and rate states use the classical four-stage Runge–Kutta
//! tableau. Attitudes are advanced in the Munthe-Kaas fashion: each stage
//! carries a local rotation vector `σ` with `R = R₀ exp(σ)`, integrated with
//! the truncated inverse right Jacobian `σ̇ = ω + ½ σ×ω + (1/12) σ×(σ×ω)`, and
//! the step ends with `R₁ = R₀ exp(σ₁)` projected back onto SO(3).
//!
//! Disturbances are drawn from a ChaCha8 stream seeded by `SimConfig::seed`
//! and held constant between updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusLaw, RelativeClosedLoop};
use crate::control::{control_from_force, measure, ControlGains};
use crate::dynamics::{
    angular_acceleration, linear_acceleration, ControlOutput, VehicleParams, VehicleState, WorldConfig,
};
use crate::error::{Error, Result};
use crate::lie::{random_unit_vector, reorthonormalize, so3_exp, Rotation, Vec3};
use crate::monitor::{Monitor, MonitorSample};
use crate::scenario::Scenario;

pub const MAX_DT: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Controls computed once per step from the start-of-step state.
    #[default]
    ZeroOrderHold,
    /// Controls re-evaluated at every Runge–Kutta stage.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    /// Bound on the inertial force noise, N.
    pub force_max: f64,
    /// Bound on the body torque noise, N·m.
    pub torque_max: f64,
    /// Bound on the gyro measurement error, rad/s.
    pub gyro_max: f64,
    /// Bound on the rotation applied to the consensus force, rad.
    pub f_angle_max: f64,
    /// Range of the consensus-force magnitude scaling.
    pub f_scale_range: [f64; 2],
    /// Resampling frequency, Hz.
    pub update_hz: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            force_max: 0.25,
            torque_max: 0.25,
            gyro_max: 0.25,
            f_angle_max: 0.25,
            f_scale_range: [0.75, 1.25],
            update_hz: 10.0,
        }
    }
}

impl DisturbanceSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        for (name, value) in [
            ("force_max", self.force_max),
            ("torque_max", self.torque_max),
            ("gyro_max", self.gyro_max),
            ("f_angle_max", self.f_angle_max),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                errors.push(format!("disturbance.{name} must be finite and >= 0, got {value}"));
            }
        }
        let [lo, hi] = self.f_scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            errors.push(format!("disturbance.f_scale_range must satisfy 0 < lower <= upper, got [{lo}, {hi}]"));
        }
        if !(self.update_hz.is_finite() && self.update_hz > 0.0) {
            errors.push(format!("disturbance.update_hz must be positive, got {}", self.update_hz));
        }
        errors
    }
}

/// One vehicle's disturbance values for one hold interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceSample {
    pub force: Vec3,
    pub torque: Vec3,
    pub gyro: Vec3,
    pub f_rotation: Rotation,
    pub f_scale: f64,
}

impl DisturbanceSample {
    pub fn none() -> Self {
        Self {
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
            gyro: Vec3::zeros(),
            f_rotation: Rotation::identity(),
            f_scale: 1.0,
        }
    }
}

/// Bounded vector: uniform direction, magnitude uniform on `[0, max]`.
fn bounded_vector<R: Rng + ?Sized>(rng: &mut R, max: f64) -> Vec3 {
    let dir = random_unit_vector(rng);
    dir * (rng.random::<f64>() * max)
}

pub fn sample_disturbance<R: Rng + ?Sized>(spec: &DisturbanceSpec, rng: &mut R) -> DisturbanceSample {
    let force = bounded_vector(rng, spec.force_max);
    let torque = bounded_vector(rng, spec.torque_max);
    let gyro = bounded_vector(rng, spec.gyro_max);
    let axis = random_unit_vector(rng);
    let angle = rng.random::<f64>() * spec.f_angle_max;
    let [lo, hi] = spec.f_scale_range;
    let f_scale = lo + (hi - lo) * rng.random::<f64>();
    DisturbanceSample { force, torque, gyro, f_rotation: Rotation::from_axis_angle(&axis, angle), f_scale }
}

/// Zero-order-hold disturbance process for a fleet.
///
/// The draw for hold interval `k` depends only on the seed and `k`, never on
/// the step size.
#[derive(Clone, Debug)]
pub struct DisturbanceProcess {
    spec: DisturbanceSpec,
    rng: ChaCha8Rng,
    current: Vec<DisturbanceSample>,
    // Index of the hold interval `current` belongs to.
    interval: Option<u64>,
}

impl DisturbanceProcess {
    pub fn new(spec: DisturbanceSpec, seed: u64, vehicles: usize) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: vec![DisturbanceSample::none(); vehicles],
            interval: None,
        }
    }

    pub fn at(&mut self, t: f64) -> &[DisturbanceSample] {
        let target = (t * self.spec.update_hz + 1e-9).floor().max(0.0) as u64;
        while self.interval.is_none_or(|k| k < target) {
            for slot in &mut self.current {
                *slot = sample_disturbance(&self.spec, &mut self.rng);
            }
            self.interval = Some(self.interval.map_or(0, |k| k + 1));
        }
        &self.current
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub disturbance: Option<DisturbanceSpec>,
    pub record_every: usize,
    pub control_mode: ControlMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 60.0,
            seed: 0,
            disturbance: None,
            record_every: 1,
            control_mode: ControlMode::ZeroOrderHold,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= MAX_DT) {
            errors.push(format!("sim.dt must be in (0, {MAX_DT}], got {}", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            errors.push(format!("sim.t_final must be >= dt, got {}", self.t_final));
        }
        if self.record_every == 0 {
            errors.push("sim.record_every must be >= 1".into());
        }
        if let Some(d) = &self.disturbance {
            errors.extend(d.validate());
        }
        errors
    }

    pub fn steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }
}

/// Everything about the fleet that stays fixed during a run.
#[derive(Clone, Debug)]
pub struct Fleet {
    pub params: Vec<VehicleParams>,
    pub law: ConsensusLaw,
    pub gains: ControlGains,
    pub world: WorldConfig,
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Controller output for every vehicle, with measurement disturbances applied.
    pub fn controls(&self, states: &[VehicleState], disturbances: &[DisturbanceSample]) -> Result<Vec<ControlOutput>> {
        (0..self.len())
            .map(|i| {
                let mut meas = measure(states, self.law.graph(), i)?;
                let d = &disturbances[i];
                meas.omega += d.gyro;
                let f = self.law.eval(i, &meas.relative)?;
                let f = (d.f_rotation * f) * d.f_scale;
                Ok(control_from_force(&f, &meas.omega, &self.gains, &self.params[i]))
            })
            .collect()
    }

    /// Fastest rate-loop pole `k₁²k₂ / λ_min(J)` over the fleet, 1/s.
    pub fn rate_stiffness(&self) -> f64 {
        self.params
            .iter()
            .map(|p| self.gains.rate_damping() / p.inertia().symmetric_eigenvalues().min())
            .fold(0.0, f64::max)
    }
}

/// Largest step not exceeding `base` that keeps `dt · stiffness ≤ 0.5`, chosen
/// as `base / k` for integer `k` so that hold intervals stay aligned.
pub fn stable_dt(base: f64, stiffness: f64) -> f64 {
    let k = (base * stiffness / 0.5).ceil().max(1.0);
    base / k
}

#[derive(Clone, Copy, Debug, Default)]
struct Slope {
    x: Vec3,
    v: Vec3,
    sigma: Vec3,
    w: Vec3,
}

#[derive(Clone, Copy, Debug)]
struct Increment {
    x: Vec3,
    v: Vec3,
    sigma: Vec3,
    w: Vec3,
}

fn apply(base: &VehicleState, inc: &Increment) -> VehicleState {
    VehicleState {
        position: base.position + inc.x,
        velocity: base.velocity + inc.v,
        attitude: base.attitude * so3_exp(&inc.sigma),
        omega: base.omega + inc.w,
    }
}

fn slope(
    state: &VehicleState,
    sigma: &Vec3,
    control: &ControlOutput,
    noise: &DisturbanceSample,
    params: &VehicleParams,
    world: &WorldConfig,
) -> Slope {
    let w = state.omega;
    let s_cross_w = sigma.cross(&w);
    Slope {
        x: state.velocity,
        v: linear_acceleration(&state.attitude, control.thrust, &noise.force, params, world),
        sigma: w + s_cross_w * 0.5 + sigma.cross(&s_cross_w) / 12.0,
        w: angular_acceleration(&w, &(control.torque + noise.torque), params),
    }
}

/// Advances the fleet by one step of length `dt`. Returns the new states and
/// the controls issued from the start-of-step state.
///
/// A non-finite result is reported as [`Error::NonFinite`] with step and time
/// left at zero; [`Simulator`] fills them in.
pub fn step(
    fleet: &Fleet,
    states: &[VehicleState],
    disturbances: &[DisturbanceSample],
    dt: f64,
    mode: ControlMode,
) -> Result<(Vec<VehicleState>, Vec<ControlOutput>)> {
    let n = fleet.len();
    if states.len() != n || disturbances.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: states.len().min(disturbances.len()) });
    }
    let issued = fleet.controls(states, disturbances)?;
    let next =
        rkmk4(&fleet.params, &fleet.world, states, disturbances, dt, |stage, stage_states| match (mode, stage) {
            (ControlMode::ZeroOrderHold, _) | (ControlMode::Continuous, 0) => Ok(issued.clone()),
            (ControlMode::Continuous, _) => fleet.controls(stage_states, disturbances),
        })?;
    Ok((next, issued))
}

/// One step with the given thrust and torque held over the step. With zero
/// controls and no gravity this integrates torque-free rigid bodies.
pub fn step_open_loop(
    params: &[VehicleParams],
    world: &WorldConfig,
    states: &[VehicleState],
    controls: &[ControlOutput],
    dt: f64,
) -> Result<Vec<VehicleState>> {
    let n = params.len();
    if states.len() != n || controls.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: states.len().min(controls.len()) });
    }
    let none = vec![DisturbanceSample::none(); n];
    rkmk4(params, world, states, &none, dt, |_, _| Ok(controls.to_vec()))
}

fn rkmk4<F>(
    params: &[VehicleParams],
    world: &WorldConfig,
    states: &[VehicleState],
    disturbances: &[DisturbanceSample],
    dt: f64,
    mut stage_controls: F,
) -> Result<Vec<VehicleState>>
where
    F: FnMut(usize, &[VehicleState]) -> Result<Vec<ControlOutput>>,
{
    let n = params.len();
    let zero = Increment { x: Vec3::zeros(), v: Vec3::zeros(), sigma: Vec3::zeros(), w: Vec3::zeros() };
    let mut slopes: [Vec<Slope>; 4] = Default::default();
    let weights = [0.0, 0.5, 0.5, 1.0];
    for stage in 0..4 {
        let h = weights[stage] * dt;
        let increments: Vec<Increment> = if stage == 0 {
            vec![zero; n]
        } else {
            slopes[stage - 1]
                .iter()
                .map(|k| Increment { x: k.x * h, v: k.v * h, sigma: k.sigma * h, w: k.w * h })
                .collect()
        };
        let stage_states: Vec<VehicleState> = states.iter().zip(&increments).map(|(s, inc)| apply(s, inc)).collect();
        let controls = stage_controls(stage, &stage_states)?;
        slopes[stage] = (0..n)
            .map(|i| slope(&stage_states[i], &increments[i].sigma, &controls[i], &disturbances[i], &params[i], world))
            .collect();
    }

    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let combine = |f: fn(&Slope) -> Vec3| {
            (f(&slopes[0][i]) + f(&slopes[1][i]) * 2.0 + f(&slopes[2][i]) * 2.0 + f(&slopes[3][i])) * (dt / 6.0)
        };
        let inc =
            Increment { x: combine(|k| k.x), v: combine(|k| k.v), sigma: combine(|k| k.sigma), w: combine(|k| k.w) };
        let mut s = apply(&states[i], &inc);
        if !s.is_finite() {
            return Err(Error::NonFinite { step: 0, time: 0.0, vehicle: i });
        }
        s.attitude =
            reorthonormalize(s.attitude.matrix()).map_err(|_| Error::NonFinite { step: 0, time: 0.0, vehicle: i })?;
        next.push(s);
    }
    Ok(next)
}

/// Stateful driver around [`step`] that tracks time and disturbances.
#[derive(Clone, Debug)]
pub struct Simulator {
    fleet: Fleet,
    config: SimConfig,
    states: Vec<VehicleState>,
    disturbance: Option<DisturbanceProcess>,
    step_index: u64,
}

impl Simulator {
    pub fn new(fleet: Fleet, config: SimConfig, initial: Vec<VehicleState>) -> Result<Self> {
        let errors = config.validate();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        if initial.len() != fleet.len() {
            return Err(Error::LengthMismatch { expected: fleet.len(), actual: initial.len() });
        }
        let disturbance = config.disturbance.map(|spec| DisturbanceProcess::new(spec, config.seed, fleet.len()));
        Ok(Self { fleet, config, states: initial, disturbance, step_index: 0 })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    fn disturbances(&mut self) -> Vec<DisturbanceSample> {
        let t = self.time();
        match &mut self.disturbance {
            Some(process) => process.at(t).to_vec(),
            None => vec![DisturbanceSample::none(); self.fleet.len()],
        }
    }

    /// Controls the fleet would issue right now.
    pub fn current_controls(&mut self) -> Result<Vec<ControlOutput>> {
        let d = self.disturbances();
        self.fleet.controls(&self.states, &d)
    }

    /// Advances one step; returns the controls that were applied.
    pub fn advance(&mut self) -> Result<Vec<ControlOutput>> {
        let d = self.disturbances();
        let (next, controls) =
            step(&self.fleet, &self.states, &d, self.config.dt, self.config.control_mode).map_err(|e| match e {
                Error::NonFinite { vehicle, .. } => {
                    Error::NonFinite { step: self.step_index, time: self.time(), vehicle }
                }
                other => other,
            })?;
        self.states = next;
        self.step_index += 1;
        Ok(controls)
    }
}

/// Recorded run on a uniform grid with stride `record_every · dt`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<VehicleState>>,
    /// Controls issued from the state recorded at the same index.
    pub controls: Vec<Vec<ControlOutput>>,
    pub monitor: Option<Vec<MonitorSample>>,
    pub dt: f64,
    pub record_every: usize,
    pub t_final: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn vehicles(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Pre-run diagnostics: graph reachability, consensus certification, and gain
/// conditions. None of these stop a run.
pub fn preflight_warnings(fleet: &Fleet, dt: f64) -> Vec<String> {
    let mut warnings = Vec::new();
    if !fleet.law.graph().has_globally_reachable_node() {
        warnings.push("sensor digraph has no globally reachable node; rendezvous is not expected".into());
    }
    match RelativeClosedLoop::build(&fleet.law).and_then(|rcl| rcl.certify()) {
        Ok(true) => {}
        Ok(false) => warnings.push("consensus law is not certified (relative closed loop not Hurwitz)".into()),
        Err(e) => warnings.push(format!("consensus certification failed: {e}")),
    }
    warnings.extend(fleet.gains.warnings());
    let stiffness = fleet.rate_stiffness();
    if dt * stiffness > 1.0 {
        warnings.push(format!(
            "dt = {dt} is coarse for the rate loop (dt·k1²k2/λmin(J) = {:.2}); consider dt <= {:.3e}",
            dt * stiffness,
            stable_dt(dt, stiffness)
        ));
    }
    warnings
}

pub fn run(scenario: &Scenario) -> Result<Trajectory> {
    let fleet = scenario.fleet()?;
    let monitor = match &scenario.monitor {
        Some(cfg) => Some(Monitor::from_config(&fleet, cfg)?),
        None => None,
    };
    run_with(fleet, scenario.sim.clone(), scenario.initial_states(), monitor.as_ref())
}

pub fn run_with(
    fleet: Fleet,
    config: SimConfig,
    initial: Vec<VehicleState>,
    monitor: Option<&Monitor>,
) -> Result<Trajectory> {
    let warnings = preflight_warnings(&fleet, config.dt);
    for w in &warnings {
        log::warn!("{w}");
    }
    let steps = config.steps();
    let stride = config.record_every as u64;
    let capacity = (steps / stride + 1) as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(capacity),
        states: Vec::with_capacity(capacity),
        controls: Vec::with_capacity(capacity),
        monitor: monitor.map(|_| Vec::with_capacity(capacity)),
        dt: config.dt,
        record_every: config.record_every,
        t_final: steps as f64 * config.dt,
        warnings,
    };
    let dt = config.dt;
    let mut sim = Simulator::new(fleet, config, initial)?;
    let mut push = |t: f64, states: Vec<VehicleState>, controls: Vec<ControlOutput>| -> Result<()> {
        if let (Some(m), Some(out)) = (monitor, traj.monitor.as_mut()) {
            out.push(m.sample_states(&states)?);
        }
        traj.times.push(t);
        traj.states.push(states);
        traj.controls.push(controls);
        Ok(())
    };
    for k in 0..steps {
        let snapshot = (k % stride == 0).then(|| sim.states().to_vec());
        let applied = sim.advance()?;
        if let Some(states) = snapshot {
            push(k as f64 * dt, states, applied)?;
        }
    }
    if steps.is_multiple_of(stride) {
        let controls = sim.current_controls()?;
        push(steps as f64 * dt, sim.states().to_vec(), controls)?;
    }
    Ok(traj)
}
