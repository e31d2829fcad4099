//! Composite Lyapunov function, homogeneity coordinates, and sampled
//! estimates of the constants appearing in the stability argument.
//!
//! ```text
//! W      = α W_tran(X) + W_rot(X, R, ω)
//! W_tran = √V + V/2,                 V = XᵀPX
//! W_rot  = Σ gᵢⁱ·e₃ + ½ Σ (ωᵢ − 𝛚ᵢ)ᵀ Jᵢ (ωᵢ − 𝛚ᵢ),   𝛚ᵢ = k₁ (gᵢⁱ × e₃)
//! ```
//!
//! `gᵢ(X)` is the ideal consensus force of vehicle `i` as a linear function of
//! the relative state and `gᵢⁱ = Rᵢᵀ gᵢ` its body-frame form.
//!
//! Every sampled constant is an estimate of a supremum: a lower bound, never a
//! certified value.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    pos_index, relative_block, relative_dim, relative_state, vel_index, ConsensusLaw, LyapunovForm, RelativeClosedLoop,
};
use crate::control::ControlGains;
use crate::dynamics::{VehicleParams, VehicleState};
use crate::error::{Error, Result};
use crate::lie::{e3, mat_rows, Rotation, Vec3};
use crate::sim::Fleet;

/// `θ` is reported as undefined below this `ρ`.
pub const RHO_UNDEFINED: f64 = 1e-12;
pub const SAMPLE_BATCH: usize = 1024;
pub const DEFAULT_SAMPLE_COUNT: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Weight of `W_tran`. `None` picks `1.1 · max(α̂*, 3 M̂₃ / M̂₂)`.
    pub alpha: Option<f64>,
    /// Sublevel threshold for the decrease test. `None` calibrates it from the run.
    pub delta: Option<f64>,
    /// Target rendezvous radius, m.
    pub epsilon: f64,
    pub varrho: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { alpha: None, delta: None, epsilon: 0.25, varrho: 0.5, sample_count: DEFAULT_SAMPLE_COUNT, seed: 0 }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a >= 0.0) {
                errors.push(format!("monitor.alpha must be finite and >= 0, got {a}"));
            }
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                errors.push(format!("monitor.delta must be positive, got {d}"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            errors.push(format!("monitor.epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.varrho > 0.0 && self.varrho < 1.0) {
            errors.push(format!("monitor.varrho must lie in (0, 1), got {}", self.varrho));
        }
        if self.sample_count == 0 {
            errors.push("monitor.sample_count must be >= 1".into());
        }
        errors
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample {
    pub v: f64,
    pub rho: f64,
    /// `X / ρ`, or `None` when `ρ` is below [`RHO_UNDEFINED`].
    pub theta: Option<Vec<f64>>,
    pub w_tran: f64,
    pub w_rot: f64,
    pub w: f64,
    /// Reference body rates `𝛚ᵢ`.
    pub omega_ref: Vec<Vec3>,
    /// `‖ωᵢ − 𝛚ᵢ‖`.
    pub omega_err: Vec<f64>,
    /// Largest pairwise `√(‖xᵢⱼ‖² + ‖vᵢⱼ‖²)`.
    pub gamma_dist: f64,
}

/// `(ρ, θ)` with `ρ = √(XᵀPX)` and `θ = X / ρ`.
pub fn rho_theta(x: &DVector<f64>, lyap: &LyapunovForm) -> (f64, Option<DVector<f64>>) {
    let rho = lyap.value(x).max(0.0).sqrt();
    if rho < RHO_UNDEFINED {
        (rho, None)
    } else {
        (rho, Some(x / rho))
    }
}

/// Largest pairwise distance to the rendezvous manifold encoded in `X`.
pub fn gamma_distance(x: &DVector<f64>, n: usize) -> f64 {
    let blocks: Vec<(Vec3, Vec3)> = (0..n).map(|j| relative_block(x, j)).collect();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = blocks[j].0 - blocks[i].0;
            let dv = blocks[j].1 - blocks[i].1;
            best = best.max((dx.norm_squared() + dv.norm_squared()).sqrt());
        }
    }
    best
}

/// Evaluates `W` and the quantities of the homogeneity argument for one fleet.
#[derive(Clone, Debug)]
pub struct Monitor {
    params: Vec<VehicleParams>,
    gains: ControlGains,
    lyap: LyapunovForm,
    // Rows 3i..3i+3 hold the map X ↦ gᵢ(X).
    stacked: DMatrix<f64>,
    // L⁻ᵀ with P = LLᵀ: maps the unit sphere onto the shell V = 1.
    shell: DMatrix<f64>,
    alpha: f64,
}

impl Monitor {
    /// Builds the monitor, synthesizing `P` with `Q = I`. Fails when the
    /// consensus law is not certified.
    pub fn new(fleet: &Fleet, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let lyap = RelativeClosedLoop::build(&fleet.law)?.synthesize_p_identity()?;
        let dim = lyap.p.nrows();
        let shell = match lyap.p.clone().cholesky() {
            Some(c) => c
                .l()
                .transpose()
                .solve_upper_triangular(&DMatrix::identity(dim, dim))
                .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factor of P is singular".into()))?,
            None if dim == 0 => DMatrix::zeros(0, 0),
            None => return Err(Error::NotPositiveDefinite("P has no Cholesky factor".into())),
        };
        Ok(Self {
            params: fleet.params.clone(),
            gains: fleet.gains,
            stacked: stacked_force_map(&fleet.law)?,
            shell,
            lyap,
            alpha,
        })
    }

    pub fn from_config(fleet: &Fleet, cfg: &MonitorConfig) -> Result<Self> {
        let errors = cfg.validate();
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let mut monitor = Self::new(fleet, cfg.alpha.unwrap_or(0.0))?;
        if cfg.alpha.is_none() {
            let est = monitor.estimate_constants(cfg.sample_count, cfg.seed);
            monitor.alpha = est.alpha_lower_bound() * 1.1;
        }
        Ok(monitor)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn lyapunov(&self) -> &LyapunovForm {
        &self.lyap
    }

    pub fn vehicles(&self) -> usize {
        self.params.len()
    }

    pub fn dim(&self) -> usize {
        relative_dim(self.vehicles())
    }

    /// Inertial ideal forces `gᵢ(X)`.
    pub fn forces(&self, x: &DVector<f64>) -> Vec<Vec3> {
        let stacked = &self.stacked * x;
        (0..self.vehicles()).map(|i| Vec3::new(stacked[3 * i], stacked[3 * i + 1], stacked[3 * i + 2])).collect()
    }

    /// Body-frame ideal forces `gᵢⁱ(X, R) = Rᵢᵀ gᵢ(X)`.
    pub fn body_forces(&self, x: &DVector<f64>, attitudes: &[Rotation]) -> Vec<Vec3> {
        self.forces(x).iter().zip(attitudes).map(|(g, r)| r.to_body(g)).collect()
    }

    /// Body-frame `hᵢⁱ(X, R)`: the rate of change of `gᵢ` along the closed
    /// loop with the ideal thrust `uᵢ = −mᵢ gᵢⁱ·e₃`, rotated into body `i`.
    pub fn h_body(&self, x: &DVector<f64>, attitudes: &[Rotation]) -> Vec<Vec3> {
        let n = self.vehicles();
        let m = n.saturating_sub(1);
        let body = self.body_forces(x, attitudes);
        // Inertial accelerations (gᵢⁱ·e₃) Rᵢ e₃.
        let accel: Vec<Vec3> = body.iter().zip(attitudes).map(|(g, r)| r * &(e3() * g.z)).collect();
        let mut xdot = DVector::zeros(self.dim());
        for j in 1..n {
            let (_, v) = relative_block(x, j);
            let dv = accel[j] - accel[0];
            for axis in 0..3 {
                xdot[pos_index(j, axis)] = v[axis];
                xdot[vel_index(m, j, axis)] = dv[axis];
            }
        }
        self.forces(&xdot).iter().zip(attitudes).map(|(h, r)| r.to_body(h)).collect()
    }

    pub fn eval(&self, x: &DVector<f64>, attitudes: &[Rotation], omegas: &[Vec3]) -> Result<MonitorSample> {
        let n = self.vehicles();
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), actual: x.len() });
        }
        if attitudes.len() != n || omegas.len() != n {
            return Err(Error::LengthMismatch { expected: n, actual: attitudes.len().min(omegas.len()) });
        }
        let v = self.lyap.value(x).max(0.0);
        let (rho, theta) = rho_theta(x, &self.lyap);
        let w_tran = v.sqrt() + 0.5 * v;
        let body = self.body_forces(x, attitudes);
        let mut w_rot = 0.0;
        let mut omega_ref = Vec::with_capacity(n);
        let mut omega_err = Vec::with_capacity(n);
        for i in 0..n {
            let reference = body[i].cross(&e3()) * self.gains.k1;
            let err = omegas[i] - reference;
            w_rot += body[i].z + 0.5 * err.dot(&(self.params[i].inertia() * err));
            omega_ref.push(reference);
            omega_err.push(err.norm());
        }
        Ok(MonitorSample {
            v,
            rho,
            theta: theta.map(|t| t.as_slice().to_vec()),
            w_tran,
            w_rot,
            w: self.alpha * w_tran + w_rot,
            omega_ref,
            omega_err,
            gamma_dist: gamma_distance(x, n),
        })
    }

    pub fn sample_states(&self, states: &[VehicleState]) -> Result<MonitorSample> {
        let positions: Vec<Vec3> = states.iter().map(|s| s.position).collect();
        let velocities: Vec<Vec3> = states.iter().map(|s| s.velocity).collect();
        let attitudes: Vec<Rotation> = states.iter().map(|s| s.attitude).collect();
        let omegas: Vec<Vec3> = states.iter().map(|s| s.omega).collect();
        self.eval(&relative_state(&positions, &velocities), &attitudes, &omegas)
    }

    /// Draws `θ = L⁻ᵀu` with `u` uniform on the unit sphere, so `V(θ) = 1`,
    /// and Haar-uniform attitudes.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, Vec<Rotation>) {
        let dim = self.dim();
        let u = loop {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = z.norm();
            if norm > 0.0 || dim == 0 {
                break if dim == 0 { z } else { z / norm };
            }
        };
        let attitudes = (0..self.vehicles()).map(|_| Rotation::random(rng)).collect();
        (&self.shell * u, attitudes)
    }

    /// Attitude sets evaluated for one sampled `θ`: the drawn attitudes, the
    /// same attitudes tilted so each thrust axis is parallel to `gᵢ`, and tilted
    /// so each is perpendicular to it. The suprema over `R` of `Σ|gᵢⁱ·e₃|` and
    /// `Σ‖gᵢⁱ×e₃‖` are attained on the second and third sets.
    fn candidate_attitudes(&self, theta: &DVector<f64>, drawn: &[Rotation]) -> [Vec<Rotation>; 3] {
        let forces = self.forces(theta);
        let parallel = drawn.iter().zip(&forces).map(|(r, g)| tilt_axis(r, g)).collect();
        let perpendicular = drawn
            .iter()
            .zip(&forces)
            .map(|(r, g)| {
                let axis = r * &e3();
                let Some(gh) = g.try_normalize(0.0) else { return *r };
                let mut target = axis - gh * axis.dot(&gh);
                if target.norm() < 1e-9 {
                    target = gh.cross(&if gh.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() });
                }
                tilt_axis(r, &target)
            })
            .collect();
        [drawn.to_vec(), parallel, perpendicular]
    }

    fn sampled_quantities(&self, theta: &DVector<f64>, attitudes: &[Rotation]) -> Quantities {
        let n = self.vehicles();
        let m = n.saturating_sub(1);
        let body = self.body_forces(theta, attitudes);
        let h = self.h_body(theta, attitudes);
        let beta: Vec<f64> = body.iter().map(|g| g.cross(&e3()).norm()).collect();
        let grad = &self.lyap.p * theta * 2.0;
        let m1 =
            (1..n).map(|j| Vec3::from_fn(|a, _| grad[vel_index(m, j, a)]).norm()).fold(0.0, f64::max) * m as f64 / 2.0;
        let k: Vec<f64> = (0..n).map(|i| beta[i] + (self.params[i].inertia() * h[i].cross(&e3())).norm()).collect();
        Quantities {
            values: [
                body.iter().map(|g| g.z.abs()).sum(),
                m1,
                n as f64 * h.iter().map(|v| v.z.abs()).fold(0.0, f64::max),
                k.iter().map(|k| k * k / 2.0).fold(0.0, f64::max),
                beta.iter().sum(),
            ],
        }
    }

    /// Estimates `α*`, `M₁…M₅` from `sample_count` points of `S₁ × SO(3)ⁿ`.
    ///
    /// Samples are drawn in batches of [`SAMPLE_BATCH`]; batch `b` uses ChaCha8
    /// stream `b` under `seed`, so the first `N` samples do not depend on the
    /// total count and each estimate is nondecreasing in `sample_count`.
    pub fn estimate_constants(&self, sample_count: usize, seed: u64) -> ConstantsEstimate {
        let batches = sample_count.div_ceil(SAMPLE_BATCH);
        let per_batch: Vec<[Best; QUANTITIES]> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let len = SAMPLE_BATCH.min(sample_count - b * SAMPLE_BATCH);
                let mut best: [Best; QUANTITIES] = Default::default();
                for k in 0..len {
                    let (theta, drawn) = self.sample_point(&mut rng);
                    let index = (b * SAMPLE_BATCH + k) as u64;
                    for attitudes in self.candidate_attitudes(&theta, &drawn) {
                        let q = self.sampled_quantities(&theta, &attitudes);
                        for (slot, &value) in best.iter_mut().zip(&q.values) {
                            if slot.witness.is_none() || value > slot.value {
                                *slot = Best { value, witness: Some(Witness::new(index, &theta, &attitudes)) };
                            }
                        }
                    }
                }
                best
            })
            .collect();
        let mut overall: [Best; QUANTITIES] = Default::default();
        for batch in per_batch {
            for (slot, cand) in overall.iter_mut().zip(batch) {
                if slot.witness.is_none() || cand.value > slot.value {
                    *slot = cand;
                }
            }
        }
        let [alpha_star, m1, m3, m4, m5] = overall;
        let m1_exact = self.m1_exact();
        let m2 = self.lyap.lambda_min_q() / (2.0 * self.lyap.lambda_max_p());
        ConstantsEstimate {
            kind: "sampled estimates (lower bounds on suprema, not certified)".into(),
            sample_count,
            seed,
            batch_size: SAMPLE_BATCH,
            alpha_star: alpha_star.into(),
            m1: m1.into(),
            m1_exact,
            m2,
            m3: m3.into(),
            m4: m4.into(),
            m5: m5.into(),
        }
    }

    pub fn estimate_alpha_star(&self, sample_count: usize, seed: u64) -> Estimate {
        self.estimate_constants(sample_count, seed).alpha_star
    }

    /// `M₁` in closed form: on `V(θ) = 1` the largest `‖2 P_{v_j,·} θ‖` is
    /// `2 √λ_max(P_{v_j v_j})`.
    pub fn m1_exact(&self) -> f64 {
        let n = self.vehicles();
        let m = n.saturating_sub(1);
        (1..n)
            .map(|j| {
                let start = vel_index(m, j, 0);
                let block = self.lyap.p.view((start, start), (3, 3)).into_owned();
                block.symmetric_eigenvalues().max().max(0.0).sqrt()
            })
            .fold(0.0, f64::max)
            * m as f64
    }
}

/// `r` turned by the smallest rotation that brings its thrust axis `R e₃`
/// onto the direction of `target`. Returns `r` when `target` vanishes.
fn tilt_axis(r: &Rotation, target: &Vec3) -> Rotation {
    let Some(t) = target.try_normalize(0.0) else { return *r };
    let axis = r * &e3();
    let cross = axis.cross(&t);
    let angle = cross.norm().atan2(axis.dot(&t));
    let turn = match cross.try_normalize(1e-15) {
        Some(k) => Rotation::from_axis_angle(&k, angle),
        None if angle > 1.0 => {
            let k = axis.cross(&if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() });
            Rotation::from_axis_angle(&k, std::f64::consts::PI)
        }
        None => Rotation::identity(),
    };
    turn * *r
}

fn stacked_force_map(law: &ConsensusLaw) -> Result<DMatrix<f64>> {
    let n = law.len();
    let mut stacked = DMatrix::zeros(3 * n, relative_dim(n));
    for i in 0..n {
        stacked.rows_mut(3 * i, 3).copy_from(&law.force_map(i)?);
    }
    Ok(stacked)
}

const QUANTITIES: usize = 5;

struct Quantities {
    // α*, M₁, M₃, M₄, M₅ candidates
    values: [f64; QUANTITIES],
}

#[derive(Clone, Debug, Default)]
struct Best {
    value: f64,
    witness: Option<Witness>,
}

/// Where a sampled maximum was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub sample: u64,
    pub theta: Vec<f64>,
    pub attitudes: Vec<[[f64; 3]; 3]>,
}

impl Witness {
    fn new(sample: u64, theta: &DVector<f64>, attitudes: &[Rotation]) -> Self {
        Self {
            sample,
            theta: theta.as_slice().to_vec(),
            attitudes: attitudes.iter().map(|r| mat_rows(r.matrix())).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub witness: Option<Witness>,
}

impl From<Best> for Estimate {
    fn from(b: Best) -> Self {
        Self { value: b.value, witness: b.witness }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsEstimate {
    pub kind: String,
    pub sample_count: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub alpha_star: Estimate,
    pub m1: Estimate,
    /// `M₁` from the eigenvalue formula.
    pub m1_exact: f64,
    /// `λ_min(Q) / (2 λ_max(P))`, exact.
    pub m2: f64,
    pub m3: Estimate,
    pub m4: Estimate,
    pub m5: Estimate,
}

impl ConstantsEstimate {
    /// `max(α̂*, 3 M̂₃ / M̂₂)`.
    pub fn alpha_lower_bound(&self) -> f64 {
        let ratio = if self.m2 > 0.0 { 3.0 * self.m3.value / self.m2 } else { 0.0 };
        self.alpha_star.value.max(ratio)
    }

    /// Gain thresholds implied by the estimates for a given `α` and `ϱ`.
    pub fn gain_thresholds(&self, alpha: f64, varrho: f64, k1: f64, n: usize) -> GainThresholds {
        let (m1, m3, m4, m5) = (self.m1_exact, self.m3.value, self.m4.value, self.m5.value);
        let k1_min = 1f64.max(2.0 * n as f64 * (alpha * m1 / 2.0).powi(2) / (varrho * m3));
        let k2_min = (n as f64 * m4 / m3).max((alpha * m1 * m5 / k1).powi(2) / varrho);
        GainThresholds { alpha, varrho, alpha_min: self.alpha_lower_bound(), k1_min, k2_min_at_k1: k2_min, k1 }
    }
}

/// Sufficient gain conditions evaluated on estimated constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainThresholds {
    pub alpha: f64,
    pub varrho: f64,
    pub alpha_min: f64,
    pub k1_min: f64,
    pub k1: f64,
    pub k2_min_at_k1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t_start: f64,
    pub t_end: f64,
    pub w_start: f64,
    pub w_end: f64,
    pub increase: f64,
    pub rho_start: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub delta: f64,
    /// True when `delta` was taken from the run instead of the configuration.
    pub delta_calibrated: bool,
    /// Fraction of the run at the end used for calibration.
    pub calibration_window: f64,
    pub intervals_checked: usize,
    pub intervals_above_delta: usize,
    pub violations: Vec<Violation>,
}

/// Checks `Ŵ ≥ δ ⟹ Ŵ decreases` on consecutive recorded samples.
///
/// The first interval is skipped: controls applied there were computed before
/// any feedback had acted. With `delta = None`, `δ` is the largest `W` seen
/// over the final `window` fraction of the run.
pub fn decrease_test(
    times: &[f64],
    samples: &[MonitorSample],
    delta: Option<f64>,
    window: f64,
) -> Result<DecreaseReport> {
    if times.len() != samples.len() {
        return Err(Error::LengthMismatch { expected: times.len(), actual: samples.len() });
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidParameter(format!("calibration window must be in (0, 1], got {window}")));
    }
    let (delta, calibrated) = match delta {
        Some(d) => (d, false),
        None => {
            let t_end = times.last().copied().unwrap_or(0.0);
            let t_start = times.first().copied().unwrap_or(0.0);
            let cutoff = t_end - window * (t_end - t_start);
            let level = times
                .iter()
                .zip(samples)
                .filter(|(t, _)| **t >= cutoff)
                .map(|(_, s)| s.w)
                .fold(f64::NEG_INFINITY, f64::max);
            (level.max(f64::MIN_POSITIVE), true)
        }
    };
    let mut report = DecreaseReport {
        delta,
        delta_calibrated: calibrated,
        calibration_window: window,
        intervals_checked: 0,
        intervals_above_delta: 0,
        violations: Vec::new(),
    };
    for k in 1..samples.len().saturating_sub(1) {
        let (a, b) = (&samples[k], &samples[k + 1]);
        report.intervals_checked += 1;
        if a.w < delta {
            continue;
        }
        report.intervals_above_delta += 1;
        if b.w > a.w {
            report.violations.push(Violation {
                t_start: times[k],
                t_end: times[k + 1],
                w_start: a.w,
                w_end: b.w,
                increase: b.w - a.w,
                rho_start: a.rho,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::WorldConfig;
    use crate::graph::SensorDigraph;
    use crate::lie::Mat3;
    use approx::assert_relative_eq;

    fn quad(m: f64) -> VehicleParams {
        VehicleParams::new(m, Mat3::from_diagonal(&Vec3::new(0.13, 0.13, 0.04))).unwrap()
    }

    fn fleet(graph: SensorDigraph) -> Fleet {
        let n = graph.len();
        Fleet {
            params: (0..n).map(|i| quad(3.0 + 0.1 * i as f64)).collect(),
            law: ConsensusLaw::ren_atkins(graph, 0.3, 30.0).unwrap(),
            gains: ControlGains::default(),
            world: WorldConfig::default(),
        }
    }

    fn pair() -> Fleet {
        fleet(SensorDigraph::new(2, [(0, 1), (1, 0)]).unwrap())
    }

    fn five() -> Fleet {
        fleet(SensorDigraph::reference_five())
    }

    #[test]
    fn w_vanishes_on_rendezvous_manifold() {
        let f = five();
        let m = Monitor::new(&f, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att: Vec<_> = (0..5).map(|_| Rotation::random(&mut rng)).collect();
        let s = m.eval(&DVector::zeros(24), &att, &[Vec3::zeros(); 5]).unwrap();
        assert_eq!(s.w, 0.0);
        assert_eq!(s.rho, 0.0);
        assert!(s.theta.is_none());
        assert_eq!(s.gamma_dist, 0.0);
    }

    #[test]
    fn w_tran_example() {
        let f = pair();
        let m = Monitor::new(&f, 1.0).unwrap();
        // Scale a random direction to V = 4.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (theta, att) = m.sample_point(&mut rng);
        let x = theta * 2.0;
        let s = m.eval(&x, &att, &[Vec3::zeros(); 2]).unwrap();
        assert_relative_eq!(s.v, 4.0, epsilon = 1e-12);
        assert_relative_eq!(s.rho, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.w_tran, 4.0, epsilon = 1e-12);
        assert_relative_eq!(s.w, s.w_tran * m.alpha() + s.w_rot, epsilon = 1e-12);
    }

    #[test]
    fn rho_theta_homogeneity() {
        let f = five();
        let m = Monitor::new(&f, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (theta, _) = m.sample_point(&mut rng);
            let (rho, th) = rho_theta(&theta, m.lyapunov());
            assert_relative_eq!(rho, 1.0, epsilon = 1e-12);
            assert_relative_eq!(th.clone().unwrap(), theta, epsilon = 1e-12);
            let (rho3, th3) = rho_theta(&(&theta * 3.0), m.lyapunov());
            assert_relative_eq!(rho3, 3.0, epsilon = 1e-12);
            assert_relative_eq!(th3.unwrap(), th.unwrap(), epsilon = 1e-12);
            assert_relative_eq!(m.lyapunov().value(&theta), 1.0, epsilon = 1e-12);
        }
        assert!(rho_theta(&DVector::zeros(24), m.lyapunov()).1.is_none());
    }

    #[test]
    fn body_force_and_h_are_linear_in_x() {
        let f = five();
        let m = Monitor::new(&f, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (theta, att) = m.sample_point(&mut rng);
            let rho = rng.random_range(0.1..10.0);
            let x = &theta * rho;
            for (a, b) in m.body_forces(&x, &att).iter().zip(m.body_forces(&theta, &att)) {
                assert_relative_eq!(*a, b * rho, epsilon = 1e-12 * (1.0 + a.norm()));
            }
            for (a, b) in m.h_body(&x, &att).iter().zip(m.h_body(&theta, &att)) {
                assert!((a - b * rho).norm() <= 1e-12 * (1.0 + a.norm()));
            }
        }
    }

    #[test]
    fn h_matches_finite_difference_of_ideal_force() {
        use crate::control::{control, measure};
        use crate::dynamics::linear_acceleration;
        // Along the true closed loop, d/dt gᵢ(X) equals hᵢ(X, R): the
        // translational state only feels thrust, which the controller sets to
        // −mᵢ gᵢⁱ·e₃.
        let f = five();
        let m = Monitor::new(&f, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let states: Vec<VehicleState> = (0..5)
                .map(|_| VehicleState {
                    position: Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    velocity: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
                    attitude: Rotation::random(&mut rng),
                    omega: Vec3::zeros(),
                })
                .collect();
            let accel: Vec<Vec3> = (0..5)
                .map(|i| {
                    let meas = measure(&states, f.law.graph(), i).unwrap();
                    let c = control(&meas, &f.law, &f.gains, &f.params[i]).unwrap();
                    linear_acceleration(&states[i].attitude, c.thrust, &Vec3::zeros(), &f.params[i], &f.world)
                })
                .collect();
            let eps = 1e-5;
            let shifted = |sign: f64| -> DVector<f64> {
                let pos: Vec<Vec3> = states.iter().map(|s| s.position + s.velocity * (sign * eps)).collect();
                let vel: Vec<Vec3> = states.iter().zip(&accel).map(|(s, a)| s.velocity + a * (sign * eps)).collect();
                relative_state(&pos, &vel)
            };
            let plus = m.forces(&shifted(1.0));
            let minus = m.forces(&shifted(-1.0));
            let pos: Vec<Vec3> = states.iter().map(|s| s.position).collect();
            let vel: Vec<Vec3> = states.iter().map(|s| s.velocity).collect();
            let att: Vec<Rotation> = states.iter().map(|s| s.attitude).collect();
            let h = m.h_body(&relative_state(&pos, &vel), &att);
            for i in 0..5 {
                let fd = att[i].to_body(&((plus[i] - minus[i]) / (2.0 * eps)));
                assert!((fd - h[i]).norm() <= 1e-6, "{fd} vs {}", h[i]);
            }
        }
    }

    #[test]
    fn zero_gains_give_zero_alpha_star() {
        // A zero law is not certifiable, so zero the force map of a certified one.
        let m = Monitor::new(&five(), 1.0).unwrap();
        let zero = Monitor { stacked: DMatrix::zeros(15, 24), ..m };
        assert_eq!(zero.estimate_alpha_star(2000, 0).value, 0.0);
    }

    #[test]
    fn m2_closed_form() {
        let m = Monitor::new(&pair(), 1.0).unwrap();
        let est = m.estimate_constants(10, 0);
        let p_max = m.lyapunov().p.clone().symmetric_eigenvalues().max();
        assert_relative_eq!(est.m2, 1.0 / (2.0 * p_max), epsilon = 1e-15);
    }

    #[test]
    fn sampled_m1_approaches_closed_form_from_below() {
        let m = Monitor::new(&pair(), 1.0).unwrap();
        let est = m.estimate_constants(50_000, 7);
        assert!(est.m1.value <= est.m1_exact * (1.0 + 1e-12));
        assert!(est.m1.value >= 0.9 * est.m1_exact, "{} vs {}", est.m1.value, est.m1_exact);
    }

    #[test]
    fn estimates_are_monotone_in_sample_count() {
        let m = Monitor::new(&five(), 1.0).unwrap();
        let small = m.estimate_constants(3000, 11);
        let large = m.estimate_constants(9000, 11);
        for (a, b) in [
            (&small.alpha_star, &large.alpha_star),
            (&small.m1, &large.m1),
            (&small.m3, &large.m3),
            (&small.m4, &large.m4),
            (&small.m5, &large.m5),
        ] {
            assert!(b.value >= a.value);
        }
        // Identical prefix: a re-run is bitwise equal.
        assert_eq!(small, m.estimate_constants(3000, 11));
    }

    #[test]
    fn witness_reproduces_estimate() {
        let m = Monitor::new(&five(), 1.0).unwrap();
        let est = m.estimate_constants(2000, 3);
        let w = est.alpha_star.witness.as_ref().unwrap();
        let theta = DVector::from_vec(w.theta.clone());
        let att: Vec<Rotation> = w.attitudes.iter().map(|r| Rotation::from_rows(*r).unwrap()).collect();
        let sum: f64 = m.body_forces(&theta, &att).iter().map(|g| g.z.abs()).sum();
        assert_eq!(sum, est.alpha_star.value);
    }

    #[test]
    fn alpha_star_is_bounded_by_force_norms() {
        // Σ|gᵢⁱ·e₃| ≤ Σ‖gᵢ‖ ≤ Σ ‖Gᵢ P^{-1/2}‖₂ on the unit shell.
        let m = Monitor::new(&five(), 1.0).unwrap();
        let est = m.estimate_alpha_star(5000, 1);
        let chol = m.lyapunov().p.clone().cholesky().unwrap();
        let l_inv = chol.l().try_inverse().unwrap();
        let bound: f64 = (0..5).map(|i| (m.stacked.rows(3 * i, 3) * l_inv.transpose()).singular_values().max()).sum();
        assert!(est.value > 0.0 && est.value <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn decrease_test_on_resting_trajectory_is_vacuous() {
        let m = Monitor::new(&pair(), 1.0).unwrap();
        let states = vec![VehicleState::at_rest(Vec3::zeros(), Rotation::identity()); 2];
        let s = m.sample_states(&states).unwrap();
        let samples = vec![s; 10];
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let r = decrease_test(&times, &samples, Some(1e-6), 0.2).unwrap();
        assert_eq!(r.intervals_above_delta, 0);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn decrease_test_flags_increase_above_delta() {
        let m = Monitor::new(&pair(), 1.0).unwrap();
        let base = m.sample_states(&vec![VehicleState::at_rest(Vec3::zeros(), Rotation::identity()); 2]).unwrap();
        let ws = [5.0, 4.0, 4.5, 3.0, 0.1, 0.2];
        let samples: Vec<_> = ws.iter().map(|&w| MonitorSample { w, ..base.clone() }).collect();
        let times: Vec<f64> = (0..ws.len()).map(|k| k as f64).collect();
        let r = decrease_test(&times, &samples, Some(1.0), 0.2).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].t_start, 1.0);
        assert_relative_eq!(r.violations[0].increase, 0.5);
        let calibrated = decrease_test(&times, &samples, None, 0.2).unwrap();
        assert!(calibrated.delta_calibrated);
        assert_eq!(calibrated.delta, 0.2);
    }
}
