//! Linear double-integrator consensus laws, their certification, and the
//! quadratic Lyapunov form of the relative closed loop.
//!
//! Relative coordinates are taken with respect to vehicle 0 and laid out as
//! `X = [x_01, …, x_0(n−1), v_01, …, v_0(n−1)]`, positions first, each entry a
//! 3-vector. `X` therefore has dimension `6(n − 1)`.

use std::collections::BTreeMap;

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::SensorDigraph;
use crate::lie::Vec3;

/// Spectrum must sit strictly left of this abscissa to count as Hurwitz.
pub const HURWITZ_MARGIN: f64 = 1e-10;
/// Maximum accepted `‖AᵀP + PA + Q‖_F`.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-8;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGain {
    /// Position gain, 1/s².
    pub a: f64,
    /// Velocity gain, 1/s.
    pub b: f64,
}

/// `f_i(y_i) = Σ_{j ∈ N_i} a_ij x_ij + b_ij v_ij` over a fixed sensor digraph.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusLaw {
    graph: SensorDigraph,
    // gains[i][k] belongs to the edge i -> graph.neighbors(i)[k]
    gains: Vec<Vec<EdgeGain>>,
}

impl ConsensusLaw {
    /// Uniform Ren–Atkins gains: `a_ij = a`, `b_ij = γ a` on every edge.
    pub fn ren_atkins(graph: SensorDigraph, a: f64, gamma: f64) -> Result<Self> {
        if !a.is_finite() || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite gains a={a}, gamma={gamma}")));
        }
        let gains = (0..graph.len())
            .map(|i| vec![EdgeGain { a, b: gamma * a }; graph.neighbors(i).map_or(0, <[_]>::len)])
            .collect();
        Ok(Self { graph, gains })
    }

    /// Per-edge gains. The key set must equal the edge set of `graph`.
    pub fn from_edge_gains(graph: SensorDigraph, table: &BTreeMap<(usize, usize), EdgeGain>) -> Result<Self> {
        let mut gains = Vec::with_capacity(graph.len());
        for i in 0..graph.len() {
            let mut row = Vec::new();
            for &j in graph.neighbors(i)? {
                let gain = table
                    .get(&(i, j))
                    .ok_or_else(|| Error::InvalidParameter(format!("missing gain for edge ({i}, {j})")))?;
                if !gain.a.is_finite() || !gain.b.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite gain on edge ({i}, {j})")));
                }
                row.push(*gain);
            }
            gains.push(row);
        }
        if table.len() != graph.edge_count() {
            let extra = table.keys().find(|(i, j)| graph.neighbors(*i).map_or(true, |list| !list.contains(j)));
            return Err(Error::InvalidParameter(format!("gain given for non-edge {extra:?}")));
        }
        Ok(Self { graph, gains })
    }

    pub fn graph(&self) -> &SensorDigraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn edge_gains(&self, i: usize) -> Result<&[EdgeGain]> {
        self.gains.get(i).map(Vec::as_slice).ok_or(Error::IndexOutOfRange { index: i, n: self.len() })
    }

    /// The same law with every gain multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let gains = self
            .gains
            .iter()
            .map(|row| row.iter().map(|g| EdgeGain { a: g.a * factor, b: g.b * factor }).collect())
            .collect();
        Self { graph: self.graph.clone(), gains }
    }

    /// Evaluates `f_i` on relative measurements ordered like `graph.neighbors(i)`.
    /// Works identically on inertial or body-frame measurements.
    pub fn eval(&self, i: usize, relative: &[(Vec3, Vec3)]) -> Result<Vec3> {
        let gains = self.edge_gains(i)?;
        if gains.len() != relative.len() {
            return Err(Error::LengthMismatch { expected: gains.len(), actual: relative.len() });
        }
        Ok(gains.iter().zip(relative).fold(Vec3::zeros(), |acc, (g, (x, v))| acc + x * g.a + v * g.b))
    }

    /// Linear map `X ↦ g_i(X) = f_i(h_i(X))` as a `3 × 6(n−1)` matrix.
    pub fn force_map(&self, i: usize) -> Result<DMatrix<f64>> {
        let n = self.len();
        let gains = self.edge_gains(i)?;
        let neighbors = self.graph.neighbors(i)?;
        let m = n - 1;
        let mut map = DMatrix::zeros(3, 6 * m);
        // x_ij = x_0j − x_0i, and x_00 = 0.
        for (&j, g) in neighbors.iter().zip(gains) {
            for (vehicle, sign) in [(j, 1.0), (i, -1.0)] {
                if vehicle == 0 {
                    continue;
                }
                for axis in 0..3 {
                    map[(axis, pos_index(vehicle, axis))] += sign * g.a;
                    map[(axis, vel_index(m, vehicle, axis))] += sign * g.b;
                }
            }
        }
        Ok(map)
    }

    /// Inertial ideal forces `g_i(X)` for every vehicle.
    pub fn forces_from_relative(&self, x: &DVector<f64>) -> Result<Vec<Vec3>> {
        let dim = relative_dim(self.len());
        if x.len() != dim {
            return Err(Error::LengthMismatch { expected: dim, actual: x.len() });
        }
        (0..self.len())
            .map(|i| {
                let f = self.force_map(i)? * x;
                Ok(Vec3::new(f[0], f[1], f[2]))
            })
            .collect()
    }
}

pub fn relative_dim(n: usize) -> usize {
    6 * n.saturating_sub(1)
}

/// Index in `X` of axis `axis` of `x_0j`, `j ≥ 1`.
pub fn pos_index(j: usize, axis: usize) -> usize {
    3 * (j - 1) + axis
}

/// Index in `X` of axis `axis` of `v_0j`, `j ≥ 1`; `m = n − 1`.
pub fn vel_index(m: usize, j: usize, axis: usize) -> usize {
    3 * m + 3 * (j - 1) + axis
}

/// Relative coordinates `X` from inertial positions and velocities.
pub fn relative_state(positions: &[Vec3], velocities: &[Vec3]) -> DVector<f64> {
    let n = positions.len();
    let m = n.saturating_sub(1);
    let mut x = DVector::zeros(6 * m);
    for j in 1..n {
        let dx = positions[j] - positions[0];
        let dv = velocities[j] - velocities[0];
        for axis in 0..3 {
            x[pos_index(j, axis)] = dx[axis];
            x[vel_index(m, j, axis)] = dv[axis];
        }
    }
    x
}

/// `x_0j` and `v_0j` blocks of `X` (zero for `j = 0`).
pub fn relative_block(x: &DVector<f64>, j: usize) -> (Vec3, Vec3) {
    if j == 0 {
        return (Vec3::zeros(), Vec3::zeros());
    }
    let m = x.len() / 6;
    (Vec3::from_fn(|a, _| x[pos_index(j, a)]), Vec3::from_fn(|a, _| x[vel_index(m, j, a)]))
}

/// The linear system `Ẋ = A X` of the double integrators under a consensus law.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeClosedLoop {
    pub a: DMatrix<f64>,
}

impl RelativeClosedLoop {
    pub fn build(law: &ConsensusLaw) -> Result<Self> {
        let n = law.len();
        let m = n.saturating_sub(1);
        let mut a = DMatrix::zeros(6 * m, 6 * m);
        if m == 0 {
            return Ok(Self { a });
        }
        for k in 0..3 * m {
            a[(k, 3 * m + k)] = 1.0;
        }
        let g0 = law.force_map(0)?;
        for j in 1..n {
            let rows = law.force_map(j)? - &g0;
            for axis in 0..3 {
                a.row_mut(vel_index(m, j, axis)).copy_from(&rows.row(axis));
            }
        }
        Ok(Self { a })
    }

    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidParameter(format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
        }
        Ok(Self { a })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Largest real part over the spectrum (`−∞` for the empty system).
    pub fn spectral_abscissa(&self) -> Result<f64> {
        if self.dim() == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let schur = Schur::try_new(self.a.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
            .ok_or(Error::EigenNonConvergence { dim: self.dim() })?;
        Ok(schur.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }

    /// Hurwitz test with margin [`HURWITZ_MARGIN`].
    pub fn certify(&self) -> Result<bool> {
        Ok(self.spectral_abscissa()? < -HURWITZ_MARGIN)
    }

    /// Solves `AᵀP + PA = −Q` for the unique symmetric `P ≻ 0`.
    pub fn synthesize_p(&self, q: &DMatrix<f64>) -> Result<LyapunovForm> {
        let dim = self.dim();
        if q.shape() != (dim, dim) {
            return Err(Error::InvalidParameter(format!("Q is {}x{}, expected {dim}x{dim}", q.nrows(), q.ncols())));
        }
        check_spd(q, "Q")?;
        let abscissa = self.spectral_abscissa()?;
        if abscissa >= -HURWITZ_MARGIN {
            return Err(Error::NotHurwitz { max_real: abscissa });
        }
        if dim == 0 {
            return Ok(LyapunovForm::new(DMatrix::zeros(0, 0), q.clone()));
        }

        // Column-major vec: vec(AᵀP) = (I ⊗ Aᵀ) vec P, vec(PA) = (Aᵀ ⊗ I) vec P.
        let at = self.a.transpose();
        let eye = DMatrix::<f64>::identity(dim, dim);
        let system = eye.kronecker(&at) + at.kronecker(&eye);
        let rhs = DVector::from_column_slice(q.as_slice()) * -1.0;
        let solution = system.lu().solve(&rhs).ok_or(Error::NotHurwitz { max_real: abscissa })?;
        let p = DMatrix::from_column_slice(dim, dim, solution.as_slice());
        let p = (&p + p.transpose()) * 0.5;

        let residual = (&at * &p + &p * &self.a + q).norm();
        if residual > LYAPUNOV_RESIDUAL_TOL {
            return Err(Error::LyapunovResidual { residual, tolerance: LYAPUNOV_RESIDUAL_TOL });
        }
        check_spd(&p, "P")?;
        Ok(LyapunovForm::new(p, q.clone()))
    }

    /// [`Self::synthesize_p`] with `Q = I`.
    pub fn synthesize_p_identity(&self) -> Result<LyapunovForm> {
        self.synthesize_p(&DMatrix::identity(self.dim(), self.dim()))
    }
}

fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * (1.0 + m.norm()) {
        return Err(Error::NotPositiveDefinite(format!("{name} is not symmetric (‖M − Mᵀ‖ = {asym:e})")));
    }
    if m.nrows() > 0 && m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(format!("{name} has a non-positive eigenvalue")));
    }
    Ok(())
}

/// `V(X) = XᵀPX` with `AᵀP + PA = −Q`.
#[derive(Clone, Debug)]
pub struct LyapunovForm {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    eig_p: (f64, f64),
    eig_q_min: f64,
}

impl LyapunovForm {
    fn new(p: DMatrix<f64>, q: DMatrix<f64>) -> Self {
        let extremes = |m: &DMatrix<f64>| {
            if m.nrows() == 0 {
                return (0.0, 0.0);
            }
            let ev = m.clone().symmetric_eigenvalues();
            (ev.min(), ev.max())
        };
        let eig_p = extremes(&p);
        let eig_q_min = extremes(&q).0;
        Self { p, q, eig_p, eig_q_min }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }

    pub fn lambda_min_p(&self) -> f64 {
        self.eig_p.0
    }

    pub fn lambda_max_p(&self) -> f64 {
        self.eig_p.1
    }

    pub fn lambda_min_q(&self) -> f64 {
        self.eig_q_min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mutual_pair() -> ConsensusLaw {
        let g = SensorDigraph::new(2, [(0, 1), (1, 0)]).unwrap();
        ConsensusLaw::ren_atkins(g, 0.3, 30.0).unwrap()
    }

    fn reference_law() -> ConsensusLaw {
        ConsensusLaw::ren_atkins(SensorDigraph::reference_five(), 0.3, 30.0).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0))
    }

    #[test]
    fn eval_examples() {
        let g = SensorDigraph::new(2, [(0, 1)]).unwrap();
        let law = ConsensusLaw::ren_atkins(g, 0.3, 30.0).unwrap();
        let f = law.eval(0, &[(Vec3::x(), Vec3::zeros())]).unwrap();
        assert_relative_eq!(f, Vec3::new(0.3, 0.0, 0.0));
        assert_eq!(law.eval(0, &[(Vec3::zeros(), Vec3::zeros())]).unwrap(), Vec3::zeros());
        assert!(matches!(law.eval(0, &[]), Err(Error::LengthMismatch { expected: 1, actual: 0 })));
    }

    #[test]
    fn eval_is_homogeneous() {
        let law = reference_law();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let y: Vec<_> = (0..2).map(|_| (random_vec(&mut rng), random_vec(&mut rng))).collect();
            let y2: Vec<_> = y.iter().map(|(x, v)| (x * 2.0, v * 2.0)).collect();
            assert_eq!(law.eval(2, &y2).unwrap(), law.eval(2, &y).unwrap() * 2.0);
        }
    }

    #[test]
    fn per_edge_gains_must_match_edges() {
        let g = SensorDigraph::new(2, [(0, 1)]).unwrap();
        let mut table = BTreeMap::new();
        table.insert((0, 1), EdgeGain { a: 1.0, b: 2.0 });
        assert!(ConsensusLaw::from_edge_gains(g.clone(), &table).is_ok());
        table.insert((1, 0), EdgeGain { a: 1.0, b: 2.0 });
        assert!(ConsensusLaw::from_edge_gains(g.clone(), &table).is_err());
        assert!(ConsensusLaw::from_edge_gains(g, &BTreeMap::new()).is_err());
    }

    #[test]
    fn relative_blocks_for_two_vehicles() {
        let rcl = RelativeClosedLoop::build(&mutual_pair()).unwrap();
        for axis in 0..3 {
            let (p, v) = (pos_index(1, axis), vel_index(1, 1, axis));
            assert_eq!(rcl.a[(p, v)], 1.0);
            assert_relative_eq!(rcl.a[(v, p)], -0.6, epsilon = 1e-15);
            assert_relative_eq!(rcl.a[(v, v)], -18.0, epsilon = 1e-15);
        }
        // Only vehicle 1 senses vehicle 0: x_01 evolves under −f_0 = 0 and +f_1.
        let one_way = ConsensusLaw::ren_atkins(SensorDigraph::new(2, [(1, 0)]).unwrap(), 0.3, 30.0).unwrap();
        let rcl = RelativeClosedLoop::build(&one_way).unwrap();
        assert_relative_eq!(rcl.a[(3, 0)], -0.3, epsilon = 1e-15);
        assert_relative_eq!(rcl.a[(3, 3)], -9.0, epsilon = 1e-15);
        assert_eq!(&rcl.a * DVector::zeros(6), DVector::zeros(6));
    }

    #[test]
    fn relative_matrix_matches_direct_evaluation() {
        // Ẋ from A agrees with evaluating every f_i on inertial relative states.
        let law = reference_law();
        let rcl = RelativeClosedLoop::build(&law).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos: Vec<Vec3> = (0..5).map(|_| random_vec(&mut rng)).collect();
        let vel: Vec<Vec3> = (0..5).map(|_| random_vec(&mut rng)).collect();
        let f: Vec<Vec3> = (0..5)
            .map(|i| {
                let y: Vec<_> =
                    law.graph().neighbors(i).unwrap().iter().map(|&j| (pos[j] - pos[i], vel[j] - vel[i])).collect();
                law.eval(i, &y).unwrap()
            })
            .collect();
        let x = relative_state(&pos, &vel);
        let xdot = &rcl.a * &x;
        for j in 1..5 {
            let (dx, dv) = relative_block(&xdot, j);
            assert_relative_eq!(dx, vel[j] - vel[0], epsilon = 1e-12);
            assert_relative_eq!(dv, f[j] - f[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn certification_examples() {
        assert!(RelativeClosedLoop::build(&mutual_pair()).unwrap().certify().unwrap());
        let undamped = ConsensusLaw::ren_atkins(SensorDigraph::new(2, [(0, 1), (1, 0)]).unwrap(), 0.3, 0.0).unwrap();
        assert!(!RelativeClosedLoop::build(&undamped).unwrap().certify().unwrap());
        assert!(RelativeClosedLoop::build(&reference_law()).unwrap().certify().unwrap());
        let disconnected = ConsensusLaw::ren_atkins(SensorDigraph::new(3, [(0, 1)]).unwrap(), 0.3, 30.0).unwrap();
        assert!(!RelativeClosedLoop::build(&disconnected).unwrap().certify().unwrap());
    }

    #[test]
    fn mutual_pair_abscissa_matches_quadratic_formula() {
        // λ² + 18λ + 0.6 = 0; slow root is the one closer to zero.
        let slow = (-18.0 + (18.0f64 * 18.0 - 4.0 * 0.6).sqrt()) / 2.0;
        let abscissa = RelativeClosedLoop::build(&mutual_pair()).unwrap().spectral_abscissa().unwrap();
        assert_relative_eq!(abscissa, slow, max_relative = 1e-10);
    }

    #[test]
    fn scalar_lyapunov() {
        let rcl = RelativeClosedLoop::from_matrix(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let form = rcl.synthesize_p(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(form.p[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn two_state_lyapunov_matches_hand_solution() {
        let (c, d) = (-0.6, -18.0);
        // Oracle: AᵀP + PA = −I with P = [[p, q], [q, r]] gives three scalar equations.
        let q = -1.0 / (2.0 * c);
        let r = (-0.5 - q) / d;
        let p = -c * r - d * q;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, c, d]);
        let form = RelativeClosedLoop::from_matrix(a.clone()).unwrap().synthesize_p_identity().unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[p, q, q, r]);
        assert_relative_eq!(form.p, expected, max_relative = 1e-10);
        let residual = (a.transpose() * &form.p + &form.p * &a + DMatrix::identity(2, 2)).norm();
        assert!(residual <= 1e-10);
    }

    #[test]
    fn rejects_non_hurwitz_and_indefinite_q() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.6, 0.0]);
        let rcl = RelativeClosedLoop::from_matrix(a).unwrap();
        assert!(matches!(rcl.synthesize_p_identity(), Err(Error::NotHurwitz { .. })));
        let good = RelativeClosedLoop::build(&mutual_pair()).unwrap();
        let mut q = DMatrix::identity(6, 6);
        q[(0, 0)] = -1.0;
        assert!(matches!(good.synthesize_p(&q), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn lyapunov_derivative_along_flow() {
        let rcl = RelativeClosedLoop::build(&reference_law()).unwrap();
        let form = rcl.synthesize_p_identity().unwrap();
        assert!(form.lambda_min_p() > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = DVector::from_fn(rcl.dim(), |_, _| rng.random_range(-1.0..1.0));
            let xdot = &rcl.a * &x;
            let vdot = 2.0 * (x.transpose() * &form.p * &xdot)[(0, 0)];
            let qform = (x.transpose() * &form.q * &x)[(0, 0)];
            assert!(vdot < 0.0);
            assert!((vdot + qform).abs() <= 1e-9 * (1.0 + qform));
        }
    }
}
