//! Second-order linear plants driven by a network of integrator units, and the
//! augmented system in which plant and network are a single LQR problem.
//!
//! The plant evolves as
//!
//! ```text
//! psi_{t+1} = psi_t + C nu_t
//! nu_{t+1}  = A_psi psi_t + A_nu nu_t + B_x x_t
//! x_{t+1}   = x_t + dt u_t
//! ```
//!
//! where `x` is the activity of the `n` network units and `u` their input.
//! Stacking `omega = [psi; nu; x]` gives `omega_{t+1} = A omega_t + B u_t`.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{self, Stream};

/// True plant matrices. The learner never reads these; only the simulator
/// and the oracle do.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantDynamics<T: Real> {
    a_psi: DMatrix<T>,
    a_nu: DMatrix<T>,
    b_x: DMatrix<T>,
    c: DMatrix<T>,
    dt: T,
}

impl<T: Real> PlantDynamics<T> {
    pub fn new(a_psi: DMatrix<T>, a_nu: DMatrix<T>, b_x: DMatrix<T>, c: DMatrix<T>, dt: T) -> Result<Self> {
        let m = a_psi.nrows();
        let n = b_x.ncols();
        check_shape("A_psi", &a_psi, m, m)?;
        check_shape("A_nu", &a_nu, m, m)?;
        check_shape("C", &c, m, m)?;
        check_shape("B_x", &b_x, m, n)?;
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "plant must have at least one position coordinate".into(),
            });
        }
        if n <= m {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("network size {n} must exceed plant dimension {m}"),
            });
        }
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("sampling interval must be positive, got {dt:?}"),
            });
        }
        Ok(Self {
            a_psi,
            a_nu,
            b_x,
            c,
            dt,
        })
    }

    /// Number of generalized positions (and velocities).
    pub fn m(&self) -> usize {
        self.a_psi.nrows()
    }

    /// Number of network units.
    pub fn n(&self) -> usize {
        self.b_x.ncols()
    }

    pub fn a_psi(&self) -> &DMatrix<T> {
        &self.a_psi
    }

    pub fn a_nu(&self) -> &DMatrix<T> {
        &self.a_nu
    }

    pub fn b_x(&self) -> &DMatrix<T> {
        &self.b_x
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn dt(&self) -> T {
        self.dt
    }
}

fn check_shape<T: Real>(what: &'static str, m: &DMatrix<T>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dims(
            what,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Plant and network stacked into `omega_{t+1} = A omega_t + B u_t` with the
/// stage cost `omega' Q omega + u' R u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
    m: usize,
    n: usize,
}

impl<T: Real> AugmentedSystem<T> {
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Augmented state dimension `2m + n`.
    pub fn n_prime(&self) -> usize {
        2 * self.m + self.n
    }

    /// Reads the plant blocks back out of `A` and `B`.
    pub fn plant(&self) -> PlantDynamics<T> {
        let m = self.m;
        let n = self.n;
        let dt = self.b[(2 * m, 0)];
        PlantDynamics {
            a_psi: self.a.view((m, 0), (m, m)).into_owned(),
            a_nu: self.a.view((m, m), (m, m)).into_owned(),
            b_x: self.a.view((m, 2 * m), (m, n)).into_owned(),
            c: self.a.view((0, m), (m, m)).into_owned(),
            dt,
        }
    }

    /// Copy with `A` and `B` replaced; for tests that need matrices no plant
    /// produces.
    #[cfg(test)]
    pub(crate) fn with_matrices(&self, a: DMatrix<T>, b: DMatrix<T>) -> Self {
        Self { a, b, ..self.clone() }
    }

    /// Copy with the penalties replaced, without validation.
    #[cfg(test)]
    pub(crate) fn with_costs(&self, q: DMatrix<T>, r: DMatrix<T>) -> Self {
        Self { q, r, ..self.clone() }
    }

    /// Same system with the plant projection of units `n_f..n` removed.
    pub fn lesioned(&self, functioning: usize) -> Result<Self> {
        if functioning > self.n {
            return Err(Error::LesionOutOfRange {
                functioning,
                network: self.n,
            });
        }
        let mut out = self.clone();
        let m = self.m;
        out.a
            .view_mut((m, 2 * m + functioning), (m, self.n - functioning))
            .fill(T::zero());
        Ok(out)
    }
}

/// Assembles `A`, `B` and the block-diagonal penalty `Q = diag(q_plant, s)`.
///
/// `q_plant` weighs `[psi; nu]` (size `2m`), `s` penalizes network activity
/// and `r` the network input.
pub fn build_augmented<T: Real>(
    plant: &PlantDynamics<T>,
    q_plant: &DMatrix<T>,
    s: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<AugmentedSystem<T>> {
    let m = plant.m();
    let n = plant.n();
    check_shape("plant cost weights", q_plant, 2 * m, 2 * m)?;
    check_shape("network activity penalty S", s, n, n)?;
    check_shape("input penalty R", r, n, n)?;
    if !is_symmetric(q_plant) {
        return Err(Error::NotPositiveSemidefinite("plant cost weights"));
    }
    if !is_symmetric(s) {
        return Err(Error::NotPositiveSemidefinite("network activity penalty S"));
    }
    if !is_symmetric(r) || r.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("input penalty R"));
    }

    let np = 2 * m + n;
    let mut a = DMatrix::zeros(np, np);
    a.view_mut((0, 0), (m, m)).fill_with_identity();
    a.view_mut((0, m), (m, m)).copy_from(plant.c());
    a.view_mut((m, 0), (m, m)).copy_from(plant.a_psi());
    a.view_mut((m, m), (m, m)).copy_from(plant.a_nu());
    a.view_mut((m, 2 * m), (m, n)).copy_from(plant.b_x());
    a.view_mut((2 * m, 2 * m), (n, n)).fill_with_identity();

    let mut b = DMatrix::zeros(np, n);
    b.view_mut((2 * m, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * plant.dt()));

    let mut q = DMatrix::zeros(np, np);
    q.view_mut((0, 0), (2 * m, 2 * m)).copy_from(q_plant);
    q.view_mut((2 * m, 2 * m), (n, n)).copy_from(s);
    if !is_psd(&q) {
        return Err(Error::NotPositiveSemidefinite("state penalty Q"));
    }

    Ok(AugmentedSystem {
        a,
        b,
        q,
        r: r.clone(),
        m,
        n,
    })
}

impl<T: Real> AugmentedSystem<T> {
    /// General discounted LQR problem `omega+ = A omega + B u` without the
    /// plant-and-network block layout. The state is read as `2m + n` with
    /// `m = (n' - n) / 2`, so `n' - n` must be even; a scalar problem has
    /// `m = 0`. [`AugmentedSystem::plant`] is meaningless on such systems.
    pub fn from_matrices(a: DMatrix<T>, b: DMatrix<T>, q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let np = a.nrows();
        let n = b.ncols();
        check_shape("A", &a, np, np)?;
        check_shape("B", &b, np, n)?;
        check_shape("Q", &q, np, np)?;
        check_shape("R", &r, n, n)?;
        if n == 0 || np < n || !(np - n).is_multiple_of(2) {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("state size {np} must be 2m + n for input size {n}"),
            });
        }
        if !is_symmetric(&q) || !is_psd(&q) {
            return Err(Error::NotPositiveSemidefinite("state penalty Q"));
        }
        if !is_symmetric(&r) || r.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("input penalty R"));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            m: (np - n) / 2,
            n,
        })
    }
}

pub(crate) fn is_symmetric<T: Real>(m: &DMatrix<T>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(T::one());
    let tol = T::default_epsilon() * T::lit(64.0) * scale;
    (m - m.transpose()).amax() <= tol
}

fn is_psd<T: Real>(m: &DMatrix<T>) -> bool {
    let scale = m.amax().max(T::one());
    let tol = T::default_epsilon() * T::lit(64.0) * scale;
    m.clone().symmetric_eigenvalues().iter().all(|&l| l >= -tol)
}

/// Augmented state `omega = [psi; nu; x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState<T: Real> {
    omega: DVector<T>,
    m: usize,
    n: usize,
}

impl<T: Real> AugmentedState<T> {
    pub fn new(omega: DVector<T>, m: usize, n: usize) -> Result<Self> {
        if omega.len() != 2 * m + n {
            return Err(Error::dims("augmented state", 2 * m + n, omega.len()));
        }
        Ok(Self { omega, m, n })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            omega: DVector::zeros(2 * m + n),
            m,
            n,
        }
    }

    pub fn from_parts(psi: &[T], nu: &[T], x: &[T]) -> Result<Self> {
        if psi.len() != nu.len() {
            return Err(Error::dims("velocity block", psi.len(), nu.len()));
        }
        let omega = DVector::from_iterator(psi.len() + nu.len() + x.len(), psi.iter().chain(nu).chain(x).copied());
        Ok(Self {
            omega,
            m: psi.len(),
            n: x.len(),
        })
    }

    pub fn psi(&self) -> DVectorView<'_, T> {
        self.omega.rows(0, self.m)
    }

    pub fn nu(&self) -> DVectorView<'_, T> {
        self.omega.rows(self.m, self.m)
    }

    pub fn x(&self) -> DVectorView<'_, T> {
        self.omega.rows(2 * self.m, self.n)
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.omega
    }

    pub fn into_vector(self) -> DVector<T> {
        self.omega
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// One transition of the augmented system and the cost incurred on it.
pub fn step<T: Real>(
    system: &AugmentedSystem<T>,
    omega: &AugmentedState<T>,
    u: &DVector<T>,
) -> Result<(AugmentedState<T>, T)> {
    if omega.m != system.m || omega.n != system.n {
        return Err(Error::dims("step state", system.n_prime(), omega.omega.len()));
    }
    if u.len() != system.n {
        return Err(Error::dims("step input", system.n, u.len()));
    }
    let (next, cost) = step_raw(system, &omega.omega, u);
    Ok((
        AugmentedState {
            omega: next,
            m: omega.m,
            n: omega.n,
        },
        cost,
    ))
}

/// Unchecked transition on raw vectors; callers guarantee the dimensions.
pub(crate) fn step_raw<T: Real>(system: &AugmentedSystem<T>, omega: &DVector<T>, u: &DVector<T>) -> (DVector<T>, T) {
    let next = &system.a * omega + &system.b * u;
    (next, stage_cost(system, omega, u))
}

pub(crate) fn stage_cost<T: Real>(system: &AugmentedSystem<T>, omega: &DVector<T>, u: &DVector<T>) -> T {
    omega.dot(&(&system.q * omega)) + u.dot(&(&system.r * u))
}

/// When, relative to learning, a lesion is inflicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LesionTiming {
    BeforeLearning,
    /// After `episode` completed episodes on the intact plant.
    DuringLearning {
        episode: usize,
    },
    AfterLearning,
}

impl LesionTiming {
    pub fn label(&self) -> &'static str {
        match self {
            LesionTiming::BeforeLearning => "before",
            LesionTiming::DuringLearning { .. } => "during",
            LesionTiming::AfterLearning => "after",
        }
    }
}

/// Permanent loss of the plant projection of all but the first `functioning` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LesionSpec {
    functioning: usize,
    timing: LesionTiming,
}

impl LesionSpec {
    pub fn new(functioning: usize, timing: LesionTiming) -> Result<Self> {
        if let LesionTiming::DuringLearning { episode } = timing {
            if episode < 1 {
                return Err(Error::InvalidParameter {
                    name: "k1",
                    reason: "a lesion during learning needs at least one completed episode".into(),
                });
            }
        }
        Ok(Self { functioning, timing })
    }

    pub fn functioning(&self) -> usize {
        self.functioning
    }

    pub fn timing(&self) -> LesionTiming {
        self.timing
    }

    pub fn check_network(&self, n: usize) -> Result<()> {
        if self.functioning > n {
            return Err(Error::LesionOutOfRange {
                functioning: self.functioning,
                network: n,
            });
        }
        Ok(())
    }
}

/// Zeroes columns `n_f..n` of `B_x`; the input plant is untouched.
pub fn apply_lesion<T: Real>(plant: &PlantDynamics<T>, functioning: usize) -> Result<PlantDynamics<T>> {
    let n = plant.n();
    if functioning > n {
        return Err(Error::LesionOutOfRange {
            functioning,
            network: n,
        });
    }
    let mut out = plant.clone();
    let m = plant.m();
    out.b_x.view_mut((0, functioning), (m, n - functioning)).fill(T::zero());
    Ok(out)
}

/// Physical constants of the planar point-mass task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassParams<T> {
    pub n: usize,
    pub dt: T,
    /// Velocity dissipation `lambda_v`.
    pub friction: T,
    pub target: [T; 2],
}

impl<T: Real> Default for PointMassParams<T> {
    fn default() -> Self {
        Self {
            n: 10,
            dt: T::lit(0.1),
            friction: T::lit(0.25),
            target: [T::one(), T::zero()],
        }
    }
}

/// Point mass in the plane: `A_psi = 0`, `A_nu = (1 - dt lambda_v) I`,
/// `C = dt I`, `B_x = dt b` with `b` uniform on `[0, 1)`.
///
/// Returns the plant and the target position.
pub fn make_point_mass<T: Real>(params: &PointMassParams<T>, seed: u64) -> Result<(PlantDynamics<T>, DVector<T>)> {
    let m = 2;
    if params.n <= m {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("network size {} must exceed 2", params.n),
        });
    }
    let dt = params.dt;
    let b = projection_weights::<T>(m, params.n, seed);
    let eye = DMatrix::<T>::identity(m, m);
    let plant = PlantDynamics::new(
        DMatrix::zeros(m, m),
        &eye * (T::one() - dt * params.friction),
        b * dt,
        &eye * dt,
        dt,
    )?;
    Ok((plant, DVector::from_row_slice(&params.target)))
}

/// Physical constants of the cart-pole, linearized about the upright position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams<T> {
    pub n: usize,
    pub dt: T,
    pub pole_mass: T,
    pub length: T,
    pub inertia: T,
    pub cart_mass: T,
    /// Cart friction coefficient.
    pub friction: T,
    pub gravity: T,
}

impl<T: Real> Default for PendulumParams<T> {
    fn default() -> Self {
        Self {
            n: 10,
            dt: T::lit(0.1),
            pole_mass: T::lit(0.2),
            length: T::lit(0.3),
            inertia: T::lit(0.006),
            cart_mass: T::lit(0.5),
            friction: T::lit(0.1),
            gravity: T::lit(9.8),
        }
    }
}

impl<T: Real> PendulumParams<T> {
    /// `I (M + m) + M m l^2`.
    pub fn denominator(&self) -> T {
        let ml2 = self.pole_mass * self.length * self.length;
        self.inertia * (self.cart_mass + self.pole_mass) + self.cart_mass * ml2
    }
}

/// Cart-pole with `psi = [p, theta]`, `nu = [v, omega]`.
///
/// The velocity rows follow the linearized equations of motion directly:
/// cart friction enters both `v` and `omega`, gravity couples only through
/// `theta`, and the unit activity drives both rows through scaled copies of
/// one random `1 x n` vector.
pub fn make_pendulum<T: Real>(params: &PendulumParams<T>, seed: u64) -> Result<PlantDynamics<T>> {
    let m = 2;
    if params.n <= m {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("network size {} must exceed 2", params.n),
        });
    }
    let PendulumParams {
        dt,
        pole_mass: mp,
        length: l,
        inertia,
        cart_mass: mc,
        friction,
        gravity: g,
        ..
    } = *params;
    let den = params.denominator();
    let cart_gain = (inertia + mp * l * l) / den;
    let pole_gain = mp * l / den;

    let a_psi = DMatrix::from_row_slice(
        2,
        2,
        &[
            T::zero(),
            dt * mp * mp * g * l * l / den,
            T::zero(),
            dt * mp * g * l * (mc + mp) / den,
        ],
    );
    let a_nu = DMatrix::from_row_slice(
        2,
        2,
        &[
            T::one() - dt * cart_gain * friction,
            T::zero(),
            -dt * pole_gain * friction,
            T::one(),
        ],
    );
    let b = projection_weights::<T>(1, params.n, seed);
    let mut b_x = DMatrix::zeros(2, params.n);
    b_x.row_mut(0).copy_from(&(b.row(0) * (dt * cart_gain)));
    b_x.row_mut(1).copy_from(&(b.row(0) * (dt * pole_gain)));
    PlantDynamics::new(a_psi, a_nu, b_x, DMatrix::identity(m, m) * dt, dt)
}

/// Unit projection weights, uniform on `[0, 1)` from the run's plant stream.
pub fn projection_weights<T: Real>(rows: usize, n: usize, seed: u64) -> DMatrix<T> {
    let mut rng = seed::rng(seed, Stream::Plant, 0);
    // Row-major fill so the first row is the same for any `rows`.
    let data: Vec<T> = (0..rows * n).map(|_| T::lit(rng.random::<f64>())).collect();
    DMatrix::from_row_slice(rows, n, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn point_mass_system(seed: u64) -> (AugmentedSystem<f64>, DVector<f64>) {
        let (plant, target) = make_point_mass(&PointMassParams::default(), seed).unwrap();
        let mut qp = DMatrix::zeros(4, 4);
        qp.view_mut((0, 0), (2, 2)).fill_with_identity();
        qp *= 10.0;
        let sys = build_augmented(
            &plant,
            &qp,
            &(DMatrix::identity(10, 10) * 2.0),
            &(DMatrix::identity(10, 10) * 2.0),
        )
        .unwrap();
        (sys, target)
    }

    #[test]
    fn point_mass_blocks() {
        let (sys, target) = point_mass_system(3);
        assert_eq!(sys.a().shape(), (14, 14));
        assert_eq!(sys.b().shape(), (14, 10));
        let plant = sys.plant();
        assert_relative_eq!(plant.a_nu(), &(DMatrix::identity(2, 2) * 0.975), epsilon = 1e-15);
        assert_relative_eq!(plant.c(), &(DMatrix::identity(2, 2) * 0.1), epsilon = 1e-15);
        assert!(plant.a_psi().iter().all(|&v| v == 0.0));
        assert_eq!(plant.b_x().shape(), (2, 10));
        assert!(sys.b().view((0, 0), (4, 10)).iter().all(|&v| v == 0.0));
        assert_relative_eq!(
            sys.b().view((4, 0), (10, 10)).into_owned(),
            DMatrix::identity(10, 10) * 0.1,
            epsilon = 1e-15
        );
        assert_eq!(target.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn frictionless_point_mass() {
        let params = PointMassParams {
            friction: 0.0,
            ..PointMassParams::default()
        };
        let (plant, _) = make_point_mass::<f64>(&params, 0).unwrap();
        assert_eq!(plant.a_nu(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn projection_weights_are_seeded() {
        let (a, _) = make_point_mass::<f64>(&PointMassParams::default(), 11).unwrap();
        let (b, _) = make_point_mass::<f64>(&PointMassParams::default(), 11).unwrap();
        let (c, _) = make_point_mass::<f64>(&PointMassParams::default(), 12).unwrap();
        assert_eq!(a.b_x(), b.b_x());
        assert_ne!(a.b_x(), c.b_x());
        assert!(a.b_x().iter().all(|&v| (0.0..0.1).contains(&v)));
    }

    #[test]
    fn tiny_zero_plant_layout() {
        let z = DMatrix::<f64>::zeros(1, 1);
        let plant = PlantDynamics::new(z.clone(), z.clone(), DMatrix::zeros(1, 2), z, 1.0).unwrap();
        let sys = build_augmented(
            &plant,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(sys.a(), &expected);
        let mut b = DMatrix::zeros(4, 2);
        b.view_mut((2, 0), (2, 2)).fill_with_identity();
        assert_eq!(sys.b(), &b);
    }

    #[test]
    fn pendulum_constants() {
        let p = PendulumParams::<f64>::default();
        assert_relative_eq!(p.denominator(), 0.0132, epsilon = 1e-15);
        let plant = make_pendulum(&p, 0).unwrap();
        // dt m^2 g l^2 / den = 0.1 * 0.03528 / 0.0132
        assert_relative_eq!(plant.a_psi()[(0, 1)], 0.267_272_727_272_727_3, epsilon = 1e-12);
        // dt m g l (M + m) / den = 0.1 * 0.4116 / 0.0132
        assert_relative_eq!(plant.a_psi()[(1, 1)], 3.118_181_818_181_818, epsilon = 1e-12);
        // 1 - dt (I + m l^2) b / den
        assert_relative_eq!(plant.a_nu()[(0, 0)], 1.0 - 0.1 * 0.024 * 0.1 / 0.0132, epsilon = 1e-14);
        assert_relative_eq!(plant.a_nu()[(0, 0)], 0.981_818_181_818_181_8, epsilon = 1e-12);
        // -dt m l b / den
        assert_relative_eq!(plant.a_nu()[(1, 0)], -0.1 * 0.06 * 0.1 / 0.0132, epsilon = 1e-14);
        assert_eq!(plant.a_nu()[(1, 1)], 1.0);
        assert_eq!(plant.a_psi()[(0, 0)], 0.0);
        // Both velocity rows are scaled copies of the same b.
        let ratio = (0.024 / 0.0132) / (0.06 / 0.0132);
        for j in 0..10 {
            assert_relative_eq!(plant.b_x()[(0, j)], ratio * plant.b_x()[(1, j)], epsilon = 1e-14);
        }
    }

    #[test]
    fn pendulum_without_gravity() {
        let p = PendulumParams {
            gravity: 0.0,
            ..PendulumParams::<f64>::default()
        };
        let plant = make_pendulum(&p, 0).unwrap();
        assert!(plant.a_psi().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (plant, _) = make_point_mass::<f64>(&PointMassParams::default(), 0).unwrap();
        let eye4 = DMatrix::<f64>::identity(4, 4);
        let eye10 = DMatrix::<f64>::identity(10, 10);
        assert!(matches!(
            build_augmented(&plant, &DMatrix::identity(3, 3), &eye10, &eye10),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            build_augmented(&plant, &eye4, &eye10, &(eye10.clone() * -1.0)),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            build_augmented(&plant, &eye4, &eye10, &DMatrix::zeros(10, 10)),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(make_point_mass::<f64>(
            &PointMassParams {
                n: 2,
                ..Default::default()
            },
            0
        )
        .is_err());
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(PlantDynamics::new(z.clone(), z.clone(), DMatrix::zeros(2, 4), z.clone(), 0.0).is_err());
        assert!(PlantDynamics::new(z.clone(), z.clone(), DMatrix::zeros(2, 2), z, 0.1).is_err());
    }

    #[test]
    fn lesion_masks_columns() {
        let ones = DMatrix::<f64>::from_element(2, 4, 1.0);
        let z = DMatrix::<f64>::zeros(2, 2);
        let plant = PlantDynamics::new(z.clone(), z.clone(), ones, z, 0.1).unwrap();
        let lesioned = apply_lesion(&plant, 2).unwrap();
        assert_eq!(
            lesioned.b_x(),
            &DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0])
        );
        assert!(plant.b_x().iter().all(|&v| v == 1.0));
        assert_eq!(apply_lesion(&plant, 4).unwrap(), plant);
        assert!(apply_lesion(&plant, 0).unwrap().b_x().iter().all(|&v| v == 0.0));
        assert!(matches!(
            apply_lesion(&plant, 5),
            Err(Error::LesionOutOfRange {
                functioning: 5,
                network: 4
            })
        ));
    }

    #[test]
    fn full_lesion_removes_control_authority() {
        let (sys, _) = point_mass_system(1);
        let dead = sys.lesioned(0).unwrap();
        let mut omega = AugmentedState::zeros(2, 10);
        let u = DVector::from_element(10, 1.0);
        for _ in 0..20 {
            omega = step(&dead, &omega, &u).unwrap().0;
        }
        assert!(omega.psi().iter().chain(omega.nu().iter()).all(|&v| v == 0.0));
        assert!(omega.x().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn lesion_spec_validation() {
        assert!(LesionSpec::new(2, LesionTiming::DuringLearning { episode: 0 }).is_err());
        let spec = LesionSpec::new(11, LesionTiming::BeforeLearning).unwrap();
        assert!(spec.check_network(10).is_err());
        assert!(LesionSpec::new(2, LesionTiming::AfterLearning)
            .unwrap()
            .check_network(10)
            .is_ok());
    }

    #[test]
    fn step_cost_and_origin() {
        // m = 1, n = 1 toy: state [psi, nu, x].
        let plant = PlantDynamics::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
            DMatrix::from_element(1, 1, 0.1),
            0.1,
        )
        .unwrap();
        let sys = build_augmented(
            &plant,
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        let omega = AugmentedState::from_parts(&[1.0], &[2.0], &[0.0, 0.0]).unwrap();
        let (_, cost) = step(&sys, &omega, &DVector::from_row_slice(&[3.0, 0.0])).unwrap();
        assert_eq!(cost, 1.0 + 4.0 + 9.0);

        let zero = AugmentedState::zeros(1, 2);
        let (next, cost) = step(&sys, &zero, &DVector::zeros(2)).unwrap();
        assert_eq!(next, zero);
        assert_eq!(cost, 0.0);
        assert!(step(&sys, &zero, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn shifted_point_mass_zero_policy_cost() {
        let (sys, target) = point_mass_system(5);
        let mut omega = AugmentedState::from_parts(&[-target[0], -target[1]], &[0.0, 0.0], &[0.0; 10]).unwrap();
        for _ in 0..50 {
            let (next, cost) = step(&sys, &omega, &DVector::zeros(10)).unwrap();
            assert_eq!(cost, 10.0);
            omega = next;
        }
    }

    #[test]
    fn target_shift_invariance() {
        let (sys, target) = point_mass_system(9);
        let plant = sys.plant();
        let inputs: Vec<DVector<f64>> = (0..40)
            .map(|t| DVector::from_fn(10, |i, _| ((t * 7 + i * 3) % 11) as f64 * 0.05 - 0.25))
            .collect();
        // Shifted coordinates.
        let mut shifted = AugmentedState::from_parts(&[-1.0, 0.0], &[0.0, 0.0], &[0.0; 10]).unwrap();
        // Raw coordinates, cost (p - p_T)' Q1 (p - p_T) evaluated by hand.
        let mut p = DVector::from_row_slice(&[0.0, 0.0]);
        let mut v = DVector::<f64>::zeros(2);
        let mut x = DVector::<f64>::zeros(10);
        for u in &inputs {
            let (next, cost) = step(&sys, &shifted, u).unwrap();
            let e = &p - &target;
            let raw_cost = 10.0 * e.norm_squared() + 2.0 * x.norm_squared() + 2.0 * u.norm_squared();
            assert_relative_eq!(cost, raw_cost, epsilon = 1e-12);
            let p_next = &p + plant.c() * &v;
            let v_next = plant.a_nu() * &v + plant.b_x() * &x;
            let x_next = &x + u * plant.dt();
            p = p_next;
            v = v_next;
            x = x_next;
            shifted = next;
            assert_relative_eq!(shifted.psi().into_owned(), &p - &target, epsilon = 1e-12);
            assert_relative_eq!(shifted.nu().into_owned(), v.clone(), epsilon = 1e-12);
        }
    }

    fn arb_plant() -> impl Strategy<Value = PlantDynamics<f64>> {
        (1usize..3, 1usize..4).prop_flat_map(|(m, extra)| {
            let n = m + extra;
            (proptest::collection::vec(-1.0..1.0f64, m * m * 3 + m * n), 0.01..0.5f64).prop_map(move |(vals, dt)| {
                let take = |k: usize, r: usize, c: usize| DMatrix::from_row_slice(r, c, &vals[k..k + r * c]);
                PlantDynamics::new(
                    take(0, m, m),
                    take(m * m, m, m),
                    take(3 * m * m, m, n),
                    take(2 * m * m, m, m),
                    dt,
                )
                .unwrap()
            })
        })
    }

    fn build_unit(plant: &PlantDynamics<f64>) -> AugmentedSystem<f64> {
        let m = plant.m();
        let n = plant.n();
        build_augmented(
            plant,
            &DMatrix::identity(2 * m, 2 * m),
            &DMatrix::identity(n, n),
            &DMatrix::identity(n, n),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn block_round_trip(plant in arb_plant()) {
            let sys = build_unit(&plant);
            prop_assert_eq!(sys.plant(), plant);
        }

        #[test]
        fn lesion_idempotent_and_commutes(plant in arb_plant(), k in 0usize..6) {
            let nf = k.min(plant.n());
            let once = apply_lesion(&plant, nf).unwrap();
            prop_assert_eq!(&apply_lesion(&once, nf).unwrap(), &once);
            let lesion_then_build = build_unit(&once);
            let build_then_lesion = build_unit(&plant).lesioned(nf).unwrap();
            prop_assert_eq!(lesion_then_build, build_then_lesion);
        }

        #[test]
        fn step_is_linear(
            plant in arb_plant(),
            seed in proptest::collection::vec(-2.0..2.0f64, 40),
        ) {
            let sys = build_unit(&plant);
            let (m, n) = (sys.m(), sys.n());
            let np = sys.n_prime();
            let w1 = DVector::from_fn(np, |i, _| seed[i]);
            let w2 = DVector::from_fn(np, |i, _| seed[i + 10]);
            let u1 = DVector::from_fn(n, |i, _| seed[i + 20]);
            let u2 = DVector::from_fn(n, |i, _| seed[i + 30]);
            let s = |w: DVector<f64>, u: &DVector<f64>| {
                step(&sys, &AugmentedState::new(w, m, n).unwrap(), u).unwrap().0.into_vector()
            };
            let sum = s(&w1 + &w2, &(&u1 + &u2));
            let parts = s(w1, &u1) + s(w2, &u2);
            prop_assert!((sum - parts).amax() < 1e-12);
        }
    }
}
