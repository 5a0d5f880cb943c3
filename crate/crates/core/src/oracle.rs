//! Known-dynamics reference: discounted LQR by Riccati iteration, exact
//! policy values and exact state-action values.
//!
//! Nothing here is used by the learner. It exists so that learned gains and
//! value estimates can be compared against ground truth.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};
use crate::network::Policy;
use crate::plant::{stage_cost, AugmentedSystem};
use crate::scalar::Real;
use crate::value::{self, ValueEstimate};

/// Stopping rule of the Riccati iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions<T> {
    /// Bound on `|P_{i+1} - P_i|_2`. Steps already at the rounding level of
    /// `P` also stop the iteration, so large `P` or single precision still
    /// terminate.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for RiccatiOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    pub p: DMatrix<T>,
    pub gain: Policy<T>,
    pub h: ValueEstimate<T>,
    pub iterations: usize,
    /// `|Ric(P) - P|_2` at the returned `P`.
    pub residual: T,
}

fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("discount must lie in [0, 1], got {gamma:?}"),
        });
    }
    Ok(())
}

/// Gain `-g (R + g B'PB)^{-1} B'PA` of the greedy policy for value `P`.
pub fn greedy_gain<T: Real>(system: &AugmentedSystem<T>, p: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    let (a, b) = (system.a(), system.b());
    let bp = b.transpose() * p;
    let lhs = system.r() + &bp * b * gamma;
    let rhs = &bp * a * gamma;
    let chol = lhs.cholesky().ok_or(Error::NotPositiveDefinite("R + gamma B'PB"))?;
    Ok(-chol.solve(&rhs))
}

/// One application of the discounted Riccati map
/// `Q + g A'PA - g^2 A'PB (R + g B'PB)^{-1} B'PA`.
pub fn riccati_map<T: Real>(system: &AugmentedSystem<T>, p: &DMatrix<T>, gamma: T) -> Result<DMatrix<T>> {
    let a = system.a();
    let k = greedy_gain(system, p, gamma)?;
    // With K the greedy gain, the map equals Q + g A'PA + g A'PB K.
    let pa = p * a;
    let pb = p * system.b();
    let next = system.q() + (a.transpose() * &pa + a.transpose() * &pb * &k) * gamma;
    Ok(linalg::symmetrize(&next))
}

/// Solves the discounted Riccati equation by fixed-point iteration from `P = Q`.
pub fn solve_discounted_riccati<T: Real>(
    system: &AugmentedSystem<T>,
    gamma: T,
    options: &RiccatiOptions<T>,
) -> Result<RiccatiSolution<T>> {
    check_gamma(gamma)?;
    let mut p = system.q().clone();
    let mut step = T::lit(f64::INFINITY);
    for iteration in 1..=options.max_iter {
        let next = riccati_map(system, &p, gamma)?;
        step = spectral_norm(&(&next - &p));
        let floor = spectral_norm(&next) * T::default_epsilon() * T::lit(16.0);
        p = next;
        if !step.is_finite() {
            break;
        }
        if step <= options.tol.max(floor) {
            return finish(system, p, gamma, iteration);
        }
    }
    Err(Error::RiccatiNotConverged {
        iterations: options.max_iter,
        residual: step.as_f64(),
    })
}

fn finish<T: Real>(
    system: &AugmentedSystem<T>,
    p: DMatrix<T>,
    gamma: T,
    iterations: usize,
) -> Result<RiccatiSolution<T>> {
    let residual = spectral_norm(&(riccati_map(system, &p, gamma)? - &p));
    let gain = Policy::new(greedy_gain(system, &p, gamma)?, system.m())?;
    let h = ValueEstimate::from_h(value::h_from_value(system, &p, gamma), system.n())?;
    Ok(RiccatiSolution {
        p,
        gain,
        h,
        iterations,
        residual,
    })
}

/// Spectral radius of `sqrt(g) (A + B W)`; below one iff the discounted
/// value of `W` is finite.
pub fn discounted_spectral_radius<T: Real>(system: &AugmentedSystem<T>, policy: &Policy<T>, gamma: T) -> T {
    let closed = system.a() + system.b() * policy.matrix();
    linalg::spectral_radius(&closed) * gamma.sqrt()
}

/// Exact value matrix `P_W` of a fixed policy:
/// `P = Q + W'RW + g (A+BW)' P (A+BW)`.
pub fn evaluate_policy_value<T: Real>(system: &AugmentedSystem<T>, policy: &Policy<T>, gamma: T) -> Result<DMatrix<T>> {
    check_gamma(gamma)?;
    if policy.n() != system.n() || policy.m() != system.m() {
        return Err(Error::dims(
            "policy",
            format!("{}x{}", system.n(), system.n_prime()),
            format!("{}x{}", policy.n(), policy.matrix().ncols()),
        ));
    }
    let rho = discounted_spectral_radius(system, policy, gamma);
    if !(rho < T::one()) {
        return Err(Error::UnstableClosedLoop {
            spectral_radius: rho.as_f64(),
        });
    }
    let w = policy.matrix();
    let stage = system.q() + w.transpose() * system.r() * w;
    // Smith doubling: after i rounds X sums the first 2^i terms of
    // sum_k F'^k M F^k with F = sqrt(g)(A + BW).
    let mut f = (system.a() + system.b() * w) * gamma.sqrt();
    let mut x = stage;
    for _ in 0..200 {
        let inc = f.transpose() * &x * &f;
        let done = inc.amax() <= T::default_epsilon() * x.amax();
        x += inc;
        if done {
            break;
        }
        f = &f * &f;
    }
    Ok(linalg::symmetrize(&x))
}

/// `c(omega, u) + g (A omega + B u)' P (A omega + B u)`.
pub fn exact_q<T: Real>(
    system: &AugmentedSystem<T>,
    p: &DMatrix<T>,
    gamma: T,
    omega: &DVector<T>,
    u: &DVector<T>,
) -> T {
    let next = system.a() * omega + system.b() * u;
    stage_cost(system, omega, u) + next.dot(&(p * &next)) * gamma
}

/// Draws `W* o (1 + rel U(-1, 1))` elementwise until the draw is stable under
/// discounting, giving up after `attempts` draws.
pub fn perturbed_stabilizing_policy<T: Real>(
    system: &AugmentedSystem<T>,
    reference: &Policy<T>,
    relative: T,
    gamma: T,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Result<Policy<T>> {
    for _ in 0..attempts {
        let w = reference.matrix().map(|v| {
            let u: f64 = rng.random_range(-1.0..1.0);
            v * (T::one() + relative * T::lit(u))
        });
        let candidate = Policy::new(w, reference.m())?;
        if discounted_spectral_radius(system, &candidate, gamma) < T::one() {
            return Ok(candidate);
        }
    }
    Err(Error::NoStabilizingPolicy { attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{
        build_augmented, make_pendulum, make_point_mass, PendulumParams, PlantDynamics, PointMassParams,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// m = 1, n = 2 with random plant blocks; small enough to solve by hand
    /// elsewhere, rich enough to exercise every block.
    fn toy(seed: u64) -> AugmentedSystem<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: f64| rng.random::<f64>() * s;
        let plant = PlantDynamics::new(
            DMatrix::from_element(1, 1, -r(0.1)),
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_fn(1, 2, |_, _| r(0.1)),
            DMatrix::from_element(1, 1, 0.1),
            0.1,
        )
        .unwrap();
        build_augmented(
            &plant,
            &DMatrix::identity(2, 2),
            &(DMatrix::identity(2, 2) * 0.5),
            &DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    fn point_mass() -> AugmentedSystem<f64> {
        let (plant, _) = make_point_mass(&PointMassParams::default(), 1).unwrap();
        let mut qp = DMatrix::zeros(4, 4);
        qp.view_mut((0, 0), (2, 2)).copy_from(&(DMatrix::identity(2, 2) * 10.0));
        build_augmented(
            &plant,
            &qp,
            &(DMatrix::identity(10, 10) * 2.0),
            &(DMatrix::identity(10, 10) * 2.0),
        )
        .unwrap()
    }

    /// Scalar problem `x+ = a x + b u` with the independent fixed-point answer.
    fn scalar_p(a: f64, b: f64, q: f64, r: f64) -> f64 {
        // Positive root of b^2 P^2 + (r - a^2 r - q b^2) P - q r = 0.
        let (qa, qb, qc) = (b * b, r - a * a * r - q * b * b, -q * r);
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    #[test]
    fn scalar_reference() {
        let expected = (0.25 + 4.0625f64.sqrt()) / 2.0;
        assert_relative_eq!(scalar_p(0.5, 1.0, 1.0, 1.0), expected, epsilon = 1e-14);
        assert_relative_eq!(expected, 1.13278, epsilon = 1e-5);
        // The scalar case embedded in the block iteration: iterate the map by
        // hand with the same formula.
        let mut p = 1.0f64;
        for _ in 0..200 {
            p = 1.0 + 0.25 * p - 0.25 * p * p / (1.0 + p);
        }
        assert_relative_eq!(p, expected, epsilon = 1e-12);
    }

    #[test]
    fn solver_matches_scalar_closed_form() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        for (a, b, q, r, g) in [
            (0.5, 1.0, 1.0, 1.0, 1.0),
            (1.2, 0.5, 2.0, 0.3, 1.0),
            (0.9, 1.0, 1.0, 1.0, 0.64),
        ] {
            let sys = AugmentedSystem::from_matrices(one(a), one(b), one(q), one(r)).unwrap();
            let sol = solve_discounted_riccati(&sys, g, &RiccatiOptions::default()).unwrap();
            // Discounting is the undiscounted problem with both matrices scaled by sqrt(g).
            let expected = scalar_p(a * g.sqrt(), b * g.sqrt(), q, r);
            assert_relative_eq!(sol.p[(0, 0)], expected, epsilon = 1e-9);
            assert!(sol.residual <= 1e-10);
        }
    }

    #[test]
    fn memoryless_system_gives_q() {
        // No plant has A = 0 (the integrator blocks are identities), so zero
        // it by hand.
        let sys = zero_a(toy(1));
        let sol = solve_discounted_riccati(&sys, 0.9, &RiccatiOptions::default()).unwrap();
        assert_relative_eq!(sol.p, sys.q().clone(), epsilon = 1e-14);
        assert_eq!(sol.iterations, 1);
        assert!(sol.gain.matrix().amax() < 1e-15);
    }

    fn zero_a(sys: AugmentedSystem<f64>) -> AugmentedSystem<f64> {
        sys.with_matrices(DMatrix::zeros(4, 4), sys.b().clone())
    }

    #[test]
    fn gain_forms_agree_and_residual_small() {
        for sys in [toy(2), point_mass()] {
            let sol = solve_discounted_riccati(&sys, 0.99, &RiccatiOptions::default()).unwrap();
            let h = sol.h.h();
            let np = sys.n_prime();
            let n = sys.n();
            let h22 = h.view((np, np), (n, n)).into_owned();
            let h21 = h.view((np, 0), (n, np)).into_owned();
            let from_h = -h22.lu().solve(&h21).unwrap();
            assert!((&from_h - sol.gain.matrix()).amax() < 1e-10);
            assert!(sol.residual < 1e-8 * spectral_norm(&sol.p).max(1.0));
            assert_relative_eq!(sol.p.clone(), sol.p.transpose(), epsilon = 1e-12);
            assert!(sol.p.clone().symmetric_eigenvalues().min() > -1e-9);
        }
    }

    #[test]
    fn optimal_policy_value_is_riccati_solution() {
        for sys in [toy(3), point_mass()] {
            let sol = solve_discounted_riccati(&sys, 0.99, &RiccatiOptions::default()).unwrap();
            let pw = evaluate_policy_value(&sys, &sol.gain, 0.99).unwrap();
            assert!((&pw - &sol.p).amax() < 1e-7 * sol.p.amax(), "{}", (&pw - &sol.p).amax());
        }
    }

    #[test]
    fn memoryless_zero_policy_value_is_q() {
        let sys = zero_a(toy(4));
        let pw = evaluate_policy_value(&sys, &Policy::zeros(1, 2), 0.9).unwrap();
        assert_relative_eq!(pw, sys.q().clone(), epsilon = 1e-15);
    }

    #[test]
    fn policy_value_satisfies_lyapunov_equation() {
        let sys = toy(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = DMatrix::from_fn(2, 4, |_, _| rng.random::<f64>() * 0.2 - 0.1);
        let policy = Policy::new(w.clone(), 1).unwrap();
        let p = evaluate_policy_value(&sys, &policy, 0.95).unwrap();
        let acl = sys.a() + sys.b() * &w;
        let rhs = sys.q() + w.transpose() * sys.r() * &w + acl.transpose() * &p * &acl * 0.95;
        assert!((&p - rhs).amax() < 1e-9 * p.amax());
    }

    #[test]
    fn unstable_pendulum_zero_policy() {
        let plant = make_pendulum(&PendulumParams::default(), 1).unwrap();
        let sys = build_augmented(
            &plant,
            &DMatrix::identity(4, 4),
            &DMatrix::identity(10, 10),
            &DMatrix::identity(10, 10),
        )
        .unwrap();
        let err = evaluate_policy_value(&sys, &Policy::zeros(2, 10), 0.99).unwrap_err();
        assert!(matches!(err, Error::UnstableClosedLoop { spectral_radius } if spectral_radius > 1.0));
    }

    #[test]
    fn iteration_is_monotone_from_q() {
        let sys = point_mass();
        let mut p = sys.q().clone();
        for _ in 0..50 {
            let next = riccati_map(&sys, &p, 0.99).unwrap();
            let min_eig = (&next - &p).symmetric_eigenvalues().min();
            assert!(min_eig > -1e-9 * next.amax(), "{min_eig}");
            p = next;
        }
    }

    #[test]
    fn gain_damps_network_activity() {
        let sys = point_mass();
        let sol = solve_discounted_riccati(&sys, 0.99, &RiccatiOptions::default()).unwrap();
        // Diagonal of W_x pushes each unit back toward zero.
        let wx = sol.gain.w_x();
        assert!((0..10).all(|i| wx[(i, i)] < 0.0));
    }

    #[test]
    fn exact_q_paths_agree() {
        let sys = toy(7);
        let sol = solve_discounted_riccati(&sys, 0.9, &RiccatiOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let omega = DVector::from_fn(4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let u = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let bellman = exact_q(&sys, &sol.p, 0.9, &omega, &u);
            assert!((bellman - sol.h.q_value(&omega, &u)).abs() < 1e-10);
            assert_relative_eq!(
                exact_q(&sys, &sol.p, 0.0, &omega, &u),
                stage_cost(&sys, &omega, &u),
                epsilon = 1e-15
            );
        }
        assert_eq!(exact_q(&sys, &sol.p, 0.9, &DVector::zeros(4), &DVector::zeros(2)), 0.0);
    }

    #[test]
    fn perturbation_draws_are_stable() {
        let plant = make_pendulum(&PendulumParams::default(), 2).unwrap();
        let mut qp = DMatrix::identity(4, 4);
        qp[(1, 1)] = 10.0;
        qp[(3, 3)] = 10.0;
        let sys = build_augmented(
            &plant,
            &qp,
            &(DMatrix::identity(10, 10) * 2.0),
            &(DMatrix::identity(10, 10) * 2.0),
        )
        .unwrap();
        let sol = solve_discounted_riccati(&sys, 0.99, &RiccatiOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w0 = perturbed_stabilizing_policy(&sys, &sol.gain, 0.2, 0.99, &mut rng, 100).unwrap();
        assert!(discounted_spectral_radius(&sys, &w0, 0.99) < 1.0);
        let ratio = w0
            .matrix()
            .zip_map(sol.gain.matrix(), |a, b| if b == 0.0 { 1.0 } else { a / b });
        assert!(ratio.iter().all(|&r| (0.8..=1.2).contains(&r)));
        let err = perturbed_stabilizing_policy(&sys, &Policy::zeros(2, 10), 0.2, 0.99, &mut rng, 3).unwrap_err();
        assert_eq!(err, Error::NoStabilizingPolicy { attempts: 3 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gain_is_invariant_to_cost_scale(seed in 0u64..500, c in 0.05..20.0f64) {
            let sys = toy(seed);
            let scaled = sys.with_costs(sys.q() * c, sys.r() * c);
            let a = solve_discounted_riccati(&sys, 0.95, &RiccatiOptions::default()).unwrap();
            let b = solve_discounted_riccati(&scaled, 0.95, &RiccatiOptions::default()).unwrap();
            prop_assert!((a.gain.matrix() - b.gain.matrix()).amax() < 1e-8);
            prop_assert!((&a.p * c - &b.p).amax() < 1e-7 * b.p.amax());
        }

        #[test]
        fn scalar_solution_matches_closed_form(a in 0.1..1.5f64, b in 0.2..2.0f64, q in 0.1..5.0f64, r in 0.1..5.0f64) {
            let mut p = q;
            for _ in 0..100_000 {
                let next = q + a * a * p - a * a * b * b * p * p / (r + b * b * p);
                if (next - p).abs() < 1e-14 * next { p = next; break; }
                p = next;
            }
            prop_assert!((p - scalar_p(a, b, q, r)).abs() < 1e-8 * p);
        }
    }
}
