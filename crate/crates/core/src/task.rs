//! The two benchmark tasks: plant, penalties, start state, initial policy
//! and the success criterion judged on a noise-free rollout.

use nalgebra::{DMatrix, DVector};

use crate::adaptation::{rollout, Rollout};
use crate::error::{Error, Result};
use crate::network::Policy;
use crate::oracle::{self, RiccatiOptions, RiccatiSolution};
use crate::plant::{
    build_augmented, make_pendulum, make_point_mass, AugmentedState, AugmentedSystem, PendulumParams, PlantDynamics,
    PointMassParams,
};
use crate::scalar::Real;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    PointMass,
    Pendulum,
}

impl SystemKind {
    pub fn label(&self) -> &'static str {
        match self {
            SystemKind::PointMass => "point_mass",
            SystemKind::Pendulum => "pendulum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskPlant<T> {
    PointMass(PointMassParams<T>),
    Pendulum(PendulumParams<T>),
}

/// Diagonal penalties: `Q_plant = diag(plant)`, `S = s I`, `R = r I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights<T> {
    /// Weights on `[psi; nu]`, length `2m`.
    pub plant: Vec<T>,
    pub s: T,
    pub r: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec<T> {
    pub plant: TaskPlant<T>,
    pub cost: CostWeights<T>,
    /// Initial pole angle; ignored by the point mass.
    pub theta0: T,
    /// Relative size of the multiplicative perturbation of the oracle gain
    /// that gives the pendulum's initial policy.
    pub w0_perturbation: T,
    pub w0_attempts: usize,
    /// Length of the noise-free rollout that judges success.
    pub rollout_steps: usize,
    /// Point mass: final distance to target. Pendulum: final `|theta|`.
    pub success_tolerance: T,
    /// Divergence guard of the judging rollout.
    pub divergence_guard: T,
}

impl<T: Real> TaskSpec<T> {
    /// Navigation to `p_T = [1, 0]` with `Q_1 = 10 I` on position, no
    /// velocity penalty, `S_1 = R_1 = 2 I`.
    pub fn point_mass() -> Self {
        let ten = T::lit(10.0);
        Self {
            plant: TaskPlant::PointMass(PointMassParams::default()),
            cost: CostWeights {
                plant: vec![ten, ten, T::zero(), T::zero()],
                s: T::lit(2.0),
                r: T::lit(2.0),
            },
            theta0: T::zero(),
            w0_perturbation: T::zero(),
            w0_attempts: 0,
            rollout_steps: 500,
            success_tolerance: T::lit(0.05),
            divergence_guard: T::lit(1e6),
        }
    }

    /// Upright stabilization from `theta_0 = 0.1` with weights
    /// `rho_p = rho_v = 1`, `rho_theta = rho_omega = 10`, `S_2 = R_2 = 2 I`.
    pub fn pendulum() -> Self {
        let (one, ten) = (T::one(), T::lit(10.0));
        Self {
            plant: TaskPlant::Pendulum(PendulumParams::default()),
            cost: CostWeights {
                plant: vec![one, ten, one, ten],
                s: T::lit(2.0),
                r: T::lit(2.0),
            },
            theta0: T::lit(0.1),
            w0_perturbation: T::lit(0.2),
            w0_attempts: 1000,
            rollout_steps: 400,
            success_tolerance: T::lit(0.01),
            divergence_guard: T::lit(1e6),
        }
    }

    pub fn for_system(kind: SystemKind) -> Self {
        match kind {
            SystemKind::PointMass => Self::point_mass(),
            SystemKind::Pendulum => Self::pendulum(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self.plant {
            TaskPlant::PointMass(_) => SystemKind::PointMass,
            TaskPlant::Pendulum(_) => SystemKind::Pendulum,
        }
    }

    pub fn network_size(&self) -> usize {
        match &self.plant {
            TaskPlant::PointMass(p) => p.n,
            TaskPlant::Pendulum(p) => p.n,
        }
    }

    /// Builds the plant of the run seeded by `seed`.
    pub fn instantiate(&self, seed: u64) -> Result<TaskInstance<T>> {
        let (plant, target) = match &self.plant {
            TaskPlant::PointMass(p) => {
                let (plant, target) = make_point_mass(p, seed)?;
                (plant, Some(target))
            }
            TaskPlant::Pendulum(p) => (make_pendulum(p, seed)?, None),
        };
        let m = plant.m();
        let n = plant.n();
        if self.cost.plant.len() != 2 * m {
            return Err(Error::dims("plant cost weights", 2 * m, self.cost.plant.len()));
        }
        let q_plant = DMatrix::from_diagonal(&DVector::from_row_slice(&self.cost.plant));
        let system = build_augmented(
            &plant,
            &q_plant,
            &(DMatrix::identity(n, n) * self.cost.s),
            &(DMatrix::identity(n, n) * self.cost.r),
        )?;
        let initial = match &target {
            // Shifted coordinates: start at the origin means psi = -p_T.
            Some(t) => {
                let psi: Vec<T> = t.iter().map(|&v| -v).collect();
                AugmentedState::from_parts(&psi, &vec![T::zero(); m], &vec![T::zero(); n])?
            }
            None => AugmentedState::from_parts(&[T::zero(), self.theta0], &[T::zero(); 2], &vec![T::zero(); n])?,
        };
        Ok(TaskInstance {
            spec: self.clone(),
            seed,
            plant,
            system,
            target,
            initial,
        })
    }
}

/// A task with its plant drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance<T: Real> {
    pub spec: TaskSpec<T>,
    pub seed: u64,
    pub plant: PlantDynamics<T>,
    /// Intact augmented system.
    pub system: AugmentedSystem<T>,
    /// Point-mass target; the state is simulated relative to it.
    pub target: Option<DVector<T>>,
    pub initial: AugmentedState<T>,
}

/// Result of the judging rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome<T: Real> {
    pub rollout: Rollout<T>,
    /// Final distance to target or final `|theta|`; infinite on divergence.
    pub error: T,
    pub success: bool,
}

impl<T: Real> TaskInstance<T> {
    pub fn kind(&self) -> SystemKind {
        self.spec.kind()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn n(&self) -> usize {
        self.plant.n()
    }

    /// The intact system with units `n_f..n` cut from the plant.
    pub fn lesioned_system(&self, functioning: usize) -> Result<AugmentedSystem<T>> {
        self.system.lesioned(functioning)
    }

    pub fn oracle(&self, gamma: T, options: &RiccatiOptions<T>) -> Result<RiccatiSolution<T>> {
        oracle::solve_discounted_riccati(&self.system, gamma, options)
    }

    /// Zero for the point mass (already bounded). For the open-loop unstable
    /// pendulum, a random multiplicative perturbation of the intact-plant
    /// oracle gain that is still stable under discounting.
    pub fn initial_policy(&self, gamma: T) -> Result<Policy<T>> {
        match self.kind() {
            SystemKind::PointMass => Ok(Policy::zeros(self.m(), self.n())),
            SystemKind::Pendulum => {
                let solution = self.oracle(gamma, &RiccatiOptions::default())?;
                let mut rng = seed::rng(self.seed, Stream::InitialPolicy, 0);
                oracle::perturbed_stabilizing_policy(
                    &self.system,
                    &solution.gain,
                    self.spec.w0_perturbation,
                    gamma,
                    &mut rng,
                    self.spec.w0_attempts,
                )
            }
        }
    }

    /// Runs `policy` without noise on `system` for the judging horizon.
    pub fn evaluate(&self, system: &AugmentedSystem<T>, policy: &Policy<T>) -> Result<TaskOutcome<T>> {
        let rollout = rollout(
            system,
            policy,
            &self.initial,
            self.spec.rollout_steps,
            self.spec.divergence_guard,
        )?;
        let error = if rollout.diverged_at.is_some() {
            T::lit(f64::INFINITY)
        } else {
            let last = rollout.final_state();
            match self.kind() {
                // Shifted position is the offset from the target.
                SystemKind::PointMass => last.rows(0, 2).norm(),
                SystemKind::Pendulum => last[1].abs(),
            }
        };
        Ok(TaskOutcome {
            success: error < self.spec.success_tolerance,
            error,
            rollout,
        })
    }

    /// Undoes the target shift on a simulated state.
    pub fn unshift(&self, omega: &DVector<T>) -> DVector<T> {
        let mut out = omega.clone();
        if let Some(t) = &self.target {
            for (i, &v) in t.iter().enumerate() {
                out[i] += v;
            }
        }
        out
    }
}
