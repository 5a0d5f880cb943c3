//! Slow timescale: the episode loop of online least-squares policy iteration.
//!
//! Each episode runs the current policy with exploration noise for `T` steps,
//! fits the quadratic value of that same policy to the recorded transitions
//! and replaces the policy by the greedy one. Learning stops when the relative
//! change of `H` between consecutive episodes drops below `tol`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{act, act_explore, ExplorationConfig, NoiseStream, Policy};
use crate::oracle::{self, RiccatiSolution};
use crate::plant::{step, AugmentedState, AugmentedSystem};
use crate::scalar::Real;
use crate::seed::{self, Stream};
use crate::value::{estimate_theta, improve_policy, EpisodeData, FeatureBasis, Transition, ValueEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig<T> {
    /// Episode length `T`.
    pub episode_length: usize,
    pub gamma: T,
    pub exploration: ExplorationConfig<T>,
    /// Stop once `|H_k - H_{k-1}|_F / |H_k|_F < tol`.
    pub tol: T,
    pub max_episodes: usize,
    /// Abort an episode when `|omega|_inf` exceeds this.
    pub divergence_guard: T,
    pub basis: FeatureBasis,
    /// Largest acceptable condition number of `H22`.
    pub condition_ceiling: T,
    /// Master seed; exploration noise of episode `k` is drawn from its own
    /// derived stream.
    pub seed: u64,
}

impl<T: Real> AdaptationConfig<T> {
    /// Defaults shared by both benchmark tasks: `gamma = 0.99`,
    /// `sigma_y^2 = 0.01`, `tol = 1e-3`, 50 episodes.
    pub fn new(episode_length: usize, seed: u64) -> Self {
        Self {
            episode_length,
            gamma: T::lit(0.99),
            exploration: ExplorationConfig { variance: T::lit(0.01) },
            tol: T::lit(1e-3),
            max_episodes: 50,
            divergence_guard: T::lit(1e6),
            basis: FeatureBasis::Kronecker,
            condition_ceiling: T::lit(1e8),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.episode_length < 1 {
            return invalid("T", "episode length must be at least 1");
        }
        if !(self.gamma >= T::zero() && self.gamma <= T::one()) {
            return invalid("gamma", "discount must lie in [0, 1]");
        }
        ExplorationConfig::new(self.exploration.variance)?;
        if !(self.tol > T::zero()) {
            return invalid("tol", "stopping tolerance must be positive");
        }
        if self.max_episodes < 1 {
            return invalid("max_episodes", "at least one episode is required");
        }
        if !(self.divergence_guard > T::zero()) {
            return invalid("divergence_guard", "guard must be positive");
        }
        if !(self.condition_ceiling >= T::one()) {
            return invalid("condition_ceiling", "ceiling must be at least 1");
        }
        Ok(())
    }
}

/// Diagnostics of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord<T: Real> {
    /// 1-based episode index.
    pub k: usize,
    /// Policy after the improvement step of this episode.
    pub w: Policy<T>,
    pub h: DMatrix<T>,
    /// `|H_k - H_{k-1}|_F / |H_k|_F`, with `H_0 = 0`.
    pub h_delta: T,
    /// `|W_k - W_{k-1}|_F`.
    pub xi: T,
    pub episode_cost: T,
    pub residual: T,
    pub rank: usize,
    /// Set on the record of an aborted episode; `w` and `h` are then the
    /// values it started from and the regression fields are NaN/zero.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationHistory<T: Real> {
    pub records: Vec<EpisodeRecord<T>>,
}

impl<T: Real> Default for AdaptationHistory<T> {
    fn default() -> Self {
        Self { records: Vec::new() }
    }
}

impl<T: Real> AdaptationHistory<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpisodeRecord<T>> {
        self.records.last()
    }

    /// Whether the last completed episode met the stopping rule.
    pub fn converged(&self, tol: T) -> bool {
        self.records.last().is_some_and(|r| !r.diverged && r.h_delta < tol)
    }
}

/// Simulates one exploratory episode, `u_t = W omega_t + eps_t`.
pub fn collect_episode<T: Real>(
    system: &AugmentedSystem<T>,
    policy: &Policy<T>,
    cfg: &AdaptationConfig<T>,
    initial: &AugmentedState<T>,
    noise: &mut NoiseStream,
) -> Result<EpisodeData<T>> {
    let mut records = Vec::with_capacity(cfg.episode_length);
    let mut omega = initial.clone();
    for t in 0..cfg.episode_length {
        let u = act_explore(policy, &omega, &cfg.exploration, noise)?;
        let (next, cost) = step(system, &omega, &u)?;
        let norm = next.as_vector().amax();
        if !(norm <= cfg.divergence_guard) {
            return Err(Error::Diverged {
                step: t + 1,
                norm: norm.as_f64(),
                guard: cfg.divergence_guard.as_f64(),
            });
        }
        records.push(Transition {
            omega: omega.into_vector(),
            u,
            cost,
            omega_next: next.as_vector().clone(),
        });
        omega = next;
    }
    EpisodeData::new(records, system.m(), system.n())
}

/// Policy iteration state that survives a change of plant, so a lesion can
/// be inflicted between episodes while learning continues warm.
#[derive(Debug, Clone)]
pub struct PolicyIteration<T: Real> {
    system: AugmentedSystem<T>,
    cfg: AdaptationConfig<T>,
    policy: Policy<T>,
    h: Option<DMatrix<T>>,
    estimate: Option<ValueEstimate<T>>,
    last_data: Option<EpisodeData<T>>,
    history: AdaptationHistory<T>,
}

impl<T: Real> PolicyIteration<T> {
    pub fn new(system: AugmentedSystem<T>, cfg: AdaptationConfig<T>, initial_policy: Policy<T>) -> Result<Self> {
        cfg.validate()?;
        if initial_policy.n() != system.n() || initial_policy.m() != system.m() {
            return Err(Error::dims(
                "initial policy",
                format!("{}x{}", system.n(), system.n_prime()),
                format!("{}x{}", initial_policy.n(), initial_policy.matrix().ncols()),
            ));
        }
        Ok(Self {
            system,
            cfg,
            policy: initial_policy,
            h: None,
            estimate: None,
            last_data: None,
            history: AdaptationHistory::default(),
        })
    }

    pub fn system(&self) -> &AugmentedSystem<T> {
        &self.system
    }

    pub fn config(&self) -> &AdaptationConfig<T> {
        &self.cfg
    }

    pub fn policy(&self) -> &Policy<T> {
        &self.policy
    }

    /// Latest fitted value, i.e. the estimate of the policy that collected
    /// the last episode's data.
    pub fn estimate(&self) -> Option<&ValueEstimate<T>> {
        self.estimate.as_ref()
    }

    pub fn history(&self) -> &AdaptationHistory<T> {
        &self.history
    }

    /// Transitions of the last completed episode.
    pub fn last_episode(&self) -> Option<&EpisodeData<T>> {
        self.last_data.as_ref()
    }

    pub fn into_parts(self) -> (Policy<T>, AdaptationHistory<T>) {
        (self.policy, self.history)
    }

    pub fn episodes(&self) -> usize {
        self.history.len()
    }

    /// Swaps the plant; the learned policy and value are kept.
    pub fn replace_system(&mut self, system: AugmentedSystem<T>) -> Result<()> {
        if system.n() != self.system.n() || system.m() != self.system.m() {
            return Err(Error::dims(
                "replacement system",
                format!("m={}, n={}", self.system.m(), self.system.n()),
                format!("m={}, n={}", system.m(), system.n()),
            ));
        }
        self.system = system;
        Ok(())
    }

    /// Runs the next episode: collect, evaluate, improve.
    pub fn step_episode(&mut self, initial: &AugmentedState<T>) -> Result<&EpisodeRecord<T>> {
        let k = self.history.len() + 1;
        let wrap = |e: Error| Error::InEpisode {
            episode: k,
            source: Box::new(e),
        };
        let mut noise = NoiseStream::for_episode(self.cfg.seed, k);
        let data = match collect_episode(&self.system, &self.policy, &self.cfg, initial, &mut noise) {
            Ok(data) => data,
            Err(e @ Error::Diverged { .. }) => {
                let dim = self.system.n_prime() + self.system.n();
                self.history.records.push(EpisodeRecord {
                    k,
                    w: self.policy.clone(),
                    h: self.h.clone().unwrap_or_else(|| DMatrix::zeros(dim, dim)),
                    h_delta: T::lit(f64::NAN),
                    xi: T::lit(f64::NAN),
                    episode_cost: T::lit(f64::NAN),
                    residual: T::lit(f64::NAN),
                    rank: 0,
                    diverged: true,
                });
                return Err(wrap(e));
            }
            Err(e) => return Err(wrap(e)),
        };
        let estimate = estimate_theta(&data, &self.policy, self.cfg.gamma, self.cfg.basis).map_err(wrap)?;
        let improved = improve_policy(&estimate, self.cfg.condition_ceiling).map_err(wrap)?;

        let h = estimate.h().clone();
        let h_norm = h.norm();
        let change = match &self.h {
            Some(prev) => (&h - prev).norm(),
            None => h_norm,
        };
        let h_delta = if h_norm > T::zero() {
            change / h_norm
        } else {
            T::lit(f64::INFINITY)
        };
        let xi = improved.distance(&self.policy);

        self.history.records.push(EpisodeRecord {
            k,
            w: improved.clone(),
            h: h.clone(),
            h_delta,
            xi,
            episode_cost: data.total_cost(),
            residual: estimate.residual(),
            rank: estimate.rank(),
            diverged: false,
        });
        self.policy = improved;
        self.h = Some(h);
        self.estimate = Some(estimate);
        self.last_data = Some(data);
        Ok(self.history.records.last().expect("just pushed"))
    }

    /// Runs episodes until the stopping rule fires or `budget` further
    /// episodes have run. Returns whether the rule fired.
    pub fn run(&mut self, initial: &AugmentedState<T>, budget: usize) -> Result<bool> {
        for _ in 0..budget {
            let h_delta = self.step_episode(initial)?.h_delta;
            if h_delta < self.cfg.tol {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Algorithm entry point: learns from `initial_policy` until convergence or
/// `max_episodes`, restarting every episode from `initial`.
pub fn run_adaptation<T: Real>(
    system: &AugmentedSystem<T>,
    cfg: &AdaptationConfig<T>,
    initial_policy: Policy<T>,
    initial: &AugmentedState<T>,
) -> Result<(Policy<T>, AdaptationHistory<T>)> {
    let mut learner = PolicyIteration::new(system.clone(), cfg.clone(), initial_policy)?;
    learner.run(initial, cfg.max_episodes)?;
    Ok(learner.into_parts())
}

/// Noise-free closed-loop simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    /// `steps + 1` states unless the run diverged.
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    pub costs: Vec<T>,
    /// Step at which the divergence guard tripped.
    pub diverged_at: Option<usize>,
}

impl<T: Real> Rollout<T> {
    pub fn total_cost(&self) -> T {
        self.costs.iter().fold(T::zero(), |a, &c| a + c)
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("a rollout holds its initial state")
    }
}

pub fn rollout<T: Real>(
    system: &AugmentedSystem<T>,
    policy: &Policy<T>,
    initial: &AugmentedState<T>,
    steps: usize,
    guard: T,
) -> Result<Rollout<T>> {
    let mut out = Rollout {
        states: vec![initial.as_vector().clone()],
        inputs: Vec::with_capacity(steps),
        costs: Vec::with_capacity(steps),
        diverged_at: None,
    };
    let mut omega = initial.clone();
    for t in 0..steps {
        let u = act(policy, &omega)?;
        let (next, cost) = step(system, &omega, &u)?;
        out.inputs.push(u);
        out.costs.push(cost);
        if !(next.as_vector().amax() <= guard) {
            out.diverged_at = Some(t + 1);
            break;
        }
        out.states.push(next.as_vector().clone());
        omega = next;
    }
    Ok(out)
}

/// Bound check of the value error implied by the estimation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBoundReport<T> {
    /// `max |Q_hat(z) - Q*(z)|` over the sample, with `u` set to both the
    /// learned and the optimal action.
    pub epsilon: T,
    /// `2 eps / (1 - gamma)`.
    pub bound: T,
    /// `max |V_pi(omega) - V*(omega)|` over the sample.
    pub value_deviation: T,
    pub samples: usize,
}

impl<T: Real> ValueBoundReport<T> {
    pub fn holds(&self) -> bool {
        self.value_deviation <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport<T> {
    /// `xi_{k+1} / xi_k` for `k = 1..K-1`; entry `i` belongs to `k = i + 1`.
    pub contraction_ratios: Vec<T>,
    pub value_bound: Option<ValueBoundReport<T>>,
}

impl<T: Real> ConvergenceReport<T> {
    /// Whether every ratio with `k > after` is below one.
    pub fn contracts_after(&self, after: usize) -> bool {
        self.contraction_ratios
            .iter()
            .enumerate()
            .filter(|(i, _)| i + 1 > after)
            .all(|(_, &r)| r < T::one())
    }
}

/// Test states on the unit sphere for the value-bound check.
pub fn diagnostic_states<T: Real>(n_prime: usize, count: usize, seed: u64) -> Vec<DVector<T>> {
    let mut noise = NoiseStream::from_rng(seed::rng(seed, Stream::Diagnostics, 0));
    (0..count)
        .map(|_| {
            let v: DVector<T> = noise.gaussian(n_prime, T::one());
            let norm = v.norm();
            v / norm
        })
        .collect()
}

/// Contraction ratios of the policy sequence and, given the oracle, the
/// value-error bound evaluated on `states`.
pub fn convergence_diagnostics<T: Real>(
    history: &AdaptationHistory<T>,
    oracle: Option<(&AugmentedSystem<T>, &RiccatiSolution<T>, T)>,
    states: &[DVector<T>],
) -> Result<ConvergenceReport<T>> {
    let done: Vec<_> = history.records.iter().filter(|r| !r.diverged).collect();
    let contraction_ratios = done
        .windows(2)
        .map(|w| {
            if w[0].xi > T::zero() {
                w[1].xi / w[0].xi
            } else if w[1].xi > T::zero() {
                T::lit(f64::INFINITY)
            } else {
                T::zero()
            }
        })
        .collect();
    let value_bound = match (oracle, done.last()) {
        (Some((system, solution, gamma)), Some(last)) => Some(value_bound(system, solution, gamma, last, states)?),
        _ => None,
    };
    Ok(ConvergenceReport {
        contraction_ratios,
        value_bound,
    })
}

fn value_bound<T: Real>(
    system: &AugmentedSystem<T>,
    solution: &RiccatiSolution<T>,
    gamma: T,
    last: &EpisodeRecord<T>,
    states: &[DVector<T>],
) -> Result<ValueBoundReport<T>> {
    let estimate = ValueEstimate::from_h(last.h.clone(), system.n())?;
    let p_pi = oracle::evaluate_policy_value(system, &last.w, gamma)?;
    let mut epsilon = T::zero();
    let mut deviation = T::zero();
    for omega in states {
        for gain in [last.w.matrix(), solution.gain.matrix()] {
            let u = gain * omega;
            let q_star = oracle::exact_q(system, &solution.p, gamma, omega, &u);
            epsilon = epsilon.max((estimate.q_value(omega, &u) - q_star).abs());
        }
        let v_pi = omega.dot(&(&p_pi * omega));
        let v_star = omega.dot(&(&solution.p * omega));
        deviation = deviation.max((v_pi - v_star).abs());
    }
    Ok(ValueBoundReport {
        epsilon,
        bound: epsilon * T::lit(2.0) / (T::one() - gamma),
        value_deviation: deviation,
        samples: states.len(),
    })
}
