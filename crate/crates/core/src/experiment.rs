//! Lesion and hyperparameter studies built from seeded, independent runs.
//!
//! Replicate `r` of an experiment uses the run seed
//! `derive(master, Replicate, r)`. That seed draws the plant, the initial
//! policy and every episode's exploration noise, so a lesion run and its
//! intact baseline with the same seed see identical noise. Runs are
//! independent and are evaluated in parallel on the current rayon pool;
//! results come back in grid/replicate order regardless of scheduling.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::adaptation::{AdaptationConfig, AdaptationHistory, PolicyIteration};
use crate::error::{Error, Result};
use crate::network::Policy;
use crate::oracle::RiccatiOptions;
use crate::plant::{AugmentedSystem, LesionSpec, LesionTiming};
use crate::scalar::Real;
use crate::seed::{self, Stream};
use crate::task::{SystemKind, TaskInstance, TaskSpec};

/// Seed of replicate `replicate` under `master`.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    seed::derive(master, Stream::Replicate, replicate as u64)
}

/// Per-state `|W_a omega - W_b omega|` and the Frobenius gap `|W_a - W_b|_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDeviation<T> {
    pub per_state: Vec<T>,
    pub frobenius: T,
}

pub fn policy_deviation<T: Real>(a: &Policy<T>, b: &Policy<T>, states: &[DVector<T>]) -> Result<PolicyDeviation<T>> {
    if a.matrix().shape() != b.matrix().shape() {
        return Err(Error::dims(
            "policy deviation",
            format!("{}x{}", a.n(), a.matrix().ncols()),
            format!("{}x{}", b.n(), b.matrix().ncols()),
        ));
    }
    let diff = a.matrix() - b.matrix();
    let mut per_state = Vec::with_capacity(states.len());
    for omega in states {
        if omega.len() != diff.ncols() {
            return Err(Error::dims("deviation state", diff.ncols(), omega.len()));
        }
        per_state.push((&diff * omega).norm());
    }
    Ok(PolicyDeviation {
        per_state,
        frobenius: diff.norm(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionExperimentSpec<T> {
    pub task: TaskSpec<T>,
    /// Learning settings; `seed` is replaced by each replicate's run seed.
    pub adaptation: AdaptationConfig<T>,
    pub lesion: LesionSpec,
    pub n_seeds: usize,
    pub master_seed: u64,
}

/// One replicate of a lesion experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionOutcome<T: Real> {
    pub replicate: usize,
    pub seed: u64,
    pub success: bool,
    /// Task error of the final rollout; infinite when learning failed.
    pub task_error: T,
    /// Error class when learning aborted.
    pub failure: Option<&'static str>,
    /// Number of episodes completed on the intact plant before the lesion.
    pub lesion_episode: usize,
    /// Whether the stopping rule fired after the lesion.
    pub recovered: bool,
    pub history: AdaptationHistory<T>,
    pub final_policy: Policy<T>,
    /// Intact-plant optimal gain.
    pub reference_policy: Policy<T>,
    /// `|W_k - W_full|_F` per episode.
    pub gap_trace: Vec<T>,
    /// `|W omega_t - W_full omega_t|` along the final rollout.
    pub deviation_trace: Vec<T>,
    /// Running cost of the final rollout.
    pub cost_trace: Vec<T>,
}

fn check_lesion_persists<T: Real>(system: &AugmentedSystem<T>, functioning: usize) {
    let m = system.m();
    let n = system.n();
    let cut = system.a().view((m, 2 * m + functioning), (m, n - functioning));
    assert!(cut.iter().all(|v| v.is_zero()), "lesioned projection reappeared");
}

/// Runs the learner for up to `budget` episodes, checking after every
/// episode that a lesion, if any, is still in place.
fn advance<T: Real>(
    learner: &mut PolicyIteration<T>,
    task: &TaskInstance<T>,
    budget: usize,
    lesion: Option<usize>,
) -> Result<bool> {
    for _ in 0..budget {
        let h_delta = learner.step_episode(&task.initial)?.h_delta;
        if let Some(nf) = lesion {
            check_lesion_persists(learner.system(), nf);
        }
        if h_delta < learner.config().tol {
            return Ok(true);
        }
    }
    Ok(false)
}

/// One replicate of the lesion protocol.
pub fn run_lesion_replicate<T: Real>(spec: &LesionExperimentSpec<T>, replicate: usize) -> Result<LesionOutcome<T>> {
    let seed = replicate_seed(spec.master_seed, replicate);
    let task = spec.task.instantiate(seed)?;
    let nf = spec.lesion.functioning();
    spec.lesion.check_network(task.n())?;
    let mut cfg = spec.adaptation.clone();
    cfg.seed = seed;
    let gamma = cfg.gamma;
    let reference = task.oracle(gamma, &RiccatiOptions::default())?.gain;
    let lesioned = task.lesioned_system(nf)?;
    let cap = cfg.max_episodes;

    let start_lesioned = nf < task.n() && spec.lesion.timing() == LesionTiming::BeforeLearning;
    let first_system = if start_lesioned {
        lesioned.clone()
    } else {
        task.system.clone()
    };
    // The initial policy always comes from the intact plant: the learner
    // does not know a lesion is coming.
    let w0 = task.initial_policy(gamma)?;
    let mut learner = PolicyIteration::new(first_system, cfg, w0)?;

    let mut lesion_episode = 0;
    let result = if nf == task.n() {
        advance(&mut learner, &task, cap, None)
    } else {
        match spec.lesion.timing() {
            LesionTiming::BeforeLearning => advance(&mut learner, &task, cap, Some(nf)),
            LesionTiming::DuringLearning { episode } => advance(&mut learner, &task, episode, None).and_then(|_| {
                lesion_episode = learner.episodes();
                learner.replace_system(lesioned.clone())?;
                advance(&mut learner, &task, cap, Some(nf))
            }),
            LesionTiming::AfterLearning => advance(&mut learner, &task, cap, None).and_then(|_| {
                lesion_episode = learner.episodes();
                learner.replace_system(lesioned.clone())?;
                advance(&mut learner, &task, cap, Some(nf))
            }),
        }
    };

    let final_system = learner.system().clone();
    let history = learner.history().clone();
    let gap_trace = history
        .records
        .iter()
        .filter(|r| !r.diverged)
        .map(|r| r.w.distance(&reference))
        .collect();
    let final_policy = learner.policy().clone();
    let mut out = LesionOutcome {
        replicate,
        seed,
        success: false,
        task_error: T::lit(f64::INFINITY),
        failure: None,
        lesion_episode,
        recovered: false,
        history,
        final_policy,
        reference_policy: reference,
        gap_trace,
        deviation_trace: Vec::new(),
        cost_trace: Vec::new(),
    };
    match result {
        Err(e) => out.failure = Some(e.class()),
        Ok(recovered) => {
            out.recovered = recovered;
            let judged = task.evaluate(&final_system, &out.final_policy)?;
            out.deviation_trace =
                policy_deviation(&out.final_policy, &out.reference_policy, &judged.rollout.states)?.per_state;
            out.cost_trace = judged.rollout.costs.clone();
            out.success = judged.success;
            out.task_error = judged.error;
        }
    }
    Ok(out)
}

pub fn run_lesion_experiment<T: Real + Send + Sync>(spec: &LesionExperimentSpec<T>) -> Result<Vec<LesionOutcome<T>>> {
    if spec.n_seeds < 1 {
        return Err(Error::InvalidParameter {
            name: "n_seeds",
            reason: "at least one replicate is required".into(),
        });
    }
    (0..spec.n_seeds)
        .into_par_iter()
        .map(|r| run_lesion_replicate(spec, r))
        .collect()
}

/// Fraction of successful replicates needed for a `Y` cell.
pub const TABLE_QUORUM: f64 = 0.8;

/// One cell of the lesion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LesionCell {
    pub system: SystemKind,
    pub functioning: usize,
    pub timing: LesionTiming,
    pub successes: usize,
    pub runs: usize,
}

impl LesionCell {
    pub fn from_outcomes<T: Real>(system: SystemKind, lesion: LesionSpec, outcomes: &[LesionOutcome<T>]) -> Self {
        Self {
            system,
            functioning: lesion.functioning(),
            timing: lesion.timing(),
            successes: outcomes.iter().filter(|o| o.success).count(),
            runs: outcomes.len(),
        }
    }

    /// `Y` when at least [`TABLE_QUORUM`] of the replicates succeeded.
    pub fn passed(&self) -> bool {
        self.runs > 0 && self.successes as f64 >= TABLE_QUORUM * self.runs as f64
    }

    pub fn symbol(&self) -> char {
        if self.passed() {
            'Y'
        } else {
            'N'
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepKind {
    EpisodeLength,
    Discount,
    Exploration,
}

impl SweepKind {
    pub fn label(&self) -> &'static str {
        match self {
            SweepKind::EpisodeLength => "episode_length",
            SweepKind::Discount => "discount",
            SweepKind::Exploration => "exploration",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec<T> {
    pub task: TaskSpec<T>,
    pub adaptation: AdaptationConfig<T>,
    pub kind: SweepKind,
    pub grid: Vec<T>,
    pub n_seeds: usize,
    pub master_seed: u64,
    /// Settings of the reference solve behind the gain error.
    pub oracle: RiccatiOptions<T>,
    /// Horizon of the early-cost column.
    pub early_steps: usize,
}

/// One (grid value, replicate) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun<T: Real> {
    pub value: T,
    pub replicate: usize,
    pub seed: u64,
    pub episodes: usize,
    pub converged: bool,
    pub failure: Option<&'static str>,
    /// `|W - W*|_F / |W*|_F` against the optimal gain at this run's discount.
    pub gain_error: T,
    /// Rollout cost over the task horizon.
    pub cumulative_cost: T,
    /// Rollout cost over the first `early_steps` steps.
    pub early_cost: T,
    /// Executed inputs `W_k omega_t + eps_t` of every episode, indexed
    /// `[episode][t]`: the actions the data was generated with.
    pub actions: Vec<Vec<DVector<T>>>,
}

impl<T: Real> SweepSpec<T> {
    fn configure(&self, value: T, seed: u64) -> Result<AdaptationConfig<T>> {
        let mut cfg = self.adaptation.clone();
        cfg.seed = seed;
        match self.kind {
            SweepKind::EpisodeLength => {
                let t = value.as_f64();
                if !(t >= 1.0 && t.fract() == 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "grid",
                        reason: format!("episode length must be a positive integer, got {t}"),
                    });
                }
                cfg.episode_length = t as usize;
            }
            SweepKind::Discount => cfg.gamma = value,
            SweepKind::Exploration => cfg.exploration.variance = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sweep_run<T: Real>(spec: &SweepSpec<T>, value: T, replicate: usize) -> Result<SweepRun<T>> {
    let seed = replicate_seed(spec.master_seed, replicate);
    let cfg = spec.configure(value, seed)?;
    let task = spec.task.instantiate(seed)?;
    let reference = task.oracle(cfg.gamma, &spec.oracle)?.gain;
    let mut out = SweepRun {
        value,
        replicate,
        seed,
        episodes: 0,
        converged: false,
        failure: None,
        gain_error: T::lit(f64::INFINITY),
        cumulative_cost: T::lit(f64::INFINITY),
        early_cost: T::lit(f64::INFINITY),
        actions: Vec::new(),
    };
    let w0 = task.initial_policy(cfg.gamma)?;
    let mut learner = PolicyIteration::new(task.system.clone(), cfg.clone(), w0)?;
    for _ in 0..cfg.max_episodes {
        match learner.step_episode(&task.initial) {
            Ok(rec) => out.converged = rec.h_delta < cfg.tol,
            Err(e) => {
                out.failure = Some(e.class());
                break;
            }
        }
        let data = learner.last_episode().expect("episode completed");
        out.actions.push(data.records().iter().map(|r| r.u.clone()).collect());
        if out.converged {
            break;
        }
    }
    out.episodes = learner.episodes();
    if out.failure.is_some() {
        return Ok(out);
    }
    let policy = learner.policy();
    out.gain_error = policy.distance(&reference) / reference.matrix().norm();
    let judged = task.evaluate(&task.system, policy)?;
    if judged.rollout.diverged_at.is_none() {
        out.cumulative_cost = judged.rollout.total_cost();
    }
    // A rollout that leaves the guard only after the early window still has
    // a well-defined early cost.
    if judged.rollout.diverged_at.is_none_or(|t| t > spec.early_steps) {
        out.early_cost = judged
            .rollout
            .costs
            .iter()
            .take(spec.early_steps)
            .fold(T::zero(), |a, &c| a + c);
    }
    Ok(out)
}

/// Runs every grid value for every replicate; results in grid-major order.
pub fn run_sweep<T: Real + Send + Sync>(spec: &SweepSpec<T>) -> Result<Vec<SweepRun<T>>> {
    if spec.grid.is_empty() {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "sweep grid is empty".into(),
        });
    }
    if spec.n_seeds < 1 {
        return Err(Error::InvalidParameter {
            name: "n_seeds",
            reason: "at least one replicate is required".into(),
        });
    }
    let items: Vec<(T, usize)> = spec
        .grid
        .iter()
        .flat_map(|&v| (0..spec.n_seeds).map(move |r| (v, r)))
        .collect();
    items.into_par_iter().map(|(v, r)| sweep_run(spec, v, r)).collect()
}

/// `2 * mean_i std_{seed, episode}(u_{t,i})` per timestep over the given runs.
///
/// Timesteps are aligned from the start of each episode; a timestep only
/// enters while at least two episodes reach it.
pub fn policy_spread<T: Real>(runs: &[&SweepRun<T>]) -> Vec<T> {
    let episodes: Vec<&Vec<DVector<T>>> = runs.iter().flat_map(|r| r.actions.iter()).collect();
    let horizon = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut band = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let at_t: Vec<&DVector<T>> = episodes.iter().filter_map(|e| e.get(t)).collect();
        if at_t.len() < 2 {
            break;
        }
        let count = T::lit(at_t.len() as f64);
        let dim = at_t[0].len();
        let mut mean = DVector::<T>::zeros(dim);
        for u in &at_t {
            mean += *u;
        }
        mean /= count;
        let mut var = DVector::<T>::zeros(dim);
        for u in &at_t {
            var += (*u - &mean).map(|d| d * d);
        }
        var /= count - T::one();
        let mean_std = var.iter().fold(T::zero(), |a, &v| a + v.sqrt()) / T::lit(dim as f64);
        band.push(mean_std * T::lit(2.0));
    }
    band
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn deviation_examples() {
        let a = Policy::new(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]), 1).unwrap();
        let states = vec![
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            DVector::from_row_slice(&[0.5, 1.0, 2.0]),
        ];
        let same = policy_deviation(&a, &a, &states).unwrap();
        assert_eq!(same.per_state, vec![0.0, 0.0]);
        assert_eq!(same.frobenius, 0.0);
        let zero = policy_deviation(&a, &Policy::zeros(1, 1), &states).unwrap();
        assert_eq!(zero.per_state, vec![1.0, 0.5]);
        assert!((zero.frobenius - 6f64.sqrt()).abs() < 1e-15);
        assert!(policy_deviation(&a, &Policy::zeros(1, 2), &states).is_err());
    }

    #[test]
    fn table_cells_use_quorum() {
        let cell = |successes| LesionCell {
            system: SystemKind::PointMass,
            functioning: 2,
            timing: LesionTiming::BeforeLearning,
            successes,
            runs: 10,
        };
        assert_eq!(cell(8).symbol(), 'Y');
        assert_eq!(cell(7).symbol(), 'N');
    }

    #[test]
    fn spread_of_identical_actions_is_zero() {
        let actions = vec![vec![DVector::from_row_slice(&[1.0, 2.0]); 3]; 4];
        let run = SweepRun {
            value: 0.01,
            replicate: 0,
            seed: 0,
            episodes: 4,
            converged: true,
            failure: None,
            gain_error: 0.0,
            cumulative_cost: 0.0,
            early_cost: 0.0,
            actions,
        };
        assert_eq!(policy_spread(&[&run]), vec![0.0; 3]);
    }

    #[test]
    fn spread_matches_sample_std() {
        // Unit 0 takes values 0 and 2 (std sqrt 2), unit 1 is constant.
        let mk = |v: f64| vec![DVector::from_row_slice(&[v, 1.0])];
        let run = SweepRun {
            value: 0.01,
            replicate: 0,
            seed: 0,
            episodes: 2,
            converged: true,
            failure: None,
            gain_error: 0.0,
            cumulative_cost: 0.0,
            early_cost: 0.0,
            actions: vec![mk(0.0), mk(2.0)],
        };
        let band = policy_spread(&[&run]);
        assert!((band[0] - 2.0 * (2f64.sqrt() / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn replicate_seeds_are_distinct() {
        assert_ne!(replicate_seed(1, 0), replicate_seed(1, 1));
        assert_eq!(replicate_seed(1, 3), replicate_seed(1, 3));
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let spec = SweepSpec {
            task: TaskSpec::<f64>::point_mass(),
            adaptation: AdaptationConfig::new(500, 0),
            kind: SweepKind::EpisodeLength,
            grid: vec![],
            n_seeds: 1,
            master_seed: 0,
            oracle: RiccatiOptions::default(),
            early_steps: 25,
        };
        assert!(run_sweep(&spec).is_err());
        let spec = SweepSpec {
            grid: vec![10.5],
            ..spec
        };
        assert!(run_sweep(&spec).is_err());
    }
}
