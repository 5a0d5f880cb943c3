//! Run configuration: a TOML document, resolved against per-system defaults.
//!
//! Every key is optional. Keys are grouped in sections; an unknown key, or a
//! plant key that does not belong to the chosen system, is an error.
//!
//! ```toml
//! system = "pendulum"     # or "point_mass"
//! seed = 7
//! output = "runs/pendulum"
//!
//! [plant]
//! n = 10
//! theta0 = 0.1
//!
//! [adaptation]
//! gamma = 0.99
//! sigma_y2 = 0.01
//!
//! [lesion]
//! functioning = [2]
//! timings = ["before", "during", "after"]
//!
//! [sweep]
//! kind = "discount"
//! grid = [0.7, 0.99]
//! ```

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use netpi::plant::{PendulumParams, PointMassParams};
use netpi::task::{CostWeights, TaskPlant};
use netpi::{
    AdaptationConfig, ExplorationConfig, FeatureBasis, LesionSpec, LesionTiming, SweepKind, SystemKind, TaskSpec,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    PointMass,
    Pendulum,
}

impl From<SystemName> for SystemKind {
    fn from(s: SystemName) -> Self {
        match s {
            SystemName::PointMass => SystemKind::PointMass,
            SystemName::Pendulum => SystemKind::Pendulum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingName {
    Before,
    During,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepName {
    EpisodeLength,
    Discount,
    Exploration,
}

impl From<SweepName> for SweepKind {
    fn from(s: SweepName) -> Self {
        match s {
            SweepName::EpisodeLength => SweepKind::EpisodeLength,
            SweepName::Discount => SweepKind::Discount,
            SweepName::Exploration => SweepKind::Exploration,
        }
    }
}

// Raw document: everything optional.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: Option<SystemName>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    plant: RawPlant,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    adaptation: RawAdaptation,
    #[serde(default)]
    task: RawTask,
    #[serde(default)]
    lesion: RawLesion,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    n: Option<usize>,
    dt: Option<f64>,
    friction: Option<f64>,
    target: Option<[f64; 2]>,
    pole_mass: Option<f64>,
    length: Option<f64>,
    inertia: Option<f64>,
    cart_mass: Option<f64>,
    gravity: Option<f64>,
    theta0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    plant: Option<Vec<f64>>,
    s: Option<f64>,
    r: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdaptation {
    episode_length: Option<usize>,
    gamma: Option<f64>,
    sigma_y2: Option<f64>,
    tol: Option<f64>,
    max_episodes: Option<usize>,
    divergence_guard: Option<f64>,
    symmetric_features: Option<bool>,
    condition_ceiling: Option<f64>,
    w0_perturbation: Option<f64>,
    w0_attempts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    rollout_steps: Option<usize>,
    success_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLesion {
    functioning: Option<Vec<usize>>,
    timings: Option<Vec<TimingName>>,
    k1: Option<usize>,
    n_seeds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    kind: Option<SweepName>,
    grid: Option<Vec<f64>>,
    n_seeds: Option<usize>,
    early_steps: Option<usize>,
    oracle_tol: Option<f64>,
}

// Resolved configuration. Serializes to a document that parses back to
// itself.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub system: SystemName,
    pub seed: u64,
    pub output: PathBuf,
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub adaptation: AdaptationSection,
    pub task: TaskSection,
    pub lesion: LesionSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantConfig {
    pub n: usize,
    pub dt: f64,
    pub friction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pole_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cart_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostConfig {
    pub plant: Vec<f64>,
    pub s: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationSection {
    pub episode_length: usize,
    pub gamma: f64,
    pub sigma_y2: f64,
    pub tol: f64,
    pub max_episodes: usize,
    pub divergence_guard: f64,
    pub symmetric_features: bool,
    pub condition_ceiling: f64,
    pub w0_perturbation: f64,
    pub w0_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSection {
    pub rollout_steps: usize,
    pub success_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LesionSection {
    pub functioning: Vec<usize>,
    pub timings: Vec<TimingName>,
    pub k1: usize,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSection {
    pub kind: SweepName,
    pub grid: Vec<f64>,
    pub n_seeds: usize,
    pub early_steps: usize,
    pub oracle_tol: f64,
}

/// Parses and resolves a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).context("invalid configuration")?;
    resolve(raw)
}

/// Serializes a resolved configuration; `parse_config` inverts it.
pub fn emit_config(config: &RunConfig) -> Result<String> {
    toml::to_string(config).context("serializing configuration")
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let system = raw.system.unwrap_or(SystemName::PointMass);
    let spec = TaskSpec::<f64>::for_system(system.into());
    let p = raw.plant;

    let plant = match (&spec.plant, system) {
        (TaskPlant::PointMass(d), _) => {
            let foreign = [
                ("pole_mass", p.pole_mass.is_some()),
                ("length", p.length.is_some()),
                ("inertia", p.inertia.is_some()),
                ("cart_mass", p.cart_mass.is_some()),
                ("gravity", p.gravity.is_some()),
                ("theta0", p.theta0.is_some()),
            ];
            if let Some((key, _)) = foreign.iter().find(|(_, set)| *set) {
                bail!("plant.{key}: not a point_mass parameter");
            }
            PlantConfig {
                n: p.n.unwrap_or(d.n),
                dt: p.dt.unwrap_or(d.dt),
                friction: p.friction.unwrap_or(d.friction),
                target: Some(p.target.unwrap_or(d.target)),
                pole_mass: None,
                length: None,
                inertia: None,
                cart_mass: None,
                gravity: None,
                theta0: None,
            }
        }
        (TaskPlant::Pendulum(d), _) => {
            if p.target.is_some() {
                bail!("plant.target: not a pendulum parameter");
            }
            PlantConfig {
                n: p.n.unwrap_or(d.n),
                dt: p.dt.unwrap_or(d.dt),
                friction: p.friction.unwrap_or(d.friction),
                target: None,
                pole_mass: Some(p.pole_mass.unwrap_or(d.pole_mass)),
                length: Some(p.length.unwrap_or(d.length)),
                inertia: Some(p.inertia.unwrap_or(d.inertia)),
                cart_mass: Some(p.cart_mass.unwrap_or(d.cart_mass)),
                gravity: Some(p.gravity.unwrap_or(d.gravity)),
                theta0: Some(p.theta0.unwrap_or(spec.theta0)),
            }
        }
    };

    let cost = CostConfig {
        plant: raw.cost.plant.unwrap_or_else(|| spec.cost.plant.clone()),
        s: raw.cost.s.unwrap_or(spec.cost.s),
        r: raw.cost.r.unwrap_or(spec.cost.r),
    };

    let defaults = AdaptationConfig::<f64>::new(spec.rollout_steps, 0);
    let a = raw.adaptation;
    let adaptation = AdaptationSection {
        episode_length: a.episode_length.unwrap_or(defaults.episode_length),
        gamma: a.gamma.unwrap_or(defaults.gamma),
        sigma_y2: a.sigma_y2.unwrap_or(defaults.exploration.variance),
        tol: a.tol.unwrap_or(defaults.tol),
        max_episodes: a.max_episodes.unwrap_or(defaults.max_episodes),
        divergence_guard: a.divergence_guard.unwrap_or(defaults.divergence_guard),
        symmetric_features: a.symmetric_features.unwrap_or(false),
        condition_ceiling: a.condition_ceiling.unwrap_or(defaults.condition_ceiling),
        w0_perturbation: a.w0_perturbation.unwrap_or(spec.w0_perturbation),
        w0_attempts: a.w0_attempts.unwrap_or(spec.w0_attempts),
    };

    let task = TaskSection {
        rollout_steps: raw.task.rollout_steps.unwrap_or(spec.rollout_steps),
        success_tolerance: raw.task.success_tolerance.unwrap_or(spec.success_tolerance),
    };

    let lesion = LesionSection {
        functioning: raw.lesion.functioning.unwrap_or_else(|| vec![2]),
        timings: raw
            .lesion
            .timings
            .unwrap_or_else(|| vec![TimingName::Before, TimingName::During, TimingName::After]),
        k1: raw.lesion.k1.unwrap_or(5),
        n_seeds: raw.lesion.n_seeds.unwrap_or(10),
    };

    let sweep = SweepSection {
        kind: raw.sweep.kind.unwrap_or(SweepName::Discount),
        grid: raw.sweep.grid.unwrap_or_else(|| vec![0.7, 0.99]),
        n_seeds: raw.sweep.n_seeds.unwrap_or(5),
        early_steps: raw.sweep.early_steps.unwrap_or(25),
        oracle_tol: raw.sweep.oracle_tol.unwrap_or(1e-10),
    };

    let config = RunConfig {
        system,
        seed: raw.seed.unwrap_or(0),
        output: raw.output.unwrap_or_else(|| PathBuf::from("out")),
        plant,
        cost,
        adaptation,
        task,
        lesion,
        sweep,
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Domain checks that the core constructors would otherwise report
    /// without the key name.
    pub fn validate(&self) -> Result<()> {
        let a = &self.adaptation;
        if !(0.0..=1.0).contains(&a.gamma) {
            bail!("adaptation.gamma: discount must lie in [0, 1], got {}", a.gamma);
        }
        if !(a.sigma_y2 >= 0.0) {
            bail!("adaptation.sigma_y2: variance must be non-negative, got {}", a.sigma_y2);
        }
        if !(a.tol > 0.0) {
            bail!("adaptation.tol: must be positive, got {}", a.tol);
        }
        if a.episode_length < 1 {
            bail!("adaptation.episode_length: must be at least 1");
        }
        if a.max_episodes < 1 {
            bail!("adaptation.max_episodes: must be at least 1");
        }
        if !(a.divergence_guard > 0.0) {
            bail!("adaptation.divergence_guard: must be positive");
        }
        if !(a.condition_ceiling >= 1.0) {
            bail!("adaptation.condition_ceiling: must be at least 1");
        }
        if !(a.w0_perturbation >= 0.0) {
            bail!("adaptation.w0_perturbation: must be non-negative");
        }
        let p = &self.plant;
        if p.n <= 2 {
            bail!("plant.n: network size must exceed 2, got {}", p.n);
        }
        if !(p.dt > 0.0) {
            bail!("plant.dt: must be positive, got {}", p.dt);
        }
        if self.cost.plant.len() != 4 {
            bail!("cost.plant: expected 4 weights, got {}", self.cost.plant.len());
        }
        if self.cost.plant.iter().any(|w| !(*w >= 0.0)) {
            bail!("cost.plant: weights must be non-negative");
        }
        if !(self.cost.s >= 0.0) {
            bail!("cost.s: must be non-negative");
        }
        if !(self.cost.r > 0.0) {
            bail!("cost.r: must be positive");
        }
        if self.task.rollout_steps < 1 {
            bail!("task.rollout_steps: must be at least 1");
        }
        let l = &self.lesion;
        if let Some(nf) = l.functioning.iter().find(|&&nf| nf > p.n) {
            bail!("lesion.functioning: {nf} exceeds the network size {}", p.n);
        }
        if l.k1 < 1 {
            bail!("lesion.k1: must be at least 1");
        }
        if l.n_seeds < 1 {
            bail!("lesion.n_seeds: must be at least 1");
        }
        let s = &self.sweep;
        if s.grid.is_empty() {
            bail!("sweep.grid: must not be empty");
        }
        if s.n_seeds < 1 {
            bail!("sweep.n_seeds: must be at least 1");
        }
        if !(s.oracle_tol > 0.0) {
            bail!("sweep.oracle_tol: must be positive");
        }
        for &v in &s.grid {
            let ok = match s.kind {
                SweepName::EpisodeLength => v >= 1.0 && v.fract() == 0.0,
                SweepName::Discount => (0.0..=1.0).contains(&v),
                SweepName::Exploration => v >= 0.0,
            };
            if !ok {
                bail!("sweep.grid: {v} is not a valid {:?} value", s.kind);
            }
        }
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec<f64> {
        let p = &self.plant;
        let mut spec = TaskSpec::<f64>::for_system(self.system.into());
        spec.plant = match self.system {
            SystemName::PointMass => TaskPlant::PointMass(PointMassParams {
                n: p.n,
                dt: p.dt,
                friction: p.friction,
                target: p.target.expect("resolved point-mass target"),
            }),
            SystemName::Pendulum => TaskPlant::Pendulum(PendulumParams {
                n: p.n,
                dt: p.dt,
                pole_mass: p.pole_mass.expect("resolved"),
                length: p.length.expect("resolved"),
                inertia: p.inertia.expect("resolved"),
                cart_mass: p.cart_mass.expect("resolved"),
                friction: p.friction,
                gravity: p.gravity.expect("resolved"),
            }),
        };
        spec.theta0 = p.theta0.unwrap_or(0.0);
        spec.cost = CostWeights {
            plant: self.cost.plant.clone(),
            s: self.cost.s,
            r: self.cost.r,
        };
        spec.w0_perturbation = self.adaptation.w0_perturbation;
        spec.w0_attempts = self.adaptation.w0_attempts;
        spec.rollout_steps = self.task.rollout_steps;
        spec.success_tolerance = self.task.success_tolerance;
        spec.divergence_guard = self.adaptation.divergence_guard;
        spec
    }

    /// Learning settings; the caller sets the run seed.
    pub fn adaptation_config(&self) -> AdaptationConfig<f64> {
        let a = &self.adaptation;
        AdaptationConfig {
            episode_length: a.episode_length,
            gamma: a.gamma,
            exploration: ExplorationConfig { variance: a.sigma_y2 },
            tol: a.tol,
            max_episodes: a.max_episodes,
            divergence_guard: a.divergence_guard,
            basis: if a.symmetric_features {
                FeatureBasis::Symmetric
            } else {
                FeatureBasis::Kronecker
            },
            condition_ceiling: a.condition_ceiling,
            seed: self.seed,
        }
    }

    pub fn lesion_specs(&self) -> Result<Vec<LesionSpec>> {
        let mut out = Vec::new();
        for &nf in &self.lesion.functioning {
            for &t in &self.lesion.timings {
                let timing = match t {
                    TimingName::Before => LesionTiming::BeforeLearning,
                    TimingName::During => LesionTiming::DuringLearning {
                        episode: self.lesion.k1,
                    },
                    TimingName::After => LesionTiming::AfterLearning,
                };
                out.push(LesionSpec::new(nf, timing)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_point_mass_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.system, SystemName::PointMass);
        assert_eq!(c.plant.n, 10);
        assert_eq!(c.plant.dt, 0.1);
        assert_eq!(c.plant.friction, 0.25);
        assert_eq!(c.plant.target, Some([1.0, 0.0]));
        assert_eq!(c.adaptation.gamma, 0.99);
        assert_eq!(c.adaptation.sigma_y2, 0.01);
        assert_eq!(c.adaptation.episode_length, 500);
        assert_eq!(c.cost.plant, vec![10.0, 10.0, 0.0, 0.0]);
        assert_eq!((c.cost.s, c.cost.r), (2.0, 2.0));
        assert!(!c.adaptation.symmetric_features);
    }

    #[test]
    fn pendulum_defaults() {
        let c = parse_config("system = \"pendulum\"").unwrap();
        assert_eq!(c.adaptation.episode_length, 400);
        assert_eq!(c.cost.plant, vec![1.0, 10.0, 1.0, 10.0]);
        assert_eq!(c.plant.pole_mass, Some(0.2));
        assert_eq!(c.plant.length, Some(0.3));
        assert_eq!(c.plant.inertia, Some(0.006));
        assert_eq!(c.plant.cart_mass, Some(0.5));
        assert_eq!(c.plant.friction, 0.1);
        assert_eq!(c.plant.gravity, Some(9.8));
        assert_eq!(c.plant.theta0, Some(0.1));
        assert_eq!(c.task.success_tolerance, 0.01);
    }

    #[test]
    fn domain_and_key_errors() {
        let e = parse_config("[adaptation]\ngamma = 1.5").unwrap_err();
        assert!(format!("{e:#}").contains("adaptation.gamma"));
        let e = parse_config("[adaptation]\ngama = 0.5").unwrap_err();
        assert!(format!("{e:#}").contains("gama"), "{e:#}");
        let e = parse_config("[plant]\ntheta0 = 0.2").unwrap_err();
        assert!(format!("{e:#}").contains("theta0"));
        let e = parse_config("system = \"pendulum\"\n[plant]\ntarget = [1.0, 1.0]").unwrap_err();
        assert!(format!("{e:#}").contains("target"));
        let e = parse_config("seed = 1\nseed = 2").unwrap_err();
        assert!(format!("{e:#}").contains("line 2"), "{e:#}");
        assert!(parse_config("[lesion]\nfunctioning = [11]").is_err());
        assert!(parse_config("[sweep]\nkind = \"episode_length\"\ngrid = [10.5]").is_err());
    }

    #[test]
    fn round_trip() {
        for doc in [
            "",
            "system = \"pendulum\"\nseed = 9\n[plant]\ngravity = 0.0\n[adaptation]\ntol = 1e-6",
            "[sweep]\nkind = \"exploration\"\ngrid = [0.001, 0.01, 0.1]\n[lesion]\ntimings = [\"after\"]",
        ] {
            let c = parse_config(doc).unwrap();
            let again = parse_config(&emit_config(&c).unwrap()).unwrap();
            assert_eq!(c, again);
        }
    }
}
