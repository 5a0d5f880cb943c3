//! The four verbs and the files they write.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use netpi::adaptation::{convergence_diagnostics, diagnostic_states, AdaptationHistory};
use netpi::experiment::{self, policy_spread, replicate_seed, LesionCell, LesionOutcome, SweepRun};
use netpi::{LesionExperimentSpec, PolicyIteration, RiccatiOptions, SweepSpec, TaskInstance};
use serde_json::Value;

use crate::config::{emit_config, RunConfig};
use crate::output::{float, json_matrix, json_num, json_object, write_json, write_text, Csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Train,
    Lesion,
    Sweep,
    Oracle,
}

/// Outcome of a verb: whether it finished without a run failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub ok: bool,
    pub message: String,
}

/// Runs `verb` and writes its files into `config.output`.
pub fn execute(config: &RunConfig, verb: Verb) -> Result<Report> {
    let out = &config.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("config.toml"), &emit_config(config)?)?;
    match verb {
        Verb::Train => train(config, out),
        Verb::Lesion => lesion(config, out),
        Verb::Sweep => sweep(config, out),
        Verb::Oracle => oracle(config, out),
    }
}

fn bool_cell(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

fn write_history(path: &Path, history: &AdaptationHistory<f64>) -> Result<()> {
    let mut csv = Csv::new(&[
        "k",
        "h_delta",
        "xi_k",
        "episode_cost",
        "regression_rank",
        "residual",
        "diverged",
    ]);
    for r in &history.records {
        csv.row(vec![
            r.k.to_string(),
            float(r.h_delta),
            float(r.xi),
            float(r.episode_cost),
            r.rank.to_string(),
            float(r.residual),
            bool_cell(r.diverged),
        ]);
    }
    csv.write(path)
}

fn write_trajectory(path: &Path, task: &TaskInstance<f64>, rollout: &netpi::adaptation::Rollout<f64>) -> Result<()> {
    let (m, n) = (task.m(), task.n());
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("psi_{i}")));
    header.extend((1..=m).map(|i| format!("nu_{i}")));
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("u_{i}")));
    header.push("cost".into());
    let mut csv = Csv::with_header(header);
    for (t, state) in rollout.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(task.unshift(state).iter().map(|&v| float(v)));
        match (rollout.inputs.get(t), rollout.costs.get(t)) {
            (Some(u), Some(&c)) => {
                row.extend(u.iter().map(|&v| float(v)));
                row.push(float(c));
            }
            _ => row.extend(std::iter::repeat_n(String::new(), n + 1)),
        }
        csv.row(row);
    }
    csv.write(path)
}

fn train(config: &RunConfig, out: &Path) -> Result<Report> {
    let run_seed = replicate_seed(config.seed, 0);
    let task = config.task_spec().instantiate(run_seed)?;
    let mut cfg = config.adaptation_config();
    cfg.seed = run_seed;
    let gamma = cfg.gamma;
    let solution = task.oracle(gamma, &RiccatiOptions::default());

    let mut failure: Option<String> = None;
    let mut learner = None;
    match task
        .initial_policy(gamma)
        .and_then(|w0| PolicyIteration::new(task.system.clone(), cfg.clone(), w0))
    {
        Ok(mut l) => {
            if let Err(e) = l.run(&task.initial, cfg.max_episodes) {
                failure = Some(e.class().to_string());
            }
            learner = Some(l);
        }
        Err(e) => failure = Some(e.class().to_string()),
    }

    let history = learner.as_ref().map(|l| l.history().clone()).unwrap_or_default();
    write_history(&out.join("history.csv"), &history)?;

    let mut summary = vec![
        ("system", Value::String(task.kind().label().into())),
        ("seed", Value::from(config.seed)),
        ("run_seed", Value::from(run_seed)),
        ("episodes", Value::from(history.len())),
        ("converged", Value::Bool(history.converged(cfg.tol))),
        (
            "failure_class",
            failure.clone().map(Value::String).unwrap_or(Value::Null),
        ),
    ];
    if let Ok(sol) = &solution {
        summary.push(("oracle_gain", json_matrix(sol.gain.matrix())));
        summary.push(("oracle_iterations", Value::from(sol.iterations)));
        summary.push(("oracle_residual", json_num(sol.residual)));
    } else if let Err(e) = &solution {
        summary.push(("oracle_error", Value::String(e.to_string())));
    }

    if let (Some(l), None) = (&learner, &failure) {
        let policy = l.policy();
        summary.push(("final_gain", json_matrix(policy.matrix())));
        let judged = task.evaluate(&task.system, policy)?;
        write_trajectory(&out.join("trajectory.csv"), &task, &judged.rollout)?;
        summary.push(("task_error", json_num(judged.error)));
        summary.push(("success", Value::Bool(judged.success)));
        let states = diagnostic_states::<f64>(task.system.n_prime(), 100, run_seed);
        let oracle_arg = solution.as_ref().ok().map(|s| (&task.system, s, gamma));
        let report = convergence_diagnostics(&history, oracle_arg, &states)?;
        summary.push((
            "contraction_ratios",
            Value::Array(report.contraction_ratios.iter().map(|&r| json_num(r)).collect()),
        ));
        if let Ok(sol) = &solution {
            summary.push((
                "relative_gain_error",
                json_num(policy.distance(&sol.gain) / sol.gain.matrix().norm()),
            ));
        }
        if let Some(b) = report.value_bound {
            summary.push((
                "value_bound",
                json_object(vec![
                    ("epsilon", json_num(b.epsilon)),
                    ("bound", json_num(b.bound)),
                    ("value_deviation", json_num(b.value_deviation)),
                    ("samples", Value::from(b.samples)),
                    ("holds", Value::Bool(b.holds())),
                ]),
            ));
        }
    }
    write_json(&out.join("summary.json"), &json_object(summary))?;
    Ok(match failure {
        None => Report {
            ok: true,
            message: format!("trained {} episodes", history.len()),
        },
        Some(class) => Report {
            ok: false,
            message: format!("training failed: {class}"),
        },
    })
}

fn lesion(config: &RunConfig, out: &Path) -> Result<Report> {
    let task = config.task_spec();
    let system = task.kind();
    let mut all: Vec<(netpi::LesionSpec, Vec<LesionOutcome<f64>>)> = Vec::new();
    for spec in config.lesion_specs()? {
        let exp = LesionExperimentSpec {
            task: task.clone(),
            adaptation: config.adaptation_config(),
            lesion: spec,
            n_seeds: config.lesion.n_seeds,
            master_seed: config.seed,
        };
        all.push((spec, experiment::run_lesion_experiment(&exp)?));
    }

    let mut outcomes = Csv::new(&[
        "system",
        "n_f",
        "timing",
        "replicate",
        "seed",
        "success",
        "task_error",
        "failure",
        "lesion_episode",
        "recovered",
        "episodes",
        "final_gap",
    ]);
    let mut traces = Csv::new(&["n_f", "timing", "replicate", "t", "deviation", "cost"]);
    let mut gaps = Csv::new(&["n_f", "timing", "replicate", "k", "gap"]);
    for (spec, runs) in &all {
        let (nf, timing) = (spec.functioning().to_string(), spec.timing().label());
        for o in runs {
            outcomes.row(vec![
                system.label().into(),
                nf.clone(),
                timing.into(),
                o.replicate.to_string(),
                o.seed.to_string(),
                bool_cell(o.success),
                float(o.task_error),
                o.failure.unwrap_or("").into(),
                o.lesion_episode.to_string(),
                bool_cell(o.recovered),
                o.history.len().to_string(),
                float(o.final_policy.distance(&o.reference_policy)),
            ]);
            for (t, d) in o.deviation_trace.iter().enumerate() {
                let cost = o.cost_trace.get(t).map(|&c| float(c)).unwrap_or_default();
                traces.row(vec![
                    nf.clone(),
                    timing.into(),
                    o.replicate.to_string(),
                    t.to_string(),
                    float(*d),
                    cost,
                ]);
            }
            for (i, g) in o.gap_trace.iter().enumerate() {
                gaps.row(vec![
                    nf.clone(),
                    timing.into(),
                    o.replicate.to_string(),
                    (i + 1).to_string(),
                    float(*g),
                ]);
            }
        }
    }
    outcomes.write(&out.join("lesion_outcomes.csv"))?;
    traces.write(&out.join("lesion_traces.csv"))?;
    gaps.write(&out.join("lesion_gaps.csv"))?;

    // Table layout: one row per (system, n_f), one column per timing.
    let mut table = Csv::new(&["system", "n_f", "before", "during", "after"]);
    let mut rows: Vec<usize> = config.lesion.functioning.clone();
    rows.dedup();
    let mut cells_json = Vec::new();
    for nf in rows {
        let mut row = vec![system.label().to_string(), nf.to_string()];
        for label in ["before", "during", "after"] {
            let cell = all
                .iter()
                .find(|(s, _)| s.functioning() == nf && s.timing().label() == label)
                .map(|(s, runs)| LesionCell::from_outcomes(system, *s, runs));
            row.push(cell.map(|c| c.symbol().to_string()).unwrap_or_else(|| "-".into()));
            if let Some(c) = cell {
                cells_json.push(json_object(vec![
                    ("n_f", Value::from(nf)),
                    ("timing", Value::String(label.into())),
                    ("successes", Value::from(c.successes)),
                    ("runs", Value::from(c.runs)),
                    ("cell", Value::String(c.symbol().to_string())),
                ]));
            }
        }
        table.row(row);
    }
    table.write(&out.join("lesion_table.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json_object(vec![
            ("system", Value::String(system.label().into())),
            ("seed", Value::from(config.seed)),
            ("quorum", json_num(experiment::TABLE_QUORUM)),
            ("cells", Value::Array(cells_json)),
        ]),
    )?;
    Ok(Report {
        ok: true,
        message: format!("{} lesion conditions", all.len()),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sweep(config: &RunConfig, out: &Path) -> Result<Report> {
    let spec = SweepSpec {
        task: config.task_spec(),
        adaptation: config.adaptation_config(),
        kind: config.sweep.kind.into(),
        grid: config.sweep.grid.clone(),
        n_seeds: config.sweep.n_seeds,
        master_seed: config.seed,
        oracle: RiccatiOptions {
            tol: config.sweep.oracle_tol,
            ..RiccatiOptions::default()
        },
        early_steps: config.sweep.early_steps,
    };
    let runs = experiment::run_sweep(&spec)?;
    let kind = spec.kind.label();
    let mut csv = Csv::new(&[
        "kind",
        "value",
        "replicate",
        "seed",
        "episodes",
        "converged",
        "failure",
        "gain_error",
        "cumulative_cost",
        "early_cost",
    ]);
    for r in &runs {
        csv.row(vec![
            kind.into(),
            float(r.value),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.episodes.to_string(),
            bool_cell(r.converged),
            r.failure.unwrap_or("").into(),
            float(r.gain_error),
            float(r.cumulative_cost),
            float(r.early_cost),
        ]);
    }
    csv.write(&out.join("sweep.csv"))?;

    let mut spread = Csv::new(&["value", "t", "band"]);
    let mut per_value = Vec::new();
    for &value in &spec.grid {
        let cell: Vec<&SweepRun<f64>> = runs.iter().filter(|r| r.value == value).collect();
        let band = policy_spread(&cell);
        for (t, b) in band.iter().enumerate() {
            spread.row(vec![float(value), t.to_string(), float(*b)]);
        }
        let done: Vec<&&SweepRun<f64>> = cell.iter().filter(|r| r.failure.is_none()).collect();
        per_value.push(json_object(vec![
            ("value", json_num(value)),
            ("runs", Value::from(cell.len())),
            ("failures", Value::from(cell.len() - done.len())),
            ("mean_gain_error", json_num(mean(done.iter().map(|r| r.gain_error)))),
            (
                "mean_cumulative_cost",
                json_num(mean(done.iter().map(|r| r.cumulative_cost))),
            ),
            ("mean_early_cost", json_num(mean(done.iter().map(|r| r.early_cost)))),
            ("mean_band", json_num(mean(band.iter().copied()))),
        ]));
    }
    spread.write(&out.join("sweep_spread.csv"))?;
    write_json(
        &out.join("summary.json"),
        &json_object(vec![
            ("system", Value::String(spec.task.kind().label().into())),
            ("seed", Value::from(config.seed)),
            ("kind", Value::String(kind.into())),
            ("cells", Value::Array(per_value)),
        ]),
    )?;
    Ok(Report {
        ok: true,
        message: format!("{} sweep runs", runs.len()),
    })
}

fn oracle(config: &RunConfig, out: &Path) -> Result<Report> {
    let run_seed = replicate_seed(config.seed, 0);
    let task = config.task_spec().instantiate(run_seed)?;
    let gamma = config.adaptation.gamma;
    let value = match task.oracle(gamma, &RiccatiOptions::default()) {
        Ok(sol) => json_object(vec![
            ("system", Value::String(task.kind().label().into())),
            ("run_seed", Value::from(run_seed)),
            ("gamma", json_num(gamma)),
            ("gain", json_matrix(sol.gain.matrix())),
            ("p", json_matrix(&sol.p)),
            ("iterations", Value::from(sol.iterations)),
            ("residual", json_num(sol.residual)),
            ("failure_class", Value::Null),
        ]),
        Err(e) => {
            write_json(
                &out.join("oracle.json"),
                &json_object(vec![("failure_class", Value::String(e.class().into()))]),
            )?;
            return Ok(Report {
                ok: false,
                message: format!("oracle failed: {e}"),
            });
        }
    };
    write_json(&out.join("oracle.json"), &value)?;
    Ok(Report {
        ok: true,
        message: format!("oracle converged in {} iterations", value["iterations"]),
    })
}
