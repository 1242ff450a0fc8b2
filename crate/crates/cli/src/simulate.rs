use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use persuasion::mdp::{extract_policy, uniform_policy, value_iteration, EffortReward, IterationLimits, Mode, Policy};
use persuasion::simulation::{
    distribution_report, graph_report, initial_distribution, monte_carlo, reward_report, simulate, transition_graph,
    Population, StateDistribution, Trajectory,
};
use persuasion::{FeatureSet, MdpModel};

use crate::args::{InputArgs, PolicyArg, PopulationArg, SimulateArgs};
use crate::output::{load, Run};
use crate::usage;

fn read_artifact(run: &mut Run, dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        bail!(persuasion::Error::InvalidDataset(format!(
            "missing artifact {}; run `persuasion fit` first",
            path.display()
        )));
    }
    run.input(&path)?;
    fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let mut run = Run::new(&args.out.out_dir)?;
    let fit_dir = args.fit_dir.as_deref().unwrap_or(&args.out.out_dir);
    let features = FeatureSet::from_json(&read_artifact(&mut run, fit_dir, "feature_set.json")?)?;
    let model = MdpModel::from_json(&read_artifact(&mut run, fit_dir, "model.json")?)?;
    if model.n_states() != features.n_states() {
        bail!(persuasion::Error::InvalidModel(format!(
            "model has {} states but the feature set describes {}",
            model.n_states(),
            features.n_states()
        )));
    }
    let k = features.k();
    let limits = IterationLimits {
        tolerance: args.tolerance,
        max_iterations: args.max_iterations,
    };
    let optimal_vf = value_iteration(&model, Mode::Optimal, limits)?;
    let worst_vf = value_iteration(&model, Mode::Worst, limits)?;
    let optimal = extract_policy(&optimal_vf, Mode::Optimal);
    let policy_for = |p: PolicyArg| -> Policy {
        match p {
            PolicyArg::Optimal => optimal.clone(),
            PolicyArg::Worst => extract_policy(&worst_vf, Mode::Worst),
            PolicyArg::Uniform => uniform_policy(model.n_actions()),
        }
    };

    let threshold = args.threshold.unwrap_or(1.0 / model.n_states() as f64);
    let edges = transition_graph(&optimal, &model, &optimal_vf, threshold)?;
    run.write("graph.tsv", &graph_report(&edges, k))?;

    let needs_corpus = args.populations.iter().any(|p| *p != PopulationArg::Uniform);
    let corpus = match (&args.sessions, needs_corpus) {
        (Some(sessions), _) => {
            let input = InputArgs {
                sessions: sessions.clone(),
                profiles: args.profiles.clone(),
                lenient: args.lenient,
            };
            let ds = load(&input, &mut run)?;
            let reward = EffortReward::new(
                ds.mean_effort()
                    .ok_or_else(|| persuasion::Error::EmptyInput("no effort reports".into()))?,
            )?;
            Some((ds, reward))
        }
        (None, true) => return Err(usage("session-1 populations need --sessions")),
        (None, false) => None,
    };

    let mut distributions = String::new();
    let mut mc_rows = String::new();
    for &population in &args.populations {
        let population: Population = population.into();
        let d0 = match &corpus {
            Some((ds, reward)) => initial_distribution(ds, &features, reward, population)?,
            None => StateDistribution::uniform(features.n_states()),
        };
        let mut columns: Vec<(String, Trajectory)> = Vec::new();
        for &p in &args.policies {
            let policy = policy_for(p);
            let trajectory = simulate(&d0, &policy, &model, args.horizon)?;
            append_table(&mut distributions, &distribution_report(&trajectory, p.name(), population.name(), k));
            if let Some(n) = args.agents {
                let sampled = Trajectory {
                    initial: d0.clone(),
                    distributions: monte_carlo(&d0, &policy, &model, args.horizon, n, args.seed)?,
                    mean_rewards: Vec::new(),
                };
                append_table(&mut mc_rows, &distribution_report(&sampled, p.name(), population.name(), k));
            }
            println!(
                "{}\t{}\tmean reward at t={}: {:.4}",
                population.name(),
                p.name(),
                args.horizon,
                trajectory.mean_rewards[args.horizon - 1]
            );
            columns.push((p.name().to_string(), trajectory));
        }
        let refs: Vec<(String, &Trajectory)> = columns.iter().map(|(n, t)| (n.clone(), t)).collect();
        run.write(&format!("rewards_{}.tsv", population.name()), &reward_report(&refs))?;
    }
    run.write("distributions.tsv", &distributions)?;
    if args.agents.is_some() {
        run.write("monte_carlo.tsv", &mc_rows)?;
    }
    run.finish("simulate", args)
}

/// Appends `table`, dropping its header when `out` already has one.
fn append_table(out: &mut String, table: &str) {
    if out.is_empty() {
        out.push_str(table);
    } else if let Some((_, body)) = table.split_once('\n') {
        out.push_str(body);
    }
}
