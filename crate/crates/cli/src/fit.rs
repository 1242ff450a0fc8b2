use std::fmt::Write as _;

use anyhow::Result;

use persuasion::mdp::{Policy, ValueFunctions};
use persuasion::pipeline::{self, Fit};
use persuasion::{Action, StateId};

use crate::args::FitArgs;
use crate::output::{load, Run};

pub fn run(args: &FitArgs) -> Result<()> {
    let mut run = Run::new(&args.out.out_dir)?;
    let ds = load(&args.input, &mut run)?;
    let candidates = args.select.candidates(ds.answer_names());
    let fit = pipeline::fit(&ds, &candidates, &args.select.options(&args.solver))?;
    let k = fit.selection.features.k();

    run.write("feature_set.json", &(fit.selection.features.to_json() + "\n"))?;
    run.write("model.json", &(fit.model.to_json() + "\n"))?;
    run.write("selection.tsv", &selection_report(&fit))?;
    let policy = policy_report(&fit.optimal_policy, &fit.worst_policy, k);
    print!("{policy}");
    run.write("policy.tsv", &policy)?;
    run.write("values.tsv", &values_report(&[&fit.optimal, &fit.worst], k))?;
    run.write("fit_summary.txt", &summary(&fit))?;
    run.finish("fit", args)
}

fn selection_report(fit: &Fit) -> String {
    let mut out = String::from("round\tcandidate\tscore\tselected\n");
    let chosen = fit.selection.features.selected();
    for (i, round) in fit.selection.rounds.iter().enumerate() {
        for (name, score) in round {
            let picked = chosen[i] == *name;
            let _ = writeln!(out, "{}\t{name}\t{score:.6}\t{}", i + 1, u8::from(picked));
        }
    }
    out
}

fn action_name(a: Option<usize>) -> &'static str {
    a.and_then(Action::from_index).map_or("-", Action::name)
}

pub fn policy_report(optimal: &Policy, worst: &Policy, k: usize) -> String {
    let mut out = String::from("state\toptimal\tworst\n");
    for s in 0..1usize << k {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            StateId::new(s as u32).label(k),
            action_name(optimal.action(s)),
            action_name(worst.action(s))
        );
    }
    out
}

fn values_report(tables: &[&ValueFunctions], k: usize) -> String {
    let mut out = String::from("mode\tstate\tv");
    for a in Action::ALL {
        let _ = write!(out, "\tq_{}", a.name());
    }
    out.push('\n');
    for vf in tables {
        let mode = match vf.mode {
            persuasion::Mode::Optimal => "optimal",
            persuasion::Mode::Worst => "worst",
        };
        for s in 0..vf.n_states() {
            let _ = write!(out, "{mode}\t{}\t{:.6}", StateId::new(s as u32).label(k), vf.values[s]);
            for q in vf.q_row(s) {
                let _ = write!(out, "\t{q:.6}");
            }
            out.push('\n');
        }
    }
    out
}

fn summary(fit: &Fit) -> String {
    let f = &fit.selection.features;
    let mut out = String::new();
    let _ = writeln!(out, "features = {}", f.selected().join(","));
    let _ = writeln!(out, "states = {}", f.n_states());
    let _ = writeln!(out, "transitions = {}", fit.transitions.len());
    let _ = writeln!(out, "mean_effort = {:.6}", fit.reward.mean_effort());
    let _ = writeln!(out, "gamma = {}", fit.model.gamma());
    for vf in [&fit.optimal, &fit.worst] {
        let mode = if vf.mode == persuasion::Mode::Optimal { "optimal" } else { "worst" };
        let _ = writeln!(out, "{mode}.iterations = {}", vf.iterations);
        let _ = writeln!(out, "{mode}.residual = {:e}", vf.residual);
    }
    out
}
