use anyhow::{Context, Result};

use persuasion::synth::{generate_mdp, sample_dataset, write_dataset, CharacteristicResponse, StructureSpec};

use crate::args::SynthArgs;
use crate::output::Run;
use crate::usage;

fn split_pair(s: &str, what: &str) -> Result<(String, f64)> {
    let (name, value) = s.split_once(':').ok_or_else(|| usage(format!("{what} `{s}` is not NAME:VALUE")))?;
    let value = value.parse().map_err(|_| usage(format!("{what} `{s}` has a non-numeric value")))?;
    Ok((name.to_string(), value))
}

fn structure(args: &SynthArgs, run: &mut Run) -> Result<StructureSpec> {
    if let Some(path) = &args.spec {
        run.input(path)?;
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        return toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())));
    }
    let mut spec = StructureSpec::default();
    for item in &args.informative {
        let (bit, gap) = split_pair(item, "informative bit")?;
        let bit = bit.parse().map_err(|_| usage(format!("bit `{bit}` is not an index")))?;
        spec.informative_bits.push((bit, gap));
    }
    if let Some(v) = args.base_spread {
        spec.base_spread = v;
    }
    spec.min_q_gap = args.min_q_gap;
    if let Some(v) = args.reward_noise {
        spec.reward_noise = v;
    }
    if let Some(v) = args.characteristics {
        spec.n_characteristics = v;
    }
    if let Some(v) = args.involvement_coverage {
        spec.involvement_coverage = v;
    }
    if let Some(r) = &args.response {
        let (name, effect) = split_pair(r, "response")?;
        spec.characteristic_response = Some(CharacteristicResponse { name, effect });
    }
    Ok(spec)
}

/// The ground truth uses `seed` and the sampled corpus `seed + 1`.
pub fn run(args: &SynthArgs) -> Result<()> {
    let mut run = Run::new(&args.out.out_dir)?;
    let spec = structure(args, &mut run)?;
    let gt = generate_mdp(args.state_bits, args.actions, &spec, args.seed)?;
    let ds = sample_dataset(&gt, args.users, args.sessions_per_user, args.seed.wrapping_add(1))?;
    write_dataset(&ds, &args.out.out_dir)?;
    for name in ["sessions.csv", "profiles.csv"] {
        let path = args.out.out_dir.join(name);
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        run.write(name, &text)?;
    }
    run.write("ground_truth.json", &(gt.to_json() + "\n"))?;
    run.write("true_policy.tsv", &crate::fit::policy_report(&gt.optimal_policy()?, &worst(&gt)?, gt.n_state_bits))?;
    println!(
        "{} users, {} sessions, {} transitions",
        args.users,
        ds.sessions().len(),
        ds.raw_transitions().len()
    );
    run.finish("synth", args)
}

fn worst(gt: &persuasion::synth::GroundTruth) -> persuasion::Result<persuasion::Policy> {
    use persuasion::mdp::{extract_policy, value_iteration, IterationLimits, Mode};
    let vf = value_iteration(&gt.model, Mode::Worst, IterationLimits::default())?;
    Ok(extract_policy(&vf, Mode::Worst))
}
