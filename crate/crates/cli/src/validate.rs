use anyhow::{bail, Context, Result};

use persuasion::dataset::{validate, SessionSchema};
use persuasion::Dataset;

use crate::args::ValidateArgs;
use crate::output::Run;

pub fn run(args: &ValidateArgs) -> Result<()> {
    let mut run = Run::new(&args.out.out_dir)?;
    let input = &args.input;
    run.input(&input.sessions)?;
    if let Some(p) = &input.profiles {
        run.input(p)?;
    }
    // always load leniently so every rejected row is reported
    let (ds, rejected) = Dataset::load(&input.sessions, input.profiles.as_deref(), &SessionSchema::default(), true)
        .with_context(|| format!("loading {}", input.sessions.display()))?;

    let mut report = validate(&ds);
    report.rejected_rows = rejected.len();
    let text = report.to_text();
    print!("{text}");
    run.write("validation.txt", &text)?;
    let mut listing = String::from("line\tcolumn\treason\n");
    for r in &rejected {
        listing.push_str(&format!("{}\t{}\t{}\n", r.line, r.column.as_deref().unwrap_or(""), r.reason));
    }
    run.write("rejected.tsv", &listing)?;
    run.finish("validate", args)?;

    if ds.sessions().is_empty() {
        bail!(persuasion::Error::EmptyInput(format!("{} holds no sessions", input.sessions.display())));
    }
    if !rejected.is_empty() && !input.lenient {
        for r in &rejected {
            eprintln!("rejected: {r}");
        }
        bail!(persuasion::Error::Rejected(rejected));
    }
    Ok(())
}
