use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use featforge::memory::{pool_from_records, read_jsonl, ActionRecord, Decision};
use featforge::pipeline::{FeatureSet, SetLimits};
use featforge::search::Provenance;

use crate::{CliError, CliResult, InspectArgs};

/// Generate/Select shares as whole percentages.
pub fn decision_shares(records: &[ActionRecord]) -> Option<(f64, f64)> {
    let routed: Vec<Decision> = records.iter().filter_map(|r| r.decision).collect();
    if routed.is_empty() {
        return None;
    }
    let g =
        routed.iter().filter(|d| **d == Decision::Generate).count() as f64 / routed.len() as f64;
    Some((100.0 * g, 100.0 * (1.0 - g)))
}

pub fn cmd_inspect(args: &InspectArgs) -> CliResult<()> {
    let path = &args.trace;
    let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let records = read_jsonl(BufReader::new(file))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        println!("no records");
        return Ok(());
    }

    let mut by_iteration: BTreeMap<u32, Vec<&ActionRecord>> = BTreeMap::new();
    for r in &records {
        by_iteration.entry(r.iteration).or_default().push(r);
    }
    for (iteration, steps) in &by_iteration {
        println!("iteration {iteration}");
        for r in steps {
            let tag = match r.decision {
                None => "-",
                Some(Decision::Generate) => "G",
                Some(Decision::Select) => "S",
            };
            let mut flags = String::new();
            if r.fallback {
                flags.push_str(" [fallback]");
            }
            println!("  {:>3} {tag} {:.4}  {}{flags}", r.step, r.score, r.detail);
        }
    }

    println!();
    match decision_shares(&records) {
        Some((g, s)) => {
            println!("decision share");
            println!("  G {g:.0}%");
            println!("  S {s:.0}%");
        }
        None => println!("decision share: no routed steps"),
    }

    let pool = pool_from_records(records, Default::default())
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let best = pool.best().map_err(CliError::data)?;
    let baseline = pool.records().find(|r| r.is_baseline());
    println!();
    match baseline {
        Some(b) => println!(
            "best {:.4} at iteration {} step {} (baseline {:.4})",
            best.score, best.iteration, best.step, b.score
        ),
        None => println!(
            "best {:.4} at iteration {} step {}",
            best.score, best.iteration, best.step
        ),
    }
    let set = FeatureSet::from_record(&best.feature_set, SetLimits::default())
        .map_err(|e| CliError::data(format!("best record: {e}")))?;
    print!("{}", Provenance::of(&set).render());
    Ok(())
}
