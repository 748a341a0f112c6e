use std::fs;
use std::path::{Path, PathBuf};

use featforge::memory::{load_jsonl, pool_from_records};
use featforge::rl::{
    advantages, collect, logged_decision_accuracy, ppo_update, OfflineSample, PolicyNet, PpoConfig,
    TrainingReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{CliError, CliResult, TrainArgs};

pub const MIN_SAMPLES: usize = 100;
pub const SELF_TEST_ACCURACY: f64 = 0.9;

#[derive(Debug, Serialize)]
struct Report<'a> {
    traces: Vec<String>,
    training: &'a TrainingReport,
    seed: u64,
    logged_accuracy: f64,
}

fn trace_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| CliError::data(format!("{}: {e}", input.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(CliError::data(format!(
                "{}: no such trace file or directory",
                input.display()
            )));
        }
    }
    Ok(files)
}

fn load_samples(files: &[PathBuf]) -> CliResult<Vec<OfflineSample>> {
    let mut samples = Vec::new();
    for path in files {
        let records =
            load_jsonl(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let pool = pool_from_records(records, Default::default())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        samples.extend(collect(&pool));
    }
    Ok(samples)
}

fn report_path(policy: &Path) -> PathBuf {
    let mut name = policy.file_stem().unwrap_or_default().to_os_string();
    name.push(".report.json");
    policy.with_file_name(name)
}

pub fn cmd_train_router(args: &TrainArgs) -> CliResult<()> {
    let files = trace_files(&args.traces)?;
    let samples = load_samples(&files)?;
    if samples.len() < MIN_SAMPLES {
        return Err(CliError::config(format!(
            "{} routed samples collected, at least {MIN_SAMPLES} required",
            samples.len()
        )));
    }
    let mut config = PpoConfig::default();
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    config.validate().map_err(CliError::config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (policy, training) = ppo_update(&PolicyNet::new(args.seed), &samples, &config, &mut rng)
        .map_err(CliError::internal)?;
    let adv = advantages(&samples).map_err(CliError::internal)?;
    let accuracy = logged_decision_accuracy(&policy, &samples, &adv);

    policy
        .save(&args.out)
        .map_err(|e| CliError::internal(format!("{}: {e}", args.out.display())))?;
    let report = Report {
        traces: files.iter().map(|p| p.display().to_string()).collect(),
        training: &training,
        seed: args.seed,
        logged_accuracy: accuracy,
    };
    let report_file = report_path(&args.out);
    let json = serde_json::to_string_pretty(&report).map_err(CliError::internal)?;
    fs::write(&report_file, json)
        .map_err(|e| CliError::internal(format!("{}: {e}", report_file.display())))?;

    println!(
        "trained on {} samples from {} trace(s): {} epoch(s){}",
        samples.len(),
        files.len(),
        training.epochs_run,
        if training.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    println!("logged-decision accuracy {accuracy:.3}");
    println!(
        "policy {}, report {}",
        args.out.display(),
        report_file.display()
    );
    if args.self_test {
        if accuracy < SELF_TEST_ACCURACY {
            return Err(CliError::internal(format!(
                "self-test failed: accuracy {accuracy:.3} below {SELF_TEST_ACCURACY}"
            )));
        }
        println!("self-test passed");
    }
    Ok(())
}
