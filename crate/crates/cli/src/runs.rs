//! The train / infer / baseline run drivers and the reproducibility snapshot
//! written into every run directory.

use std::path::{Path, PathBuf};

use dynamix_core::checkpoint;
use dynamix_core::config::RunDocument;
use dynamix_core::policy::PolicyParams;
use dynamix_session::{run_session, SessionConfig, SessionOutcome, TransportKind};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Cli, CliError, CliResult, TransportArg};

pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const CONFIG_SNAPSHOT: &str = "config.json";

/// Everything needed to re-run this directory bit-identically.
#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    mode: &'a str,
    run_seed: u64,
    all_seeds: &'a [u64],
    transport: &'a str,
    /// sha-256 over the resolved document JSON.
    config_hash: String,
    build: &'a str,
    document: &'a RunDocument,
}

fn resolve_doc(cli: &Cli) -> CliResult<RunDocument> {
    let mut doc = match &cli.config {
        Some(path) => RunDocument::load(path)?,
        None => RunDocument::default_desk(),
    };
    if let Some(e) = cli.episodes {
        doc.schedule.episodes = e;
    }
    if let Some(s) = cli.steps {
        doc.schedule.steps = Some(s);
    }
    doc.validate()?;
    Ok(doc)
}

fn resolve_seeds(cli: &Cli, doc: &RunDocument) -> Vec<u64> {
    if cli.seeds.is_empty() {
        vec![doc.seed]
    } else {
        cli.seeds.clone()
    }
}

fn out_dir(cli: &Cli) -> CliResult<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| CliError::Config("--out DIR is required for this mode".into()))
}

fn transport(cli: &Cli) -> TransportKind {
    match cli.transport {
        TransportArg::Inproc => TransportKind::InProc,
        TransportArg::Socket => TransportKind::Tcp {
            listen: cli.listen.clone(),
        },
    }
}

pub fn config_hash(doc: &RunDocument) -> String {
    let json = serde_json::to_vec(doc).expect("document serializes");
    let hash = Sha256::digest(&json);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_snapshot(
    dir: &Path,
    mode: &str,
    doc: &RunDocument,
    run_seed: u64,
    all_seeds: &[u64],
    transport: &str,
) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let snapshot = ConfigSnapshot {
        mode,
        run_seed,
        all_seeds,
        transport,
        config_hash: config_hash(doc),
        build: env!("CARGO_PKG_VERSION"),
        document: doc,
    };
    let file = std::fs::File::create(dir.join(CONFIG_SNAPSHOT))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &snapshot)
        .map_err(|e| CliError::Runtime(format!("snapshot: {e}")))?;
    Ok(())
}

fn run_one(cfg: SessionConfig) -> CliResult<SessionOutcome> {
    run_session(cfg).map_err(CliError::from)
}

fn print_run_line(label: &str, dir: &Path, outcome: &SessionOutcome) {
    let last = outcome.episodes.last();
    println!(
        "{label}: {} episodes, final accuracy {:.4}, mean reward {:.3}, policy v{} -> {}",
        outcome.episodes.len(),
        last.map(|r| r.final_accuracy).unwrap_or(f64::NAN),
        last.map(|r| r.mean_cumulative_reward).unwrap_or(f64::NAN),
        outcome.summary.final_policy_version,
        dir.display()
    );
}

pub fn cmd_train(cli: &Cli) -> CliResult<()> {
    let doc = resolve_doc(cli)?;
    let seeds = resolve_seeds(cli, &doc);
    let out = out_dir(cli)?;
    let transport_kind = transport(cli);
    let transport_name = if matches!(transport_kind, TransportKind::InProc) {
        "inproc"
    } else {
        "socket"
    };

    for &seed in &seeds {
        let dir = out.join(format!("seed_{seed}"));
        write_snapshot(&dir, "train", &doc, seed, &seeds, transport_name)?;
        let mut cfg = SessionConfig::train(doc.clone(), seed, &format!("train-{seed}"));
        cfg.transport = transport_kind.clone();
        cfg.out_dir = Some(dir.clone());
        let outcome = run_one(cfg)?;
        checkpoint::save(&outcome.final_policy, &dir.join(CHECKPOINT_FILE))
            .map_err(|e| CliError::Runtime(format!("checkpoint: {e}")))?;
        print_run_line(&format!("train seed {seed}"), &dir, &outcome);
    }
    Ok(())
}

pub fn cmd_infer(cli: &Cli) -> CliResult<()> {
    let doc = resolve_doc(cli)?;
    let seeds = resolve_seeds(cli, &doc);
    let out = out_dir(cli)?;
    let ckpt_path = cli
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("--checkpoint PATH is required for infer".into()))?;
    let policy = load_checkpoint(&ckpt_path)?;
    let transport_kind = transport(cli);
    let transport_name = if matches!(transport_kind, TransportKind::InProc) {
        "inproc"
    } else {
        "socket"
    };

    for &seed in &seeds {
        let dir = out.join(format!("seed_{seed}"));
        write_snapshot(&dir, "infer", &doc, seed, &seeds, transport_name)?;
        let mut cfg =
            SessionConfig::infer(doc.clone(), seed, &format!("infer-{seed}"), policy.clone());
        cfg.transport = transport_kind.clone();
        cfg.out_dir = Some(dir.clone());
        let outcome = run_one(cfg)?;
        debug_assert_eq!(outcome.summary.policy_updates, 0);
        print_run_line(&format!("infer seed {seed}"), &dir, &outcome);
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> CliResult<PolicyParams> {
    checkpoint::load(path).map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))
}

pub fn cmd_baseline(cli: &Cli) -> CliResult<()> {
    let doc = resolve_doc(cli)?;
    let seeds = resolve_seeds(cli, &doc);
    let out = out_dir(cli)?;
    if cli.batch_sizes.is_empty() {
        return Err(CliError::Config(
            "--batch-size N is required for baseline (repeat for a sweep)".into(),
        ));
    }
    for &b in &cli.batch_sizes {
        if !(doc.limits.min..=doc.limits.max).contains(&b) {
            return Err(CliError::Config(format!(
                "baseline batch size {b} outside [{}, {}]",
                doc.limits.min, doc.limits.max
            )));
        }
    }
    let transport_kind = transport(cli);
    let transport_name = if matches!(transport_kind, TransportKind::InProc) {
        "inproc"
    } else {
        "socket"
    };

    for &batch in &cli.batch_sizes {
        for &seed in &seeds {
            let dir = out.join(format!("batch_{batch}")).join(format!("seed_{seed}"));
            let mut doc_b = doc.clone();
            doc_b.limits.initial = batch;
            write_snapshot(&dir, "baseline", &doc_b, seed, &seeds, transport_name)?;
            let mut cfg = SessionConfig::baseline(
                doc.clone(),
                seed,
                &format!("baseline-{batch}-{seed}"),
                batch,
            )?;
            cfg.transport = transport_kind.clone();
            cfg.out_dir = Some(dir.clone());
            let outcome = run_one(cfg)?;
            print_run_line(&format!("baseline batch {batch} seed {seed}"), &dir, &outcome);
        }
    }
    Ok(())
}
