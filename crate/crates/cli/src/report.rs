//! Aggregate run artifacts into summary tables and plot-ready CSVs. Inputs
//! are never mutated; everything lands under <dir>/report/.

use std::path::{Path, PathBuf};

use dynamix_session::arbitrator::StepStat;
use dynamix_session::logging::StepRow;
use dynamix_session::analysis;

use crate::{Cli, CliError, CliResult};

#[derive(Debug, Clone)]
struct EpisodeRow {
    episode: u64,
    policy_version: u64,
    median_cum_reward: f64,
    final_accuracy: f64,
    q_batch_mean: [f64; 4],
}

#[derive(Debug)]
struct RunAnalysis {
    label: String,
    episodes: usize,
    versions_monotonic: bool,
    final_accuracy: f64,
    median_reward_first5: f64,
    median_reward_last5: f64,
    time_to_threshold_s: Option<f64>,
    first_quartile_batch: f64,
    last_quartile_batch: f64,
}

fn parse_episodes_csv(path: &Path) -> CliResult<Vec<EpisodeRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 14 {
            return Err(CliError::Runtime(format!(
                "{}: row {i} has {} columns, expected >= 14",
                path.display(),
                cols.len()
            )));
        }
        let f = |j: usize| -> CliResult<f64> {
            cols[j]
                .parse()
                .map_err(|e| CliError::Runtime(format!("{}: row {i} col {j}: {e}", path.display())))
        };
        rows.push(EpisodeRow {
            episode: f(0)? as u64,
            policy_version: f(1)? as u64,
            median_cum_reward: f(3)?,
            final_accuracy: f(5)?,
            q_batch_mean: [f(6)?, f(8)?, f(10)?, f(12)?],
        });
    }
    Ok(rows)
}

fn parse_step_stats(path: &Path) -> CliResult<Vec<StepStat>> {
    let text = std::fs::read_to_string(path)?;
    let mut per_step: std::collections::BTreeMap<(u64, u64), (f64, Vec<f64>, Vec<f64>)> =
        std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: StepRow =
            serde_json::from_str(line).map_err(|e| CliError::Runtime(format!("steps.jsonl: {e}")))?;
        let entry = per_step
            .entry((row.episode, row.step))
            .or_insert((0.0, Vec::new(), Vec::new()));
        entry.0 = entry.0.max(row.sim_time);
        entry.1.push(row.state[4]); // a_bar feature is raw accuracy
        entry.2.push(row.batch_size as f64);
    }
    Ok(per_step
        .into_iter()
        .map(|((episode, step), (sim_time, accs, batches))| StepStat {
            episode,
            step,
            sim_time,
            global_mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            mean_batch: batches.iter().sum::<f64>() / batches.len() as f64,
        })
        .collect())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    if xs.is_empty() {
        return f64::NAN;
    }
    if xs.len() % 2 == 1 {
        xs[xs.len() / 2]
    } else {
        (xs[xs.len() / 2 - 1] + xs[xs.len() / 2]) / 2.0
    }
}

fn analyze_run(dir: &Path, label: &str, threshold: f64, window: usize) -> CliResult<RunAnalysis> {
    let episodes = parse_episodes_csv(&dir.join("episodes.csv"))?;
    if episodes.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: episodes.csv has no data rows",
            dir.display()
        )));
    }
    let stats = parse_step_stats(&dir.join("steps.jsonl"))?;
    let last = episodes.last().expect("non-empty");
    let versions_monotonic = episodes.windows(2).all(|w| w[1].policy_version >= w[0].policy_version);
    let head: Vec<f64> = episodes
        .iter()
        .take(5)
        .map(|e| e.median_cum_reward)
        .collect();
    let tail: Vec<f64> = episodes
        .iter()
        .rev()
        .take(5)
        .map(|e| e.median_cum_reward)
        .collect();
    Ok(RunAnalysis {
        label: label.to_string(),
        episodes: episodes.len(),
        versions_monotonic,
        final_accuracy: last.final_accuracy,
        median_reward_first5: median(head),
        median_reward_last5: median(tail),
        time_to_threshold_s: analysis::time_to_threshold(&stats, last.episode, threshold, window),
        first_quartile_batch: last.q_batch_mean[0],
        last_quartile_batch: last.q_batch_mean[3],
    })
}

fn is_run_dir(dir: &Path) -> bool {
    dir.join("episodes.csv").exists()
}

/// A run dir itself, or any nested `*/episodes.csv` up to two levels deep
/// (seed_*/ and batch_*/seed_*/ layouts).
fn discover_runs(root: &Path) -> Vec<(String, PathBuf)> {
    let mut runs = Vec::new();
    if is_run_dir(root) {
        runs.push((".".to_string(), root.to_path_buf()));
        return runs;
    }
    let mut stack = vec![(String::new(), root.to_path_buf(), 0usize)];
    while let Some((prefix, dir, depth)) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for child in children {
            let name = child
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            let label = if prefix.is_empty() {
                name.clone()
            } else {
                format!("{prefix}/{name}")
            };
            if is_run_dir(&child) {
                runs.push((label, child));
            } else if depth < 1 {
                stack.push((label, child, depth + 1));
            }
        }
    }
    runs.sort_by(|a, b| a.0.cmp(&b.0));
    runs
}

pub fn cmd_report(cli: &Cli) -> CliResult<()> {
    let root = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out DIR pointing at run artifacts is required".into()))?;
    if !root.exists() {
        return Err(CliError::Config(format!(
            "missing artifacts: {} does not exist",
            root.display()
        )));
    }
    let runs = discover_runs(&root);
    if runs.is_empty() {
        return Err(CliError::Config(format!(
            "missing artifacts: no episodes.csv under {}",
            root.display()
        )));
    }
    // any run missing its step log is reported as an absent file
    let mut absent = Vec::new();
    for (_, dir) in &runs {
        for file in ["steps.jsonl", "episodes.csv"] {
            let p = dir.join(file);
            if !p.exists() {
                absent.push(p.display().to_string());
            }
        }
    }
    if !absent.is_empty() {
        return Err(CliError::Config(format!(
            "missing artifacts: {}",
            absent.join(", ")
        )));
    }

    // threshold settings come from the first run's config snapshot when present
    let (threshold, window) = runs
        .first()
        .and_then(|(_, dir)| std::fs::read_to_string(dir.join("config.json")).ok())
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| {
            let r = v.get("document")?.get("report")?;
            Some((
                r.get("accuracy_threshold")?.as_f64()?,
                r.get("smoothing_window")?.as_u64()? as usize,
            ))
        })
        .unwrap_or((0.80, 5));

    let mut analyses = Vec::new();
    for (label, dir) in &runs {
        analyses.push(analyze_run(dir, label, threshold, window)?);
    }

    let report_dir = root.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut summary = String::from(
        "run,episodes,versions_monotonic,final_accuracy,median_reward_first5,median_reward_last5,time_to_threshold_s,first_quartile_batch,last_quartile_batch\n",
    );
    for a in &analyses {
        summary.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{},{:.3},{:.3}\n",
            a.label,
            a.episodes,
            a.versions_monotonic,
            a.final_accuracy,
            a.median_reward_first5,
            a.median_reward_last5,
            a.time_to_threshold_s
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "never".into()),
            a.first_quartile_batch,
            a.last_quartile_batch,
        ));
    }
    std::fs::write(report_dir.join("summary.csv"), &summary)?;

    // plot-ready accuracy-over-time series for each run's last episode
    for (label, dir) in &runs {
        let stats = parse_step_stats(&dir.join("steps.jsonl"))?;
        let Some(last_episode) = stats.iter().map(|s| s.episode).max() else {
            continue;
        };
        let series = analysis::smoothed_accuracy(&stats, last_episode, window);
        let mut csv = String::from("sim_time_s,smoothed_accuracy\n");
        for (t, acc) in series {
            csv.push_str(&format!("{t:.6},{acc:.6}\n"));
        }
        let safe = label.replace(['/', '.'], "_");
        std::fs::write(report_dir.join(format!("accuracy_{safe}.csv")), csv)?;
    }

    println!(
        "{:<24} {:>4} {:>9} {:>9} {:>9} {:>12} {:>8} {:>8}",
        "run", "eps", "final_acc", "rew_1-5", "rew_L5", "t_thresh", "q1_batch", "q4_batch"
    );
    for a in &analyses {
        println!(
            "{:<24} {:>4} {:>9.4} {:>9.3} {:>9.3} {:>12} {:>8.1} {:>8.1}",
            a.label,
            a.episodes,
            a.final_accuracy,
            a.median_reward_first5,
            a.median_reward_last5,
            a.time_to_threshold_s
                .map(|t| format!("{t:.1}s"))
                .unwrap_or_else(|| "never".into()),
            a.first_quartile_batch,
            a.last_quartile_batch,
        );
    }
    println!("report written to {}", report_dir.display());
    Ok(())
}
