//! Run artifacts: append-only step/event JSONL logs, the per-episode summary
//! CSV (the plotted quantities), and the end-of-run summary JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dynamix_core::reward::RewardSample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

/// One decision-step record per worker, the replayable source of truth for
/// trajectories: row t carries (state, action, log_prob) of step t and the
/// reward computed from step t's window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: u64,
    pub step: u64,
    pub worker_id: u32,
    /// Batch size the window was produced with (pre-action).
    pub batch_size: u32,
    /// Worker's simulated seconds since episode start, at report time.
    pub sim_time: f64,
    pub state: Vec<f64>,
    pub action_index: u8,
    pub action_delta: i32,
    pub log_prob: f64,
    pub reward: RewardSample,
}

/// Per-episode summary row; mirrors the episodes CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub policy_version: u64,
    /// (worker_id, cumulative reward) sorted by worker id.
    pub per_worker_cumulative_reward: Vec<(u32, f64)>,
    pub mean_cumulative_reward: f64,
    pub median_cumulative_reward: f64,
    pub sim_wall_time_s: f64,
    /// Smoothed global mean accuracy at episode end.
    pub final_accuracy: f64,
    pub quartile_batch_mean: [f64; 4],
    pub quartile_batch_std: [f64; 4],
}

/// Protocol event entry (message kind, wall-clock timestamp, payload digest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventRow {
    pub ts_ms: u64,
    pub direction: &'static str,
    pub kind: &'static str,
    pub worker_id: u32,
    pub step: u64,
    pub episode: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub workers: usize,
    pub episodes: u64,
    pub steps_per_episode: u64,
    pub total_trajectory_records: u64,
    pub policy_updates: u64,
    pub final_policy_version: u64,
    /// Real seconds the arbitrator spent per decision step (reward + policy +
    /// dispatch), averaged over all steps.
    pub mean_decision_latency_s: f64,
    pub max_decision_latency_s: f64,
    /// Mean simulated seconds one k-iteration cycle spans.
    pub mean_cycle_sim_time_s: f64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn payload_digest(json: &[u8]) -> String {
    let hash = Sha256::digest(json);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Writers for one run directory; with no directory the logger only keeps the
/// in-memory episode records (used by library-driven tests).
pub struct RunLogger {
    dir: Option<PathBuf>,
    episodes_csv: Option<BufWriter<File>>,
    steps: Option<BufWriter<File>>,
    events: Option<BufWriter<File>>,
    worker_ids: Vec<u32>,
}

pub const EPISODES_CSV: &str = "episodes.csv";
pub const STEPS_JSONL: &str = "steps.jsonl";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const SUMMARY_JSON: &str = "summary.json";

impl RunLogger {
    pub fn create(dir: Option<&Path>, worker_ids: &[u32]) -> Result<Self> {
        let mut logger = RunLogger {
            dir: dir.map(|d| d.to_path_buf()),
            episodes_csv: None,
            steps: None,
            events: None,
            worker_ids: worker_ids.to_vec(),
        };
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir)?;
            let mut csv = BufWriter::new(File::create(dir.join(EPISODES_CSV))?);
            let mut header = String::from(
                "episode,policy_version,mean_cum_reward,median_cum_reward,sim_wall_time_s,final_accuracy",
            );
            for q in 1..=4 {
                header.push_str(&format!(",q{q}_batch_mean,q{q}_batch_std"));
            }
            for wid in worker_ids {
                header.push_str(&format!(",worker_{wid}_cum_reward"));
            }
            writeln!(csv, "{header}")?;
            logger.episodes_csv = Some(csv);
            logger.steps = Some(BufWriter::new(File::create(dir.join(STEPS_JSONL))?));
            logger.events = Some(BufWriter::new(File::create(dir.join(EVENTS_JSONL))?));
        }
        Ok(logger)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn log_step(&mut self, row: &StepRow) -> Result<()> {
        if let Some(w) = &mut self.steps {
            serde_json::to_writer(&mut *w, row)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn log_event(&mut self, row: &EventRow) -> Result<()> {
        if let Some(w) = &mut self.events {
            serde_json::to_writer(&mut *w, row)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn log_episode(&mut self, rec: &EpisodeRecord) -> Result<()> {
        if let Some(w) = &mut self.episodes_csv {
            let mut line = format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                rec.episode,
                rec.policy_version,
                rec.mean_cumulative_reward,
                rec.median_cumulative_reward,
                rec.sim_wall_time_s,
                rec.final_accuracy,
            );
            for q in 0..4 {
                line.push_str(&format!(
                    ",{:.6},{:.6}",
                    rec.quartile_batch_mean[q], rec.quartile_batch_std[q]
                ));
            }
            for wid in &self.worker_ids {
                let r = rec
                    .per_worker_cumulative_reward
                    .iter()
                    .find(|(w, _)| w == wid)
                    .map(|(_, r)| *r)
                    .unwrap_or(f64::NAN);
                line.push_str(&format!(",{r:.6}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Flush everything and write the summary JSON.
    pub fn finalize(&mut self, summary: &SessionSummary) -> Result<()> {
        if let Some(w) = &mut self.episodes_csv {
            w.flush()?;
        }
        if let Some(w) = &mut self.steps {
            w.flush()?;
        }
        if let Some(w) = &mut self.events {
            w.flush()?;
        }
        if let Some(dir) = &self.dir {
            let file = File::create(dir.join(SUMMARY_JSON))?;
            serde_json::to_writer_pretty(BufWriter::new(file), summary)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynamix_core::reward::{Regime, RewardComponents};

    fn record(ep: u64) -> EpisodeRecord {
        EpisodeRecord {
            episode: ep,
            policy_version: ep + 1,
            per_worker_cumulative_reward: vec![(0, 1.5), (1, 2.5)],
            mean_cumulative_reward: 2.0,
            median_cumulative_reward: 2.0,
            sim_wall_time_s: 123.4,
            final_accuracy: 0.77,
            quartile_batch_mean: [400.0, 300.0, 200.0, 100.0],
            quartile_batch_std: [10.0, 9.0, 8.0, 7.0],
        }
    }

    #[test]
    fn csv_layout_is_stable() {
        let dir = std::env::temp_dir().join(format!("dynamix-log-{}", std::process::id()));
        let mut logger = RunLogger::create(Some(&dir), &[0, 1]).unwrap();
        logger.log_episode(&record(0)).unwrap();
        logger.log_episode(&record(1)).unwrap();
        logger
            .finalize(&SessionSummary {
                session_id: "t".into(),
                workers: 2,
                episodes: 2,
                steps_per_episode: 4,
                total_trajectory_records: 16,
                policy_updates: 2,
                final_policy_version: 2,
                mean_decision_latency_s: 0.0001,
                max_decision_latency_s: 0.0002,
                mean_cycle_sim_time_s: 2.0,
            })
            .unwrap();

        let text = std::fs::read_to_string(dir.join(EPISODES_CSV)).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("episode,policy_version,mean_cum_reward"));
        assert!(header.ends_with("worker_0_cum_reward,worker_1_cum_reward"));
        assert_eq!(lines.count(), 2);
        assert!(dir.join(SUMMARY_JSON).exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn step_rows_round_trip_through_jsonl() {
        let dir = std::env::temp_dir().join(format!("dynamix-steps-{}", std::process::id()));
        let mut logger = RunLogger::create(Some(&dir), &[0]).unwrap();
        let row = StepRow {
            episode: 0,
            step: 3,
            worker_id: 0,
            batch_size: 256,
            sim_time: 4.5,
            state: vec![0.1; 14],
            action_index: 4,
            action_delta: 100,
            log_prob: -1.2,
            reward: RewardSample {
                step_index: 3,
                worker_id: 0,
                regime: Regime::Sgd,
                value: 0.5,
                components: RewardComponents {
                    accuracy: 0.6,
                    gain: 0.2,
                    time: -0.2,
                    regularization: -0.1,
                    normalization: 0.0,
                },
            },
        };
        logger.log_step(&row).unwrap();
        drop(logger.steps.take());
        let text = std::fs::read_to_string(dir.join(STEPS_JSONL)).unwrap();
        let back: StepRow = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, row);
        std::fs::remove_dir_all(&dir).ok();
    }
}
