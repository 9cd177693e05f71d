//! The centralized arbitrator: registration, readiness barriers, per-step
//! report gathering, reward crediting, action dispatch, end-of-episode policy
//! updates, and termination broadcast.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use dynamix_core::config::BatchSizeLimits;
use dynamix_core::metrics::{build_state_vector, GlobalState, GlobalTracker, StateNormalizers};
use dynamix_core::policy::{
    action_distribution, argmax_action, forward, sample_action, update_policy, ActionDelta,
    PolicyParams, PpoConfig, Trajectory, TrajectoryStep,
};
use dynamix_core::reward::{
    reward_adaptive, reward_sgd, Regime, RewardCoefficients, RewardSample,
};
use dynamix_core::rng::{seeded_rng, Stream};
use dynamix_proto::message::{
    Ack, ActionCommand, EpisodeEnd, MessageBody, ProtocolMessage, StateReport,
};
use dynamix_proto::{encode_frame, Transport, PROTOCOL_VERSION};
use rand_chacha::ChaCha8Rng;

use crate::logging::{now_ms, payload_digest, EpisodeRecord, EventRow, RunLogger, StepRow};
use crate::worker::apply_action;
use crate::{Result, SessionError};

/// How the arbitrator turns the policy distribution into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    /// Inverse-CDF sampling from the policy distribution (training).
    Sample,
    /// Deterministic highest-probability action (inference).
    Argmax,
    /// A fixed action regardless of state (baselines, tests).
    Forced(ActionDelta),
}

#[derive(Debug, Clone)]
pub struct ArbitratorConfig {
    pub session_id: String,
    pub episodes: u64,
    pub steps: u64,
    pub regime: Regime,
    pub coeffs: RewardCoefficients,
    pub normalizers: StateNormalizers,
    pub ppo: PpoConfig,
    pub limits: BatchSizeLimits,
    /// Update the policy at episode boundaries; frozen-policy runs disable it.
    pub learning: bool,
    pub selection: ActionSelection,
    pub timeout: Duration,
    /// Decision-step window for the episode-end smoothed accuracy.
    pub smoothing_window: usize,
    pub run_seed: u64,
}

/// One per-worker decision at a step.
#[derive(Debug, Clone)]
pub struct Decision {
    pub worker_id: u32,
    pub state: Vec<f64>,
    pub action: ActionDelta,
    pub log_prob: f64,
}

/// Per-step aggregates kept for reporting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepStat {
    pub episode: u64,
    pub step: u64,
    pub sim_time: f64,
    pub global_mean_accuracy: f64,
    pub mean_batch: f64,
}

#[derive(Debug)]
pub struct ArbitratorOutcome {
    pub episode_records: Vec<EpisodeRecord>,
    pub trajectories: Vec<Trajectory>,
    pub step_stats: Vec<StepStat>,
    pub policy: PolicyParams,
    pub policy_updates: u64,
    pub mean_decision_latency_s: f64,
    pub max_decision_latency_s: f64,
    pub mean_cycle_sim_time_s: f64,
}

struct PendingRecord {
    state: Vec<f64>,
    action: ActionDelta,
    log_prob: f64,
    step: u64,
}

pub struct Arbitrator {
    cfg: ArbitratorConfig,
    policy: PolicyParams,
    rng: ChaCha8Rng,
    tracker: GlobalTracker,
}

impl Arbitrator {
    pub fn new(cfg: ArbitratorConfig, initial_policy: PolicyParams) -> Self {
        let rng = seeded_rng(cfg.run_seed, Stream::ActionSampling);
        Self {
            cfg,
            policy: initial_policy,
            rng,
            tracker: GlobalTracker::default(),
        }
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    /// Build each worker's state vector from its report plus the shared
    /// global state and pick an action from the shared policy. Reports must
    /// contain exactly one entry per registered worker.
    pub fn decide_actions(
        &mut self,
        reports: &[(u32, StateReport)],
        global: &GlobalState,
        expected_workers: &[u32],
    ) -> Result<Vec<Decision>> {
        let mut seen: Vec<u32> = reports.iter().map(|(w, _)| *w).collect();
        seen.sort_unstable();
        let mut expected = expected_workers.to_vec();
        expected.sort_unstable();
        if seen != expected {
            return Err(SessionError::Protocol(format!(
                "reports for workers {seen:?} do not match registered {expected:?}"
            )));
        }
        let mut decisions = Vec::with_capacity(reports.len());
        for (worker_id, report) in reports {
            let state = build_state_vector(&report.local, global, &self.cfg.normalizers)?;
            let probs = action_distribution(&forward(&self.policy, &state)?);
            let (action, log_prob) = match self.cfg.selection {
                ActionSelection::Sample => sample_action(&probs, &mut self.rng),
                ActionSelection::Argmax => argmax_action(&probs),
                ActionSelection::Forced(a) => (a, probs[a.index()].max(1e-300).ln()),
            };
            decisions.push(Decision {
                worker_id: *worker_id,
                state,
                action,
                log_prob,
            });
        }
        Ok(decisions)
    }

    fn reward_for(&self, step: u64, worker_id: u32, report: &StateReport) -> Result<RewardSample> {
        let t_norm = report.local.t_iter / self.cfg.normalizers.t_iter;
        let sample = match self.cfg.regime {
            Regime::Sgd => reward_sgd(
                step,
                worker_id,
                report.local.a_bar,
                report.local.delta_a,
                t_norm,
                report.batch_size,
                &self.cfg.coeffs,
            )?,
            Regime::Adaptive => reward_adaptive(
                step,
                worker_id,
                report.local.a_bar,
                report.local.delta_a,
                t_norm,
                report.local.sigma_norm,
                report.local.sigma_norm_sq,
                report.batch_size,
                &self.cfg.coeffs,
            )?,
        };
        Ok(sample)
    }

    /// Drive the whole session over identified transports.
    pub fn run(
        mut self,
        transports: Vec<Box<dyn Transport>>,
        logger: &mut RunLogger,
    ) -> Result<ArbitratorOutcome> {
        let mut links = self.handshake(transports, logger)?;
        let worker_ids: Vec<u32> = links.keys().copied().collect();

        let mut episode_records = Vec::new();
        let mut all_trajectories = Vec::new();
        let mut step_stats = Vec::new();
        let mut policy_updates = 0u64;
        let mut latency_total = 0.0f64;
        let mut latency_max = 0.0f64;
        let mut sim_time_total = 0.0f64;

        for episode in 0..self.cfg.episodes {
            self.wait_all_ready(&mut links, episode, logger)?;
            self.tracker.reset();

            let mut pending: BTreeMap<u32, PendingRecord> = BTreeMap::new();
            let mut trajectories: BTreeMap<u32, Trajectory> = worker_ids
                .iter()
                .map(|w| (*w, Trajectory::default()))
                .collect();
            let mut cumulative: BTreeMap<u32, f64> =
                worker_ids.iter().map(|w| (*w, 0.0)).collect();
            let mut batch_series = Vec::with_capacity(self.cfg.steps as usize);
            let mut acc_series = Vec::with_capacity(self.cfg.steps as usize);
            let mut episode_sim_time = 0.0f64;

            for step in 0..self.cfg.steps {
                let reports = self.gather_reports(&mut links, episode, step, logger)?;

                let started = Instant::now();
                let global_acc = reports.iter().map(|(_, r)| r.local.a_bar).sum::<f64>()
                    / reports.len() as f64;
                let global = self.tracker.observe(global_acc, step, self.cfg.steps);

                let mut rewards: BTreeMap<u32, RewardSample> = BTreeMap::new();
                for (wid, report) in &reports {
                    let sample = self.reward_for(step, *wid, report)?;
                    *cumulative.get_mut(wid).expect("registered") += sample.value;
                    if let Some(p) = pending.remove(wid) {
                        trajectories.get_mut(wid).expect("registered").steps.push(
                            TrajectoryStep {
                                state: p.state,
                                action: p.action,
                                log_prob: p.log_prob,
                                reward: sample.value,
                                worker_id: *wid,
                                step: p.step,
                            },
                        );
                    }
                    rewards.insert(*wid, sample);
                }

                let decisions = self.decide_actions(&reports, &global, &worker_ids)?;
                let mut decided: BTreeMap<u32, Decision> = decisions
                    .into_iter()
                    .map(|d| (d.worker_id, d))
                    .collect();

                // dispatch before logging so decision latency excludes file IO
                let mut sent: Vec<(u32, ProtocolMessage)> = Vec::with_capacity(reports.len());
                for (wid, report) in &reports {
                    let d = &decided[wid];
                    let new_batch = apply_action(report.batch_size, d.action, &self.cfg.limits);
                    let msg = ProtocolMessage::new(
                        &self.cfg.session_id,
                        *wid,
                        step,
                        MessageBody::Action(ActionCommand {
                            action: d.action,
                            delta: d.action.value(),
                            new_batch_size: new_batch,
                        }),
                    );
                    links.get_mut(wid).expect("registered").send(&msg)?;
                    sent.push((*wid, msg));
                }
                let elapsed = started.elapsed().as_secs_f64();
                latency_total += elapsed;
                latency_max = latency_max.max(elapsed);

                for (wid, msg) in &sent {
                    self.log_send_event(logger, "ACTION", *wid, step, episode, msg)?;
                }
                for (wid, report) in &reports {
                    let d = decided.remove(wid).expect("decided");
                    logger.log_step(&StepRow {
                        episode,
                        step,
                        worker_id: *wid,
                        batch_size: report.batch_size,
                        sim_time: report.sim_time,
                        state: d.state.clone(),
                        action_index: d.action.index() as u8,
                        action_delta: d.action.value(),
                        log_prob: d.log_prob,
                        reward: rewards[wid].clone(),
                    })?;
                    pending.insert(
                        *wid,
                        PendingRecord {
                            state: d.state,
                            action: d.action,
                            log_prob: d.log_prob,
                            step,
                        },
                    );
                }

                let mean_batch = reports.iter().map(|(_, r)| r.batch_size as f64).sum::<f64>()
                    / reports.len() as f64;
                batch_series.push(mean_batch);
                acc_series.push(global_acc);
                episode_sim_time = reports
                    .iter()
                    .map(|(_, r)| r.sim_time)
                    .fold(episode_sim_time, f64::max);
                step_stats.push(StepStat {
                    episode,
                    step,
                    sim_time: episode_sim_time,
                    global_mean_accuracy: global_acc,
                    mean_batch,
                });
            }

            // the episode's last action never sees a following window
            for (wid, p) in std::mem::take(&mut pending) {
                trajectories
                    .get_mut(&wid)
                    .expect("registered")
                    .steps
                    .push(TrajectoryStep {
                        state: p.state,
                        action: p.action,
                        log_prob: p.log_prob,
                        reward: 0.0,
                        worker_id: wid,
                        step: p.step,
                    });
            }

            let episode_trajectories: Vec<Trajectory> =
                trajectories.into_values().collect();
            if self.cfg.learning {
                // exploration anneals over the run
                let mut ppo = self.cfg.ppo;
                ppo.entropy_weight *= ppo.entropy_decay.powi(episode as i32);
                self.policy = update_policy(
                    &self.policy,
                    &episode_trajectories,
                    &self.cfg.coeffs,
                    &ppo,
                )?;
                policy_updates += 1;
            }

            let record = self.episode_record(
                episode,
                &cumulative,
                &batch_series,
                &acc_series,
                episode_sim_time,
            );
            logger.log_episode(&record)?;
            episode_records.push(record);
            sim_time_total += episode_sim_time;
            all_trajectories.extend(episode_trajectories);

            let end = EpisodeEnd {
                episode,
                policy_version: self.policy.version(),
            };
            for (wid, link) in links.iter_mut() {
                let msg = ProtocolMessage::new(
                    &self.cfg.session_id,
                    *wid,
                    self.cfg.steps,
                    MessageBody::EpisodeEnd(end.clone()),
                );
                link.send(&msg)?;
                self.log_send_event(logger, "EPISODE_END", *wid, self.cfg.steps, episode, &msg)?;
            }
        }

        self.wait_all_ready(&mut links, self.cfg.episodes, logger)?;
        for (wid, link) in links.iter_mut() {
            let msg = ProtocolMessage::new(
                &self.cfg.session_id,
                *wid,
                0,
                MessageBody::Terminate,
            );
            link.send(&msg)?;
            self.log_send_event(logger, "TERMINATE", *wid, 0, self.cfg.episodes, &msg)?;
        }

        let total_steps = (self.cfg.episodes * self.cfg.steps) as f64;
        Ok(ArbitratorOutcome {
            episode_records,
            trajectories: all_trajectories,
            step_stats,
            policy: self.policy,
            policy_updates,
            mean_decision_latency_s: latency_total / total_steps,
            max_decision_latency_s: latency_max,
            mean_cycle_sim_time_s: sim_time_total / total_steps,
        })
    }

    fn episode_record(
        &self,
        episode: u64,
        cumulative: &BTreeMap<u32, f64>,
        batch_series: &[f64],
        acc_series: &[f64],
        sim_wall_time_s: f64,
    ) -> EpisodeRecord {
        let per_worker: Vec<(u32, f64)> = cumulative.iter().map(|(w, r)| (*w, *r)).collect();
        let mut values: Vec<f64> = per_worker.iter().map(|(_, r)| *r).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let median = if values.len() % 2 == 1 {
            values[values.len() / 2]
        } else {
            (values[values.len() / 2 - 1] + values[values.len() / 2]) / 2.0
        };
        let tail = acc_series.len().min(self.cfg.smoothing_window.max(1));
        let final_accuracy =
            acc_series[acc_series.len() - tail..].iter().sum::<f64>() / tail as f64;
        let (quartile_batch_mean, quartile_batch_std) = quartile_stats(batch_series);
        EpisodeRecord {
            episode,
            policy_version: self.policy.version(),
            per_worker_cumulative_reward: per_worker,
            mean_cumulative_reward: mean,
            median_cumulative_reward: median,
            sim_wall_time_s,
            final_accuracy,
            quartile_batch_mean,
            quartile_batch_std,
        }
    }

    fn handshake(
        &mut self,
        transports: Vec<Box<dyn Transport>>,
        logger: &mut RunLogger,
    ) -> Result<BTreeMap<u32, Box<dyn Transport>>> {
        let mut links: BTreeMap<u32, Box<dyn Transport>> = BTreeMap::new();
        for mut t in transports {
            let msg = t.recv_timeout(self.cfg.timeout)?;
            self.log_recv_event(logger, &msg, 0)?;
            let hello = match &msg.body {
                MessageBody::Hello(h) => h.clone(),
                other => {
                    return Err(SessionError::Protocol(format!(
                        "expected HELLO, got {}",
                        other.kind_name()
                    )))
                }
            };
            let reject = |t: &mut Box<dyn Transport>, detail: String| -> SessionError {
                let ack = ProtocolMessage::new(
                    &self.cfg.session_id,
                    msg.worker_id,
                    0,
                    MessageBody::Ack(Ack {
                        ok: false,
                        detail: Some(detail.clone()),
                    }),
                );
                let _ = t.send(&ack);
                SessionError::Protocol(detail)
            };
            if msg.version != PROTOCOL_VERSION {
                return Err(reject(
                    &mut t,
                    format!(
                        "protocol version {} unsupported (arbitrator speaks {PROTOCOL_VERSION})",
                        msg.version
                    ),
                ));
            }
            if msg.session_id != self.cfg.session_id {
                return Err(reject(
                    &mut t,
                    format!("unknown session id {:?}", msg.session_id),
                ));
            }
            if hello.episodes != self.cfg.episodes || hello.steps_per_episode != self.cfg.steps {
                return Err(reject(
                    &mut t,
                    format!(
                        "schedule mismatch: worker expects {}x{}, session runs {}x{}",
                        hello.episodes, hello.steps_per_episode, self.cfg.episodes, self.cfg.steps
                    ),
                ));
            }
            if links.contains_key(&msg.worker_id) {
                return Err(reject(&mut t, format!("duplicate worker id {}", msg.worker_id)));
            }
            let ack = ProtocolMessage::new(
                &self.cfg.session_id,
                msg.worker_id,
                0,
                MessageBody::Ack(Ack {
                    ok: true,
                    detail: None,
                }),
            );
            t.send(&ack)?;
            self.log_send_event(logger, "ACK", msg.worker_id, 0, 0, &ack)?;
            links.insert(msg.worker_id, t);
        }
        Ok(links)
    }

    fn wait_all_ready(
        &mut self,
        links: &mut BTreeMap<u32, Box<dyn Transport>>,
        episode: u64,
        logger: &mut RunLogger,
    ) -> Result<()> {
        for (wid, link) in links.iter_mut() {
            let msg = link
                .recv_timeout(self.cfg.timeout)
                .map_err(|e| SessionError::WorkerStalled {
                    worker_id: *wid,
                    episode,
                    step: 0,
                    cause: format!("waiting for READY: {e}"),
                })?;
            self.log_recv_event(logger, &msg, episode)?;
            match msg.body {
                MessageBody::Ready if msg.worker_id == *wid => {}
                ref other => {
                    return Err(SessionError::Protocol(format!(
                        "expected READY from worker {wid}, got {} from {}",
                        other.kind_name(),
                        msg.worker_id
                    )))
                }
            }
        }
        Ok(())
    }

    fn gather_reports(
        &mut self,
        links: &mut BTreeMap<u32, Box<dyn Transport>>,
        episode: u64,
        step: u64,
        logger: &mut RunLogger,
    ) -> Result<Vec<(u32, StateReport)>> {
        let mut reports = Vec::with_capacity(links.len());
        for (wid, link) in links.iter_mut() {
            let msg = link
                .recv_timeout(self.cfg.timeout)
                .map_err(|e| SessionError::WorkerStalled {
                    worker_id: *wid,
                    episode,
                    step,
                    cause: format!("waiting for STATE_REPORT: {e}"),
                })?;
            self.log_recv_event(logger, &msg, episode)?;
            match msg.body {
                MessageBody::StateReport(report) => {
                    if msg.step != step || msg.worker_id != *wid || report.episode != episode {
                        return Err(SessionError::Protocol(format!(
                            "report routing mismatch: worker {} step {} episode {} (expected {wid}/{step}/{episode})",
                            msg.worker_id, msg.step, report.episode
                        )));
                    }
                    reports.push((*wid, *report));
                }
                other => {
                    return Err(SessionError::Protocol(format!(
                        "expected STATE_REPORT from worker {wid} at step {step}, got {}",
                        other.kind_name()
                    )))
                }
            }
        }
        Ok(reports)
    }

    fn log_recv_event(
        &self,
        logger: &mut RunLogger,
        msg: &ProtocolMessage,
        episode: u64,
    ) -> Result<()> {
        let frame = encode_frame(msg).map_err(SessionError::Proto)?;
        logger.log_event(&EventRow {
            ts_ms: now_ms(),
            direction: "recv",
            kind: msg.body.kind_name(),
            worker_id: msg.worker_id,
            step: msg.step,
            episode,
            digest: payload_digest(&frame[4..]),
        })
    }

    fn log_send_event(
        &self,
        logger: &mut RunLogger,
        kind: &'static str,
        worker_id: u32,
        step: u64,
        episode: u64,
        msg: &ProtocolMessage,
    ) -> Result<()> {
        let frame = encode_frame(msg).map_err(SessionError::Proto)?;
        logger.log_event(&EventRow {
            ts_ms: now_ms(),
            direction: "send",
            kind,
            worker_id,
            step,
            episode,
            digest: payload_digest(&frame[4..]),
        })
    }
}

/// Mean and population std of four contiguous chunks of the series.
fn quartile_stats(series: &[f64]) -> ([f64; 4], [f64; 4]) {
    let mut means = [0.0; 4];
    let mut stds = [0.0; 4];
    let n = series.len();
    for q in 0..4 {
        let lo = n * q / 4;
        let hi = n * (q + 1) / 4;
        let chunk = &series[lo..hi];
        if chunk.is_empty() {
            continue;
        }
        let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
        let var = chunk.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / chunk.len() as f64;
        means[q] = m;
        stds[q] = var.sqrt();
    }
    (means, stds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_split_contiguously() {
        let series: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (means, _) = quartile_stats(&series);
        assert_eq!(means, [0.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn quartiles_handle_uneven_lengths() {
        let series: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let (means, stds) = quartile_stats(&series);
        assert!(means[0] < means[3]);
        assert!(stds.iter().all(|s| s.is_finite()));
    }
}
