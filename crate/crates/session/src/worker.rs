//! Worker runtime: drives k simulator iterations per cycle, aggregates the
//! window, reports state, and applies the clamped batch-size adjustments.

use std::sync::Arc;
use std::time::Duration;

use dynamix_core::config::BatchSizeLimits;
use dynamix_core::metrics::{aggregate_window, AggregateWindow};
use dynamix_core::policy::ActionDelta;
use dynamix_proto::message::{Hello, MessageBody, ProtocolMessage, StateReport};
use dynamix_proto::Transport;

use crate::cluster::SharedCluster;
use crate::{Result, SessionError};

/// Batch update rule: x <- max(min(x + a, x_max), x_min). Total on its inputs;
/// repeated applications at a bound stay at the bound.
pub fn apply_action(batch_size: u32, action: ActionDelta, limits: &BatchSizeLimits) -> u32 {
    let next = batch_size as i64 + action.value() as i64;
    next.clamp(limits.min as i64, limits.max as i64) as u32
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub worker_id: u32,
    pub session_id: String,
    pub episodes: u64,
    pub steps_per_episode: u64,
    /// Iterations per decision cycle.
    pub k: usize,
    /// Sliding-window width for the accuracy-gain feature.
    pub gain_window: usize,
    pub limits: BatchSizeLimits,
    pub timeout: Duration,
}

/// One logical worker. All cross-worker coupling flows through the shared
/// simulator barrier and the arbitrator protocol.
pub struct WorkerRuntime<T: Transport> {
    cfg: WorkerConfig,
    transport: T,
    cluster: Arc<SharedCluster>,
    batch_size: u32,
    sim_time: f64,
}

impl<T: Transport> WorkerRuntime<T> {
    pub fn new(cfg: WorkerConfig, transport: T, cluster: Arc<SharedCluster>) -> Self {
        let batch_size = cfg.limits.initial;
        Self {
            cfg,
            transport,
            cluster,
            batch_size,
            sim_time: 0.0,
        }
    }

    fn msg(&self, step: u64, body: MessageBody) -> ProtocolMessage {
        ProtocolMessage::new(&self.cfg.session_id, self.cfg.worker_id, step, body)
    }

    fn recv(&mut self, what: &str, episode: u64, step: u64) -> Result<ProtocolMessage> {
        let msg = self
            .transport
            .recv_timeout(self.cfg.timeout)
            .map_err(|e| SessionError::WorkerStalled {
                worker_id: self.cfg.worker_id,
                episode,
                step,
                cause: format!("waiting for {what}: {e}"),
            })?;
        if msg.session_id != self.cfg.session_id {
            return Err(SessionError::Protocol(format!(
                "session id {} does not match {}",
                msg.session_id, self.cfg.session_id
            )));
        }
        Ok(msg)
    }

    /// Run the full worker side of the session. On error the shared cluster
    /// is poisoned so sibling workers and the arbitrator unblock.
    pub fn run(mut self) -> Result<()> {
        let result = self.run_inner();
        if let Err(e) = &result {
            self.cluster
                .poison(&format!("worker {}: {e}", self.cfg.worker_id));
        }
        result
    }

    fn run_inner(&mut self) -> Result<()> {
        self.transport.send(&self.msg(
            0,
            MessageBody::Hello(Hello {
                episodes: self.cfg.episodes,
                steps_per_episode: self.cfg.steps_per_episode,
            }),
        ))?;
        match self.recv("HELLO ack", 0, 0)?.body {
            MessageBody::Ack(ack) if ack.ok => {}
            MessageBody::Ack(ack) => {
                return Err(SessionError::Protocol(format!(
                    "registration rejected: {}",
                    ack.detail.unwrap_or_default()
                )))
            }
            other => {
                return Err(SessionError::Protocol(format!(
                    "expected ACK after HELLO, got {}",
                    other.kind_name()
                )))
            }
        }

        for episode in 0..self.cfg.episodes {
            self.transport.send(&self.msg(episode, MessageBody::Ready))?;
            for step in 0..self.cfg.steps_per_episode {
                self.run_cycle(episode, step)?;
            }
            match self.recv("EPISODE_END", episode, self.cfg.steps_per_episode)?.body {
                MessageBody::EpisodeEnd(end) if end.episode == episode => {}
                other => {
                    return Err(SessionError::Protocol(format!(
                        "expected EPISODE_END for episode {episode}, got {}",
                        other.kind_name()
                    )))
                }
            }
            self.episode_reset()?;
        }

        // post-reset barrier before shutdown
        self.transport
            .send(&self.msg(self.cfg.episodes, MessageBody::Ready))?;
        match self.recv("TERMINATE", self.cfg.episodes, 0)?.body {
            MessageBody::Terminate => Ok(()),
            other => Err(SessionError::Protocol(format!(
                "expected TERMINATE, got {}",
                other.kind_name()
            ))),
        }
    }

    /// One decision cycle: k iterations at the current batch size, aggregate,
    /// report, apply the returned action.
    fn run_cycle(&mut self, episode: u64, step: u64) -> Result<()> {
        let mut outcomes = Vec::with_capacity(self.cfg.k);
        for _ in 0..self.cfg.k {
            let o = self.cluster.step(self.cfg.worker_id, self.batch_size)?;
            self.sim_time += o.wall_time();
            outcomes.push(o);
        }
        let window = AggregateWindow::new(self.cfg.worker_id, outcomes)?;
        let local = aggregate_window(&window, self.cfg.gain_window)?;
        let report = StateReport {
            local,
            window: window.outcomes().to_vec(),
            batch_size: self.batch_size,
            sim_time: self.sim_time,
            episode,
        };
        self.transport
            .send(&self.msg(step, MessageBody::StateReport(Box::new(report))))?;

        let msg = self.recv("ACTION", episode, step)?;
        match msg.body {
            MessageBody::Action(cmd) => {
                if msg.step != step {
                    return Err(SessionError::Protocol(format!(
                        "ACTION for step {} while at step {step}",
                        msg.step
                    )));
                }
                let next = apply_action(self.batch_size, cmd.action, &self.cfg.limits);
                if next != cmd.new_batch_size {
                    return Err(SessionError::Protocol(format!(
                        "batch echo mismatch: arbitrator says {}, local clamp gives {next}",
                        cmd.new_batch_size
                    )));
                }
                self.batch_size = next;
                Ok(())
            }
            other => Err(SessionError::Protocol(format!(
                "expected ACTION at step {step}, got {}",
                other.kind_name()
            ))),
        }
    }

    /// Back to initial conditions: batch size to x-bar, window/time counters
    /// cleared, simulator rewound at the shared barrier.
    fn episode_reset(&mut self) -> Result<()> {
        self.cluster.reset(self.cfg.worker_id)?;
        self.batch_size = self.cfg.limits.initial;
        self.sim_time = 0.0;
        Ok(())
    }
}
