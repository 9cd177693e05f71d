//! End-to-end session wiring: builds the shared simulator, spawns one thread
//! per worker, connects transports (in-process channels or loopback TCP), and
//! runs the arbitrator's decision loop on the calling thread.

use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use dynamix_core::config::RunDocument;
use dynamix_core::policy::PolicyParams;
use dynamix_core::reward::Regime;
use dynamix_core::rng::{derive_seed, Stream};
use dynamix_core::CoreError;
use dynamix_proto::{inproc_pair, TcpTransport, Transport};

use crate::arbitrator::{
    ActionSelection, Arbitrator, ArbitratorConfig, ArbitratorOutcome, StepStat,
};
use crate::cluster::SharedCluster;
use crate::logging::{EpisodeRecord, RunLogger, SessionSummary};
use crate::worker::{WorkerConfig, WorkerRuntime};
use crate::{Result, SessionError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    /// Loopback TCP: the arbitrator listens, worker threads connect.
    Tcp { listen: String },
}

#[derive(Clone)]
pub struct SessionConfig {
    pub session_id: String,
    pub doc: RunDocument,
    pub run_seed: u64,
    pub learning: bool,
    pub selection: ActionSelection,
    /// Start from these parameters instead of a fresh initialization.
    pub initial_policy: Option<PolicyParams>,
    pub transport: TransportKind,
    pub timeout: Duration,
    /// Run directory for artifacts; None keeps everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl SessionConfig {
    /// A training session over the document's schedule.
    pub fn train(doc: RunDocument, run_seed: u64, session_id: &str) -> Self {
        Self {
            session_id: session_id.to_string(),
            doc,
            run_seed,
            learning: true,
            selection: ActionSelection::Sample,
            initial_policy: None,
            transport: TransportKind::InProc,
            timeout: Duration::from_secs(30),
            out_dir: None,
        }
    }

    /// A frozen-policy session (no updates, deterministic action choice).
    pub fn infer(
        doc: RunDocument,
        run_seed: u64,
        session_id: &str,
        policy: PolicyParams,
    ) -> Self {
        Self {
            learning: false,
            selection: ActionSelection::Argmax,
            initial_policy: Some(policy),
            ..Self::train(doc, run_seed, session_id)
        }
    }

    /// A fixed-batch baseline: the protocol runs, but every decision is a
    /// forced no-op on a cluster whose initial batch size is `batch_size`.
    pub fn baseline(
        mut doc: RunDocument,
        run_seed: u64,
        session_id: &str,
        batch_size: u32,
    ) -> Result<Self> {
        if !(doc.limits.min..=doc.limits.max).contains(&batch_size) {
            return Err(SessionError::Core(CoreError::Config(format!(
                "baseline batch size {batch_size} outside [{}, {}]",
                doc.limits.min, doc.limits.max
            ))));
        }
        doc.limits.initial = batch_size;
        Ok(Self {
            learning: false,
            selection: ActionSelection::Forced(
                dynamix_core::policy::ActionDelta::no_op(),
            ),
            ..Self::train(doc, run_seed, session_id)
        })
    }
}

pub struct SessionOutcome {
    pub summary: SessionSummary,
    pub episodes: Vec<EpisodeRecord>,
    pub trajectories: Vec<dynamix_core::policy::Trajectory>,
    pub step_stats: Vec<StepStat>,
    pub final_policy: PolicyParams,
}

/// Run a full session to completion. Worker threads are joined before
/// returning; the first arbitrator-side error wins, then worker errors in
/// worker-id order.
pub fn run_session(cfg: SessionConfig) -> Result<SessionOutcome> {
    cfg.doc.validate()?;
    let episodes = cfg.doc.schedule.episodes;
    let steps = cfg.doc.schedule.steps();
    let regime: Regime = cfg.doc.schedule.preset.regime();
    let worker_ids: Vec<u32> = cfg.doc.workers.iter().map(|w| w.worker_id).collect();

    let sim = cfg.doc.build_sim(cfg.run_seed)?;
    let shared = Arc::new(SharedCluster::new(sim));

    let initial_policy = match &cfg.initial_policy {
        Some(p) => {
            if p.input_dim() != dynamix_core::metrics::STATE_DIM {
                return Err(SessionError::Core(CoreError::Contract(format!(
                    "checkpoint input dim {} does not match state dim {}",
                    p.input_dim(),
                    dynamix_core::metrics::STATE_DIM
                ))));
            }
            p.clone()
        }
        None => PolicyParams::init_with_prior(
            cfg.doc.ppo.hidden_dim,
            derive_seed(cfg.run_seed, Stream::PolicyInit),
            cfg.doc.ppo.exploration_prior,
        ),
    };

    let worker_cfg = |wid: u32| WorkerConfig {
        worker_id: wid,
        session_id: cfg.session_id.clone(),
        episodes,
        steps_per_episode: steps,
        k: cfg.doc.k,
        gain_window: cfg.doc.gain_window(),
        limits: cfg.doc.limits,
        timeout: cfg.timeout,
    };

    // wire transports and spawn workers
    let mut arb_transports: Vec<Box<dyn Transport>> = Vec::new();
    let mut worker_handles = Vec::new();
    match &cfg.transport {
        TransportKind::InProc => {
            for &wid in &worker_ids {
                let (worker_end, arb_end) = inproc_pair();
                arb_transports.push(Box::new(arb_end));
                let runtime = WorkerRuntime::new(worker_cfg(wid), worker_end, shared.clone());
                worker_handles.push((
                    wid,
                    std::thread::spawn(move || runtime.run()),
                ));
            }
        }
        TransportKind::Tcp { listen } => {
            let listener = TcpListener::bind(listen)?;
            let addr = listener.local_addr()?;
            for &wid in &worker_ids {
                let wcfg = worker_cfg(wid);
                let cluster = shared.clone();
                worker_handles.push((
                    wid,
                    std::thread::spawn(move || {
                        let transport = TcpTransport::connect(&addr.to_string())
                            .map_err(SessionError::Proto)?;
                        WorkerRuntime::new(wcfg, transport, cluster).run()
                    }),
                ));
            }
            for _ in &worker_ids {
                let (stream, _) = listener.accept()?;
                arb_transports.push(Box::new(TcpTransport::new(stream)?));
            }
        }
    }

    let mut logger = RunLogger::create(cfg.out_dir.as_deref(), &worker_ids)?;
    let arbitrator = Arbitrator::new(
        ArbitratorConfig {
            session_id: cfg.session_id.clone(),
            episodes,
            steps,
            regime,
            coeffs: cfg.doc.coefficients,
            normalizers: cfg.doc.normalizers(),
            ppo: cfg.doc.ppo,
            limits: cfg.doc.limits,
            learning: cfg.learning,
            selection: cfg.selection,
            timeout: cfg.timeout,
            smoothing_window: cfg.doc.report.smoothing_window,
            run_seed: cfg.run_seed,
        },
        initial_policy,
    );

    let arb_result = arbitrator.run(arb_transports, &mut logger);
    if let Err(e) = &arb_result {
        shared.poison(&format!("arbitrator: {e}"));
    }

    let mut worker_errors: Vec<(u32, SessionError)> = Vec::new();
    for (wid, handle) in worker_handles {
        match handle.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => worker_errors.push((wid, e)),
            Err(_) => worker_errors.push((wid, SessionError::Aborted("worker panicked".into()))),
        }
    }

    let outcome = match arb_result {
        Ok(o) => o,
        Err(e) => return Err(e),
    };
    if let Some((wid, e)) = worker_errors.into_iter().next() {
        return Err(SessionError::Aborted(format!("worker {wid} failed: {e}")));
    }

    let ArbitratorOutcome {
        episode_records,
        trajectories,
        step_stats,
        policy,
        policy_updates,
        mean_decision_latency_s,
        max_decision_latency_s,
        mean_cycle_sim_time_s,
    } = outcome;

    let summary = SessionSummary {
        session_id: cfg.session_id.clone(),
        workers: worker_ids.len(),
        episodes,
        steps_per_episode: steps,
        total_trajectory_records: trajectories.iter().map(|t| t.steps.len() as u64).sum(),
        policy_updates,
        final_policy_version: policy.version(),
        mean_decision_latency_s,
        max_decision_latency_s,
        mean_cycle_sim_time_s,
    };
    logger.finalize(&summary)?;

    log::info!(
        "session {}: {} episodes x {} steps, {} workers, policy v{}",
        cfg.session_id,
        episodes,
        steps,
        worker_ids.len(),
        summary.final_policy_version
    );

    Ok(SessionOutcome {
        summary,
        episodes: episode_records,
        trajectories,
        step_stats,
        final_policy: policy,
    })
}
