//! The shared simulator behind an in-process BSP barrier. Worker threads
//! submit their batch for the next iteration; the last arrival steps the
//! whole cluster under the lock, so RNG order never depends on scheduling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Condvar, Mutex};

use dynamix_core::simenv::{ClusterSim, IterationOutcome};

use crate::{Result, SessionError};

pub struct SharedCluster {
    inner: Mutex<Inner>,
    cv: Condvar,
}

struct Inner {
    sim: ClusterSim,
    expected: HashSet<u32>,
    pending: BTreeMap<u32, u32>,
    completed_rounds: u64,
    outcomes: HashMap<u32, IterationOutcome>,
    reset_waiting: usize,
    completed_resets: u64,
    error: Option<String>,
}

impl SharedCluster {
    pub fn new(sim: ClusterSim) -> Self {
        let expected: HashSet<u32> = sim.worker_ids().into_iter().collect();
        Self {
            inner: Mutex::new(Inner {
                sim,
                expected,
                pending: BTreeMap::new(),
                completed_rounds: 0,
                outcomes: HashMap::new(),
                reset_waiting: 0,
                completed_resets: 0,
                error: None,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn n_workers(&self) -> usize {
        self.inner.lock().unwrap().expected.len()
    }

    /// Mark the whole cluster failed and wake every waiter.
    pub fn poison(&self, msg: &str) {
        let mut g = self.inner.lock().unwrap();
        if g.error.is_none() {
            g.error = Some(msg.to_string());
        }
        self.cv.notify_all();
    }

    /// Submit this worker's batch for the next iteration and block until the
    /// barrier completes; the last arrival advances the simulator.
    pub fn step(&self, worker_id: u32, batch_size: u32) -> Result<IterationOutcome> {
        let mut g = self.inner.lock().unwrap();
        if let Some(e) = &g.error {
            return Err(SessionError::Aborted(e.clone()));
        }
        if !g.expected.contains(&worker_id) {
            return Err(SessionError::Protocol(format!(
                "worker {worker_id} is not part of this cluster"
            )));
        }
        if g.pending.contains_key(&worker_id) {
            return Err(SessionError::Protocol(format!(
                "worker {worker_id} submitted twice in one barrier"
            )));
        }
        g.pending.insert(worker_id, batch_size);

        if g.pending.len() == g.expected.len() {
            let assignments: Vec<(u32, u32)> = g.pending.iter().map(|(&w, &b)| (w, b)).collect();
            g.pending.clear();
            match g.sim.step_iteration(&assignments) {
                Ok(outs) => {
                    g.outcomes = outs.into_iter().map(|o| (o.worker_id, o)).collect();
                    g.completed_rounds += 1;
                    self.cv.notify_all();
                    Ok(g.outcomes[&worker_id].clone())
                }
                Err(e) => {
                    g.error = Some(e.to_string());
                    self.cv.notify_all();
                    Err(e.into())
                }
            }
        } else {
            let target = g.completed_rounds;
            loop {
                g = self.cv.wait(g).unwrap();
                if let Some(e) = &g.error {
                    return Err(SessionError::Aborted(e.clone()));
                }
                if g.completed_rounds > target {
                    return Ok(g.outcomes[&worker_id].clone());
                }
            }
        }
    }

    /// Episode-boundary barrier: once every worker arrives, the simulator is
    /// rewound to its initial state (same seed, bit-identical replay).
    pub fn reset(&self, worker_id: u32) -> Result<()> {
        let mut g = self.inner.lock().unwrap();
        if let Some(e) = &g.error {
            return Err(SessionError::Aborted(e.clone()));
        }
        if !g.expected.contains(&worker_id) {
            return Err(SessionError::Protocol(format!(
                "worker {worker_id} is not part of this cluster"
            )));
        }
        g.reset_waiting += 1;
        if g.reset_waiting == g.expected.len() {
            g.reset_waiting = 0;
            g.outcomes.clear();
            g.sim.reset();
            g.completed_resets += 1;
            self.cv.notify_all();
            Ok(())
        } else {
            let target = g.completed_resets;
            loop {
                g = self.cv.wait(g).unwrap();
                if let Some(e) = &g.error {
                    return Err(SessionError::Aborted(e.clone()));
                }
                if g.completed_resets > target {
                    return Ok(());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynamix_core::config::RunDocument;
    use std::sync::Arc;

    fn sim(n: u32) -> ClusterSim {
        RunDocument::desk_cluster(n).build_sim(7).unwrap()
    }

    #[test]
    fn barrier_steps_all_workers_together() {
        let shared = Arc::new(SharedCluster::new(sim(3)));
        let mut handles = Vec::new();
        for wid in 0..3u32 {
            let s = Arc::clone(&shared);
            handles.push(std::thread::spawn(move || {
                let mut walls = Vec::new();
                for _ in 0..10 {
                    let o = s.step(wid, 64 + 32 * wid).unwrap();
                    walls.push(o.wall_time());
                }
                walls
            }));
        }
        let walls: Vec<Vec<f64>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for i in 0..10 {
            assert!((walls[0][i] - walls[1][i]).abs() < 1e-12);
            assert!((walls[0][i] - walls[2][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn poison_unblocks_waiters() {
        let shared = Arc::new(SharedCluster::new(sim(2)));
        let s = Arc::clone(&shared);
        let h = std::thread::spawn(move || s.step(0, 64));
        std::thread::sleep(std::time::Duration::from_millis(30));
        shared.poison("test abort");
        let err = h.join().unwrap().unwrap_err();
        assert!(matches!(err, SessionError::Aborted(_)), "{err:?}");
    }

    #[test]
    fn reset_rewinds_deterministically() {
        let shared = Arc::new(SharedCluster::new(sim(1)));
        let first = shared.step(0, 100).unwrap();
        shared.step(0, 200).unwrap();
        shared.reset(0).unwrap();
        let again = shared.step(0, 100).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn double_submission_is_rejected() {
        let shared = Arc::new(SharedCluster::new(sim(2)));
        // worker 0 submits, then tries again before the barrier completes
        let s2 = Arc::clone(&shared);
        let h = std::thread::spawn(move || s2.step(0, 64));
        std::thread::sleep(std::time::Duration::from_millis(30));
        let err = shared.step(0, 64).unwrap_err();
        assert!(matches!(err, SessionError::Protocol(_)), "{err:?}");
        shared.poison("cleanup");
        let _ = h.join().unwrap();
    }
}
