//! Post-run analysis helpers shared by the report command and the
//! verification harness.

use crate::arbitrator::StepStat;

/// Trailing-mean smoothing of the global accuracy series of one episode,
/// returning (sim_time, smoothed_accuracy) pairs in step order.
pub fn smoothed_accuracy(stats: &[StepStat], episode: u64, window: usize) -> Vec<(f64, f64)> {
    let series: Vec<&StepStat> = stats.iter().filter(|s| s.episode == episode).collect();
    let w = window.max(1);
    series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lo = (i + 1).saturating_sub(w);
            let tail = &series[lo..=i];
            let mean = tail.iter().map(|t| t.global_mean_accuracy).sum::<f64>() / tail.len() as f64;
            (s.sim_time, mean)
        })
        .collect()
}

/// First simulated wall-clock time at which the smoothed accuracy of the
/// episode crosses the threshold; None if it never does.
pub fn time_to_threshold(
    stats: &[StepStat],
    episode: u64,
    threshold: f64,
    window: usize,
) -> Option<f64> {
    smoothed_accuracy(stats, episode, window)
        .into_iter()
        .find(|(_, acc)| *acc >= threshold)
        .map(|(t, _)| t)
}

/// Mean batch size over the first and last quartile of one episode's steps.
pub fn quartile_batch_means(stats: &[StepStat], episode: u64) -> Option<(f64, f64)> {
    let series: Vec<f64> = stats
        .iter()
        .filter(|s| s.episode == episode)
        .map(|s| s.mean_batch)
        .collect();
    if series.len() < 4 {
        return None;
    }
    let q = series.len() / 4;
    let first = series[..q].iter().sum::<f64>() / q as f64;
    let last = series[series.len() - q..].iter().sum::<f64>() / q as f64;
    Some((first, last))
}
