//! Multi-threaded simulation and correlation of long acquisitions.

use std::thread;

use anyhow::Result;

use qdstat_core::correlator::{correlate, times, CorrelationHistogram, CorrelationMode, Window};
use qdstat_core::sim::{merge_shards, simulate_shard, SimConfig, SimOutput};

fn worker_count(jobs: u64) -> usize {
    let cpus = thread::available_parallelism().map_or(1, |n| n.get());
    cpus.min(jobs.max(1) as usize)
}

/// Run `shards` slices of the acquisition on a thread pool and merge them in
/// index order. The result depends only on the config and shard count.
pub fn simulate_sharded(config: &SimConfig, shards: u64) -> Result<SimOutput> {
    let outputs = parallel_map(shards, |i| Ok(simulate_shard(config, i, shards)?))?;
    Ok(merge_shards(outputs))
}

/// Simulate `shards` shorter acquisitions (seed streams `0..shards`) and
/// correlate each with its own time origin, then merge the histograms.
/// Keeps timestamps small so `f64` resolution stays far below a bin for
/// acquisitions of hours.
pub fn simulate_and_correlate(
    config: &SimConfig,
    shards: u64,
    window: &Window,
    mode: CorrelationMode,
) -> Result<(CorrelationHistogram, SimOutput)> {
    let mut shard_cfg = config.clone();
    shard_cfg.acquisition_s = config.acquisition_s / shards as f64;
    let pieces = parallel_map(shards, |i| {
        let mut c = shard_cfg.clone();
        c.seed = config.seed.wrapping_add(i);
        let out = simulate_shard(&c, 0, 1)?;
        let h = correlate(&times(&out.channel_a), &times(&out.channel_b), window, mode, c.acquisition_s)?;
        let summary = SimOutput { channel_a: Vec::new(), channel_b: Vec::new(), ..out };
        Ok((h, summary))
    })?;
    let mut it = pieces.into_iter();
    let (mut hist, first) = it.next().expect("at least one shard");
    let mut summaries = vec![first];
    for (h, s) in it {
        hist.merge(&h)?;
        summaries.push(s);
    }
    Ok((hist, merge_shards(summaries)))
}

/// `f(0..n)` on worker threads, results in index order.
fn parallel_map<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let workers = worker_count(n) as u64;
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w..n).step_by(workers as usize).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i as usize] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every shard ran")).collect()
}
