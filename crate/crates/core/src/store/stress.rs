use futures::future::join_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Key, Store};
use crate::error::Result;
use crate::graph::ClientId;
use crate::sim::Time;

/// Random mixed GET/PUT workload over a small key set.
#[derive(Debug, Clone)]
pub struct StressSpec {
    pub clients: usize,
    pub keys: usize,
    pub total_ops: usize,
    pub put_ratio: f64,
    /// Uniform pause in `[0, think_time_us]` between a client's requests.
    pub think_time_us: Time,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StressReport {
    pub gets: u64,
    pub puts: u64,
    pub failed_gets: u64,
    pub failed_puts: u64,
    pub stale_reads: u64,
}

/// Drives `spec` against `store` to completion on the store's simulator.
/// Enables the omniscient log, since staleness is judged against it.
pub fn run_stress(store: &Store, spec: &StressSpec) -> Result<StressReport> {
    store.enable_log();
    let clients = spec.clients.max(1);
    let per_client = spec.total_ops / clients;
    let extra = spec.total_ops % clients;
    let tasks = (0..clients).map(|c| {
        let store = store.clone();
        let spec = spec.clone();
        let ops = per_client + usize::from(c < extra);
        async move {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((c as u64 + 1) << 32));
            let client = ClientId(c as u32);
            let mut r = StressReport::default();
            for i in 0..ops {
                let key = Key::other(&format!("k{}", rng.gen_range(0..spec.keys.max(1))));
                if rng.gen_bool(spec.put_ratio) {
                    r.puts += 1;
                    let res = store.put(client, &key, format!("c{c}-{i}")).await;
                    r.failed_puts += u64::from(!res.success);
                } else {
                    r.gets += 1;
                    let res = store.get(client, &key).await;
                    r.failed_gets += u64::from(!res.success);
                }
                if spec.think_time_us > 0 {
                    let pause = rng.gen_range(0..=spec.think_time_us);
                    store.sim().sleep(pause).await;
                }
            }
            r
        }
    });
    let fut = join_all(tasks);
    let parts = store.sim().block_on(fut);
    let mut total = parts.into_iter().fold(StressReport::default(), |mut acc, r| {
        acc.gets += r.gets;
        acc.puts += r.puts;
        acc.failed_gets += r.failed_gets;
        acc.failed_puts += r.failed_puts;
        acc
    });
    total.stale_reads = store.stale_read_count()?;
    Ok(total)
}
