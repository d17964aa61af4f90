/// Load snapshot of one replica used for routing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaLoad {
    pub queue_len: usize,
    pub max_batch: u32,
    pub suspect: bool,
}

impl ReplicaLoad {
    pub fn ratio(&self) -> f64 {
        self.queue_len as f64 / self.max_batch.max(1) as f64
    }
}

/// Picks the replica with the smallest `queue_len / max_batch`, preferring
/// healthy replicas over suspect ones. Ties go to the first candidate at or
/// after `cursor` (round robin). `None` when there are no replicas.
pub fn route_to_replica(loads: &[ReplicaLoad], cursor: usize) -> Option<usize> {
    if loads.is_empty() {
        return None;
    }
    let any_healthy = loads.iter().any(|l| !l.suspect);
    let n = loads.len();
    let mut best: Option<(usize, f64)> = None;
    for k in 0..n {
        let i = (cursor + k) % n;
        let l = &loads[i];
        if any_healthy && l.suspect {
            continue;
        }
        let r = l.ratio();
        if best.is_none_or(|(_, b)| r < b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}
