use std::collections::VecDeque;
use std::time::Duration;

/// A queued query with its arrival and deadline, generic over the clock type
/// so the same discipline runs on `Instant` and on simulated time.
#[derive(Debug, Clone)]
pub struct Queued<T, Tm> {
    pub item: T,
    pub enqueued: Tm,
    pub deadline: Tm,
}

/// Result of draining a queue: the batch to dispatch (FIFO order) and the
/// queries whose deadline had already passed.
#[derive(Debug)]
pub struct Drained<T, Tm> {
    pub batch: Vec<Queued<T, Tm>>,
    pub expired: Vec<Queued<T, Tm>>,
}

/// FIFO of pending queries for one replica.
#[derive(Debug)]
pub struct BatchQueue<T, Tm> {
    items: VecDeque<Queued<T, Tm>>,
}

impl<T, Tm> Default for BatchQueue<T, Tm> {
    fn default() -> Self {
        BatchQueue { items: VecDeque::new() }
    }
}

impl<T, Tm: Copy + Ord> BatchQueue<T, Tm> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, item: T, enqueued: Tm, deadline: Tm) {
        self.items.push_back(Queued { item, enqueued, deadline });
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn earliest_deadline(&self) -> Option<Tm> {
        self.items.iter().map(|q| q.deadline).min()
    }

    pub fn oldest_enqueue(&self) -> Option<Tm> {
        self.items.front().map(|q| q.enqueued)
    }

    /// Pops up to `max` live queries in FIFO order, setting aside every query
    /// at the front whose deadline is not after `now`.
    pub fn drain(&mut self, max: usize, now: Tm) -> Drained<T, Tm> {
        let mut batch = Vec::with_capacity(max.min(self.items.len()));
        let mut expired = Vec::new();
        while batch.len() < max {
            let Some(q) = self.items.pop_front() else { break };
            if q.deadline <= now {
                expired.push(q);
            } else {
                batch.push(q);
            }
        }
        Drained { batch, expired }
    }

    /// Removes everything, e.g. when the replica goes away.
    pub fn clear(&mut self) -> Vec<Queued<T, Tm>> {
        self.items.drain(..).collect()
    }
}

/// How long to hold a short queue before dispatching.
///
/// Zero when the queue already fills a batch or delaying is disabled;
/// otherwise `batch_delay`, capped by `slack` (time left before the earliest
/// deadline minus the expected batch latency).
pub fn delay_budget(queue_len: usize, max_batch: u32, batch_delay: Duration, slack: Option<Duration>) -> Duration {
    if batch_delay.is_zero() || queue_len >= max_batch as usize {
        return Duration::ZERO;
    }
    match slack {
        Some(s) => batch_delay.min(s),
        None => batch_delay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drains_fifo_in_max_sized_batches() {
        let mut q = BatchQueue::new();
        for i in 0..10u32 {
            q.push(i, 0u64, 1000);
        }
        let sizes: Vec<Vec<u32>> = (0..3).map(|_| q.drain(4, 1).batch.into_iter().map(|x| x.item).collect()).collect();
        assert_eq!(sizes, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
        assert!(q.is_empty());
    }

    #[test]
    fn expired_queries_never_dispatched() {
        let mut q = BatchQueue::new();
        q.push("late", 0u64, 5);
        q.push("ok", 1, 50);
        q.push("late2", 2, 10);
        let d = q.drain(4, 10);
        assert_eq!(d.batch.iter().map(|x| x.item).collect::<Vec<_>>(), vec!["ok"]);
        assert_eq!(d.expired.len(), 2);
    }

    #[test]
    fn delay_rules() {
        let ms = Duration::from_millis;
        assert_eq!(delay_budget(3, 4, ms(2), None), ms(2));
        assert_eq!(delay_budget(4, 4, ms(2), None), Duration::ZERO);
        assert_eq!(delay_budget(1, 4, Duration::ZERO, None), Duration::ZERO);
        assert_eq!(delay_budget(1, 4, ms(2), Some(ms(1))), ms(1));
        assert_eq!(delay_budget(1, 4, ms(2), Some(Duration::ZERO)), Duration::ZERO);
    }
}
