//! In-process rank-and-message layer.
//!
//! Ranks run as threads inside one process; messages move through per-pair
//! FIFO mailboxes with non-blocking send/receive and test/complete
//! semantics. A seeded scheduler can delay message visibility to stress the
//! overlap logic; correctness never depends on arrival order. Collectives
//! use a fixed binary reduction tree keyed by rank id, so their results are
//! bitwise reproducible.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::exactsum::ExactAccumulator;

/// Traffic classes; each (sender, receiver, tag) stream is FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    /// One-time exchange of needed vector-entry lists.
    Prepare,
    /// Block-size announcements of the setup gather.
    HaloSize,
    /// Matrix blocks of the setup gather and the factor transpose.
    HaloBlock,
    /// Vector segments of the distributed product.
    SpmvVector,
    /// Reduction-tree traffic.
    Collective,
}

impl Tag {
    fn name(self) -> &'static str {
        match self {
            Tag::Prepare => "prepare",
            Tag::HaloSize => "halo-size",
            Tag::HaloBlock => "halo-block",
            Tag::SpmvVector => "spmv-vector",
            Tag::Collective => "collective",
        }
    }
}

/// Message body. Typed variants cover everything the engine ships around.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bytes(Vec<u8>),
    Indices(Vec<usize>),
    Reals(Vec<f64>),
    /// Exact-accumulator limbs (see [`crate::exactsum`]).
    Limbs(Vec<i64>),
    /// A matrix block tagged with its stripe coordinates.
    Block {
        row_stripe: usize,
        col_stripe: usize,
        block: CsrMatrix,
    },
}

impl Payload {
    /// Approximate on-wire size, for the traffic metrics.
    pub fn byte_len(&self) -> usize {
        match self {
            Payload::Bytes(b) => b.len(),
            Payload::Indices(v) => 8 * v.len(),
            Payload::Reals(v) => 8 * v.len(),
            Payload::Limbs(v) => 8 * v.len(),
            Payload::Block { block, .. } => {
                16 + 8 * (block.row_start.len() + block.col_idx.len() + block.values.len())
            }
        }
    }

    pub fn into_indices(self) -> Result<Vec<usize>> {
        match self {
            Payload::Indices(v) => Ok(v),
            other => Err(Error::Protocol(format!(
                "expected index payload, got {other:?}"
            ))),
        }
    }

    pub fn into_reals(self) -> Result<Vec<f64>> {
        match self {
            Payload::Reals(v) => Ok(v),
            other => Err(Error::Protocol(format!(
                "expected real payload, got {other:?}"
            ))),
        }
    }

    pub fn into_limbs(self) -> Result<Vec<i64>> {
        match self {
            Payload::Limbs(v) => Ok(v),
            other => Err(Error::Protocol(format!(
                "expected limb payload, got {other:?}"
            ))),
        }
    }

    pub fn into_block(self) -> Result<(usize, usize, CsrMatrix)> {
        match self {
            Payload::Block {
                row_stripe,
                col_stripe,
                block,
            } => Ok((row_stripe, col_stripe, block)),
            other => Err(Error::Protocol(format!(
                "expected block payload, got {other:?}"
            ))),
        }
    }
}

struct Envelope {
    payload: Payload,
    /// Logical time at which the message becomes visible to the receiver.
    ready_at: u64,
}

#[derive(Default)]
struct Mailbox {
    queues: Mutex<HashMap<(usize, Tag), std::collections::VecDeque<Envelope>>>,
}

struct Scheduler {
    rng: Mutex<ChaCha8Rng>,
    max_delay: u64,
}

/// Shared state of one rank ensemble.
pub struct Universe {
    n_ranks: usize,
    mailboxes: Vec<Mailbox>,
    clock: AtomicU64,
    scheduler: Option<Scheduler>,
    sent_bytes: Vec<AtomicU64>,
    trace: Option<Mutex<Vec<String>>>,
}

impl Universe {
    /// Immediate delivery: messages are visible as soon as they are sent.
    pub fn new(n_ranks: usize) -> Arc<Self> {
        Self::build(n_ranks, None, false)
    }

    /// Randomized delivery delays (deterministic per seed), for scheduling
    /// stress tests.
    pub fn with_random_schedule(n_ranks: usize, seed: u64, max_delay: u64) -> Arc<Self> {
        Self::build(
            n_ranks,
            Some(Scheduler {
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
                max_delay,
            }),
            false,
        )
    }

    /// Immediate delivery plus a line-oriented message trace.
    pub fn with_trace(n_ranks: usize) -> Arc<Self> {
        Self::build(n_ranks, None, true)
    }

    fn build(n_ranks: usize, scheduler: Option<Scheduler>, trace: bool) -> Arc<Self> {
        assert!(n_ranks >= 1, "need at least one rank");
        Arc::new(Self {
            n_ranks,
            mailboxes: (0..n_ranks).map(|_| Mailbox::default()).collect(),
            clock: AtomicU64::new(0),
            scheduler,
            sent_bytes: (0..n_ranks).map(|_| AtomicU64::new(0)).collect(),
            trace: trace.then(|| Mutex::new(Vec::new())),
        })
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    /// Handle for one rank.
    pub fn context(self: &Arc<Self>, rank: usize) -> RankContext {
        assert!(rank < self.n_ranks);
        RankContext {
            universe: Arc::clone(self),
            rank,
        }
    }

    /// Total payload bytes sent by each rank so far.
    pub fn sent_bytes(&self) -> Vec<u64> {
        self.sent_bytes
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    /// Drain the message trace (empty unless built with `with_trace`).
    pub fn take_trace(&self) -> Vec<String> {
        self.trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.lock().unwrap()))
            .unwrap_or_default()
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed)
    }
}

/// Direction of a pending operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

/// An in-flight non-blocking operation. Completion is observed through
/// [`RankContext::test_any`]; each op completes at most once and its payload
/// is only readable after completion.
#[derive(Debug)]
pub struct PendingOp {
    pub peer: usize,
    pub tag: Tag,
    pub direction: Direction,
}

/// A completed operation; receives carry their payload.
#[derive(Debug)]
pub struct Completed {
    pub peer: usize,
    pub tag: Tag,
    pub direction: Direction,
    pub payload: Option<Payload>,
}

/// Per-rank endpoint of a [`Universe`].
pub struct RankContext {
    universe: Arc<Universe>,
    rank: usize,
}

impl RankContext {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n_ranks(&self) -> usize {
        self.universe.n_ranks
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer >= self.universe.n_ranks {
            return Err(Error::InvalidRank {
                rank: peer,
                n_ranks: self.universe.n_ranks,
            });
        }
        Ok(())
    }

    /// Non-blocking send. The transport buffers the payload, so the returned
    /// op completes on the first test; messages between a fixed
    /// (sender, receiver, tag) pair are delivered in send order.
    pub fn isend(&self, peer: usize, tag: Tag, payload: Payload) -> Result<PendingOp> {
        self.check_peer(peer)?;
        let u = &self.universe;
        u.sent_bytes[self.rank].fetch_add(payload.byte_len() as u64, Ordering::Relaxed);
        if let Some(trace) = &u.trace {
            trace.lock().unwrap().push(format!(
                "{} {} {} {} {}",
                self.rank,
                peer,
                tag.name(),
                payload.byte_len(),
                u.clock.load(Ordering::Relaxed)
            ));
        }
        let now = u.tick();
        let ready_at = match &u.scheduler {
            Some(s) => now + s.rng.lock().unwrap().gen_range(0..=s.max_delay),
            None => now,
        };
        let mut queues = u.mailboxes[peer].queues.lock().unwrap();
        let queue = queues.entry((self.rank, tag)).or_default();
        // FIFO per stream: visibility may not reorder within the queue.
        let ready_at = queue
            .back()
            .map(|e| e.ready_at.max(ready_at))
            .unwrap_or(ready_at);
        queue.push_back(Envelope { payload, ready_at });
        Ok(PendingOp {
            peer,
            tag,
            direction: Direction::Send,
        })
    }

    /// Non-blocking receive of the next message from `peer` on `tag`.
    pub fn irecv(&self, peer: usize, tag: Tag) -> Result<PendingOp> {
        self.check_peer(peer)?;
        Ok(PendingOp {
            peer,
            tag,
            direction: Direction::Recv,
        })
    }

    /// Poll a pending list without blocking: completed operations are
    /// removed and returned (possibly none).
    pub fn test_any(&self, pending: &mut Vec<PendingOp>) -> Vec<Completed> {
        let now = self.universe.tick();
        let mut done = Vec::new();
        let mut keep = Vec::with_capacity(pending.len());
        for op in pending.drain(..) {
            match op.direction {
                Direction::Send => done.push(Completed {
                    peer: op.peer,
                    tag: op.tag,
                    direction: Direction::Send,
                    payload: None,
                }),
                Direction::Recv => {
                    let mut queues = self.universe.mailboxes[self.rank].queues.lock().unwrap();
                    let ready = queues
                        .get_mut(&(op.peer, op.tag))
                        .and_then(|q| match q.front() {
                            Some(e) if e.ready_at <= now => q.pop_front(),
                            _ => None,
                        });
                    match ready {
                        Some(envelope) => done.push(Completed {
                            peer: op.peer,
                            tag: op.tag,
                            direction: Direction::Recv,
                            payload: Some(envelope.payload),
                        }),
                        None => keep.push(op),
                    }
                }
            }
        }
        *pending = keep;
        done
    }

    /// Block (spin with yields) until every pending operation completes.
    /// Teardown convenience; the compute paths poll with `test_any`.
    pub fn wait_all(&self, mut pending: Vec<PendingOp>) -> Vec<Completed> {
        let mut done = Vec::new();
        while !pending.is_empty() {
            let completed = self.test_any(&mut pending);
            if completed.is_empty() {
                std::thread::yield_now();
            }
            done.extend(completed);
        }
        done
    }

    /// Blocking receive of one message; protocol convenience built on the
    /// non-blocking primitives.
    pub fn recv(&self, peer: usize, tag: Tag) -> Result<Payload> {
        let op = self.irecv(peer, tag)?;
        let mut completed = self.wait_all(vec![op]);
        Ok(completed
            .remove(0)
            .payload
            .expect("receive carries payload"))
    }

    /// Fixed-binary-tree barrier over all ranks.
    pub fn barrier(&self) {
        self.tree_reduce_broadcast(Payload::Bytes(Vec::new()), |a, _| a)
            .expect("barrier payloads are well-formed");
    }

    /// Deterministic tree-ordered global sum: every rank gets the identical
    /// f64, bitwise reproducible across runs. The reduction order is fixed
    /// by rank id (recursive halving toward rank 0), independent of message
    /// timing.
    pub fn allreduce_sum(&self, value: f64) -> f64 {
        let out = self
            .tree_reduce_broadcast(Payload::Reals(vec![value]), |a, b| {
                let a = a.into_reals().expect("collective payload");
                let b = b.into_reals().expect("collective payload");
                Payload::Reals(vec![a[0] + b[0]])
            })
            .expect("collective payloads are well-formed");
        match out {
            Payload::Reals(v) => v[0],
            _ => unreachable!(),
        }
    }

    /// Exact global reduction: accumulators merge losslessly, so the rounded
    /// result is independent of rank count and schedule.
    pub fn allreduce_exact(&self, acc: &ExactAccumulator) -> f64 {
        let out = self
            .tree_reduce_broadcast(Payload::Limbs(acc.to_limbs()), |a, b| {
                let mut a = ExactAccumulator::from_limbs(&a.into_limbs().expect("limb payload"))
                    .expect("limb count");
                let b = ExactAccumulator::from_limbs(&b.into_limbs().expect("limb payload"))
                    .expect("limb count");
                a.merge(&b);
                Payload::Limbs(a.to_limbs())
            })
            .expect("collective payloads are well-formed");
        match out {
            Payload::Limbs(l) => ExactAccumulator::from_limbs(&l)
                .expect("limb count")
                .round(),
            _ => unreachable!(),
        }
    }

    /// Reduce up a fixed binary tree (higher child folds into lower parent),
    /// then broadcast the root value back down the same tree.
    fn tree_reduce_broadcast(
        &self,
        mine: Payload,
        combine: impl Fn(Payload, Payload) -> Payload,
    ) -> Result<Payload> {
        let n = self.universe.n_ranks;
        let rank = self.rank;
        let mut acc = mine;
        let mut offset = 1usize;
        while offset < n {
            if rank % (2 * offset) == offset {
                self.isend(rank - offset, Tag::Collective, acc)?;
                // Wait for the broadcast leg.
                acc = self.recv(rank - offset, Tag::Collective)?;
                // Forward down our own subtree.
                let mut down = offset / 2;
                while down >= 1 {
                    if rank + down < n {
                        self.isend(rank + down, Tag::Collective, acc.clone())?;
                    }
                    if down == 1 {
                        break;
                    }
                    down /= 2;
                }
                return Ok(acc);
            }
            if rank.is_multiple_of(2 * offset) && rank + offset < n {
                let theirs = self.recv(rank + offset, Tag::Collective)?;
                acc = combine(acc, theirs);
            }
            offset *= 2;
        }
        // Root: broadcast down.
        let mut down = offset / 2;
        while down >= 1 {
            if rank + down < n {
                self.isend(rank + down, Tag::Collective, acc.clone())?;
            }
            if down == 1 {
                break;
            }
            down /= 2;
        }
        Ok(acc)
    }
}

/// The fixed reduction order of [`RankContext::allreduce_sum`], replayed
/// serially: a test oracle and documentation of the bracketing.
pub fn tree_sum_oracle(values: &[f64]) -> f64 {
    let mut acc: Vec<f64> = values.to_vec();
    let n = acc.len();
    let mut offset = 1usize;
    while offset < n {
        let mut r = 0;
        while r + offset < n {
            if r % (2 * offset) == 0 {
                acc[r] += acc[r + offset];
            }
            r += offset;
        }
        offset *= 2;
    }
    if n == 0 {
        0.0
    } else {
        acc[0]
    }
}

/// Run one closure per rank on its own thread and collect results in rank
/// order. Panics in any rank propagate.
pub fn run_ranks<D, T, F>(universe: &Arc<Universe>, inputs: Vec<D>, f: F) -> Vec<T>
where
    D: Send,
    T: Send,
    F: Fn(RankContext, D) -> T + Sync,
{
    assert_eq!(inputs.len(), universe.n_ranks());
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .into_iter()
            .enumerate()
            .map(|(rank, input)| {
                let ctx = universe.context(rank);
                scope.spawn(move || f(ctx, input))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

/// Convenience for SPMD closures that need nothing but their context.
pub fn run_spmd<T, F>(universe: &Arc<Universe>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(RankContext) -> T + Sync,
{
    run_ranks(universe, vec![(); universe.n_ranks()], |ctx, ()| f(ctx))
}
