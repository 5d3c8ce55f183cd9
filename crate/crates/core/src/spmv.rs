//! Overlapped distributed sparse-matrix-by-vector product.
//!
//! A one-time `prepare` stage exchanges, per peer, the list of vector
//! entries needed for the off-diagonal block products. Each product then
//! packs and posts non-blocking sends, computes the diagonal-block product
//! while segments are in flight, and polls for arrivals. The final per-row
//! reduction always streams the blocks in ascending stripe order, which is
//! the ascending global column order — so the result is bit-identical to
//! the sequential kernel, for any rank count and any message schedule.

use crate::comm::{Payload, RankContext, Tag};
use crate::csr::CsrMatrix;
use crate::dsmat::{CommMatrix, DSMat, DistVector};
use crate::error::{Error, Result};

/// Communication schedule of one distributed matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpmvPlan {
    /// Per peer (ascending): local indices of owned entries that peer needs.
    pub send_to: Vec<(usize, Vec<usize>)>,
    /// Per peer (ascending): how many entries arrive from that peer. The
    /// entries are the peer-local column indices of our block toward it,
    /// sorted ascending.
    pub recv_from: Vec<(usize, usize)>,
    /// For each stored off-diagonal block (left blocks then right blocks,
    /// each ascending by peer): positions of the block's column indices
    /// inside the received segment of that peer.
    block_gather: Vec<Vec<usize>>,
}

fn needed_columns(block: &CsrMatrix) -> Vec<usize> {
    let mut cols: Vec<usize> = block.col_idx.clone();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// One-time collective plan construction. Every rank tells every other rank
/// which entries it needs (an empty list when the pair is uncoupled), so
/// non-symmetric block structures — the triangular factors — work too.
/// Idempotent: re-running yields an identical plan.
pub fn prepare(a: &DSMat, ctx: &RankContext) -> Result<SpmvPlan> {
    let n_ranks = ctx.n_ranks();
    let rank = ctx.rank();
    debug_assert_eq!(rank, a.owner);

    let mut needed: Vec<Vec<usize>> = vec![Vec::new(); n_ranks];
    for (peer, block) in a.left_blocks.iter().chain(&a.right_blocks) {
        needed[*peer] = needed_columns(block);
    }
    for peer in 0..n_ranks {
        if peer != rank {
            ctx.isend(peer, Tag::Prepare, Payload::Indices(needed[peer].clone()))?;
        }
    }
    let mut send_to = Vec::new();
    for peer in 0..n_ranks {
        if peer == rank {
            continue;
        }
        let request = ctx.recv(peer, Tag::Prepare)?.into_indices()?;
        if !request.is_empty() {
            send_to.push((peer, request));
        }
    }

    let mut recv_from = Vec::new();
    for (peer, cols) in needed.iter().enumerate() {
        if peer != rank && !cols.is_empty() {
            recv_from.push((peer, cols.len()));
        }
    }

    // Precompute, per off-diagonal block, where each column lands in the
    // packed segment coming from its peer.
    let mut block_gather = Vec::new();
    for (peer, block) in a.left_blocks.iter().chain(&a.right_blocks) {
        let cols = &needed[*peer];
        let gather: Vec<usize> = block
            .col_idx
            .iter()
            .map(|c| cols.binary_search(c).expect("column in needed set"))
            .collect();
        block_gather.push(gather);
    }

    Ok(SpmvPlan {
        send_to,
        recv_from,
        block_gather,
    })
}

/// Distributed product `z = A y` restricted to the owned stripe.
pub fn spmv_dist(
    a: &DSMat,
    plan: &SpmvPlan,
    y: &DistVector,
    ctx: &RankContext,
) -> Result<DistVector> {
    let n_local = a.n_local_rows();
    if y.local.len() != a.diag_block.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "local vector has {} entries, diagonal block spans {}",
            y.local.len(),
            a.diag_block.n_cols
        )));
    }

    // Pack and post sends, then post receives.
    for (peer, idxs) in &plan.send_to {
        let packed: Vec<f64> = idxs.iter().map(|&i| y.local[i]).collect();
        ctx.isend(*peer, Tag::SpmvVector, Payload::Reals(packed))?;
    }
    let mut pending = Vec::new();
    for &(peer, _) in &plan.recv_from {
        pending.push(ctx.irecv(peer, Tag::SpmvVector)?);
    }

    // Diagonal-block product while the segments are in flight.
    let diag = &a.diag_block;
    let mut z = vec![0.0f64; n_local];
    for r in 0..n_local {
        let mut acc = 0.0;
        for k in diag.row_start[r]..diag.row_start[r + 1] {
            acc += diag.values[k] * y.local[diag.col_idx[k]];
        }
        z[r] = acc;
    }

    // Poll for arrivals; unpack each segment as it lands (one per peer).
    let mut segments: Vec<Option<Vec<f64>>> = vec![None; plan.recv_from.len()];
    let mut outstanding = pending.len();
    while outstanding > 0 {
        let done = ctx.test_any(&mut pending);
        if done.is_empty() {
            std::thread::yield_now();
            continue;
        }
        for c in done {
            let seg = c
                .payload
                .ok_or_else(|| Error::Protocol("receive without payload".into()))?
                .into_reals()?;
            let slot = plan
                .recv_from
                .iter()
                .position(|&(peer, _)| peer == c.peer)
                .ok_or_else(|| Error::Protocol(format!("unexpected segment from {}", c.peer)))?;
            let expected = plan.recv_from[slot].1;
            if seg.len() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "segment from rank {} has {} entries, plan expects {expected}",
                    c.peer,
                    seg.len()
                )));
            }
            segments[slot] = Some(seg);
            outstanding -= 1;
        }
    }

    // Final reduction: rows that touch left blocks are re-streamed across
    // all their blocks in ascending stripe order (equals ascending global
    // column order), keeping the result bitwise equal to the sequential
    // product. Rows confined to the diagonal block keep the overlapped
    // partial; rows extending only rightward continue streaming from it.
    let n_left = a.left_blocks.len();
    let segment_of = |block_index: usize| -> &Vec<f64> {
        let peer = if block_index < n_left {
            a.left_blocks[block_index].0
        } else {
            a.right_blocks[block_index - n_left].0
        };
        let slot = plan
            .recv_from
            .iter()
            .position(|&(p, _)| p == peer)
            .expect("planned peer");
        segments[slot].as_ref().expect("segment present")
    };

    let block_row_product = |block_index: usize, block: &CsrMatrix, r: usize, acc: &mut f64| {
        let seg = segment_of(block_index);
        let gather = &plan.block_gather[block_index];
        for k in block.row_start[r]..block.row_start[r + 1] {
            *acc += block.values[k] * seg[gather[k]];
        }
    };

    for r in 0..n_local {
        let has_left = a
            .left_blocks
            .iter()
            .any(|(_, b)| b.row_start[r] < b.row_start[r + 1]);
        let mut acc;
        if has_left {
            // Restream the whole row in stripe order.
            acc = 0.0;
            for (bi, (_, block)) in a.left_blocks.iter().enumerate() {
                block_row_product(bi, block, r, &mut acc);
            }
            for k in diag.row_start[r]..diag.row_start[r + 1] {
                acc += diag.values[k] * y.local[diag.col_idx[k]];
            }
        } else {
            acc = z[r];
        }
        for (bi, (_, block)) in a.right_blocks.iter().enumerate() {
            block_row_product(n_left + bi, block, r, &mut acc);
        }
        z[r] = acc;
    }

    Ok(DistVector {
        partition: y.partition.clone(),
        owner: a.owner,
        local: z,
    })
}

/// Apply the factored preconditioner distributedly: `w = G r`, then
/// `result = G^T w`, each through [`spmv_dist`].
pub fn apply_dist_preconditioner(
    g: &DSMat,
    gt: &DSMat,
    plan_g: &SpmvPlan,
    plan_gt: &SpmvPlan,
    r: &DistVector,
    ctx: &RankContext,
) -> Result<DistVector> {
    let w = spmv_dist(g, plan_g, r, ctx)?;
    spmv_dist(gt, plan_gt, &w, ctx)
}

/// Distributed transpose of a lower-triangular factor: every rank sends the
/// transposes of its left blocks to their column owners. The gather graph
/// bounds which pairs may exchange, so receivers know whom to listen to;
/// a size announcement (possibly zero) precedes each block.
pub fn transpose_dsmat(g: &DSMat, g_hat: &CommMatrix, ctx: &RankContext) -> Result<DSMat> {
    let rank = ctx.rank();
    debug_assert_eq!(rank, g.owner);
    debug_assert!(g.right_blocks.is_empty(), "factor must be lower triangular");

    // Announce and send transposed left blocks to lower peers.
    for peer in 0..rank {
        if !g_hat.get(rank, peer) {
            continue;
        }
        let block = g.block(peer);
        let nnz = block.map(|b| b.nnz()).unwrap_or(0);
        ctx.isend(peer, Tag::HaloSize, Payload::Indices(vec![nnz]))?;
        if let Some(b) = block {
            if b.nnz() > 0 {
                ctx.isend(
                    peer,
                    Tag::HaloBlock,
                    Payload::Block {
                        row_stripe: peer,
                        col_stripe: rank,
                        block: b.transpose(),
                    },
                )?;
            }
        }
    }

    // Collect transposed blocks from higher peers.
    let mut right_blocks = Vec::new();
    for peer in rank + 1..ctx.n_ranks() {
        if !g_hat.get(peer, rank) {
            continue;
        }
        let sizes = ctx.recv(peer, Tag::HaloSize)?.into_indices()?;
        if sizes[0] > 0 {
            let (row_stripe, col_stripe, block) = ctx.recv(peer, Tag::HaloBlock)?.into_block()?;
            if row_stripe != rank || col_stripe != peer {
                return Err(Error::Protocol(format!(
                    "expected transposed block ({rank}, {peer}), got ({row_stripe}, {col_stripe})"
                )));
            }
            right_blocks.push((peer, block));
        }
    }

    Ok(DSMat {
        partition: g.partition.clone(),
        owner: rank,
        diag_block: g.diag_block.transpose(),
        left_blocks: Vec::new(),
        right_blocks,
    })
}
