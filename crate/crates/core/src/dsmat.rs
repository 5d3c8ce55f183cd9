//! Rank-partitioned sparse storage and the setup-time halo gather.
//!
//! A square matrix is cut into `n_p` horizontal stripes of consecutive rows;
//! each stripe is split vertically by the same boundaries into CSR blocks
//! with local (block-relative) numbering. A rank stores its diagonal block
//! plus lists of "left" and "right" blocks coupling it to lower and higher
//! ranks. The factor setup additionally gathers, for every rank, the
//! lower-triangle blocks reachable within `k` hops of the boolean block
//! adjacency, completing them on site by a transpose so the assembled local
//! matrix is structurally symmetric.

use crate::comm::{Payload, RankContext, Tag};
use crate::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Contiguous stripe decomposition of `n` rows over `n_ranks` ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    /// Stripe boundaries: rank `r` owns rows `row_split[r] .. row_split[r+1]`.
    pub row_split: Vec<usize>,
}

impl Partition {
    pub fn n_ranks(&self) -> usize {
        self.row_split.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        *self.row_split.last().unwrap()
    }

    pub fn stripe(&self, rank: usize) -> std::ops::Range<usize> {
        self.row_split[rank]..self.row_split[rank + 1]
    }

    pub fn stripe_len(&self, rank: usize) -> usize {
        self.row_split[rank + 1] - self.row_split[rank]
    }

    /// Rank owning a global row.
    pub fn owner_of(&self, row: usize) -> usize {
        debug_assert!(row < self.n_rows());
        match self.row_split.binary_search(&row) {
            Ok(r) if r == self.n_ranks() => r - 1,
            Ok(r) => r,
            Err(r) => r - 1,
        }
    }
}

/// Balanced contiguous stripes: sizes differ by at most one, larger stripes
/// first.
pub fn partition_rows(n: usize, n_ranks: usize) -> Result<Partition> {
    if n_ranks == 0 || n_ranks > n {
        return Err(Error::BadPartition { n, n_ranks });
    }
    let base = n / n_ranks;
    let extra = n % n_ranks;
    let mut row_split = Vec::with_capacity(n_ranks + 1);
    let mut at = 0;
    row_split.push(0);
    for r in 0..n_ranks {
        at += base + usize::from(r < extra);
        row_split.push(at);
    }
    Ok(Partition { row_split })
}

/// One rank's stripe of a distributed sparse matrix.
#[derive(Debug, Clone)]
pub struct DSMat {
    pub partition: Partition,
    pub owner: usize,
    /// Block coupling the owned rows with the owned columns; always present,
    /// possibly empty.
    pub diag_block: CsrMatrix,
    /// Non-empty blocks toward lower ranks, ascending peer order.
    pub left_blocks: Vec<(usize, CsrMatrix)>,
    /// Non-empty blocks toward higher ranks, ascending peer order.
    pub right_blocks: Vec<(usize, CsrMatrix)>,
}

impl DSMat {
    pub fn n_local_rows(&self) -> usize {
        self.partition.stripe_len(self.owner)
    }

    /// The stored block for a column stripe, if structurally non-empty.
    pub fn block(&self, col_stripe: usize) -> Option<&CsrMatrix> {
        if col_stripe == self.owner {
            return Some(&self.diag_block);
        }
        let list = if col_stripe < self.owner {
            &self.left_blocks
        } else {
            &self.right_blocks
        };
        list.iter()
            .find(|(peer, _)| *peer == col_stripe)
            .map(|(_, b)| b)
    }

    /// Debug dump of the block structure: one line per block with rank,
    /// peer, dims and non-zero count. Stable format for golden tests.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (peer, b) in &self.left_blocks {
            out.push_str(&format!(
                "rank {} left {} {}x{} nnz {}\n",
                self.owner,
                peer,
                b.n_rows,
                b.n_cols,
                b.nnz()
            ));
        }
        out.push_str(&format!(
            "rank {} diag {} {}x{} nnz {}\n",
            self.owner,
            self.owner,
            self.diag_block.n_rows,
            self.diag_block.n_cols,
            self.diag_block.nnz()
        ));
        for (peer, b) in &self.right_blocks {
            out.push_str(&format!(
                "rank {} right {} {}x{} nnz {}\n",
                self.owner,
                peer,
                b.n_rows,
                b.n_cols,
                b.nnz()
            ));
        }
        out
    }

    /// Structural soundness: block dims match the stripes, stored blocks are
    /// non-empty, and local indices are 4-byte representable.
    pub fn validate(&self) -> Result<()> {
        let p = &self.partition;
        let rows = p.stripe_len(self.owner);
        let check = |stripe: usize, b: &CsrMatrix, may_be_empty: bool| -> Result<()> {
            if b.n_rows != rows || b.n_cols != p.stripe_len(stripe) {
                return Err(Error::DimensionMismatch(format!(
                    "block ({}, {stripe}) is {}x{}, stripe dims are {}x{}",
                    self.owner,
                    b.n_rows,
                    b.n_cols,
                    rows,
                    p.stripe_len(stripe)
                )));
            }
            if !may_be_empty && b.nnz() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "stored block ({}, {stripe}) is empty",
                    self.owner
                )));
            }
            if b.n_rows > u32::MAX as usize || b.n_cols > u32::MAX as usize {
                return Err(Error::DimensionMismatch(
                    "block dims exceed 4-byte local indexing".into(),
                ));
            }
            Ok(())
        };
        for (peer, b) in &self.left_blocks {
            check(*peer, b, false)?;
        }
        check(self.owner, &self.diag_block, true)?;
        for (peer, b) in &self.right_blocks {
            check(*peer, b, false)?;
        }
        Ok(())
    }
}

/// Split stripe entries (rows local, columns global) into locally numbered
/// blocks; empty off-diagonal blocks are never materialized.
fn blocks_from_entries(
    entries: impl Iterator<Item = (usize, usize, f64)>,
    rows: usize,
    p: &Partition,
    rank: usize,
) -> Result<DSMat> {
    let n_ranks = p.n_ranks();
    let mut triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_ranks];
    for (row, col, v) in entries {
        let q = p.owner_of(col);
        triplets[q].push((row, col - p.row_split[q], v));
    }
    let mut left_blocks = Vec::new();
    let mut right_blocks = Vec::new();
    let mut diag_block = CsrMatrix::zeros(rows, p.stripe_len(rank));
    for (q, t) in triplets.into_iter().enumerate() {
        if q == rank {
            diag_block = CsrMatrix::from_triplets(rows, p.stripe_len(q), t)?;
        } else if !t.is_empty() {
            let block = CsrMatrix::from_triplets(rows, p.stripe_len(q), t)?;
            if q < rank {
                left_blocks.push((q, block));
            } else {
                right_blocks.push((q, block));
            }
        }
    }
    Ok(DSMat {
        partition: p.clone(),
        owner: rank,
        diag_block,
        left_blocks,
        right_blocks,
    })
}

/// Split one rank's stripe of `a` into locally numbered blocks. Lossless:
/// reassembling every rank's blocks reproduces `a` exactly.
pub fn to_dsmat(a: &CsrMatrix, p: &Partition, rank: usize) -> Result<DSMat> {
    if a.n_rows != a.n_cols {
        return Err(Error::NotSquare {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
        });
    }
    if p.n_rows() != a.n_rows {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} rows, matrix has {}",
            p.n_rows(),
            a.n_rows
        )));
    }
    let stripe = p.stripe(rank);
    let row0 = stripe.start;
    let entries = stripe.clone().flat_map(|row| {
        a.row_cols(row)
            .iter()
            .zip(a.row_values(row))
            .map(move |(&col, &v)| (row - row0, col, v))
    });
    blocks_from_entries(entries, stripe.len(), p, rank)
}

/// Split an already-extracted stripe (rows local, columns global) into a
/// [`DSMat`]; used for the factor stripes the setup computes per rank.
pub fn stripe_to_dsmat(stripe: &CsrMatrix, p: &Partition, rank: usize) -> Result<DSMat> {
    if stripe.n_rows != p.stripe_len(rank) || stripe.n_cols != p.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "stripe is {}x{}, rank {rank} owns {} rows of {}",
            stripe.n_rows,
            stripe.n_cols,
            p.stripe_len(rank),
            p.n_rows()
        )));
    }
    let entries = (0..stripe.n_rows).flat_map(|row| {
        stripe
            .row_cols(row)
            .iter()
            .zip(stripe.row_values(row))
            .map(move |(&col, &v)| (row, col, v))
    });
    blocks_from_entries(entries, stripe.n_rows, p, rank)
}

/// Merge every rank's blocks back into one global matrix.
pub fn reassemble(parts: &[DSMat]) -> Result<CsrMatrix> {
    let p = &parts[0].partition;
    let n = p.n_rows();
    let mut triplets = Vec::new();
    for d in parts {
        let row0 = p.row_split[d.owner];
        let mut push_block = |stripe: usize, b: &CsrMatrix| {
            let col0 = p.row_split[stripe];
            for r in 0..b.n_rows {
                for (k, &c) in b.row_cols(r).iter().enumerate() {
                    triplets.push((row0 + r, col0 + c, b.row_values(r)[k]));
                }
            }
        };
        for (peer, b) in &d.left_blocks {
            push_block(*peer, b);
        }
        push_block(d.owner, &d.diag_block);
        for (peer, b) in &d.right_blocks {
            push_block(*peer, b);
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Per-rank local slice of a distributed vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DistVector {
    pub partition: Partition,
    pub owner: usize,
    pub local: Vec<f64>,
}

impl DistVector {
    pub fn from_global(p: &Partition, rank: usize, global: &[f64]) -> Self {
        let stripe = p.stripe(rank);
        Self {
            partition: p.clone(),
            owner: rank,
            local: global[stripe].to_vec(),
        }
    }

    pub fn zeros(p: &Partition, rank: usize) -> Self {
        Self {
            partition: p.clone(),
            owner: rank,
            local: vec![0.0; p.stripe_len(rank)],
        }
    }
}

/// Concatenate per-rank slices (in rank order) back into a global vector.
pub fn gather_vector(parts: &[DistVector]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts[0].partition.n_rows());
    for part in parts {
        out.extend_from_slice(&part.local);
    }
    out
}

/// Boolean block adjacency: entry `(i, j)` is set when block `ij` of the
/// distributed matrix holds at least one non-zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommMatrix {
    pub n_ranks: usize,
    adjacency: Vec<bool>,
}

impl CommMatrix {
    pub fn empty(n_ranks: usize) -> Self {
        Self {
            n_ranks,
            adjacency: vec![false; n_ranks * n_ranks],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n_ranks + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.adjacency[i * self.n_ranks + j] = v;
    }
}

/// Block adjacency of a distributed matrix from all ranks' stripes.
pub fn comm_matrix(parts: &[DSMat]) -> CommMatrix {
    let n_ranks = parts[0].partition.n_ranks();
    let mut c = CommMatrix::empty(n_ranks);
    for d in parts {
        for (peer, _) in &d.left_blocks {
            c.set(d.owner, *peer, true);
        }
        if d.diag_block.nnz() > 0 {
            c.set(d.owner, d.owner, true);
        }
        for (peer, _) in &d.right_blocks {
            c.set(d.owner, *peer, true);
        }
    }
    c
}

/// Per-block non-zero counts over the whole ensemble (diagnostics).
pub fn block_nnz_table(parts: &[DSMat]) -> Vec<Vec<usize>> {
    let n_ranks = parts[0].partition.n_ranks();
    let mut t = vec![vec![0usize; n_ranks]; n_ranks];
    for d in parts {
        for (peer, b) in &d.left_blocks {
            t[d.owner][*peer] = b.nnz();
        }
        t[d.owner][d.owner] = d.diag_block.nnz();
        for (peer, b) in &d.right_blocks {
            t[d.owner][*peer] = b.nnz();
        }
    }
    t
}

/// Boolean `c^k`: reachability within `k` hops, via repeated symbolic
/// products.
pub fn symbolic_power(c: &CommMatrix, k: usize) -> CommMatrix {
    assert!(k >= 1, "power must be at least 1");
    let n = c.n_ranks;
    let mut acc = c.clone();
    for _ in 1..k {
        let mut next = CommMatrix::empty(n);
        for i in 0..n {
            for m in 0..n {
                if acc.get(i, m) {
                    for j in 0..n {
                        if c.get(m, j) {
                            next.set(i, j, true);
                        }
                    }
                }
            }
        }
        acc = next;
    }
    acc
}

/// Setup-gather schedule of one rank: which lower-triangle blocks to receive
/// from lower ranks and send to higher ranks, as dictated by the gather
/// graph (the lower triangle of the adjacency power).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloPlan {
    pub rank: usize,
    pub power: usize,
    /// Stripes this rank assembles, ascending; always ends with its own.
    pub gathered_stripes: Vec<usize>,
    /// Per lower peer (ascending): block coordinates to receive, in a fixed
    /// (row-stripe, col-stripe) lexicographic order.
    pub recv_from: Vec<(usize, Vec<(usize, usize)>)>,
    /// Per higher peer (ascending): block coordinates to send.
    pub send_to: Vec<(usize, Vec<(usize, usize)>)>,
    /// Off-diagonal gathered blocks are mirrored on site so the assembled
    /// matrix is structurally symmetric.
    pub transpose_completion: bool,
}

fn neighbor_set(g_hat: &CommMatrix, rank: usize) -> Vec<usize> {
    let mut set: Vec<usize> = (0..=rank)
        .filter(|&q| q == rank || g_hat.get(rank, q))
        .collect();
    set.sort_unstable();
    set
}

/// Build the gather schedule for `rank` from the gather graph `g_hat`
/// (a symbolic power of the block adjacency; only its lower triangle is
/// consulted).
pub fn build_setup_halo(g_hat: &CommMatrix, rank: usize, power: usize) -> HaloPlan {
    let mine = neighbor_set(g_hat, rank);
    let mut recv_from = Vec::new();
    for &r in mine.iter().filter(|&&r| r != rank) {
        let blocks: Vec<(usize, usize)> =
            mine.iter().filter(|&&c| c <= r).map(|&c| (r, c)).collect();
        recv_from.push((r, blocks));
    }
    let mut send_to = Vec::new();
    for q in rank + 1..g_hat.n_ranks {
        if g_hat.get(q, rank) {
            // Mirror of q's recv computation, so both sides agree.
            let theirs = neighbor_set(g_hat, q);
            let blocks: Vec<(usize, usize)> = theirs
                .iter()
                .filter(|&&c| c <= rank)
                .map(|&c| (rank, c))
                .collect();
            send_to.push((q, blocks));
        }
    }
    HaloPlan {
        rank,
        power,
        gathered_stripes: mine,
        recv_from,
        send_to,
        transpose_completion: true,
    }
}

/// Assembled halo matrix in compact local numbering: gathered stripes are
/// concatenated in ascending global order, so local index comparisons agree
/// with global ones.
#[derive(Debug, Clone)]
pub struct HaloMatrix {
    pub matrix: CsrMatrix,
    /// Local index -> global row/column.
    pub local_to_global: Vec<usize>,
    /// First local row owned by this rank (owned rows are the tail).
    pub owned_offset: usize,
    pub owned_len: usize,
}

/// Assemble the gathered blocks (own stripe plus received lower blocks)
/// into one structurally symmetric CSR matrix over the gathered index set.
/// `received` carries (row-stripe, col-stripe, block) triples.
pub fn assemble_halo_matrix(
    own: &DSMat,
    plan: &HaloPlan,
    received: &[(usize, usize, CsrMatrix)],
) -> Result<HaloMatrix> {
    let p = &own.partition;
    let stripes = &plan.gathered_stripes;
    let mut offset_of = vec![usize::MAX; p.n_ranks()];
    let mut local_to_global = Vec::new();
    for &s in stripes {
        offset_of[s] = local_to_global.len();
        local_to_global.extend(p.stripe(s));
    }
    let m = local_to_global.len();
    let owned_offset = offset_of[own.owner];

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut add_block = |row_stripe: usize, col_stripe: usize, b: &CsrMatrix| -> Result<()> {
        let ro = offset_of[row_stripe];
        let co = offset_of[col_stripe];
        if ro == usize::MAX || co == usize::MAX {
            return Err(Error::Protocol(format!(
                "block ({row_stripe}, {col_stripe}) outside the gathered stripes"
            )));
        }
        for r in 0..b.n_rows {
            for (k, &c) in b.row_cols(r).iter().enumerate() {
                let v = b.row_values(r)[k];
                triplets.push((ro + r, co + c, v));
                if row_stripe != col_stripe {
                    // Transpose completion: mirror into the upper part.
                    triplets.push((co + c, ro + r, v));
                }
            }
        }
        Ok(())
    };

    for (peer, b) in &own.left_blocks {
        debug_assert!(stripes.contains(peer), "direct neighbor outside halo");
        add_block(own.owner, *peer, b)?;
    }
    add_block(own.owner, own.owner, &own.diag_block)?;
    for (row_stripe, col_stripe, b) in received {
        add_block(*row_stripe, *col_stripe, b)?;
    }

    let matrix = CsrMatrix::from_triplets(m, m, triplets)?;
    Ok(HaloMatrix {
        matrix,
        local_to_global,
        owned_offset,
        owned_len: p.stripe_len(own.owner),
    })
}

/// Collective two-stage gather: announce block sizes to the right-hand
/// peers, ship the non-empty blocks, and assemble what arrives from the
/// left-hand peers together with the local stripe.
pub fn gather_halo(own: &DSMat, plan: &HaloPlan, ctx: &RankContext) -> Result<HaloMatrix> {
    // Stage 1: size announcements (one message per peer, nnz per planned
    // block; zero means the block does not exist and will not be sent).
    for (peer, blocks) in &plan.send_to {
        let sizes: Vec<usize> = blocks
            .iter()
            .map(|&(r, c)| {
                debug_assert_eq!(r, own.owner);
                own.block(c).map(|b| b.nnz()).unwrap_or(0)
            })
            .collect();
        ctx.isend(*peer, Tag::HaloSize, Payload::Indices(sizes))?;
    }
    // Stage 2: the blocks themselves, in plan order.
    for (peer, blocks) in &plan.send_to {
        for &(_, c) in blocks {
            if let Some(b) = own.block(c) {
                if b.nnz() > 0 {
                    ctx.isend(
                        *peer,
                        Tag::HaloBlock,
                        Payload::Block {
                            row_stripe: own.owner,
                            col_stripe: c,
                            block: b.clone(),
                        },
                    )?;
                }
            }
        }
    }

    // Receive sizes, then poll for the announced blocks; arrival order is
    // irrelevant because blocks carry their coordinates.
    let mut expected_per_peer = Vec::new();
    for (peer, blocks) in &plan.recv_from {
        let sizes = ctx.recv(*peer, Tag::HaloSize)?.into_indices()?;
        if sizes.len() != blocks.len() {
            return Err(Error::Protocol(format!(
                "peer {peer} announced {} block sizes, plan expects {}",
                sizes.len(),
                blocks.len()
            )));
        }
        let nonempty = sizes.iter().filter(|&&s| s > 0).count();
        expected_per_peer.push((*peer, nonempty));
    }
    let mut pending = Vec::new();
    for &(peer, count) in &expected_per_peer {
        for _ in 0..count {
            pending.push(ctx.irecv(peer, Tag::HaloBlock)?);
        }
    }
    let mut received = Vec::new();
    while !pending.is_empty() {
        for done in ctx.test_any(&mut pending) {
            let payload = done
                .payload
                .ok_or(Error::MissingBlock { peer: done.peer })?;
            received.push(payload.into_block()?);
        }
        std::thread::yield_now();
    }
    assemble_halo_matrix(own, plan, &received)
}
