//! Toy data-parallel iteration with exact integer gradients.
//!
//! Every DP rank accumulates the gradients of the micro-batches it owns. The
//! accumulated vector is split into one segment per pipeline stage, and the
//! segments are all-reduced one at a time in ascending stage order. Because
//! gradients are integers, any resumption that feeds every micro-batch in
//! exactly once reproduces the failure-free aggregate bit for bit.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIMS: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("rank {rank} out of range for dp={dp}")]
    BadRank { rank: u32, dp: u32 },
    #[error("stage {stage} out of range for pp={pp}")]
    BadStage { stage: u32, pp: u32 },
    #[error("dp=1 leaves no surviving replica; restart from checkpoint")]
    NoSurvivors,
    #[error("{0}")]
    WrongScenario(&'static str),
    #[error("rank {rank} has completed {completed} micro-batches but owns {owned}")]
    BadProgress { rank: u32, completed: u32, owned: u32 },
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gradient of one micro-batch: `dims` integers in [-2^20, 2^20), a pure
/// function of the ids.
pub fn micro_batch_gradient(iteration: u64, micro_batch: u32, dims: usize) -> Vec<i64> {
    let base = mix(mix(iteration) ^ u64::from(micro_batch));
    (0..dims as u64).map(|c| (mix(base ^ c) >> 43) as i64 - (1 << 20)).collect()
}

/// Component range `[start, end)` of pipeline stage `stage`.
pub fn segment_bounds(dims: usize, pp: u32, stage: u32) -> (usize, usize) {
    let pp = pp as usize;
    let s = stage as usize;
    (s * dims / pp, (s + 1) * dims / pp)
}

/// Hex SHA-256 of a gradient's little-endian bytes.
pub fn digest(grad: &[i64]) -> String {
    let mut h = Sha256::new();
    for v in grad {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Micro-batch ownership for one iteration. Ranks are 0-based, micro-batch
/// ids run over `1..=micro_batches`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationLayout {
    pub dp: u32,
    pub pp: u32,
    pub micro_batches: u32,
    pub dims: usize,
    pub iteration: u64,
    pub ownership: BTreeMap<u32, Vec<u32>>,
}

impl IterationLayout {
    /// Contiguous blocks of `k = micro_batches / dp` per rank.
    pub fn new(dp: u32, pp: u32, micro_batches: u32, dims: usize, iteration: u64) -> Result<Self, TransitionError> {
        if dp == 0 || pp == 0 || dims == 0 {
            return Err(TransitionError::InvalidLayout("dp, pp and dims must be >= 1".into()));
        }
        if micro_batches == 0 || !micro_batches.is_multiple_of(dp) {
            return Err(TransitionError::InvalidLayout(format!(
                "{micro_batches} micro-batches do not divide over dp={dp}"
            )));
        }
        let k = micro_batches / dp;
        let ownership = (0..dp).map(|r| (r, (r * k + 1..=(r + 1) * k).collect())).collect();
        Ok(Self { dp, pp, micro_batches, dims, iteration, ownership })
    }

    pub fn per_rank(&self) -> u32 {
        self.micro_batches / self.dp
    }

    fn gradient(&self, mb: u32) -> Vec<i64> {
        micro_batch_gradient(self.iteration, mb, self.dims)
    }

    fn check_rank(&self, rank: u32) -> Result<(), TransitionError> {
        if rank >= self.dp {
            return Err(TransitionError::BadRank { rank, dp: self.dp });
        }
        Ok(())
    }
}

fn add_into(acc: &mut [i64], g: &[i64]) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

fn add_range(acc: &mut [i64], g: &[i64], from: usize) {
    add_into(&mut acc[from..], &g[from..]);
}

/// Failure-free aggregate: each rank accumulates its micro-batches, then
/// segments reduce in stage order.
pub fn run_iteration(layout: &IterationLayout) -> Vec<i64> {
    let accs: Vec<Vec<i64>> = layout
        .ownership
        .values()
        .map(|mbs| {
            let mut acc = vec![0; layout.dims];
            for &mb in mbs {
                add_into(&mut acc, &layout.gradient(mb));
            }
            acc
        })
        .collect();
    let mut out = vec![0; layout.dims];
    for stage in 0..layout.pp {
        let (lo, hi) = segment_bounds(layout.dims, layout.pp, stage);
        for acc in &accs {
            add_into(&mut out[lo..hi], &acc[lo..hi]);
        }
    }
    out
}

/// Deals every micro-batch of `failed_rank` round-robin to the survivors
/// in ascending rank order. The failed rank drops out of the map.
pub fn redistribute(layout: &IterationLayout, failed_rank: u32) -> Result<BTreeMap<u32, Vec<u32>>, TransitionError> {
    layout.check_rank(failed_rank)?;
    if layout.dp == 1 {
        return Err(TransitionError::NoSurvivors);
    }
    let mut out = layout.ownership.clone();
    let mut orphaned = out.remove(&failed_rank).unwrap_or_default();
    orphaned.sort_unstable();
    let survivors: Vec<u32> = out.keys().copied().collect();
    for (i, mb) in orphaned.into_iter().enumerate() {
        out.get_mut(&survivors[i % survivors.len()]).expect("survivor").push(mb);
    }
    Ok(out)
}

/// Snapshot of an iteration at the moment a worker fails.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientState {
    pub layout: IterationLayout,
    /// Per-rank accumulator over the micro-batches completed so far.
    pub acc: BTreeMap<u32, Vec<i64>>,
    /// How many of its owned micro-batches each rank has completed, in order.
    pub completed: BTreeMap<u32, u32>,
    /// Globally reduced value of each segment whose all-reduce finished.
    pub reduced: Vec<Option<Vec<i64>>>,
}

impl GradientState {
    /// Every rank has completed `completed[rank]` micro-batches; nothing reduced.
    pub fn accumulating(layout: &IterationLayout, completed: &BTreeMap<u32, u32>) -> Result<Self, TransitionError> {
        let mut acc = BTreeMap::new();
        let mut done = BTreeMap::new();
        for (&rank, mbs) in &layout.ownership {
            let c = completed.get(&rank).copied().unwrap_or(0);
            if c as usize > mbs.len() {
                return Err(TransitionError::BadProgress { rank, completed: c, owned: mbs.len() as u32 });
            }
            let mut a = vec![0; layout.dims];
            for &mb in &mbs[..c as usize] {
                add_into(&mut a, &layout.gradient(mb));
            }
            acc.insert(rank, a);
            done.insert(rank, c);
        }
        Ok(Self { layout: layout.clone(), acc, completed: done, reduced: vec![None; layout.pp as usize] })
    }

    /// All ranks in lockstep after `mb` micro-batches each.
    pub fn lockstep(layout: &IterationLayout, mb: u32) -> Result<Self, TransitionError> {
        let completed = layout.ownership.keys().map(|r| (*r, mb)).collect();
        Self::accumulating(layout, &completed)
    }

    /// Accumulation finished and the first `segments` segments reduced.
    pub fn reducing(layout: &IterationLayout, segments: u32) -> Result<Self, TransitionError> {
        if segments > layout.pp {
            return Err(TransitionError::BadStage { stage: segments, pp: layout.pp });
        }
        let mut st = Self::lockstep(layout, layout.per_rank())?;
        for stage in 0..segments {
            let (lo, hi) = segment_bounds(layout.dims, layout.pp, stage);
            let mut seg = vec![0; hi - lo];
            for a in st.acc.values() {
                add_into(&mut seg, &a[lo..hi]);
            }
            st.reduced[stage as usize] = Some(seg);
        }
        Ok(st)
    }

    pub fn reduced_segments(&self) -> u32 {
        self.reduced.iter().take_while(|s| s.is_some()).count() as u32
    }

    /// Finishes the remaining all-reduces over `ranks`, keeping any segment
    /// already reduced untouched.
    fn finish(&self, acc: &BTreeMap<u32, Vec<i64>>) -> Vec<i64> {
        let dims = self.layout.dims;
        let mut out = vec![0; dims];
        for stage in 0..self.layout.pp {
            let (lo, hi) = segment_bounds(dims, self.layout.pp, stage);
            match &self.reduced[stage as usize] {
                Some(seg) => out[lo..hi].copy_from_slice(seg),
                None => {
                    for a in acc.values() {
                        add_into(&mut out[lo..hi], &a[lo..hi]);
                    }
                }
            }
        }
        out
    }
}

/// Failure before any all-reduce: pause, drop the failed rank, deal its
/// micro-batches to the survivors, let everyone finish, then reduce.
pub fn resume_scenario1(state: &GradientState, failed_rank: u32) -> Result<Vec<i64>, TransitionError> {
    if state.reduced_segments() > 0 {
        return Err(TransitionError::WrongScenario("an all-reduce already started; use scenario 2"));
    }
    let layout = &state.layout;
    let ownership = redistribute(layout, failed_rank)?;
    let mut acc = state.acc.clone();
    acc.remove(&failed_rank);
    for (rank, mbs) in &ownership {
        let a = acc.get_mut(rank).expect("survivor accumulator");
        let done = state.completed[rank] as usize;
        for &mb in &mbs[done..] {
            add_into(a, &layout.gradient(mb));
        }
    }
    Ok(state.finish(&acc))
}

/// Failure while segments are being all-reduced. If the failed worker's
/// segment is already reduced the worker is simply left out. Otherwise the
/// failed rank's micro-batches are recomputed by the survivors, but only
/// for the segments not yet reduced.
pub fn resume_scenario2(
    state: &GradientState,
    failed_rank: u32,
    failed_stage: u32,
) -> Result<Vec<i64>, TransitionError> {
    let layout = &state.layout;
    layout.check_rank(failed_rank)?;
    if failed_stage >= layout.pp {
        return Err(TransitionError::BadStage { stage: failed_stage, pp: layout.pp });
    }
    let k = state.reduced_segments();
    if k == 0 {
        return Err(TransitionError::WrongScenario("no all-reduce started; use scenario 1"));
    }
    if failed_stage < k || k == layout.pp {
        // Every rank's accumulator, including the failed rank's surviving
        // stages, still feeds the unreduced segments.
        return Ok(state.finish(&state.acc));
    }
    let ownership = redistribute(layout, failed_rank)?;
    let (from, _) = segment_bounds(layout.dims, layout.pp, k);
    let mut acc = state.acc.clone();
    acc.remove(&failed_rank);
    for (rank, mbs) in &ownership {
        let a = acc.get_mut(rank).expect("survivor accumulator");
        for &mb in &mbs[state.completed[rank] as usize..] {
            add_range(a, &layout.gradient(mb), from);
        }
    }
    Ok(state.finish(&acc))
}

/// Dispatches on whether any segment has been reduced.
pub fn resume(state: &GradientState, failed_rank: u32, failed_stage: u32) -> Result<Vec<i64>, TransitionError> {
    if state.reduced_segments() == 0 {
        resume_scenario1(state, failed_rank)
    } else {
        resume_scenario2(state, failed_rank, failed_stage)
    }
}
