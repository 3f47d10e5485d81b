//! Analytic stand-in for measured throughput tables.
//!
//! For every worker count the best (dp, pp, tp) factorization is picked
//! subject to memory, layer-count and batch-size limits. Efficiency falls
//! with the pipeline bubble, tensor-parallel overhead, data-parallel
//! communication and uneven micro-batch splits, which makes the table
//! non-monotonic; counts with no feasible factorization get no row.

use crate::domain::{Layout, SynthModel, TaskId, ThroughputTable};

const TP_DEGREES: [u32; 4] = [1, 2, 4, 8];

/// Transformer depth assumed for a model of `size` parameters.
pub fn layers_for(size: f64) -> u32 {
    match size {
        s if s <= 2e9 => 24,
        s if s <= 8e9 => 32,
        s if s <= 20e9 => 40,
        s if s <= 40e9 => 48,
        s if s <= 80e9 => 80,
        _ => 96,
    }
}

/// Micro-batches per global batch.
pub fn micro_batches_for(size: f64, model: &SynthModel) -> u32 {
    model.micro_batches_per_sqrt_b * (size / 1e9).sqrt().ceil().max(1.0) as u32
}

fn efficiency(layout: Layout, batch: u32, model: &SynthModel) -> f64 {
    let Layout { dp, pp, tp } = layout;
    let per_rank = batch.div_ceil(dp);
    let imbalance = f64::from(batch) / f64::from(dp * per_rank);
    let bubble = f64::from(per_rank) / f64::from(per_rank + pp - 1);
    let tp_factor = 1.0 / (1.0 + model.tp_penalty * f64::from(tp).log2());
    let dp_share = f64::from(dp - 1) / f64::from(dp);
    let dp_factor = 1.0 / (1.0 + model.dp_comm * dp_share / f64::from(per_rank));
    model.base_efficiency * imbalance * bubble * tp_factor * dp_factor
}

/// Best feasible layout for `x` workers and its fraction of peak.
pub fn best_layout(size: f64, x: u32, model: &SynthModel) -> Option<(Layout, f64)> {
    if x == 0 {
        return None;
    }
    let layers = layers_for(size);
    let batch = micro_batches_for(size, model);
    let budget = model.memory_headroom * model.gpu_memory_bytes;
    let mut best: Option<(Layout, f64)> = None;
    for tp in TP_DEGREES.into_iter().filter(|tp| *tp <= model.node_size && x.is_multiple_of(*tp)) {
        for pp in (1..=layers.min(x / tp)).filter(|pp| (x / tp).is_multiple_of(*pp)) {
            let dp = x / tp / pp;
            if dp > batch || size * model.bytes_per_param / f64::from(pp * tp) > budget {
                continue;
            }
            let layout = Layout::new(dp, pp, tp);
            let eff = efficiency(layout, batch, model);
            if best.is_none_or(|(_, e)| eff > e) {
                best = Some((layout, eff));
            }
        }
    }
    best
}

/// Smallest worker count that can hold the model at all.
pub fn min_feasible_workers(size: f64, model: &SynthModel) -> Option<u32> {
    (1..=4096).find(|x| best_layout(size, *x, model).is_some())
}

/// Throughput table for every feasible count in `1..=max_x`.
pub fn synthesize_table(task: TaskId, size: f64, min_workers: u32, max_x: u32, model: &SynthModel) -> ThroughputTable {
    let mut tbl = ThroughputTable::new(task, min_workers);
    for x in 1..=max_x {
        if let Some((layout, eff)) = best_layout(size, x, model) {
            tbl.insert(x, model.peak_flops * f64::from(x) * eff, layout).expect("synthesized rows are well formed");
        }
    }
    tbl
}
