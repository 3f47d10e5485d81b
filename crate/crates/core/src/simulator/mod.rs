//! Trace-driven cluster simulation and policy comparison.

mod engine;
mod metrics;
mod policy;
mod trace;

use rayon::prelude::*;

pub use engine::{run_simulation, SimError, SimOptions, SimOutput, SimSetup};
pub use metrics::{ComparisonReport, MetricsSeries, PolicyResult, Sample, SimSummary};
pub use policy::{static_allocation, Policy};
pub use trace::{
    generate_trace, summarize, FailureTrace, RepairModel, SeverityMix, TraceError, TraceEvent, TraceHeader, TraceKind,
    TraceParams, TracePreset, DAY_S, WEEK_S,
};

/// Runs every policy on the same trace, in parallel, and reports each one's
/// accumulated WAF against unicron's. Unicron is run even when not listed.
pub fn compare_policies(
    setup: &SimSetup,
    trace: &FailureTrace,
    policies: &[Policy],
) -> Result<ComparisonReport, SimError> {
    if policies.len() < 2 {
        return Err(SimError::TooFewPolicies);
    }
    let mut all = policies.to_vec();
    if !all.contains(&Policy::Unicron) {
        all.insert(0, Policy::Unicron);
    }
    let totals: Vec<f64> = all
        .par_iter()
        .map(|p| run_simulation(setup, trace, *p, &SimOptions::totals()).map(|o| o.summary.accumulated_waf))
        .collect::<Result<_, _>>()?;
    let unicron = totals[all.iter().position(|p| *p == Policy::Unicron).expect("inserted")];
    let results = all
        .iter()
        .zip(&totals)
        .filter(|(p, _)| policies.contains(p))
        .map(|(p, &acc)| PolicyResult {
            policy: p.name().to_owned(),
            accumulated_waf: acc,
            unicron_ratio: if acc > 0.0 { unicron / acc } else { f64::INFINITY },
        })
        .collect();
    Ok(ComparisonReport { horizon: trace.horizon, seed: trace.seed, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_tasks, case_config};

    #[test]
    fn unicron_against_itself() {
        let cfg = case_config(5, 16, 8).unwrap();
        let setup = SimSetup::from_config(&cfg, build_tasks(&cfg, None).unwrap());
        let nodes: Vec<_> = setup.cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect();
        let trace = generate_trace(&TracePreset::TraceB.params(nodes, 3)).unwrap();
        let r = compare_policies(&setup, &trace, &[Policy::Unicron, Policy::AffectedTaskOnly]).unwrap();
        assert_eq!(r.results[0].unicron_ratio, 1.0);
        assert!(r.results[1].unicron_ratio >= 1.0);
        assert!(compare_policies(&setup, &trace, &[Policy::Unicron]).is_err());
    }
}
