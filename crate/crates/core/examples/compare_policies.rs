//! Unicron against every baseline over several seeds of both presets.
//!
//! cargo run --release --example compare_policies [runs]

use unicron::simulator::{compare_policies, generate_trace, Policy, SimSetup, TracePreset};
use unicron::workload::{build_tasks, case_config};

fn main() {
    let runs: u64 = std::env::args().nth(1).map_or(5, |s| s.parse().expect("integer run count"));
    let cfg = case_config(5, 16, 8).unwrap();
    let setup = SimSetup::from_config(&cfg, build_tasks(&cfg, None).unwrap());
    let nodes: Vec<_> = setup.cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect();

    let mut policies = vec![Policy::RestartCheckpoint { hot_spare: true }];
    policies.extend(Policy::BASELINES);
    for preset in [TracePreset::TraceA, TracePreset::TraceB] {
        let mut sums = vec![0.0; policies.len()];
        for seed in 0..runs {
            let trace = generate_trace(&preset.params(nodes.clone(), seed)).unwrap();
            let report = compare_policies(&setup, &trace, &policies).unwrap();
            for (sum, r) in sums.iter_mut().zip(&report.results) {
                *sum += r.unicron_ratio;
            }
        }
        println!("{preset}, mean unicron/baseline WAF over {runs} seeds:");
        for (p, sum) in policies.iter().zip(&sums) {
            println!("  {:<30} {:.3}", p.name(), sum / runs as f64);
        }
    }
}
