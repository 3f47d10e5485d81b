//! Generate a failure trace and replay it against unicron and the
//! checkpoint-restart baseline.
//!
//! cargo run --release --example simulate_traces [trace-a|trace-b] [seed]

use unicron::simulator::{generate_trace, run_simulation, summarize, Policy, SimOptions, SimSetup, TracePreset};
use unicron::workload::{build_tasks, case_config};

fn main() {
    let mut args = std::env::args().skip(1);
    let preset: TracePreset = args.next().map_or(TracePreset::TraceA, |s| s.parse().expect("trace-a or trace-b"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("integer seed"));

    let cfg = case_config(5, 16, 8).unwrap();
    let setup = SimSetup::from_config(&cfg, build_tasks(&cfg, None).unwrap());
    let nodes = setup.cluster.nodes.iter().map(|n| (n.node_id.clone(), n.worker_ids.len())).collect();
    let trace = generate_trace(&preset.params(nodes, seed)).unwrap();
    println!("{preset} seed {seed}: {:.1} days, events {:?}", trace.horizon / 86_400.0, summarize(&trace));

    for policy in [Policy::Unicron, Policy::RestartCheckpoint { hot_spare: false }] {
        let out = run_simulation(&setup, &trace, policy, &SimOptions::default()).unwrap();
        let s = &out.summary;
        let worst = s.downtime_s.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        println!(
            "{policy:<20} {:5.1}% of failure-free WAF, {} replans ({} from lookup), {} escalations, most downtime {} {:.1}h",
            100.0 * s.accumulated_waf / s.ideal_waf,
            s.replans,
            s.lookup_hits,
            s.escalations,
            worst.0,
            worst.1 / 3600.0
        );
    }
}
