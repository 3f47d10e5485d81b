//! The four detectors: heartbeats, process supervision, exception
//! propagation and iteration-time statistics.
//!
//! cargo run --example detect_failures

use unicron::detection::{
    classify_exception_label, simulate_node_loss, supervision_detection_time, ExitObservation, IterationHealth,
    Monitor, Observation,
};
use unicron::domain::{DetectionConfig, Subject, TaskId, WorkerId};

fn main() {
    let cfg = DetectionConfig::default();

    let lost = simulate_node_loss(cfg.heartbeat_period_s, cfg.heartbeat_timeout_s, cfg.check_period_s, 100.3).unwrap();
    println!("node agent dies at 100.3s, reported at {lost:.1}s");
    println!(
        "process exits at 50.2s, supervisor notices at {:.1}s",
        supervision_detection_time(cfg.supervision_period_s, 50.2)
    );
    for label in ["CUDA errors", "ECC errors", "Illegal memory access", "segfault in dataloader"] {
        let (kind, sev) = classify_exception_label(label);
        println!("exception {label:?} -> {kind:?} ({sev:?})");
    }

    // A coordinator fed a steady 20s iteration stream that then stalls.
    let mut monitor = Monitor::new(&cfg).unwrap();
    let task = TaskId::new("gpt-7b");
    let worker = WorkerId::new("n3-g0");
    monitor.watch_task(task.clone(), Subject::Worker(worker.clone()));
    let mut batch: Vec<Observation> = (1..=16)
        .map(|k| Observation::IterationDone { task: task.clone(), duration: 20.0, time: 20.0 * f64::from(k) })
        .collect();
    batch.push(Observation::ProcessExit { worker, exit: ExitObservation::Signaled { signal: 9 }, time: 330.0 });
    for ev in monitor.ingest(batch).unwrap() {
        println!("ingest: {:?} {:?} on {} at {}s", ev.severity, ev.status_kind, ev.subject, ev.time);
    }
    for now in [340.0, 370.0, 381.0] {
        let health = monitor.iterations.statistical_check(&task, now).unwrap();
        let note = if health == IterationHealth::Failed { " -> task hang raised" } else { "" };
        println!("t={now}s since last iteration {:.0}s: {health:?}{note}", now - 320.0);
    }
    let stall = monitor.iterations.failure_detection_time(&task, cfg.check_period_s).unwrap();
    println!("stall declared at {stall}s");
}
