//! Severity-graded recovery: retry in place, restart the process, then
//! drain the node and ask for a new plan. Every step goes to an audit log.
//!
//! cargo run --example recovery_workflow

use std::collections::BTreeSet;

use unicron::domain::{ClusterState, DetectionSource, ErrorEvent, StatusKind, Subject, WorkerId};
use unicron::recovery::{apply, decide, resolve, AuditLog, Outcome};

fn main() {
    let mut state = ClusterState::uniform(2, 4);
    let held: BTreeSet<WorkerId> = state.workers[..6].iter().map(|w| w.worker_id.clone()).collect();
    state.assign(&"llm-a".into(), held);

    let event = ErrorEvent::new(
        12.0,
        DetectionSource::StatisticalMonitoring,
        StatusKind::NcclTimeout,
        Subject::Worker("n1-g0".into()),
    );
    let mut log = AuditLog::new(Vec::new());

    // Both the retry and the restart fail, so the node is drained.
    let outcomes = [Outcome::Failure, Outcome::Failure, Outcome::Success];
    let mut current = event.clone();
    for outcome in outcomes {
        let action = decide(&current);
        log.record(current.time, &action, outcome).unwrap();
        let res = apply(&action, &state, outcome).unwrap();
        match res.escalation {
            Some(next) => current = next,
            None => break,
        }
    }
    print!("{}", String::from_utf8(log.into_inner()).unwrap());

    let (next, records, request) = resolve(&event, &state, &outcomes).unwrap();
    for r in &records {
        println!("{:?} failed: {:?} -> {:?}", r.attempted, r.original.severity, r.escalated_to);
    }
    let req = request.expect("a drained node triggers replanning");
    println!(
        "replan: triggers {:?}, capacity {} of {}, faulted {:?}",
        req.triggers,
        req.capacity,
        state.workers.len(),
        req.faulted
    );
    println!("llm-a now holds {} workers", next.assignment.get(&"llm-a".into()).map_or(0, |a| a.workers.len()));
}
