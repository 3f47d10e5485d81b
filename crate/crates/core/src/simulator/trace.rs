//! Failure traces: Poisson arrivals per node, severity mix, repair delays.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DetectionSource, NodeId, Severity, StatusKind};

pub const WEEK_S: f64 = 7.0 * 86_400.0;
pub const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Sev1NodeFault,
    Sev2Error,
    Sev3Error,
    NodeRepair,
}

impl TraceKind {
    pub fn severity(self) -> Option<Severity> {
        match self {
            TraceKind::Sev1NodeFault => Some(Severity::Sev1),
            TraceKind::Sev2Error => Some(Severity::Sev2),
            TraceKind::Sev3Error => Some(Severity::Sev3),
            TraceKind::NodeRepair => None,
        }
    }

    fn for_severity(s: Severity) -> Self {
        match s {
            Severity::Sev1 => TraceKind::Sev1NodeFault,
            Severity::Sev2 => TraceKind::Sev2Error,
            Severity::Sev3 => TraceKind::Sev3Error,
        }
    }
}

/// One line of a trace file. Node faults and repairs name a node, other
/// errors name a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: TraceKind,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DetectionSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub horizon: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureTrace {
    pub horizon: f64,
    pub seed: u64,
    /// Digest of the configuration the trace was generated for.
    pub config_digest: Option<String>,
    pub events: Vec<TraceEvent>,
}

impl FailureTrace {
    pub fn empty(horizon: f64, seed: u64) -> Self {
        Self { horizon, seed, config_digest: None, events: Vec::new() }
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        serde_json::to_writer(
            &mut out,
            &TraceHeader { horizon: self.horizon, seed: self.seed, config_digest: self.config_digest.clone() },
        )?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a trace. Without a header the horizon defaults to the last
    /// event time and the seed to 0.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut header = None;
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| TraceError::Line { line: i + 1, msg: e.to_string() })?;
            if value.get("horizon").is_some() {
                header = Some(
                    serde_json::from_value::<TraceHeader>(value)
                        .map_err(|e| TraceError::Line { line: i + 1, msg: e.to_string() })?,
                );
                continue;
            }
            let ev: TraceEvent =
                serde_json::from_value(value).map_err(|e| TraceError::Line { line: i + 1, msg: e.to_string() })?;
            if events.last().is_some_and(|p: &TraceEvent| p.t > ev.t) {
                return Err(TraceError::Unsorted { line: i + 1 });
            }
            events.push(ev);
        }
        let horizon = header.as_ref().map_or_else(|| events.last().map_or(0.0, |e| e.t), |h| h.horizon);
        let (seed, config_digest) = header.map_or((0, None), |h| (h.seed, h.config_digest));
        Ok(Self { horizon, seed, config_digest, events })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("trace line {line}: events must be sorted by time")]
    Unsorted { line: usize },
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("invalid trace parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum RepairModel {
    Uniform { min_s: f64, max_s: f64 },
    Exponential { mean_s: f64 },
}

/// Probability of each severity; entries sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityMix {
    pub sev1: f64,
    pub sev2: f64,
    pub sev3: f64,
}

impl Default for SeverityMix {
    /// Transient faults dominate; the rest splits between restarts and node loss.
    fn default() -> Self {
        Self { sev1: 0.12, sev2: 0.15, sev3: 0.73 }
    }
}

impl SeverityMix {
    fn draw(&self, u: f64) -> Severity {
        if u < self.sev1 {
            Severity::Sev1
        } else if u < self.sev1 + self.sev2 {
            Severity::Sev2
        } else {
            Severity::Sev3
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceParams {
    pub nodes: Vec<(NodeId, usize)>,
    /// Failure arrivals per node per second.
    pub lambda_node: f64,
    pub mix: SeverityMix,
    pub repair: RepairModel,
    pub horizon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TracePreset {
    TraceA,
    TraceB,
}

impl fmt::Display for TracePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TracePreset::TraceA => "trace-a",
            TracePreset::TraceB => "trace-b",
        })
    }
}

impl std::str::FromStr for TracePreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trace-a" => Ok(TracePreset::TraceA),
            "trace-b" => Ok(TracePreset::TraceB),
            other => Err(format!("unknown preset {other:?} (expected trace-a or trace-b)")),
        }
    }
}

/// Observed counts the trace-a preset is tuned to, on 16 nodes over 8 weeks.
const A_SEV1: f64 = 10.0;
const A_OTHER: f64 = 33.0;
const A_NODES: f64 = 16.0;
const A_HORIZON: f64 = 8.0 * WEEK_S;
const B_AMPLIFY: f64 = 20.0;

impl TracePreset {
    pub fn horizon(self) -> f64 {
        match self {
            TracePreset::TraceA => A_HORIZON,
            TracePreset::TraceB => 7.0 * DAY_S,
        }
    }

    pub fn lambda_node(self) -> f64 {
        let base = (A_SEV1 + A_OTHER) / (A_NODES * A_HORIZON);
        match self {
            TracePreset::TraceA => base,
            TracePreset::TraceB => base * B_AMPLIFY,
        }
    }

    /// Node loss is 10 of 43 events; the rest split 73:15 between
    /// transient (sev3) and restart-level (sev2) errors.
    pub fn mix(self) -> SeverityMix {
        let total = A_SEV1 + A_OTHER;
        let other = A_OTHER / total;
        SeverityMix { sev1: A_SEV1 / total, sev2: other * 15.0 / 88.0, sev3: other * 73.0 / 88.0 }
    }

    pub fn repair(self, nodes: usize) -> RepairModel {
        match self {
            TracePreset::TraceA => RepairModel::Uniform { min_s: DAY_S, max_s: 7.0 * DAY_S },
            TracePreset::TraceB => {
                // Nodes come back about as fast as the cluster loses them.
                let cluster_sev1 = self.lambda_node() * self.mix().sev1 * nodes as f64;
                RepairModel::Exponential { mean_s: 1.0 / cluster_sev1 }
            }
        }
    }

    pub fn params(self, nodes: Vec<(NodeId, usize)>, seed: u64) -> TraceParams {
        TraceParams {
            repair: self.repair(nodes.len()),
            nodes,
            lambda_node: self.lambda_node(),
            mix: self.mix(),
            horizon: self.horizon(),
            seed,
        }
    }
}

fn validate(p: &TraceParams) -> Result<(), TraceError> {
    let m = p.mix;
    let sum = m.sev1 + m.sev2 + m.sev3;
    if [m.sev1, m.sev2, m.sev3].iter().any(|v| *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(TraceError::Params(format!("severity mix must be non-negative and sum to 1 (got {sum})")));
    }
    if !(p.lambda_node >= 0.0 && p.lambda_node.is_finite()) {
        return Err(TraceError::Params(format!("lambda must be >= 0 (got {})", p.lambda_node)));
    }
    if p.horizon.is_nan() || p.horizon <= 0.0 {
        return Err(TraceError::Params("horizon must be > 0".into()));
    }
    match p.repair {
        RepairModel::Uniform { min_s, max_s } if !(0.0 <= min_s && min_s <= max_s) => {
            Err(TraceError::Params(format!("repair range [{min_s}, {max_s}] is empty")))
        }
        RepairModel::Exponential { mean_s } if mean_s.is_nan() || mean_s <= 0.0 => {
            Err(TraceError::Params("repair mean must be > 0".into()))
        }
        _ => Ok(()),
    }
}

/// Generates a trace. Each node draws from its own stream of one seeded
/// generator, so adding a node does not perturb the others. Events that
/// land while their node is down are dropped.
pub fn generate_trace(p: &TraceParams) -> Result<FailureTrace, TraceError> {
    validate(p)?;
    let mut events = Vec::new();
    if p.lambda_node > 0.0 {
        let gap = Exp::new(p.lambda_node).map_err(|e| TraceError::Params(e.to_string()))?;
        for (idx, (node, gpus)) in p.nodes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(idx as u64);
            let mut t = 0.0;
            let mut down_until = f64::NEG_INFINITY;
            loop {
                t += gap.sample(&mut rng);
                if t >= p.horizon {
                    break;
                }
                let sev = p.mix.draw(rng.random());
                let rows: Vec<(DetectionSource, StatusKind)> = StatusKind::rows_with(sev).collect();
                let (source, status) = rows[rng.random_range(0..rows.len())];
                let gpu = rng.random_range(0..(*gpus).max(1));
                let repair = match p.repair {
                    RepairModel::Uniform { min_s, max_s } => rng.random_range(min_s..=max_s),
                    RepairModel::Exponential { mean_s } => {
                        Exp::new(1.0 / mean_s).expect("positive rate").sample(&mut rng)
                    }
                };
                if t < down_until {
                    continue;
                }
                let subject = match sev {
                    Severity::Sev1 => node.to_string(),
                    _ => format!("{node}-g{gpu}"),
                };
                events.push(TraceEvent {
                    t,
                    kind: TraceKind::for_severity(sev),
                    subject,
                    status: Some(status),
                    source: Some(source),
                });
                if sev == Severity::Sev1 {
                    down_until = t + repair;
                    if down_until < p.horizon {
                        events.push(TraceEvent {
                            t: down_until,
                            kind: TraceKind::NodeRepair,
                            subject: node.to_string(),
                            status: None,
                            source: None,
                        });
                    }
                }
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.subject.cmp(&b.subject)));
    Ok(FailureTrace { horizon: p.horizon, seed: p.seed, config_digest: None, events })
}

/// Event counts by kind, for summaries.
pub fn summarize(trace: &FailureTrace) -> BTreeMap<TraceKind, usize> {
    let mut out = BTreeMap::new();
    for e in &trace.events {
        *out.entry(e.kind).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: usize) -> Vec<(NodeId, usize)> {
        (0..n).map(|i| (NodeId::new(format!("n{i}")), 8)).collect()
    }

    #[test]
    fn zero_rate_is_empty() {
        let mut p = TracePreset::TraceA.params(nodes(16), 1);
        p.lambda_node = 0.0;
        assert!(generate_trace(&p).unwrap().events.is_empty());
    }

    #[test]
    fn deterministic_and_sorted() {
        let p = TracePreset::TraceB.params(nodes(16), 42);
        let a = generate_trace(&p).unwrap();
        assert_eq!(a, generate_trace(&p).unwrap());
        assert!(a.events.windows(2).all(|w| w[0].t <= w[1].t));
        let other = generate_trace(&TracePreset::TraceB.params(nodes(16), 43)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn repairs_follow_faults() {
        let t = generate_trace(&TracePreset::TraceB.params(nodes(16), 5)).unwrap();
        let mut down = std::collections::BTreeSet::new();
        for e in &t.events {
            match e.kind {
                TraceKind::Sev1NodeFault => assert!(down.insert(e.subject.clone())),
                TraceKind::NodeRepair => assert!(down.remove(&e.subject)),
                _ => assert!(!down.contains(e.subject.split("-g").next().unwrap())),
            }
        }
    }

    #[test]
    fn preset_counts_near_targets() {
        let mut a_sev1 = 0;
        let mut a_other = 0;
        let mut b_sev1 = 0;
        let mut b_other = 0;
        let seeds = 40;
        for seed in 0..seeds {
            let a = generate_trace(&TracePreset::TraceA.params(nodes(16), seed)).unwrap();
            a_sev1 += a.count(TraceKind::Sev1NodeFault);
            a_other += a.count(TraceKind::Sev2Error) + a.count(TraceKind::Sev3Error);
            let b = generate_trace(&TracePreset::TraceB.params(nodes(16), seed)).unwrap();
            b_sev1 += b.count(TraceKind::Sev1NodeFault);
            b_other += b.count(TraceKind::Sev2Error) + b.count(TraceKind::Sev3Error);
        }
        let mean = |c: usize| c as f64 / seeds as f64;
        assert!((mean(a_sev1) - 10.0).abs() < 5.0, "{}", mean(a_sev1));
        assert!((mean(a_other) - 33.0).abs() < 16.5, "{}", mean(a_other));
        assert!((mean(b_sev1) - 26.0).abs() < 13.0, "{}", mean(b_sev1));
        assert!((mean(b_other) - 80.0).abs() < 40.0, "{}", mean(b_other));
    }

    #[test]
    fn jsonl_round_trip() {
        let t = generate_trace(&TracePreset::TraceA.params(nodes(4), 9)).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back = FailureTrace::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let bare = "{\"t\": 5.0, \"kind\": \"sev2_error\", \"subject\": \"n0-g1\"}\n";
        let t = FailureTrace::read_jsonl(bare.as_bytes()).unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.horizon, 5.0);
        let unsorted = "{\"t\": 5, \"kind\": \"sev2_error\", \"subject\": \"a\"}\n{\"t\": 1, \"kind\": \"sev2_error\", \"subject\": \"a\"}";
        assert!(matches!(FailureTrace::read_jsonl(unsorted.as_bytes()), Err(TraceError::Unsorted { line: 2 })));
    }

    #[test]
    fn bad_params() {
        let mut p = TracePreset::TraceA.params(nodes(2), 1);
        p.mix.sev1 = 0.9;
        assert!(generate_trace(&p).is_err());
        let mut p = TracePreset::TraceA.params(nodes(2), 1);
        p.repair = RepairModel::Uniform { min_s: 5.0, max_s: 1.0 };
        assert!(generate_trace(&p).is_err());
    }
}
