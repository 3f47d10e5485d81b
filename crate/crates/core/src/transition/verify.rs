//! Equivalence checks: a resumed iteration against the failure-free one.

use std::fmt;

use serde::Serialize;

use super::gradient::{digest, resume, run_iteration, GradientState, IterationLayout, TransitionError, DEFAULT_DIMS};

/// Where in the iteration the worker fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePoint {
    /// Every rank has finished this many of its micro-batches; no reduce yet.
    AfterMicroBatch(u32),
    /// Accumulation is done and this many segments are reduced (at least one).
    AfterReducedSegments(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifyCase {
    pub dp: u32,
    pub pp: u32,
    pub micro_batches: u32,
    pub fail_rank: u32,
    /// Pipeline stage of the failed worker.
    pub fail_stage: u32,
    pub point: FailurePoint,
}

impl fmt::Display for VerifyCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dp={} pp={} B={} rank={} stage={} ",
            self.dp, self.pp, self.micro_batches, self.fail_rank, self.fail_stage
        )?;
        match self.point {
            FailurePoint::AfterMicroBatch(m) => write!(f, "after_mb={m}"),
            FailurePoint::AfterReducedSegments(k) => write!(f, "reduced={k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Equal {
        digest: String,
    },
    Unequal {
        expected: String,
        got: String,
    },
    /// No surviving replica; the task must reload a checkpoint instead.
    CheckpointFallback,
}

/// Runs one failure-and-resume and compares against the reference aggregate.
pub fn verify_case(case: &VerifyCase, iteration: u64) -> Result<Verdict, TransitionError> {
    let layout = IterationLayout::new(case.dp, case.pp, case.micro_batches, DEFAULT_DIMS, iteration)?;
    let state = match case.point {
        FailurePoint::AfterMicroBatch(m) => GradientState::lockstep(&layout, m)?,
        FailurePoint::AfterReducedSegments(0) => {
            return Err(TransitionError::WrongScenario("reduced segment count must be >= 1"));
        }
        FailurePoint::AfterReducedSegments(k) => GradientState::reducing(&layout, k)?,
    };
    let expected = digest(&run_iteration(&layout));
    match resume(&state, case.fail_rank, case.fail_stage) {
        Ok(g) => {
            let got = digest(&g);
            Ok(if got == expected { Verdict::Equal { digest: got } } else { Verdict::Unequal { expected, got } })
        }
        Err(TransitionError::NoSurvivors) => Ok(Verdict::CheckpointFallback),
        Err(e) => Err(e),
    }
}

/// The full grid: DP in {2,3,4,8}, PP in {1,2,4}, B in {DP, 2DP, 4DP},
/// every failed rank and stage, every micro-batch boundary and every
/// reduced-segment count.
pub fn sweep_grid() -> Vec<VerifyCase> {
    let mut out = Vec::new();
    for dp in [2, 3, 4, 8] {
        for pp in [1, 2, 4] {
            for mult in [1, 2, 4] {
                let b = dp * mult;
                let points = (0..=mult)
                    .map(FailurePoint::AfterMicroBatch)
                    .chain((1..=pp).map(FailurePoint::AfterReducedSegments));
                for point in points {
                    for fail_rank in 0..dp {
                        for fail_stage in 0..pp {
                            out.push(VerifyCase { dp, pp, micro_batches: b, fail_rank, fail_stage, point });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepReport {
    pub cases: usize,
    pub equal: usize,
    pub fallback: usize,
    pub unequal: Vec<VerifyCase>,
}

pub fn run_sweep(cases: &[VerifyCase], iteration: u64) -> Result<SweepReport, TransitionError> {
    let mut report = SweepReport { cases: cases.len(), ..Default::default() };
    for c in cases {
        match verify_case(c, iteration)? {
            Verdict::Equal { .. } => report.equal += 1,
            Verdict::CheckpointFallback => report.fallback += 1,
            Verdict::Unequal { .. } => report.unequal.push(*c),
        }
    }
    Ok(report)
}
