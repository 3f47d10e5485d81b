use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{NodeId, WorkerId};

/// Failure impact class. `Sev1` is the most severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Sev1,
    Sev2,
    Sev3,
}

impl Severity {
    fn rank(self) -> u8 {
        match self {
            Severity::Sev1 => 3,
            Severity::Sev2 => 2,
            Severity::Sev3 => 1,
        }
    }

    /// The next level up, if any.
    pub fn escalate(self) -> Option<Severity> {
        match self {
            Severity::Sev3 => Some(Severity::Sev2),
            Severity::Sev2 => Some(Severity::Sev1),
            Severity::Sev1 => None,
        }
    }
}

impl Ord for Severity {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl PartialOrd for Severity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Sev1 => "sev1",
            Severity::Sev2 => "sev2",
            Severity::Sev3 => "sev3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    NodeHealth,
    ProcessSupervision,
    ExceptionPropagation,
    StatisticalMonitoring,
}

impl DetectionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionSource::NodeHealth => "node_health",
            DetectionSource::ProcessSupervision => "process_supervision",
            DetectionSource::ExceptionPropagation => "exception_propagation",
            DetectionSource::StatisticalMonitoring => "statistical_monitoring",
        }
    }
}

/// Error-status labels produced by the four detection methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatusKind {
    #[serde(rename = "Lost connection")]
    LostConnection,
    #[serde(rename = "Exited abnormally")]
    ExitedAbnormally,
    #[serde(rename = "Connection refused/reset")]
    ConnectionRefused,
    #[serde(rename = "Illegal memory access")]
    IllegalMemoryAccess,
    #[serde(rename = "ECC errors")]
    EccErrors,
    #[serde(rename = "Invalid DMA mapping")]
    InvalidDmaMapping,
    #[serde(rename = "CUDA errors")]
    CudaErrors,
    #[serde(rename = "NVLink errors")]
    NvlinkErrors,
    #[serde(rename = "GPU driver errors")]
    GpuDriverErrors,
    #[serde(rename = "Other network errors")]
    OtherNetworkErrors,
    #[serde(rename = "Other software errors")]
    OtherSoftwareErrors,
    #[serde(rename = "NCCL timeout")]
    NcclTimeout,
    #[serde(rename = "Link flapping")]
    LinkFlapping,
    #[serde(rename = "Task hang")]
    TaskHang,
}

/// (detection method, status, severity) rows. "Other software errors"
/// appears under two methods; the source disambiguates it.
pub const STATUS_TABLE: [(DetectionSource, StatusKind, Severity); 15] = {
    use DetectionSource::*;
    use Severity::*;
    use StatusKind::*;
    [
        (NodeHealth, LostConnection, Sev1),
        (ProcessSupervision, ExitedAbnormally, Sev2),
        (ExceptionPropagation, ConnectionRefused, Sev3),
        (ExceptionPropagation, IllegalMemoryAccess, Sev2),
        (ExceptionPropagation, EccErrors, Sev1),
        (ExceptionPropagation, InvalidDmaMapping, Sev1),
        (ExceptionPropagation, CudaErrors, Sev2),
        (ExceptionPropagation, NvlinkErrors, Sev1),
        (ExceptionPropagation, GpuDriverErrors, Sev1),
        (ExceptionPropagation, OtherNetworkErrors, Sev3),
        (ExceptionPropagation, OtherSoftwareErrors, Sev2),
        (StatisticalMonitoring, NcclTimeout, Sev3),
        (StatisticalMonitoring, LinkFlapping, Sev3),
        (StatisticalMonitoring, TaskHang, Sev2),
        (StatisticalMonitoring, OtherSoftwareErrors, Sev2),
    ]
};

impl StatusKind {
    pub const ALL: [StatusKind; 14] = [
        StatusKind::LostConnection,
        StatusKind::ExitedAbnormally,
        StatusKind::ConnectionRefused,
        StatusKind::IllegalMemoryAccess,
        StatusKind::EccErrors,
        StatusKind::InvalidDmaMapping,
        StatusKind::CudaErrors,
        StatusKind::NvlinkErrors,
        StatusKind::GpuDriverErrors,
        StatusKind::OtherNetworkErrors,
        StatusKind::OtherSoftwareErrors,
        StatusKind::NcclTimeout,
        StatusKind::LinkFlapping,
        StatusKind::TaskHang,
    ];

    pub fn severity(self) -> Severity {
        STATUS_TABLE.iter().find(|(_, k, _)| *k == self).map(|(_, _, s)| *s).expect("every status kind has a table row")
    }

    /// Detection method that normally reports this status (the first table row).
    pub fn primary_source(self) -> DetectionSource {
        STATUS_TABLE.iter().find(|(_, k, _)| *k == self).map(|(s, _, _)| *s).expect("every status kind has a table row")
    }

    pub fn reported_by(self, source: DetectionSource) -> bool {
        STATUS_TABLE.iter().any(|(s, k, _)| *s == source && *k == self)
    }

    pub fn label(self) -> &'static str {
        match self {
            StatusKind::LostConnection => "Lost connection",
            StatusKind::ExitedAbnormally => "Exited abnormally",
            StatusKind::ConnectionRefused => "Connection refused/reset",
            StatusKind::IllegalMemoryAccess => "Illegal memory access",
            StatusKind::EccErrors => "ECC errors",
            StatusKind::InvalidDmaMapping => "Invalid DMA mapping",
            StatusKind::CudaErrors => "CUDA errors",
            StatusKind::NvlinkErrors => "NVLink errors",
            StatusKind::GpuDriverErrors => "GPU driver errors",
            StatusKind::OtherNetworkErrors => "Other network errors",
            StatusKind::OtherSoftwareErrors => "Other software errors",
            StatusKind::NcclTimeout => "NCCL timeout",
            StatusKind::LinkFlapping => "Link flapping",
            StatusKind::TaskHang => "Task hang",
        }
    }

    pub fn from_label(label: &str) -> Option<StatusKind> {
        StatusKind::ALL.into_iter().find(|k| k.label() == label)
    }

    /// All (source, status) pairs at a given severity, in table order.
    pub fn rows_with(severity: Severity) -> impl Iterator<Item = (DetectionSource, StatusKind)> {
        STATUS_TABLE.into_iter().filter(move |(_, _, s)| *s == severity).map(|(src, k, _)| (src, k))
    }
}

impl fmt::Display for StatusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Node(NodeId),
    Worker(WorkerId),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Node(n) => write!(f, "node:{n}"),
            Subject::Worker(w) => write!(f, "worker:{w}"),
        }
    }
}

/// A detected abnormal status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    /// Seconds since simulation start.
    pub time: f64,
    pub source: DetectionSource,
    pub status_kind: StatusKind,
    pub subject: Subject,
    pub severity: Severity,
    /// Set when this event was produced by escalating a failed recovery;
    /// holds the severity of the event that was escalated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalated_from: Option<Severity>,
}

impl ErrorEvent {
    /// Builds a non-escalated event whose severity comes from the status table.
    pub fn new(time: f64, source: DetectionSource, status_kind: StatusKind, subject: Subject) -> Self {
        Self { time, source, status_kind, subject, severity: status_kind.severity(), escalated_from: None }
    }

    /// Processing order for simultaneous events: severity descending, then
    /// time ascending, then subject.
    pub fn processing_order(a: &ErrorEvent, b: &ErrorEvent) -> Ordering {
        b.severity.cmp(&a.severity).then(a.time.total_cmp(&b.time)).then_with(|| a.subject.cmp(&b.subject))
    }
}
