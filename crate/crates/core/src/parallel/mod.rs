//! Row-partitioned multithreaded execution.
//!
//! Rows of the weight matrix are split into contiguous, balanced ranges and
//! worker `k` always computes range `k` into its own slice of the output.
//! Rows are independent, so results are bitwise identical to the serial
//! kernel for every thread count and placement policy.

mod executor;
pub mod topology;

use std::fmt;
use std::str::FromStr;

pub use executor::{Executor, PlacedMatrix};
pub use topology::HostTopology;

use crate::error::{Error, Result};
use crate::quant::QuantMatrixQ4;

/// Thread and page placement policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NumaPolicy {
    /// Automatic NUMA balancing on, all other options off.
    BalancingOn,
    /// All options off.
    AllOff,
    /// Balancing off, workers bound to fixed CPUs.
    CoreBinding,
    /// Balancing off, weight shards first-touched by their worker and
    /// interleaved across nodes where the host allows it.
    MemoryInterleave,
}

impl NumaPolicy {
    pub const ALL: [NumaPolicy; 4] = [
        NumaPolicy::BalancingOn,
        NumaPolicy::AllOff,
        NumaPolicy::CoreBinding,
        NumaPolicy::MemoryInterleave,
    ];

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            NumaPolicy::BalancingOn => "balancing",
            NumaPolicy::AllOff => "alloff",
            NumaPolicy::CoreBinding => "bind",
            NumaPolicy::MemoryInterleave => "interleave",
        }
    }
}

impl fmt::Display for NumaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NumaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NumaPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown policy {s:?} (expected alloff, bind, interleave or balancing)"
                ))
            })
    }
}

/// Half-open row ranges, one per active worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadPlan {
    n_threads: usize,
    ranges: Vec<(usize, usize)>,
}

impl ThreadPlan {
    pub fn n_threads(&self) -> usize {
        self.n_threads
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    /// Number of rows covered.
    pub fn rows(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.1)
    }
}

/// Splits `m` rows into `min(t, m)` contiguous ranges. The first `m % t`
/// ranges get one extra row.
pub fn partition_rows(m: usize, t: usize) -> Result<ThreadPlan> {
    if m == 0 || t == 0 {
        return Err(Error::InvalidPlan(format!(
            "rows and threads must be positive, got m={m}, t={t}"
        )));
    }
    let parts = t.min(m);
    let base = m / parts;
    let extra = m % parts;
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        ranges.push((start, start + len));
        start += len;
    }
    Ok(ThreadPlan { n_threads: t, ranges })
}

/// How pages of the weight shards are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interleave {
    None,
    /// Each worker allocates and initializes its own shard.
    FirstTouch,
    /// First touch plus an OS interleave policy on every worker.
    FirstTouchOs,
}

/// Degradations observed while applying a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlacementWarning {
    /// The host has a single NUMA node.
    NoNuma,
    /// CPU affinity cannot be set on this host.
    NoAffinity,
    /// A worker could not be pinned.
    PinFailed,
    /// The OS refused the interleave request.
    InterleaveFailed,
    /// Host balancing is off but the policy expects it on.
    BalancingOffOnHost,
    /// Host balancing is on but the policy expects it off.
    BalancingOnOnHost,
    /// The host does not report its balancing status.
    BalancingUnknown,
}

impl PlacementWarning {
    pub fn name(self) -> &'static str {
        match self {
            PlacementWarning::NoNuma => "no-numa",
            PlacementWarning::NoAffinity => "no-affinity",
            PlacementWarning::PinFailed => "pin-failed",
            PlacementWarning::InterleaveFailed => "interleave-failed",
            PlacementWarning::BalancingOffOnHost => "host-balancing-off",
            PlacementWarning::BalancingOnOnHost => "host-balancing-on",
            PlacementWarning::BalancingUnknown => "balancing-unknown",
        }
    }
}

/// What a policy did on this host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementReport {
    pub policy: NumaPolicy,
    pub n_threads: usize,
    /// CPU for worker `k`, empty when workers are not pinned.
    pub pinning: Vec<usize>,
    pub interleave: Interleave,
    pub numa_nodes: usize,
    pub numa_balancing: Option<bool>,
    pub warnings: Vec<PlacementWarning>,
}

impl PlacementReport {
    pub fn warn(&mut self, w: PlacementWarning) {
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    pub fn has_warnings(&self) -> bool {
        !self.warnings.is_empty()
    }

    /// Warning names joined with `;`, the form used in CSV output.
    pub fn warning_names(&self) -> Vec<String> {
        self.warnings.iter().map(|w| w.name().to_string()).collect()
    }
}

impl fmt::Display for PlacementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "policy={} threads={} pinning=", self.policy, self.n_threads)?;
        if self.pinning.is_empty() {
            f.write_str("none")?;
        } else {
            let cpus: Vec<String> = self.pinning.iter().map(|c| c.to_string()).collect();
            write!(f, "{}", cpus.join(","))?;
        }
        let interleave = match self.interleave {
            Interleave::None => "none",
            Interleave::FirstTouch => "first-touch",
            Interleave::FirstTouchOs => "first-touch+os",
        };
        let balancing = match self.numa_balancing {
            Some(true) => "on",
            Some(false) => "off",
            None => "unknown",
        };
        write!(
            f,
            " interleave={interleave} numa_nodes={} host_balancing={balancing}",
            self.numa_nodes
        )?;
        if self.has_warnings() {
            write!(f, " warnings={}", self.warning_names().join(";"))?;
        }
        Ok(())
    }
}

/// Plans a policy for `n_threads` workers on `host` without touching the OS.
pub fn plan_placement(policy: NumaPolicy, n_threads: usize, host: &HostTopology) -> PlacementReport {
    let mut report = PlacementReport {
        policy,
        n_threads,
        pinning: Vec::new(),
        interleave: Interleave::None,
        numa_nodes: host.numa_nodes.len(),
        numa_balancing: host.numa_balancing,
        warnings: Vec::new(),
    };
    match (policy, host.numa_balancing) {
        (_, None) => report.warn(PlacementWarning::BalancingUnknown),
        (NumaPolicy::BalancingOn, Some(false)) => report.warn(PlacementWarning::BalancingOffOnHost),
        (NumaPolicy::BalancingOn, Some(true)) => {}
        (NumaPolicy::AllOff | NumaPolicy::CoreBinding | NumaPolicy::MemoryInterleave, Some(true)) => {
            report.warn(PlacementWarning::BalancingOnOnHost)
        }
        (_, Some(false)) => {}
    }
    match policy {
        NumaPolicy::BalancingOn | NumaPolicy::AllOff => {}
        NumaPolicy::CoreBinding => {
            if host.affinity_supported && !host.cpus.is_empty() {
                report.pinning = (0..n_threads).map(|k| host.cpus[k % host.cpus.len()]).collect();
            } else {
                report.warn(PlacementWarning::NoAffinity);
            }
        }
        NumaPolicy::MemoryInterleave => {
            if host.is_numa() {
                report.interleave = Interleave::FirstTouchOs;
            } else {
                report.interleave = Interleave::FirstTouch;
                report.warn(PlacementWarning::NoNuma);
            }
        }
    }
    report
}

/// Plans `policy` for the running host. Never fails; anything the host
/// cannot do is reported as a warning.
pub fn apply_policy(policy: NumaPolicy, n_threads: usize) -> PlacementReport {
    plan_placement(policy, n_threads, &HostTopology::detect())
}

/// One-shot parallel GEMV. Builds a pool for `plan.n_threads()` workers; use
/// an [`Executor`] to keep workers alive across calls.
pub fn parallel_gemv(
    a: &QuantMatrixQ4,
    x: &[f32],
    plan: &ThreadPlan,
    policy: NumaPolicy,
) -> Result<Vec<f32>> {
    if plan.rows() != a.rows() {
        return Err(Error::InvalidPlan(format!(
            "plan covers {} rows, matrix has {}",
            plan.rows(),
            a.rows()
        )));
    }
    if plan.n_threads() == 1 {
        return crate::kernels::gemv_quantizing(a, x);
    }
    let exec = Executor::new(plan.n_threads(), policy)?;
    exec.gemv_with_plan(a, x, plan)
}

#[cfg(test)]
mod tests;
