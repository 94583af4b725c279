//! Host CPU / NUMA discovery and the OS calls behind core binding and
//! memory interleaving. Everything degrades to a no-op on hosts that do
//! not expose the relevant interface.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostTopology {
    /// Logical CPUs the process may run on, ascending.
    pub cpus: Vec<usize>,
    /// Online NUMA node ids.
    pub numa_nodes: Vec<usize>,
    /// Automatic NUMA balancing status, if the host reports it.
    pub numa_balancing: Option<bool>,
    /// Whether per-thread CPU affinity can be set on this host.
    pub affinity_supported: bool,
}

impl HostTopology {
    pub fn detect() -> HostTopology {
        let fallback_cpus = || {
            let n = std::thread::available_parallelism().map_or(1, |n| n.get());
            (0..n).collect::<Vec<_>>()
        };
        let cpus = allowed_cpus().filter(|c| !c.is_empty()).unwrap_or_else(fallback_cpus);
        let numa_nodes = std::fs::read_to_string("/sys/devices/system/node/online")
            .ok()
            .map(|s| parse_cpu_list(&s))
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| vec![0]);
        let numa_balancing = std::fs::read_to_string("/proc/sys/kernel/numa_balancing")
            .ok()
            .and_then(|s| s.trim().parse::<u32>().ok())
            .map(|v| v != 0);
        HostTopology {
            cpus,
            numa_nodes,
            numa_balancing,
            affinity_supported: cfg!(target_os = "linux"),
        }
    }

    /// A synthetic host, for planning placement without touching the OS.
    pub fn synthetic(n_cpus: usize, n_nodes: usize) -> HostTopology {
        HostTopology {
            cpus: (0..n_cpus).collect(),
            numa_nodes: (0..n_nodes.max(1)).collect(),
            numa_balancing: Some(false),
            affinity_supported: true,
        }
    }

    pub fn is_numa(&self) -> bool {
        self.numa_nodes.len() > 1
    }
}

/// Parses kernel list syntax such as `0-3,8,10-11`.
pub fn parse_cpu_list(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for part in s.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                if let (Ok(a), Ok(b)) = (a.trim().parse::<usize>(), b.trim().parse::<usize>()) {
                    out.extend(a..=b);
                }
            }
            None => {
                if let Ok(v) = part.trim().parse() {
                    out.push(v);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(target_os = "linux")]
fn allowed_cpus() -> Option<Vec<usize>> {
    // SAFETY: cpu_set_t is plain data; sched_getaffinity fills it.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return None;
        }
        Some(
            (0..libc::CPU_SETSIZE as usize)
                .filter(|&c| libc::CPU_ISSET(c, &set))
                .collect(),
        )
    }
}

#[cfg(not(target_os = "linux"))]
fn allowed_cpus() -> Option<Vec<usize>> {
    None
}

/// Pins the calling thread to one logical CPU.
#[cfg(target_os = "linux")]
pub fn pin_current_thread(cpu: usize) -> bool {
    if cpu >= libc::CPU_SETSIZE as usize {
        return false;
    }
    // SAFETY: cpu_set_t is plain data and `cpu` is within CPU_SETSIZE.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread(_cpu: usize) -> bool {
    false
}

/// Requests page interleaving across `nodes` for allocations made by the
/// calling thread.
#[cfg(target_os = "linux")]
pub fn interleave_current_thread(nodes: &[usize]) -> bool {
    const MPOL_INTERLEAVE: libc::c_long = 3;
    let mut mask = [0u64; 2];
    for &n in nodes {
        if n >= 128 {
            return false;
        }
        mask[n / 64] |= 1 << (n % 64);
    }
    // SAFETY: mask outlives the call and maxnode matches its bit width.
    let rc = unsafe {
        libc::syscall(
            libc::SYS_set_mempolicy,
            MPOL_INTERLEAVE,
            mask.as_ptr(),
            128 as libc::c_ulong,
        )
    };
    rc == 0
}

#[cfg(not(target_os = "linux"))]
pub fn interleave_current_thread(_nodes: &[usize]) -> bool {
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpu_list_syntax() {
        assert_eq!(parse_cpu_list("0-3,8,10-11\n"), vec![0, 1, 2, 3, 8, 10, 11]);
        assert_eq!(parse_cpu_list("0"), vec![0]);
        assert_eq!(parse_cpu_list(""), Vec::<usize>::new());
        assert_eq!(parse_cpu_list("2,1,1"), vec![1, 2]);
    }

    #[test]
    fn detect_never_fails() {
        let host = HostTopology::detect();
        assert!(!host.cpus.is_empty());
        assert!(!host.numa_nodes.is_empty());
    }
}
