use std::sync::Mutex;

use rayon::{ThreadPool, ThreadPoolBuilder};

use super::topology::{self, HostTopology};
use super::{partition_rows, plan_placement, Interleave, NumaPolicy, PlacementReport, PlacementWarning, ThreadPlan};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelPath, ThinMatrix};
use crate::quant::{quantize_vec_q8, BlockQ4, BlockQ8, QuantMatrixQ4, QuantVectorQ8};

/// A weight matrix laid out for an executor: either one contiguous
/// allocation or one shard per worker, each allocated and initialized by
/// the worker that reads it.
#[derive(Debug, Clone)]
pub struct PlacedMatrix {
    rows: usize,
    cols: usize,
    storage: Storage,
}

#[derive(Debug, Clone)]
enum Storage {
    Contiguous(QuantMatrixQ4),
    Sharded {
        plan: ThreadPlan,
        shards: Vec<QuantMatrixQ4>,
    },
}

impl PlacedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_sharded(&self) -> bool {
        matches!(self.storage, Storage::Sharded { .. })
    }

    /// Reassembles the matrix as one contiguous allocation.
    pub fn to_matrix(&self) -> QuantMatrixQ4 {
        match &self.storage {
            Storage::Contiguous(a) => a.clone(),
            Storage::Sharded { shards, .. } => {
                let blocks = shards.iter().flat_map(|s| s.blocks().iter().copied()).collect();
                QuantMatrixQ4::from_blocks(self.rows, self.cols, blocks)
                    .expect("shards cover the matrix")
            }
        }
    }

    /// Row ranges and the blocks backing each range under `plan`.
    fn slabs<'a>(&'a self, plan: &'a ThreadPlan) -> (&'a [(usize, usize)], Vec<&'a [BlockQ4]>) {
        match &self.storage {
            Storage::Contiguous(a) => {
                let bpr = a.blocks_per_row();
                let slabs = plan
                    .ranges()
                    .iter()
                    .map(|&(s, e)| &a.blocks()[s * bpr..e * bpr])
                    .collect();
                (plan.ranges(), slabs)
            }
            Storage::Sharded { plan, shards } => {
                (plan.ranges(), shards.iter().map(|s| s.blocks()).collect())
            }
        }
    }
}

impl From<QuantMatrixQ4> for PlacedMatrix {
    fn from(a: QuantMatrixQ4) -> Self {
        PlacedMatrix {
            rows: a.rows(),
            cols: a.cols(),
            storage: Storage::Contiguous(a),
        }
    }
}

/// A long-lived worker pool bound to one placement policy.
///
/// Worker `k` always computes row range `k` of the plan, writing only its
/// own slice of the output.
pub struct Executor {
    n_threads: usize,
    path: KernelPath,
    pool: Option<ThreadPool>,
    report: PlacementReport,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("n_threads", &self.n_threads)
            .field("path", &self.path)
            .field("report", &self.report)
            .finish()
    }
}

impl Executor {
    pub fn new(n_threads: usize, policy: NumaPolicy) -> Result<Self> {
        Self::with_host(n_threads, policy, &HostTopology::detect())
    }

    /// Single-threaded executor running on the caller's thread.
    pub fn serial() -> Self {
        Self::with_host(1, NumaPolicy::AllOff, &HostTopology::detect())
            .expect("serial executor needs no pool")
    }

    pub fn with_host(n_threads: usize, policy: NumaPolicy, host: &HostTopology) -> Result<Self> {
        if n_threads == 0 {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        let mut report = plan_placement(policy, n_threads, host);
        let needs_workers = n_threads > 1
            || matches!(policy, NumaPolicy::CoreBinding | NumaPolicy::MemoryInterleave);
        let pool = if needs_workers {
            let pool = ThreadPoolBuilder::new()
                .num_threads(n_threads)
                .thread_name(|i| format!("qgemv-worker-{i}"))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
            if !report.pinning.is_empty() {
                let cpus = report.pinning.clone();
                let pinned = pool.broadcast(|ctx| topology::pin_current_thread(cpus[ctx.index()]));
                if pinned.contains(&false) {
                    report.warn(PlacementWarning::PinFailed);
                }
            }
            if report.interleave == Interleave::FirstTouchOs {
                let nodes = host.numa_nodes.clone();
                let ok = pool.broadcast(|_| topology::interleave_current_thread(&nodes));
                if ok.contains(&false) {
                    report.warn(PlacementWarning::InterleaveFailed);
                }
            }
            Some(pool)
        } else {
            None
        };
        Ok(Executor {
            n_threads,
            path: KernelPath::detect(),
            pool,
            report,
        })
    }

    /// Overrides the kernel path (scalar or vector) used by the workers.
    pub fn with_path(mut self, path: KernelPath) -> Self {
        assert!(KernelPath::available().contains(&path), "kernel path {path:?} unavailable");
        self.path = path;
        self
    }

    pub fn threads(&self) -> usize {
        self.n_threads
    }

    pub fn policy(&self) -> NumaPolicy {
        self.report.policy
    }

    pub fn path(&self) -> KernelPath {
        self.path
    }

    pub fn report(&self) -> &PlacementReport {
        &self.report
    }

    /// Lays `a` out for this executor. Under memory interleaving each
    /// worker copies its own row range, so its pages are first touched by
    /// the thread that will read them.
    pub fn place(&self, a: QuantMatrixQ4) -> Result<PlacedMatrix> {
        let pool = match (&self.pool, self.report.interleave) {
            (Some(pool), Interleave::FirstTouch | Interleave::FirstTouchOs) => pool,
            _ => return Ok(a.into()),
        };
        let plan = partition_rows(a.rows(), self.n_threads)?;
        let ranges = plan.ranges();
        let shards = pool.broadcast(|ctx| {
            ranges
                .get(ctx.index())
                .map(|&(s, e)| a.slice_rows(s, e))
        });
        let shards = shards.into_iter().flatten().collect::<Result<Vec<_>>>()?;
        Ok(PlacedMatrix {
            rows: a.rows(),
            cols: a.cols(),
            storage: Storage::Sharded { plan, shards },
        })
    }

    pub fn gemv(&self, a: &PlacedMatrix, x: &[f32]) -> Result<Vec<f32>> {
        check_inner(a.cols(), x.len())?;
        self.gemv_q8(a, &quantize_vec_q8(x)?)
    }

    pub fn gemv_q8(&self, a: &PlacedMatrix, x: &QuantVectorQ8) -> Result<Vec<f32>> {
        check_inner(a.cols(), x.len())?;
        let plan = partition_rows(a.rows(), self.n_threads)?;
        let path = self.path;
        let xb = x.blocks();
        let (ranges, slabs) = a.slabs(&plan);
        Ok(self.run(ranges, &slabs, 1, |slab, out| kernels::gemv_rows(path, slab, xb, out)))
    }

    /// Thin GEMM; column `j` equals `gemv(a, x.column(j))` bit for bit.
    pub fn gemm_thin(&self, a: &PlacedMatrix, x: &ThinMatrix) -> Result<ThinMatrix> {
        check_inner(a.cols(), x.rows())?;
        if x.cols() == 1 {
            let y = self.gemv(a, x.column(0))?;
            return ThinMatrix::new(a.rows(), 1, y);
        }
        let quantized = kernels::quantize_columns(x)?;
        let cols: Vec<&[BlockQ8]> = quantized.iter().map(|q| q.blocks()).collect();
        let plan = partition_rows(a.rows(), self.n_threads)?;
        let path = self.path;
        let (ranges, slabs) = a.slabs(&plan);
        let row_major = self.run(ranges, &slabs, x.cols(), |slab, out| {
            kernels::gemm_rows(path, slab, &cols, out)
        });
        ThinMatrix::from_row_major(a.rows(), x.cols(), &row_major)
    }

    /// Runs `a` under an explicit plan (which must cover `a`).
    pub(crate) fn gemv_with_plan(&self, a: &QuantMatrixQ4, x: &[f32], plan: &ThreadPlan) -> Result<Vec<f32>> {
        check_inner(a.cols(), x.len())?;
        let xq = quantize_vec_q8(x)?;
        let bpr = a.blocks_per_row();
        let slabs: Vec<&[BlockQ4]> = plan
            .ranges()
            .iter()
            .map(|&(s, e)| &a.blocks()[s * bpr..e * bpr])
            .collect();
        let path = self.path;
        let xb = xq.blocks();
        Ok(self.run(plan.ranges(), &slabs, 1, |slab, out| kernels::gemv_rows(path, slab, xb, out)))
    }

    /// Evaluates `kernel` over every row range, producing a row-major
    /// `rows x width` buffer.
    fn run<F>(&self, ranges: &[(usize, usize)], slabs: &[&[BlockQ4]], width: usize, kernel: F) -> Vec<f32>
    where
        F: Fn(&[BlockQ4], &mut [f32]) + Sync,
    {
        let rows = ranges.last().map_or(0, |r| r.1);
        let mut out = vec![0.0f32; rows * width];
        let mut slots = Vec::with_capacity(ranges.len());
        let mut rest = out.as_mut_slice();
        for &(s, e) in ranges {
            let (head, tail) = rest.split_at_mut((e - s) * width);
            slots.push(Mutex::new(head));
            rest = tail;
        }
        debug_assert!(rest.is_empty());

        #[cfg(debug_assertions)]
        let writes: Vec<std::sync::atomic::AtomicU8> =
            (0..rows).map(|_| Default::default()).collect();
        let work = |k: usize| {
            let mut slot = slots[k].lock().expect("worker slot poisoned");
            kernel(slabs[k], &mut slot);
            #[cfg(debug_assertions)]
            for w in &writes[ranges[k].0..ranges[k].1] {
                w.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        };
        match &self.pool {
            Some(pool) => {
                // Worker k owns range k; a matrix sharded for a wider pool
                // spreads its extra ranges round-robin.
                pool.broadcast(|ctx| {
                    (ctx.index()..ranges.len()).step_by(ctx.num_threads()).for_each(&work);
                });
            }
            None => (0..ranges.len()).for_each(work),
        }
        #[cfg(debug_assertions)]
        debug_assert!(
            writes.iter().all(|w| w.load(std::sync::atomic::Ordering::Relaxed) == 1),
            "every output row must be written exactly once"
        );
        drop(slots);
        out
    }
}

fn check_inner(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what: "gemv inner dimension",
            expected,
            got,
        });
    }
    Ok(())
}
