//! The user-facing runtime: declarations, a lazy loop queue, and flushes
//! that plan and execute the queued chain.

use crate::chain::LoopChain;
use crate::dist::{run_distributed, run_distributed_untiled, RankLayout, RankPlanCache};
use crate::error::{Error, Result};
use crate::executor::{execute_plan, execute_untiled, ExecutionReport};
use crate::mesh::{
    ArgSpec, Block, DatasetId, Field, FieldSet, Kernel, LoopRecord, Range, ReductionHandle,
    ReductionOp, ReductionSpec, Stencil,
};
use crate::oracle::sequential_reference;
use crate::planner::{PlanCache, TilingPlan};
use crate::sizer::{auto_tile_size, SizerInput};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

/// How a flush executes the queued chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecMode {
    /// Loop at a time over full ranges.
    Untiled,
    /// Skewed tiles of the given per-dimension size.
    Tiled(Vec<i64>),
    /// Skewed tiles sized from the cache and thread configuration.
    TiledAuto,
}

#[derive(Clone, Debug)]
pub struct RuntimeConfig {
    /// Extra halo points per face on top of the largest stencil radius,
    /// reserved for tile skew.
    pub skew_allowance: i64,
    /// When fetching a reduction, flush the whole queue instead of only the
    /// prefix up to the reducing loop.
    pub flush_whole_queue_on_fetch: bool,
    pub mode: ExecMode,
    /// Cache capacity used by automatic tile sizing.
    pub cache_bytes: u64,
    /// Worker threads. `None` uses the global pool.
    pub threads: Option<usize>,
    /// Simulated rank grid; `None` runs in shared memory.
    pub ranks: Option<Vec<usize>>,
    /// Compare every flush against the sequential reference.
    pub verify: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            skew_allowance: 16,
            flush_whole_queue_on_fetch: false,
            mode: ExecMode::Untiled,
            cache_bytes: 20 << 20,
            threads: None,
            ranks: None,
            verify: false,
        }
    }
}

pub struct Runtime {
    block: Block,
    domain: Range,
    fields: FieldSet,
    max_radius: i64,
    pending: Vec<LoopRecord>,
    plans: PlanCache,
    rank_plans: RankPlanCache,
    results: HashMap<u64, f64>,
    outstanding: HashSet<u64>,
    next_handle: u64,
    config: RuntimeConfig,
    pool: Option<Arc<rayon::ThreadPool>>,
    totals: ExecutionReport,
    last_plan: Option<Arc<TilingPlan>>,
    last_tile_sizes: Option<Vec<i64>>,
    last_sizer_input: Option<SizerInput>,
}

impl Runtime {
    /// A runtime over `domain` on a block of the same dimension.
    pub fn new(block: Block, domain: Range, config: RuntimeConfig) -> Result<Self> {
        if domain.dim() != block.dim() {
            return Err(Error::DimensionMismatch {
                expected: block.dim(),
                got: domain.dim(),
            });
        }
        let pool = match config.threads {
            Some(n) => Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::InvalidArg {
                        kernel: String::new(),
                        reason: e.to_string(),
                    })?,
            )),
            None => None,
        };
        Ok(Self {
            block,
            domain,
            fields: FieldSet::new(),
            max_radius: 0,
            pending: Vec::new(),
            plans: PlanCache::new(),
            rank_plans: RankPlanCache::new(),
            results: HashMap::new(),
            outstanding: HashSet::new(),
            next_handle: 0,
            config,
            pool,
            totals: ExecutionReport::default(),
            last_plan: None,
            last_tile_sizes: None,
            last_sizer_input: None,
        })
    }

    pub fn block(&self) -> &Block {
        &self.block
    }

    pub fn domain(&self) -> &Range {
        &self.domain
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut RuntimeConfig {
        &mut self.config
    }

    /// Declares a stencil. Fields declared afterwards are padded for it.
    pub fn declare_stencil(&mut self, points: &[&[i64]]) -> Result<Stencil> {
        let s = Stencil::new(self.block.dim(), points)?;
        self.max_radius = self.max_radius.max(s.radius());
        Ok(s)
    }

    /// Registers a stencil built elsewhere so later fields are padded for it.
    pub fn register_stencil(&mut self, s: &Stencil) {
        self.max_radius = self.max_radius.max(s.radius());
    }

    /// Declares a zero-initialised dataset over the domain, padded by the
    /// largest declared stencil radius plus the skew allowance.
    pub fn declare_field(&mut self, name: &str, elem_bytes: usize) -> DatasetId {
        let pad = self.max_radius + self.config.skew_allowance;
        self.declare_field_padded(name, elem_bytes, pad)
    }

    pub fn declare_field_padded(&mut self, name: &str, elem_bytes: usize, padding: i64) -> DatasetId {
        let id = DatasetId(self.fields.len());
        self.fields
            .push(Field::new(id, name, elem_bytes, self.domain, padding.max(0)))
    }

    pub fn field(&self, id: DatasetId) -> Result<&Field> {
        self.fields.get(id)
    }

    /// Mutable access for initialisation. Pending loops are not flushed.
    pub fn field_mut(&mut self, id: DatasetId) -> Result<&mut Field> {
        self.fields.get_mut(id)
    }

    pub fn fields(&self) -> &FieldSet {
        &self.fields
    }

    /// Queues a loop. Nothing runs until a flush.
    pub fn par_loop(
        &mut self,
        kernel: Kernel,
        range: Range,
        args: Vec<ArgSpec>,
        reduction: Option<ReductionOp>,
    ) -> Result<Option<ReductionHandle>> {
        if range.dim() != self.block.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.block.dim(),
                got: range.dim(),
            });
        }
        let handle = reduction.map(|_| {
            self.next_handle += 1;
            ReductionHandle(self.next_handle)
        });
        let record = LoopRecord {
            loop_id: self.pending.len(),
            kernel,
            range,
            args,
            reduction: reduction.zip(handle).map(|(op, handle)| ReductionSpec { op, handle }),
        };
        record.validate(&self.fields)?;
        if let Some(h) = handle {
            self.outstanding.insert(h.0);
        }
        self.pending.push(record);
        Ok(handle)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Copy of the queued loops, e.g. for building plans by hand.
    pub fn pending_snapshot(&self) -> Vec<LoopRecord> {
        self.pending.clone()
    }

    /// Executes the whole queue with the configured mode.
    pub fn flush(&mut self) -> Result<ExecutionReport> {
        let mode = self.config.mode.clone();
        self.flush_with(&mode)
    }

    pub fn flush_with(&mut self, mode: &ExecMode) -> Result<ExecutionReport> {
        let loops = std::mem::take(&mut self.pending);
        self.run(LoopChain::new(loops), mode)
    }

    /// Returns a reduction result, flushing the loops it depends on first.
    /// Each handle can be fetched once.
    pub fn fetch_reduction(&mut self, handle: ReductionHandle) -> Result<f64> {
        if let Some(v) = self.results.remove(&handle.0) {
            self.outstanding.remove(&handle.0);
            return Ok(v);
        }
        if !self.outstanding.contains(&handle.0) {
            return Err(Error::StaleHandle(handle.0));
        }
        let pos = self
            .pending
            .iter()
            .position(|l| l.reduction.is_some_and(|r| r.handle == handle))
            .ok_or(Error::StaleHandle(handle.0))?;
        let mode = self.config.mode.clone();
        if self.config.flush_whole_queue_on_fetch {
            self.flush_with(&mode)?;
        } else {
            let rest = self.pending.split_off(pos + 1);
            let prefix = std::mem::replace(&mut self.pending, rest);
            self.run(LoopChain::new(prefix), &mode)?;
        }
        self.outstanding.remove(&handle.0);
        self.results
            .remove(&handle.0)
            .ok_or(Error::StaleHandle(handle.0))
    }

    /// Plans constructed so far (shared memory and per rank).
    pub fn plan_builds(&self) -> usize {
        self.plans.builds() + self.rank_plans.builds()
    }

    pub fn plan_cache(&self) -> &PlanCache {
        &self.plans
    }

    /// Aggregate of every flush so far.
    pub fn totals(&self) -> &ExecutionReport {
        &self.totals
    }

    /// Plan used by the most recent shared-memory tiled flush.
    pub fn last_plan(&self) -> Option<&Arc<TilingPlan>> {
        self.last_plan.as_ref()
    }

    /// Tile sizes used by the most recent tiled flush.
    pub fn last_tile_sizes(&self) -> Option<&[i64]> {
        self.last_tile_sizes.as_deref()
    }

    /// Sizer input of the most recent automatically sized flush.
    pub fn last_sizer_input(&self) -> Option<&SizerInput> {
        self.last_sizer_input.as_ref()
    }

    fn run(&mut self, chain: LoopChain, mode: &ExecMode) -> Result<ExecutionReport> {
        if chain.is_empty() {
            return Ok(ExecutionReport {
                mode: mode_name(mode, self.config.ranks.is_some()),
                ..ExecutionReport::default()
            });
        }
        let pool = self.pool.clone();
        let report = match pool {
            Some(p) => p.install(|| self.run_inner(&chain, mode)),
            None => self.run_inner(&chain, mode),
        }?;
        for &(h, v) in &report.reductions {
            self.results.insert(h.0, v);
        }
        self.totals.absorb(report.clone());
        Ok(report)
    }

    fn run_inner(&mut self, chain: &LoopChain, mode: &ExecMode) -> Result<ExecutionReport> {
        let reference = if self.config.verify {
            Some(sequential_reference(chain, &self.fields)?)
        } else {
            None
        };
        let tile_sizes = match mode {
            ExecMode::Untiled => None,
            ExecMode::Tiled(ts) => Some(ts.clone()),
            ExecMode::TiledAuto => {
                let threads = self
                    .config
                    .threads
                    .unwrap_or_else(rayon::current_num_threads) as u64;
                let input =
                    SizerInput::for_chain(chain, &self.fields, self.config.cache_bytes, threads)?;
                let sizes = auto_tile_size(&input)?;
                self.last_sizer_input = Some(input);
                Some(sizes)
            }
        };
        self.last_tile_sizes.clone_from(&tile_sizes);
        let mut report = match (&self.config.ranks, &tile_sizes) {
            (Some(grid), ts) => {
                let layout = RankLayout::decompose(&self.domain, grid)?;
                match ts {
                    Some(ts) => {
                        run_distributed(chain, &layout, ts, &mut self.fields, &mut self.rank_plans)?
                    }
                    None => run_distributed_untiled(chain, &layout, &mut self.fields)?,
                }
            }
            (None, Some(ts)) => {
                let t0 = Instant::now();
                let (plan, hit) = self.plans.get_or_build_plan(chain, ts)?;
                let planning_time = t0.elapsed();
                plan.check_allocation(&self.fields)?;
                let mut rep = execute_plan(&plan, chain, &mut self.fields)?;
                rep.cache_hit = hit;
                rep.plan_builds = usize::from(!hit);
                rep.planning_time = planning_time;
                self.last_plan = Some(plan);
                rep
            }
            (None, None) => execute_untiled(chain, &mut self.fields)?,
        };
        if let Some(r) = reference {
            report.verify_max_abs_diff = Some(r.fields.max_abs_diff(&self.fields));
            let worst = r
                .reductions
                .iter()
                .map(|&(h, want)| {
                    let got = report.reduction(h).unwrap_or(f64::NAN);
                    relative_diff(want, got)
                })
                .fold(0.0, f64::max);
            report.verify_max_rel_reduction_diff = Some(worst);
        }
        Ok(report)
    }
}

/// `|a-b| / max(|a|, |b|)`, zero when both are zero; infinite on NaN.
pub fn relative_diff(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let d = (a - b).abs() / a.abs().max(b.abs());
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

fn mode_name(mode: &ExecMode, distributed: bool) -> String {
    let base = match mode {
        ExecMode::Untiled => "untiled",
        ExecMode::Tiled(_) | ExecMode::TiledAuto => "tiled",
    };
    if distributed {
        format!("distributed-{base}")
    } else {
        base.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn runtime_1d(n: usize, mode: ExecMode) -> Runtime {
        let cfg = RuntimeConfig {
            mode,
            ..RuntimeConfig::default()
        };
        Runtime::new(
            Block::new("b", 1).unwrap(),
            Range::zero_based(&[n]).unwrap(),
            cfg,
        )
        .unwrap()
    }

    fn counting(count: &Arc<AtomicUsize>) -> Kernel {
        let c = Arc::clone(count);
        Kernel::new("touch", move |ctx| {
            c.fetch_add(1, Ordering::Relaxed);
            let v = ctx.get(0);
            ctx.write(0, v + 1.0);
        })
    }

    fn sum_kernel() -> Kernel {
        Kernel::new("sum", |c| {
            let v = c.get(0);
            c.reduce(v)
        })
    }

    #[test]
    fn queue_is_lazy() {
        let mut rt = runtime_1d(8, ExecMode::Untiled);
        let a = rt.declare_field("a", 8);
        let count = Arc::new(AtomicUsize::new(0));
        for _ in 0..3 {
            rt.par_loop(counting(&count), *rt.domain(), vec![ArgSpec::read_write(a, 1)], None)
                .unwrap();
        }
        assert_eq!(count.load(Ordering::Relaxed), 0);
        assert_eq!(rt.pending_len(), 3);
        rt.flush().unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 24);
        assert_eq!(rt.pending_len(), 0);
    }

    #[test]
    fn fetch_reduction_sums_ones() {
        let mut rt = runtime_1d(8, ExecMode::Tiled(vec![3]));
        let a = rt.declare_field("a", 8);
        rt.field_mut(a).unwrap().fill(1.0);
        let id = Stencil::identity(1);
        let h = rt
            .par_loop(sum_kernel(), *rt.domain(), vec![ArgSpec::read(a, &id)], Some(ReductionOp::Sum))
            .unwrap()
            .unwrap();
        assert_eq!(rt.fetch_reduction(h).unwrap(), 8.0);
        assert_eq!(rt.fetch_reduction(h), Err(Error::StaleHandle(h.0)));
    }

    #[test]
    fn fetch_flushes_only_prefix() {
        let mut rt = runtime_1d(8, ExecMode::Untiled);
        let a = rt.declare_field("a", 8);
        let count = Arc::new(AtomicUsize::new(0));
        let id = Stencil::identity(1);
        let mut handle = None;
        for i in 0..5 {
            rt.par_loop(counting(&count), *rt.domain(), vec![ArgSpec::read_write(a, 1)], None)
                .unwrap();
            if i == 2 {
                handle = rt
                    .par_loop(sum_kernel(), *rt.domain(), vec![ArgSpec::read(a, &id)], Some(ReductionOp::Sum))
                    .unwrap();
            }
        }
        assert_eq!(rt.fetch_reduction(handle.unwrap()).unwrap(), 24.0);
        assert_eq!(count.load(Ordering::Relaxed), 24);
        assert_eq!(rt.pending_len(), 2);

        let mut rt2 = runtime_1d(8, ExecMode::Untiled);
        rt2.config_mut().flush_whole_queue_on_fetch = true;
        let b = rt2.declare_field("b", 8);
        rt2.par_loop(counting(&count), *rt2.domain(), vec![ArgSpec::read_write(b, 1)], None)
            .unwrap();
        let h = rt2
            .par_loop(sum_kernel(), *rt2.domain(), vec![ArgSpec::read(b, &id)], Some(ReductionOp::Sum))
            .unwrap()
            .unwrap();
        rt2.par_loop(counting(&count), *rt2.domain(), vec![ArgSpec::read_write(b, 1)], None)
            .unwrap();
        assert_eq!(rt2.fetch_reduction(h).unwrap(), 8.0);
        assert_eq!(rt2.pending_len(), 0);
    }

    #[test]
    fn empty_flush_is_empty_report() {
        let mut rt = runtime_1d(8, ExecMode::Tiled(vec![4]));
        let rep = rt.flush().unwrap();
        assert!(rep.loops.is_empty());
        assert_eq!(rt.plan_builds(), 0);
    }

    #[test]
    fn invalid_write_stencil_rejected_at_enqueue() {
        let mut rt = runtime_1d(8, ExecMode::Untiled);
        let s = rt.declare_stencil(&[&[-1], &[0], &[1]]).unwrap();
        let a = rt.declare_field("a", 8);
        let err = rt
            .par_loop(
                Kernel::new("bad", |_| {}),
                *rt.domain(),
                vec![ArgSpec::new(a, s, crate::mesh::AccessMode::Write)],
                None,
            )
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArg { .. }));
        assert_eq!(rt.pending_len(), 0);
    }

    #[test]
    fn repeated_flush_hits_cache() {
        let mut rt = runtime_1d(16, ExecMode::Tiled(vec![4]));
        let s = rt.declare_stencil(&[&[-1], &[0], &[1]]).unwrap();
        let a = rt.declare_field("a", 8);
        let b = rt.declare_field("b", 8);
        let inner = Range::new(&[(1, 15)]).unwrap();
        let mut hits = Vec::new();
        for _ in 0..3 {
            rt.par_loop(
                Kernel::new("avg", |c| {
                    let v = c.read(0, &[-1]) + c.read(0, &[1]);
                    c.write(1, 0.5 * v);
                }),
                inner,
                vec![ArgSpec::read(a, &s), ArgSpec::write(b, 1)],
                None,
            )
            .unwrap();
            hits.push(rt.flush().unwrap().cache_hit);
        }
        assert_eq!(hits, vec![false, true, true]);
        assert_eq!(rt.plan_builds(), 1);
        assert_eq!(rt.totals().flushes, 3);
    }

    #[test]
    fn too_little_padding_is_reported() {
        let mut rt = runtime_1d(16, ExecMode::Tiled(vec![4]));
        let a = rt.declare_field_padded("a", 8, 1);
        let b = rt.declare_field_padded("b", 8, 1);
        let s = Stencil::new(1, &[&[-3], &[0]]).unwrap();
        rt.par_loop(
            Kernel::new("far", |c| {
                let v = c.read(0, &[-3]);
                c.write(1, v);
            }),
            *rt.domain(),
            vec![ArgSpec::read(a, &s), ArgSpec::write(b, 1)],
            None,
        )
        .unwrap();
        assert!(matches!(rt.flush(), Err(Error::InsufficientHalo { .. })));
    }

    #[test]
    fn relative_diff_cases() {
        assert_eq!(relative_diff(0.0, 0.0), 0.0);
        assert_eq!(relative_diff(2.0, 1.0), 0.5);
        assert!(relative_diff(f64::NAN, 1.0).is_infinite());
    }
}
