//! Simulated distributed-memory execution.
//!
//! The global domain is block-partitioned over an in-process grid of
//! ranks, each holding its own padded copy of every dataset. Tiled runs
//! build one overlapped plan per rank, exchange one wide halo per dataset,
//! and then execute every rank's tiles with no further communication;
//! iterations near partition boundaries are computed redundantly. The
//! untiled baseline instead exchanges stencil-deep halos before every loop
//! that needs them.

use crate::chain::{ChainSignature, LoopChain};
use crate::error::{Error, Result};
use crate::executor::{execute_plan_masked, run_range, CommStats, ExecutionReport, LoopReport};
use crate::mesh::{
    estimate_bytes_moved, DatasetId, Field, FieldSet, Index, Range, ReductionHandle, MAX_DIM,
};
use crate::planner::{construct_with_context, DimContext, TilingPlan};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Lo,
    Hi,
}

/// Block partition of a global range over a grid of ranks. Rank ids
/// enumerate grid coordinates with dimension 0 varying fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankLayout {
    global: Range,
    grid: [usize; MAX_DIM],
    owned: Vec<Range>,
}

impl RankLayout {
    /// Near-equal split per dimension; the first `extent % n` ranks along a
    /// dimension get one extra point.
    pub fn decompose(global: &Range, grid: &[usize]) -> Result<Self> {
        let dim = global.dim();
        if grid.len() > dim {
            return Err(Error::Decomposition(format!(
                "{}-dimensional rank grid for a {dim}-dimensional domain",
                grid.len()
            )));
        }
        let mut g = [1usize; MAX_DIM];
        for (d, &n) in grid.iter().enumerate() {
            if n == 0 || n as i64 > global.extent(d) {
                return Err(Error::Decomposition(format!(
                    "{n} ranks over {} points in dim {d}",
                    global.extent(d)
                )));
            }
            g[d] = n;
        }
        let splits: Vec<Vec<(i64, i64)>> = (0..MAX_DIM)
            .map(|d| {
                let (s, ext) = (global.start(d), global.extent(d));
                let n = g[d] as i64;
                let (base, rem) = (ext / n, ext % n);
                let mut at = s;
                (0..n)
                    .map(|i| {
                        let w = base + i64::from(i < rem);
                        let r = (at, at + w);
                        at += w;
                        r
                    })
                    .collect()
            })
            .collect();
        let total: usize = g.iter().product();
        let owned = (0..total)
            .map(|r| {
                let c = coords_of(&g, r);
                let mut start = [0; MAX_DIM];
                let mut end = [1; MAX_DIM];
                for d in 0..MAX_DIM {
                    (start[d], end[d]) = splits[d][c[d]];
                }
                Range::from_parts(dim, start, end)
            })
            .collect();
        Ok(Self {
            global: *global,
            grid: g,
            owned,
        })
    }

    pub fn global(&self) -> &Range {
        &self.global
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid[..self.global.dim()]
    }

    pub fn num_ranks(&self) -> usize {
        self.owned.len()
    }

    pub fn owned(&self, rank: usize) -> &Range {
        &self.owned[rank]
    }

    pub fn coords(&self, rank: usize) -> [usize; MAX_DIM] {
        coords_of(&self.grid, rank)
    }

    pub fn neighbor(&self, rank: usize, d: usize, side: Side) -> Option<usize> {
        let mut c = self.coords(rank);
        match side {
            Side::Lo if c[d] > 0 => c[d] -= 1,
            Side::Hi if c[d] + 1 < self.grid[d] => c[d] += 1,
            _ => return None,
        }
        Some(c[0] + self.grid[0] * (c[1] + self.grid[1] * c[2]))
    }

    fn contexts(&self, rank: usize) -> [DimContext; MAX_DIM] {
        let mut ctx = [DimContext::SHARED; MAX_DIM];
        let owned = self.owned(rank);
        for (d, c) in ctx.iter_mut().enumerate().take(self.global.dim()) {
            *c = DimContext {
                owned: (owned.start(d), owned.end(d)),
                lo_neighbor: self.neighbor(rank, d, Side::Lo).is_some(),
                hi_neighbor: self.neighbor(rank, d, Side::Hi).is_some(),
            };
        }
        ctx
    }
}

fn coords_of(grid: &[usize; MAX_DIM], rank: usize) -> [usize; MAX_DIM] {
    [
        rank % grid[0],
        (rank / grid[0]) % grid[1],
        rank / (grid[0] * grid[1]),
    ]
}

/// Overlapped tiling plan for one rank.
pub fn construct_rank_plan(
    chain: &LoopChain,
    layout: &RankLayout,
    rank: usize,
    tile_sizes: &[i64],
) -> Result<TilingPlan> {
    if chain.dim() != Some(layout.global.dim()) {
        return Err(Error::DimensionMismatch {
            expected: layout.global.dim(),
            got: chain.dim().unwrap_or(0),
        });
    }
    construct_with_context(
        chain,
        tile_sizes,
        &layout.contexts(rank),
        Some(*layout.owned(rank)),
    )
}

/// Exchange requirement of one dataset on one rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHalo {
    pub dataset: DatasetId,
    /// False when the chain never reads values of this dataset that
    /// predate the flush on points the rank does not own.
    pub needed: bool,
    /// Depth to receive from the low / high neighbour, per dimension. Zero
    /// where there is no neighbour.
    pub lo: Index,
    pub hi: Index,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HaloSpec {
    pub rank: usize,
    pub datasets: Vec<DatasetHalo>,
}

impl HaloSpec {
    pub fn get(&self, dataset: DatasetId) -> Option<&DatasetHalo> {
        self.datasets.iter().find(|h| h.dataset == dataset)
    }

    /// Depth for `dataset` on one face; zero if no exchange is needed.
    pub fn depth(&self, dataset: DatasetId, d: usize, side: Side) -> i64 {
        self.get(dataset).filter(|h| h.needed).map_or(0, |h| match side {
            Side::Lo => h.lo[d],
            Side::Hi => h.hi[d],
        })
    }
}

/// Whether `dataset` needs its incoming values exchanged. A dataset first
/// accessed by a write needs nothing, provided every later writer stays
/// within the first writer's range; otherwise reads may see values from
/// before the flush on points the first writer never produced.
fn exchange_needed(chain: &LoopChain, dataset: DatasetId) -> bool {
    let mut first_writer: Option<&Range> = None;
    for lp in chain.loops() {
        let mut reads = false;
        let mut writes = false;
        for a in lp.args.iter().filter(|a| a.dataset == dataset) {
            reads |= a.mode.reads();
            writes |= a.mode.writes();
        }
        match first_writer {
            None if reads => return true,
            None if writes => first_writer = Some(&lp.range),
            Some(w) if writes && !w.contains_range(&lp.range) => return true,
            _ => {}
        }
    }
    false
}

/// Halo depths for `rank`: the distance from each owned boundary with a
/// neighbour to the outermost read of the rank plan.
pub fn compute_halo_depths(
    plan: &TilingPlan,
    chain: &LoopChain,
    layout: &RankLayout,
    rank: usize,
) -> HaloSpec {
    let owned = layout.owned(rank);
    let dim = layout.global.dim();
    let extents = plan.extents();
    let datasets = extents
        .datasets()
        .map(|ds| {
            let needed = exchange_needed(chain, ds);
            let mut lo = [0; MAX_DIM];
            let mut hi = [0; MAX_DIM];
            if needed {
                for d in 0..dim {
                    let Some(deps) = extents.get(d, ds) else { continue };
                    let h = deps.read_hull();
                    if h.is_empty() {
                        continue;
                    }
                    if layout.neighbor(rank, d, Side::Lo).is_some() {
                        lo[d] = (owned.start(d) - h.start).max(0);
                    }
                    if layout.neighbor(rank, d, Side::Hi).is_some() {
                        hi[d] = (h.end - owned.end(d)).max(0);
                    }
                }
            }
            DatasetHalo {
                dataset: ds,
                needed,
                lo,
                hi,
            }
        })
        .collect();
    HaloSpec { rank, datasets }
}

/// One exchange request: receive `lo[d]` / `hi[d]` layers of `dataset`
/// from the neighbour on each face (on every rank that has one).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exchange {
    pub dataset: DatasetId,
    pub lo: Index,
    pub hi: Index,
}

impl Exchange {
    /// Uniform requests covering every rank's spec.
    pub fn from_specs(specs: &[HaloSpec]) -> Vec<Exchange> {
        let mut merged: BTreeMap<DatasetId, Exchange> = BTreeMap::new();
        for spec in specs {
            for h in spec.datasets.iter().filter(|h| h.needed) {
                let e = merged.entry(h.dataset).or_insert(Exchange {
                    dataset: h.dataset,
                    lo: [0; MAX_DIM],
                    hi: [0; MAX_DIM],
                });
                for d in 0..MAX_DIM {
                    e.lo[d] = e.lo[d].max(h.lo[d]);
                    e.hi[d] = e.hi[d].max(h.hi[d]);
                }
            }
        }
        merged.into_values().collect()
    }
}

/// Copies owned strips into neighbours' padding. Dimensions are processed
/// in order and strips are widened by the layers already received in
/// earlier dimensions, so corner regions arrive too. One message is
/// counted per (receiving rank, dimension, side, dataset) with data.
pub fn exchange_halos(
    rank_fields: &mut [FieldSet],
    requests: &[Exchange],
    layout: &RankLayout,
    stats: &mut CommStats,
) -> Result<()> {
    let dim = layout.global.dim();
    for req in requests {
        for d in 0..dim {
            for side in [Side::Lo, Side::Hi] {
                let depth = match side {
                    Side::Lo => req.lo[d],
                    Side::Hi => req.hi[d],
                };
                if depth <= 0 {
                    continue;
                }
                for r in 0..layout.num_ranks() {
                    let Some(n) = layout.neighbor(r, d, side) else { continue };
                    let width = layout.owned(n).extent(d);
                    if depth > width {
                        return Err(Error::HaloTooDeep { dim: d, depth, width });
                    }
                    let owned = layout.owned(r);
                    let mut region = *owned;
                    region = match side {
                        Side::Lo => region.with_dim(d, owned.start(d) - depth, owned.start(d)),
                        Side::Hi => region.with_dim(d, owned.end(d), owned.end(d) + depth),
                    };
                    for e in 0..d {
                        let lo = if layout.neighbor(r, e, Side::Lo).is_some() { req.lo[e] } else { 0 };
                        let hi = if layout.neighbor(r, e, Side::Hi).is_some() { req.hi[e] } else { 0 };
                        region = region.with_dim(e, owned.start(e) - lo, owned.end(e) + hi);
                    }
                    let (dst, src) = pair_mut(rank_fields, r, n);
                    let from = src.get(req.dataset)?;
                    let to = dst.get(req.dataset)?;
                    if !to.base_range().contains_range(&region) {
                        return Err(Error::InsufficientHalo {
                            dataset: to.name().to_string(),
                            dim: d,
                            needed: depth,
                            allocated: match side {
                                Side::Lo => owned.start(d) - to.base_range().start(d),
                                Side::Hi => to.base_range().end(d) - owned.end(d),
                            },
                        });
                    }
                    for p in region.points() {
                        let v = from.get(&p).ok_or_else(|| Error::OutOfExtent {
                            loop_id: None,
                            tile: None,
                            dataset: from.name().to_string(),
                            point: p[..dim].to_vec(),
                        })?;
                        to.store(&p, v);
                    }
                    stats.messages_sent[n] += 1;
                    stats.bytes_sent[n] += region.num_points() * from.elem_bytes() as u64;
                }
            }
        }
        stats.exchanges += 1;
    }
    Ok(())
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &T) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = v.split_at_mut(b);
        (&mut l[a], &r[0])
    } else {
        let (l, r) = v.split_at_mut(a);
        (&mut r[0], &l[b])
    }
}

/// Points of the global domain no loop of `chain` ever writes, per dataset.
fn written_ranges(chain: &LoopChain) -> HashMap<DatasetId, Vec<Range>> {
    let mut m: HashMap<DatasetId, Vec<Range>> = HashMap::new();
    for lp in chain.loops() {
        for a in lp.args.iter().filter(|a| a.mode.writes()) {
            m.entry(a.dataset).or_default().push(lp.range);
        }
    }
    m
}

/// Builds per-rank copies of `global`. Each rank receives its owned points,
/// the physical padding outside the global domain, and points the chain
/// never writes. All other points are filled with NaN so that a missing
/// exchange shows up in the results.
pub fn scatter(global: &FieldSet, layout: &RankLayout, chain: &LoopChain) -> Vec<FieldSet> {
    let written = written_ranges(chain);
    let domain = layout.global;
    (0..layout.num_ranks())
        .map(|r| {
            let owned = layout.owned(r);
            let mut set = FieldSet::new();
            for f in global.iter() {
                let mut lo = [0; MAX_DIM];
                let mut hi = [0; MAX_DIM];
                for d in 0..domain.dim() {
                    lo[d] = f.domain().start(d) - f.base_range().start(d);
                    hi[d] = f.base_range().end(d) - f.domain().end(d);
                }
                let alloc = owned.grow(&lo, &hi);
                let local = Field::with_alloc(f.id(), f.name(), f.elem_bytes(), *owned, alloc);
                let writes = written.get(&f.id()).map(Vec::as_slice).unwrap_or(&[]);
                for p in alloc.points() {
                    let copy = owned.contains(&p)
                        || !domain.contains(&p)
                        || !writes.iter().any(|w| w.contains(&p));
                    let v = if copy { f.get(&p).unwrap_or(f64::NAN) } else { f64::NAN };
                    local.store(&p, v);
                }
                set.push(local);
            }
            set
        })
        .collect()
}

/// Copies every rank's owned region back into `global`.
pub fn gather(rank_fields: &[FieldSet], layout: &RankLayout, global: &mut FieldSet) -> Result<()> {
    for (r, set) in rank_fields.iter().enumerate() {
        let owned = layout.owned(r);
        for f in set.iter() {
            let g = global.get(f.id())?;
            for p in owned.points() {
                if let Some(v) = f.get(&p) {
                    g.store(&p, v);
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Exchange,
    ExecuteStart(usize),
    ExecuteEnd(usize),
}

/// Exchange phases logged while any rank was executing tiles.
pub fn exchanges_during_execution(events: &[Event]) -> usize {
    let mut running = 0usize;
    let mut n = 0;
    for e in events {
        match e {
            Event::ExecuteStart(_) => running += 1,
            Event::ExecuteEnd(_) => running = running.saturating_sub(1),
            Event::Exchange if running > 0 => n += 1,
            Event::Exchange => {}
        }
    }
    n
}

type RankPlanKey = (ChainSignature, Index, Vec<usize>, usize);

/// Per-rank plans and halo specs, cached by chain signature, tile sizes,
/// rank grid and rank.
#[derive(Debug, Default)]
pub struct RankPlanCache {
    plans: HashMap<RankPlanKey, Arc<(TilingPlan, HaloSpec)>>,
    builds: usize,
    hits: usize,
}

impl RankPlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builds(&self) -> usize {
        self.builds
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    fn get_or_build(
        &mut self,
        chain: &LoopChain,
        layout: &RankLayout,
        rank: usize,
        tile_sizes: &[i64],
    ) -> Result<(Arc<(TilingPlan, HaloSpec)>, bool)> {
        let mut ts = [1; MAX_DIM];
        ts[..tile_sizes.len().min(MAX_DIM)].copy_from_slice(&tile_sizes[..tile_sizes.len().min(MAX_DIM)]);
        let key = (chain.signature(), ts, layout.grid().to_vec(), rank);
        if let Some(p) = self.plans.get(&key) {
            self.hits += 1;
            return Ok((Arc::clone(p), true));
        }
        let plan = construct_rank_plan(chain, layout, rank, tile_sizes)?;
        let spec = compute_halo_depths(&plan, chain, layout, rank);
        let entry = Arc::new((plan, spec));
        self.builds += 1;
        self.plans.insert(key, Arc::clone(&entry));
        Ok((entry, false))
    }
}

fn merge_loops(into: &mut [LoopReport], from: &[LoopReport]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.time += b.time;
        a.bytes += b.bytes;
        a.launches += b.launches;
    }
}

fn combine_reductions(
    chain: &LoopChain,
    per_rank: &[Vec<(ReductionHandle, f64)>],
) -> Vec<(ReductionHandle, f64)> {
    let specs: Vec<_> = chain.loops().iter().filter_map(|l| l.reduction).collect();
    specs
        .iter()
        .map(|s| {
            let mut acc = s.op.identity();
            for rank in per_rank {
                if let Some(&(_, v)) = rank.iter().find(|(h, _)| *h == s.handle) {
                    acc = s.op.combine(acc, v);
                }
            }
            (s.handle, acc)
        })
        .collect()
}

/// Overlapped tiled execution of `chain` on the ranks of `layout`: one
/// halo exchange, then every rank runs its plan with no communication.
/// Owned regions are gathered back into `fields`.
pub fn run_distributed(
    chain: &LoopChain,
    layout: &RankLayout,
    tile_sizes: &[i64],
    fields: &mut FieldSet,
    cache: &mut RankPlanCache,
) -> Result<ExecutionReport> {
    let started = Instant::now();
    if chain.is_empty() {
        return Ok(ExecutionReport::default());
    }
    let t_plan = Instant::now();
    let mut entries = Vec::with_capacity(layout.num_ranks());
    let mut all_hit = true;
    for r in 0..layout.num_ranks() {
        let (e, hit) = cache.get_or_build(chain, layout, r, tile_sizes)?;
        all_hit &= hit;
        entries.push(e);
    }
    let planning_time = t_plan.elapsed();

    let mut rank_fields = scatter(fields, layout, chain);
    for (e, set) in entries.iter().zip(&rank_fields) {
        e.0.check_allocation(set)?;
    }
    let events = Mutex::new(Vec::new());
    let mut comm = CommStats::new(layout.num_ranks());
    let specs: Vec<HaloSpec> = entries.iter().map(|e| e.1.clone()).collect();
    events.lock().unwrap().push(Event::Exchange);
    exchange_halos(&mut rank_fields, &Exchange::from_specs(&specs), layout, &mut comm)?;

    let reports: Vec<Result<ExecutionReport>> = entries
        .par_iter()
        .zip(rank_fields.par_iter())
        .enumerate()
        .map(|(r, (e, set))| {
            events.lock().unwrap().push(Event::ExecuteStart(r));
            let rep = execute_plan_masked(&e.0, chain, set, Some(layout.owned(r)));
            events.lock().unwrap().push(Event::ExecuteEnd(r));
            rep
        })
        .collect();
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    gather(&rank_fields, layout, fields)?;
    comm.exchanges_during_execution = exchanges_during_execution(&events.into_inner().unwrap());

    let mut loops = reports[0].loops.clone();
    for rep in &reports[1..] {
        merge_loops(&mut loops, &rep.loops);
    }
    let per_rank: Vec<_> = reports.iter().map(|r| r.reductions.clone()).collect();
    Ok(ExecutionReport {
        mode: "distributed-tiled".into(),
        flushes: 1,
        loops,
        tiles: reports.iter().map(|r| r.tiles).max().unwrap_or(0),
        max_skew: entries.iter().fold([0; MAX_DIM], |mut m, e| {
            for d in 0..MAX_DIM {
                m[d] = m[d].max(e.0.stats().max_skew[d]);
            }
            m
        }),
        cache_hit: all_hit,
        plan_builds: usize::from(!all_hit),
        planning_time,
        total_time: started.elapsed(),
        reductions: combine_reductions(chain, &per_rank),
        comm: Some(comm),
        ..ExecutionReport::default()
    })
}

/// Loop-at-a-time distributed baseline: before each loop, every dataset it
/// reads through a multi-point stencil is exchanged to the stencil's depth;
/// each rank then runs the loop over its owned part of the range.
pub fn run_distributed_untiled(
    chain: &LoopChain,
    layout: &RankLayout,
    fields: &mut FieldSet,
) -> Result<ExecutionReport> {
    let started = Instant::now();
    let dim = layout.global.dim();
    let mut rank_fields = scatter(fields, layout, chain);
    let mut comm = CommStats::new(layout.num_ranks());
    let mut loops: Vec<LoopReport> = Vec::with_capacity(chain.len());
    let mut per_rank: Vec<Vec<_>> = vec![Vec::new(); layout.num_ranks()];
    let mut events = Vec::new();
    for lp in chain.loops() {
        let mut requests: Vec<Exchange> = Vec::new();
        for a in lp.args.iter().filter(|a| a.mode.reads() && !a.stencil.is_identity()) {
            let mut ex = Exchange {
                dataset: a.dataset,
                lo: [0; MAX_DIM],
                hi: [0; MAX_DIM],
            };
            for d in 0..dim {
                ex.lo[d] = (-a.stencil.min_offset(d)).max(0);
                ex.hi[d] = a.stencil.max_offset(d).max(0);
            }
            match requests.iter_mut().find(|r| r.dataset == a.dataset) {
                Some(r) => {
                    for d in 0..MAX_DIM {
                        r.lo[d] = r.lo[d].max(ex.lo[d]);
                        r.hi[d] = r.hi[d].max(ex.hi[d]);
                    }
                }
                None => requests.push(ex),
            }
        }
        if !requests.is_empty() {
            events.push(Event::Exchange);
            exchange_halos(&mut rank_fields, &requests, layout, &mut comm)?;
        }
        let t0 = Instant::now();
        let mut bytes = 0;
        let mut launches = 0;
        for (r, set) in rank_fields.iter().enumerate() {
            let owned = layout.owned(r);
            let range = lp.range.intersect(owned);
            events.push(Event::ExecuteStart(r));
            let v = run_range(lp, &range, set, Some(owned), None)?;
            events.push(Event::ExecuteEnd(r));
            if let Some(s) = lp.reduction {
                per_rank[r].push((s.handle, v));
            }
            bytes += estimate_bytes_moved(lp, &range);
            launches += usize::from(!range.is_empty());
        }
        loops.push(LoopReport {
            loop_id: lp.loop_id,
            kernel: lp.kernel.name().to_string(),
            time: t0.elapsed(),
            bytes,
            launches,
        });
    }
    gather(&rank_fields, layout, fields)?;
    comm.exchanges_during_execution = exchanges_during_execution(&events);
    Ok(ExecutionReport {
        mode: "distributed-untiled".into(),
        flushes: 1,
        loops,
        tiles: 1,
        planning_time: Duration::ZERO,
        total_time: started.elapsed(),
        reductions: combine_reductions(chain, &per_rank),
        comm: Some(comm),
        ..ExecutionReport::default()
    })
}
