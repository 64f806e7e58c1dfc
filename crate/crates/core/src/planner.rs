//! Run-time dependency analysis that turns a loop chain into a skewed
//! tiling plan.
//!
//! The union of all loop ranges is cut into a regular tile grid. Loops are
//! then visited last to first; for each loop and each tile the end index is
//! pushed right far enough that
//!
//! * every value a later loop reads inside the tile has already been
//!   produced (read-after-write), and
//! * no value this loop reads or writes in a later tile has already been
//!   overwritten by a later loop in an earlier tile (write-after-read and
//!   write-after-write).
//!
//! A tile's start is the previous tile's end, so each loop's range is
//! partitioned exactly. Every dimension is handled independently and the
//! tiles are the Cartesian product of the per-dimension ranges.
//!
//! The same routine builds per-rank plans for overlapped distributed tiling
//! (see [`crate::dist`]): there the first tile may reach left and the last
//! tile right past the rank's owned range, following read dependencies only.

use crate::chain::{ChainSignature, LoopChain};
use crate::error::{Error, Result};
use crate::mesh::{DatasetId, FieldSet, Index, LoopRecord, Range, MAX_DIM};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

/// Tile grid over the union of a chain's iteration ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanConfig {
    dim: usize,
    tile_sizes: Index,
    num_tiles: [usize; MAX_DIM],
    union_bounds: Range,
}

impl PlanConfig {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tile_sizes(&self) -> &[i64] {
        &self.tile_sizes[..self.dim]
    }

    pub fn num_tiles(&self) -> &[usize] {
        &self.num_tiles[..self.dim]
    }

    pub fn total_tiles(&self) -> usize {
        self.num_tiles.iter().product()
    }

    pub fn union_bounds(&self) -> &Range {
        &self.union_bounds
    }

    /// Default end of tile `t` along `d` before any skewing.
    pub fn default_tile_end(&self, d: usize, t: usize) -> i64 {
        self.union_bounds.start(d) + (t as i64 + 1) * self.tile_sizes[d]
    }
}

/// Per-dimension view of where a plan is built: the index window this
/// process owns and whether neighbours exist on either side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DimContext {
    pub owned: (i64, i64),
    pub lo_neighbor: bool,
    pub hi_neighbor: bool,
}

impl DimContext {
    pub const SHARED: DimContext = DimContext {
        owned: (i64::MIN, i64::MAX),
        lo_neighbor: false,
        hi_neighbor: false,
    };

    fn local(&self, lp: &LoopRecord, d: usize) -> (i64, i64) {
        (
            lp.range.start(d).max(self.owned.0),
            lp.range.end(d).min(self.owned.1),
        )
    }
}

/// A half-open interval that starts out empty (`+inf`, `-inf`) and only
/// ever widens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: i64,
    pub end: i64,
}

impl Span {
    pub const EMPTY: Span = Span {
        start: i64::MAX,
        end: i64::MIN,
    };

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    fn widen(&mut self, start: i64, end: i64) {
        self.start = self.start.min(start);
        self.end = self.end.max(end);
    }

    fn hull(spans: &[Span]) -> Span {
        let mut h = Span::EMPTY;
        for s in spans.iter().filter(|s| !s.is_empty()) {
            h.widen(s.start, s.end);
        }
        h
    }
}

/// Read and write footprints of one dataset along one dimension, per tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimDeps {
    pub read: Vec<Span>,
    pub write: Vec<Span>,
}

impl DimDeps {
    fn new(tiles: usize) -> Self {
        Self {
            read: vec![Span::EMPTY; tiles],
            write: vec![Span::EMPTY; tiles],
        }
    }

    /// Union of the read footprint over all tiles.
    pub fn read_hull(&self) -> Span {
        Span::hull(&self.read)
    }

    pub fn write_hull(&self) -> Span {
        Span::hull(&self.write)
    }
}

/// Dependency extents accumulated during the reverse sweep, indexed by
/// dimension and dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyExtents {
    dims: Vec<BTreeMap<DatasetId, DimDeps>>,
}

impl DependencyExtents {
    pub fn get(&self, d: usize, dataset: DatasetId) -> Option<&DimDeps> {
        self.dims.get(d)?.get(&dataset)
    }

    pub fn datasets(&self) -> impl Iterator<Item = DatasetId> + '_ {
        self.dims.first().into_iter().flat_map(|m| m.keys().copied())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlanStats {
    /// Largest distance any tile end was pushed past its default position,
    /// per dimension.
    pub max_skew: Index,
    /// Tile ends clamped back to the rank extent after overshooting it.
    pub overshoot_clamps: usize,
    /// (tile, loop) pairs with an empty range.
    pub empty_ranges: usize,
}

/// Per-tile, per-loop iteration ranges for one loop chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilingPlan {
    config: PlanConfig,
    signature: ChainSignature,
    num_loops: usize,
    loop_ranges: Vec<Range>,
    /// `schedule[d][t_d][l]` is loop `l`'s range along `d` in tile `t_d`.
    schedule: Vec<Vec<Vec<(i64, i64)>>>,
    extents: DependencyExtents,
    owned: Option<Range>,
    stats: PlanStats,
}

impl TilingPlan {
    pub fn config(&self) -> &PlanConfig {
        &self.config
    }

    pub fn signature(&self) -> ChainSignature {
        self.signature
    }

    pub fn num_tiles(&self) -> usize {
        self.config.total_tiles()
    }

    pub fn num_loops(&self) -> usize {
        self.num_loops
    }

    pub fn extents(&self) -> &DependencyExtents {
        &self.extents
    }

    pub fn stats(&self) -> &PlanStats {
        &self.stats
    }

    /// The owned window this plan was built for, if it is a rank plan.
    pub fn owned(&self) -> Option<&Range> {
        self.owned.as_ref()
    }

    /// Per-dimension tile coordinates of a linear tile index. Dimension 0 is
    /// the most significant.
    pub fn tile_coords(&self, tile: usize) -> Index {
        let mut c = [0; MAX_DIM];
        let mut rem = tile;
        for d in (0..MAX_DIM).rev() {
            let n = self.config.num_tiles[d];
            c[d] = (rem % n) as i64;
            rem /= n;
        }
        c
    }

    pub fn dim_range(&self, d: usize, t_d: usize, l: usize) -> (i64, i64) {
        self.schedule[d][t_d][l]
    }

    /// Loop `l`'s iteration range within `tile`.
    pub fn range(&self, tile: usize, l: usize) -> Range {
        let c = self.tile_coords(tile);
        let dim = self.config.dim;
        let mut start = [0; MAX_DIM];
        let mut end = [1; MAX_DIM];
        for d in 0..dim {
            let (s, e) = self.schedule[d][c[d] as usize][l];
            start[d] = s;
            end[d] = e;
        }
        Range::from_parts(dim, start, end)
    }

    /// Overwrites one per-dimension range. Intended for building
    /// hand-crafted plans in tests of the validators.
    pub fn set_dim_range(&mut self, d: usize, t_d: usize, l: usize, start: i64, end: i64) {
        self.schedule[d][t_d][l] = (start, end);
    }

    /// Union over tiles of loop `l`'s ranges along `d`.
    pub fn loop_extent(&self, d: usize, l: usize) -> (i64, i64) {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for tiles in &self.schedule[d] {
            let (s, e) = tiles[l];
            if s < e {
                lo = lo.min(s);
                hi = hi.max(e);
            }
        }
        if lo >= hi {
            let s = self.loop_ranges[l].start(d);
            (s, s)
        } else {
            (lo, hi)
        }
    }

    /// Line-oriented dump: one `tile=<t> loop=<l> d=<d> [<start>,<end>)`
    /// line per tile, loop and dimension.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in 0..self.num_tiles() {
            let c = self.tile_coords(t);
            for l in 0..self.num_loops {
                for d in 0..self.config.dim {
                    let (s, e) = self.schedule[d][c[d] as usize][l];
                    let _ = writeln!(out, "tile={t} loop={l} d={d} [{s},{e})");
                }
            }
        }
        out
    }

    /// Checks that every access the plan implies stays inside each
    /// dataset's allocated extent in `fields`.
    pub fn check_allocation(&self, fields: &FieldSet) -> Result<()> {
        for (d, per_dataset) in self.extents.dims.iter().enumerate() {
            for (&id, deps) in per_dataset {
                let field = fields.get(id)?;
                let (alloc, domain) = (field.base_range(), field.domain());
                let mut hull = deps.read_hull();
                let w = deps.write_hull();
                if !w.is_empty() {
                    hull.widen(w.start, w.end);
                }
                if hull.is_empty() {
                    continue;
                }
                let (needed, allocated) = if hull.start < alloc.start(d) {
                    (domain.start(d) - hull.start, domain.start(d) - alloc.start(d))
                } else if hull.end > alloc.end(d) {
                    (hull.end - domain.end(d), alloc.end(d) - domain.end(d))
                } else {
                    continue;
                };
                return Err(Error::InsufficientHalo {
                    dataset: field.name().to_string(),
                    dim: d,
                    needed,
                    allocated,
                });
            }
        }
        Ok(())
    }
}

fn check_tile_sizes(dim: usize, tile_sizes: &[i64]) -> Result<Index> {
    if tile_sizes.len() != dim {
        return Err(Error::InvalidTileSize(format!(
            "expected {dim} tile sizes, got {}",
            tile_sizes.len()
        )));
    }
    let mut ts = [1; MAX_DIM];
    for (d, &s) in tile_sizes.iter().enumerate() {
        if s <= 0 {
            return Err(Error::InvalidTileSize(format!("tile size {s} in dim {d}")));
        }
        ts[d] = s;
    }
    Ok(ts)
}

fn union_config(chain: &LoopChain, tile_sizes: &[i64], ctx: &[DimContext]) -> Result<PlanConfig> {
    let dim = chain.dim().ok_or(Error::EmptyChain)?;
    let ts = check_tile_sizes(dim, tile_sizes)?;
    let mut start = [0; MAX_DIM];
    let mut end = [1; MAX_DIM];
    let mut num_tiles = [1; MAX_DIM];
    for d in 0..dim {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for lp in chain.loops() {
            if lp.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: lp.dim(),
                });
            }
            let (s, e) = ctx[d].local(lp, d);
            if s < e {
                lo = lo.min(s);
                hi = hi.max(e);
            }
        }
        if lo >= hi {
            let s = ctx[d].local(&chain.loops()[0], d).0;
            lo = s;
            hi = s;
        }
        start[d] = lo;
        end[d] = hi;
        num_tiles[d] = if hi > lo {
            ((hi - lo - 1) / ts[d] + 1) as usize
        } else {
            1
        };
    }
    Ok(PlanConfig {
        dim,
        tile_sizes: ts,
        num_tiles,
        union_bounds: Range::from_parts(dim, start, end),
    })
}

/// Union of the chain's iteration ranges and the resulting tile grid.
pub fn compute_union_bounds(chain: &LoopChain, tile_sizes: &[i64]) -> Result<PlanConfig> {
    union_config(chain, tile_sizes, &[DimContext::SHARED; MAX_DIM])
}

/// Builds the shared-memory tiling plan for `chain` on the grid `config`.
pub fn construct_plan(chain: &LoopChain, config: &PlanConfig) -> Result<TilingPlan> {
    if chain.dim() != Some(config.dim) {
        return Err(Error::PlanMismatch);
    }
    Ok(build(chain, config.clone(), &[DimContext::SHARED; MAX_DIM], None))
}

pub(crate) fn construct_with_context(
    chain: &LoopChain,
    tile_sizes: &[i64],
    ctx: &[DimContext; MAX_DIM],
    owned: Option<Range>,
) -> Result<TilingPlan> {
    let config = union_config(chain, tile_sizes, ctx)?;
    Ok(build(chain, config, ctx, owned))
}

fn build(
    chain: &LoopChain,
    config: PlanConfig,
    ctx: &[DimContext],
    owned: Option<Range>,
) -> TilingPlan {
    let dim = config.dim;
    let mut stats = PlanStats::default();
    let mut schedule = Vec::with_capacity(dim);
    let mut extents = DependencyExtents::default();
    for d in 0..dim {
        let (sched, deps) = sweep_dimension(chain, &config, d, ctx[d], &mut stats);
        schedule.push(sched);
        extents.dims.push(deps);
    }
    stats.empty_ranges = count_empty(&schedule, &config, chain.len());
    TilingPlan {
        signature: chain.signature(),
        num_loops: chain.len(),
        loop_ranges: chain.loops().iter().map(|l| l.range).collect(),
        config,
        schedule,
        extents,
        owned,
        stats,
    }
}

fn count_empty(schedule: &[Vec<Vec<(i64, i64)>>], config: &PlanConfig, loops: usize) -> usize {
    let mut n = 0;
    let total = config.total_tiles();
    for t in 0..total {
        let mut rem = t;
        let mut c = [0usize; MAX_DIM];
        for d in (0..MAX_DIM).rev() {
            c[d] = rem % config.num_tiles[d];
            rem /= config.num_tiles[d];
        }
        for l in 0..loops {
            if (0..config.dim).any(|d| {
                let (s, e) = schedule[d][c[d]][l];
                s >= e
            }) {
                n += 1;
            }
        }
    }
    n
}

/// Per-tile, per-loop `(start, end)` along one dimension.
type DimSchedule = Vec<Vec<(i64, i64)>>;

/// Reverse sweep over the chain along one dimension.
fn sweep_dimension(
    chain: &LoopChain,
    config: &PlanConfig,
    d: usize,
    ctx: DimContext,
    stats: &mut PlanStats,
) -> (DimSchedule, BTreeMap<DatasetId, DimDeps>) {
    let nt = config.num_tiles[d];
    let ts = config.tile_sizes[d];
    let union_start = config.union_bounds.start(d);
    let nl = chain.len();
    let mut sched = vec![vec![(0i64, 0i64); nl]; nt];
    let mut deps: BTreeMap<DatasetId, DimDeps> = BTreeMap::new();
    for lp in chain.loops() {
        for a in &lp.args {
            deps.entry(a.dataset).or_insert_with(|| DimDeps::new(nt));
        }
    }

    for (l, lp) in chain.loops().iter().enumerate().rev() {
        let (gs, ge) = (lp.range.start(d), lp.range.end(d));
        let (ls, le) = ctx.local(lp, d);
        let written: Vec<DatasetId> = lp
            .args
            .iter()
            .filter(|a| a.mode.writes())
            .map(|a| a.dataset)
            .collect();

        // Extent of this loop on the current process. Without neighbours it
        // is just the (local) loop range; with them it reaches past the
        // owned window to cover reads of values this loop produces.
        let mut first = ls;
        let mut last = le;
        if ctx.lo_neighbor {
            for a in &written {
                for span in deps[a].read.iter().filter(|s| !s.is_empty()) {
                    first = first.min(span.start);
                }
            }
            first = first.max(gs);
        }
        if ctx.hi_neighbor {
            for a in &written {
                for span in deps[a].read.iter().filter(|s| !s.is_empty()) {
                    last = last.max(span.end);
                }
            }
            last = last.min(ge);
        }
        if last <= first {
            let p = ls.clamp(gs, ge);
            for tile in sched.iter_mut() {
                tile[l] = (p, p);
            }
            continue;
        }

        // Last tile whose default start lies before the loop's end.
        let last_tile = if last <= union_start {
            0
        } else {
            (((last - union_start - 1) / ts) as usize).min(nt - 1)
        };

        let mut prev_end = first;
        for t in 0..nt {
            let start = prev_end;
            let raw = if t >= last_tile {
                last
            } else {
                let mut end: Option<i64> = None;
                // read-after-write: produce everything later loops read here
                for a in &written {
                    let span = deps[a].read[t];
                    if !span.is_empty() {
                        end = Some(end.map_or(span.end, |e| e.max(span.end)));
                    }
                }
                // write-after-read/write: don't let this loop's next tile see
                // values later loops already overwrote in this tile
                for a in &lp.args {
                    let span = deps[&a.dataset].write[t];
                    if !span.is_empty() {
                        let need = span.end - a.stencil.min_offset(d);
                        end = Some(end.map_or(need, |e| e.max(need)));
                    }
                }
                end.unwrap_or_else(|| config.default_tile_end(d, t))
            };
            if ctx.hi_neighbor && t < last_tile && raw > last {
                stats.overshoot_clamps += 1;
            }
            let end = raw.min(last).max(start);
            if end > start {
                let skew = end - config.default_tile_end(d, t);
                stats.max_skew[d] = stats.max_skew[d].max(skew);
            }
            sched[t][l] = (start, end);
            prev_end = end;
        }

        for (t, tile) in sched.iter().enumerate() {
            let (s, e) = tile[l];
            if s >= e {
                continue;
            }
            for a in &lp.args {
                let entry = deps.get_mut(&a.dataset).unwrap();
                if a.mode.reads() {
                    entry.read[t].widen(s + a.stencil.min_offset(d), e + a.stencil.max_offset(d));
                }
                if a.mode.writes() {
                    entry.write[t].widen(s, e);
                }
            }
        }
    }
    (sched, deps)
}

/// Cache of built plans keyed by chain signature and tile sizes.
#[derive(Debug, Default)]
pub struct PlanCache {
    plans: HashMap<(ChainSignature, Index), Arc<TilingPlan>>,
    builds: usize,
    hits: usize,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached plan for `(chain, tile_sizes)`, building it on a
    /// miss. The flag is true on a cache hit.
    pub fn get_or_build_plan(
        &mut self,
        chain: &LoopChain,
        tile_sizes: &[i64],
    ) -> Result<(Arc<TilingPlan>, bool)> {
        let dim = chain.dim().ok_or(Error::EmptyChain)?;
        let key = (chain.signature(), check_tile_sizes(dim, tile_sizes)?);
        if let Some(p) = self.plans.get(&key) {
            self.hits += 1;
            return Ok((Arc::clone(p), true));
        }
        let config = compute_union_bounds(chain, tile_sizes)?;
        let plan = Arc::new(construct_plan(chain, &config)?);
        self.builds += 1;
        self.plans.insert(key, Arc::clone(&plan));
        Ok((plan, false))
    }

    /// Number of plans constructed so far.
    pub fn builds(&self) -> usize {
        self.builds
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }
}
