//! Execution of tiling plans and of the untiled loop-at-a-time baseline.
//!
//! Within one (tile, loop) pair grid points run in parallel on the rayon
//! pool; loops within a tile and tiles within a plan run strictly in
//! order. Reductions are folded over fixed, geometry-derived chunks so the
//! result does not depend on the number of threads.

use crate::chain::LoopChain;
use crate::error::{Error, Result};
use crate::mesh::{
    bind_args, estimate_bytes_moved, fault_error, FieldSet, Index, LoopRecord, PointCtx, Range,
    ReductionHandle,
};
use crate::planner::TilingPlan;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

/// Ranges smaller than this run as a single chunk on the calling thread.
const SEQUENTIAL_POINTS: u64 = 2048;
const CHUNK_1D: i64 = 2048;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopReport {
    pub loop_id: usize,
    pub kernel: String,
    pub time: Duration,
    pub bytes: u64,
    /// Non-empty (tile, loop) ranges executed.
    pub launches: usize,
}

/// Halo-exchange accounting for distributed runs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub messages_sent: Vec<u64>,
    pub bytes_sent: Vec<u64>,
    /// Number of exchange phases performed.
    pub exchanges: usize,
    /// Exchange phases observed while tiles were executing. Always zero for
    /// overlapped tiling.
    pub exchanges_during_execution: usize,
}

impl CommStats {
    pub fn new(ranks: usize) -> Self {
        Self {
            messages_sent: vec![0; ranks],
            bytes_sent: vec![0; ranks],
            ..Self::default()
        }
    }

    pub fn total_messages(&self) -> u64 {
        self.messages_sent.iter().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent.iter().sum()
    }

    pub fn absorb(&mut self, other: &CommStats) {
        if self.messages_sent.len() < other.messages_sent.len() {
            self.messages_sent.resize(other.messages_sent.len(), 0);
            self.bytes_sent.resize(other.bytes_sent.len(), 0);
        }
        for (i, (m, b)) in other.messages_sent.iter().zip(&other.bytes_sent).enumerate() {
            self.messages_sent[i] += m;
            self.bytes_sent[i] += b;
        }
        self.exchanges += other.exchanges;
        self.exchanges_during_execution += other.exchanges_during_execution;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecutionReport {
    pub mode: String,
    pub flushes: usize,
    pub loops: Vec<LoopReport>,
    pub tiles: usize,
    pub max_skew: Index,
    pub cache_hit: bool,
    pub plan_builds: usize,
    pub planning_time: Duration,
    pub total_time: Duration,
    pub reductions: Vec<(ReductionHandle, f64)>,
    pub comm: Option<CommStats>,
    pub verify_max_abs_diff: Option<f64>,
    pub verify_max_rel_reduction_diff: Option<f64>,
}

impl ExecutionReport {
    pub fn total_bytes(&self) -> u64 {
        self.loops.iter().map(|l| l.bytes).sum()
    }

    pub fn kernel_time(&self) -> Duration {
        self.loops.iter().map(|l| l.time).sum()
    }

    pub fn reduction(&self, handle: ReductionHandle) -> Option<f64> {
        self.reductions
            .iter()
            .find(|(h, _)| *h == handle)
            .map(|&(_, v)| v)
    }

    /// Folds another flush's report into this one. Per-loop entries are
    /// summed position by position when both reports ran the same kernels.
    pub fn absorb(&mut self, other: ExecutionReport) {
        if self.flushes == 0 && self.loops.is_empty() {
            let flushes = other.flushes;
            *self = other;
            self.flushes = flushes.max(1);
            return;
        }
        let same_shape = self.loops.len() == other.loops.len()
            && self
                .loops
                .iter()
                .zip(&other.loops)
                .all(|(a, b)| a.kernel == b.kernel);
        if same_shape {
            for (a, b) in self.loops.iter_mut().zip(&other.loops) {
                a.time += b.time;
                a.bytes += b.bytes;
                a.launches += b.launches;
            }
        } else {
            self.loops.extend(other.loops);
        }
        self.flushes += other.flushes.max(1);
        self.tiles = self.tiles.max(other.tiles);
        for d in 0..self.max_skew.len() {
            self.max_skew[d] = self.max_skew[d].max(other.max_skew[d]);
        }
        self.cache_hit |= other.cache_hit;
        self.plan_builds += other.plan_builds;
        self.planning_time += other.planning_time;
        self.total_time += other.total_time;
        self.reductions.extend(other.reductions);
        match (&mut self.comm, other.comm) {
            (Some(a), Some(b)) => a.absorb(&b),
            (None, Some(b)) => self.comm = Some(b),
            _ => {}
        }
        self.verify_max_abs_diff = max_opt(self.verify_max_abs_diff, other.verify_max_abs_diff);
        self.verify_max_rel_reduction_diff = max_opt(
            self.verify_max_rel_reduction_diff,
            other.verify_max_rel_reduction_diff,
        );
    }

    /// `key=value` lines, one per metric, followed by one line per loop.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "flushes={}", self.flushes);
        let _ = writeln!(s, "loops={}", self.loops.len());
        let _ = writeln!(s, "tiles={}", self.tiles);
        let _ = writeln!(
            s,
            "max_skew={},{},{}",
            self.max_skew[0], self.max_skew[1], self.max_skew[2]
        );
        let _ = writeln!(s, "cache_hit={}", self.cache_hit);
        let _ = writeln!(s, "plan_builds={}", self.plan_builds);
        let _ = writeln!(s, "planning_time_s={:.6}", self.planning_time.as_secs_f64());
        let _ = writeln!(s, "total_time_s={:.6}", self.total_time.as_secs_f64());
        let _ = writeln!(s, "bytes_moved={}", self.total_bytes());
        let secs = self.kernel_time().as_secs_f64();
        if secs > 0.0 {
            let _ = writeln!(s, "bandwidth_gbs={:.3}", self.total_bytes() as f64 / secs / 1e9);
        }
        for (h, v) in &self.reductions {
            let _ = writeln!(s, "reduction.{}={v:e}", h.0);
        }
        if let Some(c) = &self.comm {
            let _ = writeln!(s, "messages_sent={}", c.total_messages());
            let _ = writeln!(s, "bytes_sent={}", c.total_bytes());
            let _ = writeln!(s, "exchanges={}", c.exchanges);
            let _ = writeln!(s, "exchanges_during_execution={}", c.exchanges_during_execution);
            for (r, (m, b)) in c.messages_sent.iter().zip(&c.bytes_sent).enumerate() {
                let _ = writeln!(s, "rank.{r}.messages_sent={m}");
                let _ = writeln!(s, "rank.{r}.bytes_sent={b}");
            }
        }
        if let Some(d) = self.verify_max_abs_diff {
            let _ = writeln!(s, "max_abs_diff={d:e}");
        }
        if let Some(d) = self.verify_max_rel_reduction_diff {
            let _ = writeln!(s, "max_rel_reduction_diff={d:e}");
        }
        for l in &self.loops {
            let _ = writeln!(
                s,
                "loop.{}.{}: time_s={:.6} bytes={} launches={}",
                l.loop_id,
                l.kernel,
                l.time.as_secs_f64(),
                l.bytes,
                l.launches
            );
        }
        s
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

fn chunks(range: &Range) -> Vec<Range> {
    if range.num_points() <= SEQUENTIAL_POINTS {
        return vec![*range];
    }
    match range.dim() {
        1 => {
            let mut out = Vec::new();
            let mut s = range.start(0);
            while s < range.end(0) {
                let e = (s + CHUNK_1D).min(range.end(0));
                out.push(range.with_dim(0, s, e));
                s = e;
            }
            out
        }
        2 => (range.start(1)..range.end(1))
            .map(|y| range.with_dim(1, y, y + 1))
            .collect(),
        _ => {
            let mut out = Vec::new();
            for z in range.start(2)..range.end(2) {
                for y in range.start(1)..range.end(1) {
                    out.push(range.with_dim(2, z, z + 1).with_dim(1, y, y + 1));
                }
            }
            out
        }
    }
}

/// Runs `lp` over `range`, returning the loop's reduction partial (the
/// operator identity when the loop has no reduction).
pub(crate) fn run_range(
    lp: &LoopRecord,
    range: &Range,
    fields: &FieldSet,
    mask: Option<&Range>,
    tile: Option<usize>,
) -> Result<f64> {
    let op = lp.reduction.map(|r| r.op);
    let identity = op.map_or(0.0, |o| o.identity());
    if range.is_empty() {
        return Ok(identity);
    }
    let args = bind_args(lp, fields)?;
    let dim = range.dim();
    let run_chunk = |chunk: &Range| -> Result<f64> {
        let mut ctx = PointCtx::new(dim, &args, op, mask);
        for p in chunk.points() {
            ctx.set_point(p);
            lp.kernel.call(&mut ctx);
            if let Some(f) = ctx.take_fault() {
                return Err(fault_error(f, lp, &args, tile));
            }
        }
        Ok(ctx.partial())
    };
    let parts = chunks(range);
    let partials: Vec<Result<f64>> = if parts.len() == 1 {
        vec![run_chunk(&parts[0])]
    } else {
        parts.par_iter().map(run_chunk).collect()
    };
    let mut acc = identity;
    for p in partials {
        let v = p?;
        if let Some(o) = op {
            acc = o.combine(acc, v);
        }
    }
    Ok(acc)
}

fn empty_loop_reports(chain: &LoopChain) -> Vec<LoopReport> {
    chain
        .loops()
        .iter()
        .map(|l| LoopReport {
            loop_id: l.loop_id,
            kernel: l.kernel.name().to_string(),
            ..LoopReport::default()
        })
        .collect()
}

fn reductions_of(chain: &LoopChain, acc: &[f64]) -> Vec<(ReductionHandle, f64)> {
    chain
        .loops()
        .iter()
        .zip(acc)
        .filter_map(|(l, &v)| l.reduction.map(|r| (r.handle, v)))
        .collect()
}

/// Executes `chain` tile by tile following `plan`.
pub fn execute_plan(
    plan: &TilingPlan,
    chain: &LoopChain,
    fields: &mut FieldSet,
) -> Result<ExecutionReport> {
    execute_plan_masked(plan, chain, fields, None)
}

/// As [`execute_plan`]; reduction contributions from points outside `mask`
/// are dropped (used for replicated iterations on simulated ranks).
pub(crate) fn execute_plan_masked(
    plan: &TilingPlan,
    chain: &LoopChain,
    fields: &FieldSet,
    mask: Option<&Range>,
) -> Result<ExecutionReport> {
    if plan.signature() != chain.signature() || plan.num_loops() != chain.len() {
        return Err(Error::PlanMismatch);
    }
    let started = Instant::now();
    let mut loops = empty_loop_reports(chain);
    let mut acc: Vec<f64> = chain
        .loops()
        .iter()
        .map(|l| l.reduction.map_or(0.0, |r| r.op.identity()))
        .collect();
    for tile in 0..plan.num_tiles() {
        for (l, lp) in chain.loops().iter().enumerate() {
            let range = plan.range(tile, l);
            if range.is_empty() {
                continue;
            }
            let t0 = Instant::now();
            let partial = run_range(lp, &range, fields, mask, Some(tile))?;
            if let Some(r) = lp.reduction {
                acc[l] = r.op.combine(acc[l], partial);
            }
            let rep = &mut loops[l];
            rep.time += t0.elapsed();
            rep.bytes += estimate_bytes_moved(lp, &range);
            rep.launches += 1;
        }
    }
    Ok(ExecutionReport {
        mode: "tiled".into(),
        flushes: 1,
        reductions: reductions_of(chain, &acc),
        loops,
        tiles: plan.num_tiles(),
        max_skew: plan.stats().max_skew,
        total_time: started.elapsed(),
        ..ExecutionReport::default()
    })
}

/// Executes each loop of `chain` over its full range, in chain order.
pub fn execute_untiled(chain: &LoopChain, fields: &mut FieldSet) -> Result<ExecutionReport> {
    execute_untiled_masked(chain, fields, None, None)
}

/// Loop-at-a-time execution, optionally restricting every loop to the
/// intersection of its range with `window`.
pub(crate) fn execute_untiled_masked(
    chain: &LoopChain,
    fields: &FieldSet,
    window: Option<&Range>,
    mask: Option<&Range>,
) -> Result<ExecutionReport> {
    let started = Instant::now();
    let mut loops = empty_loop_reports(chain);
    let mut acc = Vec::with_capacity(chain.len());
    for (lp, rep) in chain.loops().iter().zip(&mut loops) {
        let range = window.map_or(lp.range, |w| lp.range.intersect(w));
        let t0 = Instant::now();
        acc.push(run_range(lp, &range, fields, mask, None)?);
        rep.time = t0.elapsed();
        rep.bytes = estimate_bytes_moved(lp, &range);
        rep.launches = usize::from(!range.is_empty());
    }
    Ok(ExecutionReport {
        mode: "untiled".into(),
        flushes: 1,
        reductions: reductions_of(chain, &acc),
        loops,
        tiles: 1,
        total_time: started.elapsed(),
        ..ExecutionReport::default()
    })
}
