//! Brute-force references used as ground truth by the tests: strictly
//! sequential chain execution, symbolic dependency checking of a plan, and
//! coverage checking.
//!
//! Everything here is O(points x loops x stencil) and meant for small
//! instances only.

use crate::chain::LoopChain;
use crate::error::Result;
use crate::mesh::{
    bind_args, fault_error, DatasetId, FieldSet, Index, PointCtx, Range, ReductionHandle, MAX_DIM,
};
use crate::planner::TilingPlan;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// A read whose sequential producer runs in a later tile (or never).
    ReadBeforeProduce,
    /// One loop writes a point in more than one tile.
    DoubleWrite,
    /// A loop point not covered by any tile.
    CoverageGap,
    /// A loop point covered more than once, or a tile range leaving the
    /// loop's range (or the permitted replication band).
    CoverageOverlap,
    /// A read that sees a value a later loop already overwrote in an
    /// earlier tile.
    WriteBeforeRead,
    /// Two writes to the same point landing in the opposite of sequential
    /// order.
    WriteOrderInverted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub loop_id: usize,
    pub tile: Option<usize>,
    pub point: Vec<i64>,
    pub dataset: Option<DatasetId>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} loop={}", self.kind, self.loop_id)?;
        if let Some(t) = self.tile {
            write!(f, " tile={t}")?;
        }
        write!(f, " point={:?}", self.point)?;
        if let Some(d) = self.dataset {
            write!(f, " dataset={d}")?;
        }
        Ok(())
    }
}

/// Result of [`sequential_reference`].
#[derive(Clone, Debug)]
pub struct Reference {
    pub fields: FieldSet,
    pub reductions: Vec<(ReductionHandle, f64)>,
}

/// Runs `chain` one loop at a time, one point at a time, on a single
/// thread, over a copy of `fields`.
pub fn sequential_reference(chain: &LoopChain, fields: &FieldSet) -> Result<Reference> {
    let out = fields.clone();
    let mut reductions = Vec::new();
    for lp in chain.loops() {
        let args = bind_args(lp, &out)?;
        let op = lp.reduction.map(|r| r.op);
        let mut ctx = PointCtx::new(lp.dim(), &args, op, None);
        for p in lexicographic(&lp.range) {
            ctx.set_point(p);
            lp.kernel.call(&mut ctx);
            if let Some(f) = ctx.take_fault() {
                return Err(fault_error(f, lp, &args, None));
            }
        }
        if let Some(r) = lp.reduction {
            reductions.push((r.handle, ctx.partial()));
        }
    }
    Ok(Reference {
        fields: out,
        reductions,
    })
}

/// Points of `r` with the last dimension varying fastest.
fn lexicographic(r: &Range) -> impl Iterator<Item = Index> + '_ {
    let dim = r.dim();
    let mut rev = [0; MAX_DIM];
    let mut rev_end = [1; MAX_DIM];
    for d in 0..dim {
        rev[d] = r.start(dim - 1 - d);
        rev_end[d] = r.end(dim - 1 - d);
    }
    Range::from_parts(dim, rev, rev_end)
        .points()
        .map(move |q| {
            let mut p = [0; MAX_DIM];
            for d in 0..dim {
                p[d] = q[dim - 1 - d];
            }
            p
        })
        .collect::<Vec<_>>()
        .into_iter()
}

/// Dense map from the points of a box to small values.
struct Grid<T> {
    range: Range,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    fn new(range: Range, init: T) -> Self {
        let n = range.num_points() as usize;
        Self {
            range,
            cells: vec![init; n],
        }
    }

    fn slot(&self, p: &Index) -> Option<usize> {
        if !self.range.contains(p) {
            return None;
        }
        let mut off = 0usize;
        let mut stride = 1usize;
        for d in 0..MAX_DIM {
            off += (p[d] - self.range.start(d)) as usize * stride;
            stride *= self.range.extent(d).max(0) as usize;
        }
        Some(off)
    }

    fn get(&self, p: &Index) -> Option<&T> {
        self.slot(p).map(|i| &self.cells[i])
    }

    fn get_mut(&mut self, p: &Index) -> Option<&mut T> {
        self.slot(p).map(|i| &mut self.cells[i])
    }
}

fn hull_of(chain: &LoopChain) -> Option<Range> {
    let first = chain.loops().first()?;
    let dim = first.dim();
    let mut s = first.range.starts();
    let mut e = first.range.ends();
    for l in chain.loops() {
        for d in 0..dim {
            s[d] = s[d].min(l.range.start(d));
            e[d] = e[d].max(l.range.end(d));
        }
    }
    Some(Range::from_parts(dim, s, e))
}

/// Bounding box of a stencil around `p`.
fn stencil_box(p: &Index, dim: usize, lo: &Index, hi: &Index) -> Range {
    let mut s = [0; MAX_DIM];
    let mut e = [1; MAX_DIM];
    for d in 0..dim {
        s[d] = p[d] + lo[d];
        e[d] = p[d] + hi[d] + 1;
    }
    Range::from_parts(dim, s, e)
}

/// Symbolically runs `plan` and reports every dependency the tiled order
/// breaks relative to sequential order. Reads are taken to touch the whole
/// bounding box of their stencil.
pub fn validate_dependencies(plan: &TilingPlan, chain: &LoopChain) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(hull) = hull_of(chain) else {
        return out;
    };
    let nl = chain.len().min(plan.num_loops());
    let dim = hull.dim();

    // Tile that first executes each (loop, point), and every write per
    // (dataset, point) as (loop, tile) in execution order.
    let mut first_tile: Vec<Grid<Option<usize>>> = chain.loops()[..nl]
        .iter()
        .map(|l| Grid::new(l.range, None))
        .collect();
    let mut writers: HashMap<DatasetId, Grid<Vec<(usize, usize)>>> = HashMap::new();
    for lp in chain.loops() {
        for a in lp.args.iter().filter(|a| a.mode.writes()) {
            writers
                .entry(a.dataset)
                .or_insert_with(|| Grid::new(hull, Vec::new()));
        }
    }
    for tile in 0..plan.num_tiles() {
        for (l, lp) in chain.loops()[..nl].iter().enumerate() {
            let r = plan.range(tile, l).intersect(&lp.range);
            for p in r.points() {
                let slot = first_tile[l].get_mut(&p).unwrap();
                if slot.is_none() {
                    *slot = Some(tile);
                }
                for a in lp.args.iter().filter(|a| a.mode.writes()) {
                    writers
                        .get_mut(&a.dataset)
                        .unwrap()
                        .get_mut(&p)
                        .unwrap()
                        .push((l, tile));
                }
            }
        }
    }

    let mk = |kind, l: usize, tile, p: &Index, ds| Violation {
        kind,
        loop_id: l,
        tile,
        point: p[..dim].to_vec(),
        dataset: Some(ds),
    };

    // Double writes.
    let mut ids: Vec<_> = writers.keys().copied().collect();
    ids.sort();
    for &ds in &ids {
        let g = &writers[&ds];
        for p in g.range.points() {
            let list = g.get(&p).unwrap();
            for (i, &(j, tile)) in list.iter().enumerate() {
                if list[..i].iter().any(|w| w.0 == j) {
                    out.push(mk(ViolationKind::DoubleWrite, j, Some(tile), &p, ds));
                }
            }
        }
    }

    // Earliest tile in which loop `j` writes `q`; `None` if never.
    let tile_of = |list: &[(usize, usize)], j: usize| {
        list.iter().filter(|w| w.0 == j).map(|w| w.1).min()
    };

    for (l, lp) in chain.loops()[..nl].iter().enumerate() {
        for p in lp.range.points() {
            let Some(t) = *first_tile[l].get(&p).unwrap() else {
                continue;
            };
            for a in &lp.args {
                let Some(g) = writers.get(&a.dataset) else {
                    continue;
                };
                let seq_writers = |q: &Index| -> Vec<usize> {
                    chain.loops()[..nl]
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| {
                            w.range.contains(q)
                                && w.args.iter().any(|b| b.dataset == a.dataset && b.mode.writes())
                        })
                        .map(|(j, _)| j)
                        .collect()
                };
                if a.mode.reads() {
                    let mut lo = [0; MAX_DIM];
                    let mut hi = [0; MAX_DIM];
                    for d in 0..dim {
                        lo[d] = a.stencil.min_offset(d);
                        hi[d] = a.stencil.max_offset(d);
                    }
                    let (mut raw, mut war) = (false, false);
                    for q in stencil_box(&p, dim, &lo, &hi).points() {
                        let Some(list) = g.get(&q) else { continue };
                        let ws = seq_writers(&q);
                        if let Some(&j) = ws.iter().rev().find(|&&j| j < l) {
                            raw |= !matches!(tile_of(list, j), Some(tj) if tj <= t);
                        }
                        war |= ws
                            .iter()
                            .filter(|&&j| j > l)
                            .any(|&j| tile_of(list, j).is_some_and(|tj| tj < t));
                    }
                    if raw {
                        out.push(mk(ViolationKind::ReadBeforeProduce, l, Some(t), &p, a.dataset));
                    }
                    if war {
                        out.push(mk(ViolationKind::WriteBeforeRead, l, Some(t), &p, a.dataset));
                    }
                }
                if a.mode.writes() {
                    let list = g.get(&p).unwrap();
                    let ws = seq_writers(&p);
                    if let Some(&j) = ws.iter().rev().find(|&&j| j < l) {
                        if tile_of(list, j).is_some_and(|tj| tj > t) {
                            out.push(mk(
                                ViolationKind::WriteOrderInverted,
                                l,
                                Some(t),
                                &p,
                                a.dataset,
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Checks that the tiles of `plan` partition every loop's range exactly.
pub fn validate_coverage(plan: &TilingPlan, chain: &LoopChain) -> Vec<Violation> {
    let mut out = Vec::new();
    for (l, lp) in chain.loops().iter().enumerate().take(plan.num_loops()) {
        let mut count = Grid::new(lp.range, 0u32);
        for tile in 0..plan.num_tiles() {
            let r = plan.range(tile, l);
            for p in r.points() {
                match count.get_mut(&p) {
                    Some(c) => {
                        *c += 1;
                        if *c == 2 {
                            out.push(coverage(ViolationKind::CoverageOverlap, l, Some(tile), &p, lp.dim()));
                        }
                    }
                    None => out.push(coverage(ViolationKind::CoverageOverlap, l, Some(tile), &p, lp.dim())),
                }
            }
        }
        for p in lp.range.points() {
            if *count.get(&p).unwrap() == 0 {
                out.push(coverage(ViolationKind::CoverageGap, l, None, &p, lp.dim()));
            }
        }
    }
    out
}

/// Coverage of per-rank plans: every loop point is executed by its owning
/// rank, and a rank executes nothing outside the loop's range or outside
/// its permitted window (owned range plus replication band).
pub fn validate_replicated_coverage(
    plans: &[&TilingPlan],
    windows: &[Range],
    chain: &LoopChain,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (l, lp) in chain.loops().iter().enumerate() {
        let mut covered = Grid::new(lp.range, false);
        for (plan, window) in plans.iter().zip(windows) {
            for tile in 0..plan.num_tiles() {
                for p in plan.range(tile, l).points() {
                    match covered.get_mut(&p) {
                        Some(c) if window.contains(&p) => *c = true,
                        _ => out.push(coverage(
                            ViolationKind::CoverageOverlap,
                            l,
                            Some(tile),
                            &p,
                            lp.dim(),
                        )),
                    }
                }
            }
        }
        for p in lp.range.points() {
            if !covered.get(&p).unwrap() {
                out.push(coverage(ViolationKind::CoverageGap, l, None, &p, lp.dim()));
            }
        }
    }
    out
}

fn coverage(kind: ViolationKind, l: usize, tile: Option<usize>, p: &Index, dim: usize) -> Violation {
    Violation {
        kind,
        loop_id: l,
        tile,
        point: p[..dim].to_vec(),
        dataset: None,
    }
}

/// Initial-data footprint of computing the final values of every dataset
/// on `target`: walks the chain backwards point by point and returns, per
/// dataset, the bounding box of the points whose incoming values are read.
/// Datasets whose incoming values are never needed are absent.
pub fn input_footprint(chain: &LoopChain, target: &Range) -> BTreeMap<DatasetId, Range> {
    let mut need: BTreeMap<DatasetId, HashSet<Index>> = BTreeMap::new();
    for lp in chain.loops() {
        for a in &lp.args {
            need.entry(a.dataset)
                .or_insert_with(|| target.points().collect());
        }
    }
    for lp in chain.loops().iter().rev() {
        let needed: Vec<Index> = lp
            .range
            .points()
            .filter(|p| {
                (lp.reduction.is_some() && target.contains(p))
                    || lp
                        .args
                        .iter()
                        .any(|a| a.mode.writes() && need[&a.dataset].contains(p))
            })
            .collect();
        for a in lp.args.iter().filter(|a| a.mode.writes()) {
            let set = need.get_mut(&a.dataset).unwrap();
            for p in &needed {
                set.remove(p);
            }
        }
        for a in lp.args.iter().filter(|a| a.mode.reads()) {
            let set = need.get_mut(&a.dataset).unwrap();
            for p in &needed {
                for o in a.stencil.points() {
                    let mut q = *p;
                    for d in 0..MAX_DIM {
                        q[d] += o[d];
                    }
                    set.insert(q);
                }
            }
        }
    }
    let dim = target.dim();
    need.into_iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(id, s)| {
            let mut lo = [i64::MAX; MAX_DIM];
            let mut hi = [i64::MIN; MAX_DIM];
            for p in &s {
                for d in 0..MAX_DIM {
                    lo[d] = lo[d].min(p[d]);
                    hi[d] = hi[d].max(p[d] + 1);
                }
            }
            (id, Range::from_parts(dim, lo, hi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::execute_untiled;
    use crate::mesh::{ArgSpec, Field, Kernel, LoopRecord, Stencil};
    use crate::planner::{compute_union_bounds, construct_plan, tests::two_loop_chain};

    fn plan_for(chain: &LoopChain, ts: &[i64]) -> TilingPlan {
        construct_plan(chain, &compute_union_bounds(chain, ts).unwrap()).unwrap()
    }

    fn kinds(v: &[Violation]) -> Vec<ViolationKind> {
        v.iter().map(|x| x.kind).collect()
    }

    #[test]
    fn two_loop_plan_is_clean() {
        let chain = two_loop_chain();
        let plan = plan_for(&chain, &[4]);
        assert!(validate_dependencies(&plan, &chain).is_empty());
        assert!(validate_coverage(&plan, &chain).is_empty());
    }

    #[test]
    fn widened_consumer_is_caught() {
        let chain = two_loop_chain();
        let mut plan = plan_for(&chain, &[4]);
        // loop2 tile0 widened to [0,5) while loop1 keeps [0,5)/[5,8).
        plan.set_dim_range(0, 0, 1, 0, 5);
        plan.set_dim_range(0, 1, 1, 5, 8);
        let v = validate_dependencies(&plan, &chain);
        let rbp: Vec<_> = v
            .iter()
            .filter(|x| x.kind == ViolationKind::ReadBeforeProduce)
            .collect();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!((rbp[0].loop_id, rbp[0].point.as_slice()), (1, &[4][..]));
    }

    #[test]
    fn unskewed_plan_breaks_read_after_write() {
        let chain = two_loop_chain();
        let mut plan = plan_for(&chain, &[4]);
        plan.set_dim_range(0, 0, 0, 0, 4);
        plan.set_dim_range(0, 1, 0, 4, 8);
        let v = validate_dependencies(&plan, &chain);
        assert_eq!(kinds(&v), vec![ViolationKind::ReadBeforeProduce]);
        assert_eq!(v[0].point, vec![3]);
        assert_eq!(v[0].loop_id, 1);
    }

    #[test]
    fn single_loop_plan_is_clean() {
        let chain = LoopChain::new(two_loop_chain().loops()[..1].to_vec());
        let plan = plan_for(&chain, &[3]);
        assert!(validate_dependencies(&plan, &chain).is_empty());
    }

    #[test]
    fn truncated_tile_is_a_gap() {
        let chain = two_loop_chain();
        let mut plan = plan_for(&chain, &[4]);
        plan.set_dim_range(0, 1, 1, 4, 7);
        let v = validate_coverage(&plan, &chain);
        assert_eq!(kinds(&v), vec![ViolationKind::CoverageGap]);
        assert_eq!(v[0].point, vec![7]);
    }

    #[test]
    fn overlapping_tiles_are_reported() {
        let chain = two_loop_chain();
        let mut plan = plan_for(&chain, &[4]);
        plan.set_dim_range(0, 1, 1, 3, 8);
        let v = validate_coverage(&plan, &chain);
        assert_eq!(kinds(&v), vec![ViolationKind::CoverageOverlap]);
        let d = validate_dependencies(&plan, &chain);
        assert!(d.iter().any(|x| x.kind == ViolationKind::DoubleWrite));
    }

    #[test]
    fn reordered_producer_breaks_write_after_read() {
        // loop0 reads a (3-point) and writes b; loop1 overwrites a.
        let (a, b) = (DatasetId(0), DatasetId(1));
        let chain = LoopChain::new(vec![
            LoopRecord {
                loop_id: 0,
                kernel: Kernel::new("r", |_| {}),
                range: Range::new(&[(1, 7)]).unwrap(),
                args: vec![ArgSpec::read(a, &Stencil::star(1, 1)), ArgSpec::write(b, 1)],
                reduction: None,
            },
            LoopRecord {
                loop_id: 1,
                kernel: Kernel::new("w", |_| {}),
                range: Range::new(&[(0, 8)]).unwrap(),
                args: vec![ArgSpec::write(a, 1)],
                reduction: None,
            },
        ]);
        let mut plan = plan_for(&chain, &[4]);
        assert!(validate_dependencies(&plan, &chain).is_empty());
        plan.set_dim_range(0, 0, 0, 1, 4);
        plan.set_dim_range(0, 1, 0, 4, 7);
        let v = validate_dependencies(&plan, &chain);
        assert_eq!(kinds(&v), vec![ViolationKind::WriteBeforeRead]);
        assert_eq!(v[0].point, vec![4]);
    }

    #[test]
    fn sequential_matches_untiled() {
        let chain = two_loop_chain();
        let mut fs = FieldSet::new();
        for i in 0..2 {
            let mut f = Field::new(DatasetId(i), format!("d{i}"), 8, Range::zero_based(&[8]).unwrap(), 2);
            f.fill_with(|p| (p[0] * p[0]) as f64 + i as f64);
            fs.push(f);
        }
        let r = sequential_reference(&chain, &fs).unwrap();
        execute_untiled(&chain, &mut fs).unwrap();
        assert!(r.fields.bit_identical(&fs));
    }

    #[test]
    fn empty_chain_leaves_fields() {
        let mut fs = FieldSet::new();
        let mut f = Field::new(DatasetId(0), "x", 8, Range::zero_based(&[4]).unwrap(), 1);
        f.fill(2.5);
        fs.push(f);
        let r = sequential_reference(&LoopChain::default(), &fs).unwrap();
        assert!(r.fields.bit_identical(&fs));
        assert!(r.reductions.is_empty());
    }

    #[test]
    fn lexicographic_order_has_last_dim_fastest() {
        let r = Range::zero_based(&[2, 2]).unwrap();
        let pts: Vec<_> = lexicographic(&r).map(|p| [p[0], p[1]]).collect();
        assert_eq!(pts, vec![[0, 0], [0, 1], [1, 0], [1, 1]]);
    }

    #[test]
    fn footprint_of_two_loop_rank() {
        let chain = two_loop_chain();
        let fp = input_footprint(&chain, &Range::new(&[(0, 4)]).unwrap());
        // D1 is read by loop1 over [0,5); of D2 only the padding point
        // left of the domain is never produced.
        assert_eq!(fp[&DatasetId(0)], Range::new(&[(0, 5)]).unwrap());
        assert_eq!(fp[&DatasetId(1)], Range::new(&[(-1, 0)]).unwrap());
    }
}
