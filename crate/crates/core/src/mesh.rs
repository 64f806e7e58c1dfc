//! Structured-mesh data model: blocks, index ranges, stencils, datasets and
//! the per-point kernel interface.
//!
//! Indices are stored as fixed `[i64; 3]` arrays. Dimensions beyond a
//! block's dimensionality are pinned to the single index `0` (ranges span
//! `[0, 1)` there), so every algorithm can loop over three dimensions
//! without special cases.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub const MAX_DIM: usize = 3;

/// A grid point or offset vector.
pub type Index = [i64; MAX_DIM];

fn check_dim(dim: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: MAX_DIM,
            got: dim,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    name: String,
    dim: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            name: name.into(),
            dim,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Half-open per-dimension index range `[start, end)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Range {
    dim: usize,
    start: Index,
    end: Index,
}

impl Range {
    pub fn new(bounds: &[(i64, i64)]) -> Result<Self> {
        check_dim(bounds.len())?;
        let mut start = [0; MAX_DIM];
        let mut end = [1; MAX_DIM];
        for (d, &(s, e)) in bounds.iter().enumerate() {
            if s > e {
                return Err(Error::InvalidRange(format!(
                    "start {s} > end {e} in dim {d}"
                )));
            }
            start[d] = s;
            end[d] = e;
        }
        Ok(Self {
            dim: bounds.len(),
            start,
            end,
        })
    }

    /// `[0, n)` in every dimension.
    pub fn zero_based(sizes: &[usize]) -> Result<Self> {
        let bounds: Vec<_> = sizes.iter().map(|&n| (0, n as i64)).collect();
        Self::new(&bounds)
    }

    /// Builds a range from raw arrays, clamping `end` up to `start` so the
    /// result is always well formed.
    pub(crate) fn from_parts(dim: usize, start: Index, end: Index) -> Self {
        let mut r = Self {
            dim,
            start: [0; MAX_DIM],
            end: [1; MAX_DIM],
        };
        for d in 0..dim {
            r.start[d] = start[d];
            r.end[d] = end[d].max(start[d]);
        }
        r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self, d: usize) -> i64 {
        self.start[d]
    }

    pub fn end(&self, d: usize) -> i64 {
        self.end[d]
    }

    pub fn starts(&self) -> Index {
        self.start
    }

    pub fn ends(&self) -> Index {
        self.end
    }

    pub fn extent(&self, d: usize) -> i64 {
        self.end[d] - self.start[d]
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim).any(|d| self.end[d] <= self.start[d])
    }

    pub fn num_points(&self) -> u64 {
        (0..self.dim).map(|d| self.extent(d).max(0) as u64).product()
    }

    pub fn contains(&self, p: &Index) -> bool {
        (0..self.dim).all(|d| p[d] >= self.start[d] && p[d] < self.end[d])
    }

    /// True when `other` lies entirely inside `self` (empty ranges are
    /// contained everywhere).
    pub fn contains_range(&self, other: &Range) -> bool {
        other.is_empty()
            || (0..self.dim)
                .all(|d| other.start[d] >= self.start[d] && other.end[d] <= self.end[d])
    }

    pub fn intersect(&self, other: &Range) -> Range {
        let mut start = [0; MAX_DIM];
        let mut end = [1; MAX_DIM];
        for d in 0..self.dim {
            start[d] = self.start[d].max(other.start[d]);
            end[d] = self.end[d].min(other.end[d]);
        }
        Self::from_parts(self.dim, start, end)
    }

    /// Grows the range by `lo[d]` below and `hi[d]` above in each dimension.
    pub fn grow(&self, lo: &Index, hi: &Index) -> Range {
        let mut r = *self;
        for d in 0..self.dim {
            r.start[d] -= lo[d];
            r.end[d] += hi[d];
        }
        r
    }

    pub fn with_dim(&self, d: usize, start: i64, end: i64) -> Range {
        let mut r = *self;
        r.start[d] = start;
        r.end[d] = end.max(start);
        r
    }

    /// Points in storage order (dimension 0 varies fastest).
    pub fn points(&self) -> Points {
        Points {
            range: *self,
            next: if self.is_empty() {
                None
            } else {
                Some(self.start)
            },
        }
    }
}

impl fmt::Debug for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in 0..self.dim {
            if d > 0 {
                f.write_str("x")?;
            }
            write!(f, "[{},{})", self.start[d], self.end[d])?;
        }
        Ok(())
    }
}

pub struct Points {
    range: Range,
    next: Option<Index>,
}

impl Iterator for Points {
    type Item = Index;

    fn next(&mut self) -> Option<Index> {
        let cur = self.next?;
        let mut n = cur;
        let mut d = 0;
        loop {
            if d == self.range.dim {
                self.next = None;
                break;
            }
            n[d] += 1;
            if n[d] < self.range.end[d] {
                self.next = Some(n);
                break;
            }
            n[d] = self.range.start[d];
            d += 1;
        }
        Some(cur)
    }
}

/// A fixed set of relative offsets accessed around each iteration point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stencil {
    dim: usize,
    points: Vec<Index>,
    min: Index,
    max: Index,
}

impl Stencil {
    pub fn new(dim: usize, points: &[&[i64]]) -> Result<Self> {
        check_dim(dim)?;
        if points.is_empty() {
            return Err(Error::InvalidStencil("empty point set".into()));
        }
        let mut pts = Vec::with_capacity(points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            let mut idx = [0; MAX_DIM];
            idx[..dim].copy_from_slice(p);
            if !pts.contains(&idx) {
                pts.push(idx);
            }
        }
        pts.sort_unstable();
        let mut min = [0; MAX_DIM];
        let mut max = [0; MAX_DIM];
        for d in 0..dim {
            min[d] = pts.iter().map(|p| p[d]).min().unwrap();
            max[d] = pts.iter().map(|p| p[d]).max().unwrap();
        }
        Ok(Self {
            dim,
            points: pts,
            min,
            max,
        })
    }

    /// The single zero offset.
    pub fn identity(dim: usize) -> Self {
        let zero = vec![0i64; dim];
        Self::new(dim, &[&zero]).expect("identity stencil")
    }

    /// Centre plus `±1..=radius` along each axis.
    pub fn star(dim: usize, radius: i64) -> Self {
        let mut pts = vec![vec![0i64; dim]];
        for d in 0..dim {
            for r in 1..=radius {
                for s in [-r, r] {
                    let mut p = vec![0i64; dim];
                    p[d] = s;
                    pts.push(p);
                }
            }
        }
        let refs: Vec<&[i64]> = pts.iter().map(Vec::as_slice).collect();
        Self::new(dim, &refs).expect("star stencil")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Index] {
        &self.points
    }

    /// Most negative offset in `d`.
    pub fn min_offset(&self, d: usize) -> i64 {
        self.min[d]
    }

    /// Most positive offset in `d`.
    pub fn max_offset(&self, d: usize) -> i64 {
        self.max[d]
    }

    pub fn is_identity(&self) -> bool {
        self.points.len() == 1 && self.points[0] == [0; MAX_DIM]
    }

    /// Largest absolute offset over all dimensions.
    pub fn radius(&self) -> i64 {
        (0..self.dim)
            .map(|d| self.min[d].abs().max(self.max[d].abs()))
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn bounds_contain(&self, off: &Index) -> bool {
        (0..MAX_DIM).all(|d| off[d] >= self.min[d] && off[d] <= self.max[d])
    }
}

pub fn declare_stencil(dim: usize, points: &[&[i64]]) -> Result<Stencil> {
    Stencil::new(dim, points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessMode {
    Read,
    Write,
    ReadWrite,
    /// Commutative accumulation; analysed as [`AccessMode::ReadWrite`].
    Increment,
}

impl AccessMode {
    pub fn reads(self) -> bool {
        !matches!(self, AccessMode::Write)
    }

    pub fn writes(self) -> bool {
        !matches!(self, AccessMode::Read)
    }

    /// Weight used by the bytes-moved model.
    fn traffic_weight(self) -> u64 {
        match self {
            AccessMode::Read | AccessMode::Write => 1,
            AccessMode::ReadWrite | AccessMode::Increment => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DatasetId(pub usize);

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Dataset storage: a dense box of `f64` covering the logical domain plus
/// halo padding on every face.
///
/// Values are held as atomics so distinct points can be written
/// concurrently through a shared reference while a loop executes.
pub struct Field {
    id: DatasetId,
    name: String,
    elem_bytes: usize,
    domain: Range,
    alloc: Range,
    strides: [usize; MAX_DIM],
    data: Box<[AtomicU64]>,
}

impl Field {
    pub fn new(
        id: DatasetId,
        name: impl Into<String>,
        elem_bytes: usize,
        domain: Range,
        padding: i64,
    ) -> Self {
        let mut pad = [0; MAX_DIM];
        pad[..domain.dim()].fill(padding);
        let alloc = domain.grow(&pad, &pad);
        Self::with_alloc(id, name, elem_bytes, domain, alloc)
    }

    pub(crate) fn with_alloc(
        id: DatasetId,
        name: impl Into<String>,
        elem_bytes: usize,
        domain: Range,
        alloc: Range,
    ) -> Self {
        let mut strides = [0; MAX_DIM];
        let mut n = 1usize;
        for (d, s) in strides.iter_mut().enumerate() {
            *s = n;
            n *= alloc.extent(d).max(0) as usize;
        }
        let data = (0..n).map(|_| AtomicU64::new(0f64.to_bits())).collect();
        Self {
            id,
            name: name.into(),
            elem_bytes,
            domain,
            alloc,
            strides,
            data,
        }
    }

    pub fn id(&self) -> DatasetId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elem_bytes(&self) -> usize {
        self.elem_bytes
    }

    /// Logical (owned) region, excluding padding.
    pub fn domain(&self) -> &Range {
        &self.domain
    }

    /// Allocated extent including padding.
    pub fn base_range(&self) -> &Range {
        &self.alloc
    }

    #[inline]
    fn offset_of(&self, p: &Index) -> Option<usize> {
        let mut off = 0usize;
        for d in 0..MAX_DIM {
            let rel = p[d] - self.alloc.start[d];
            if rel < 0 || p[d] >= self.alloc.end[d] {
                return None;
            }
            off += rel as usize * self.strides[d];
        }
        Some(off)
    }

    #[inline]
    pub fn get(&self, p: &Index) -> Option<f64> {
        self.offset_of(p)
            .map(|o| f64::from_bits(self.data[o].load(Ordering::Relaxed)))
    }

    #[inline]
    pub(crate) fn store(&self, p: &Index, v: f64) -> bool {
        match self.offset_of(p) {
            Some(o) => {
                self.data[o].store(v.to_bits(), Ordering::Relaxed);
                true
            }
            None => false,
        }
    }

    fn out_of_extent(&self, p: Index) -> Error {
        Error::OutOfExtent {
            loop_id: None,
            tile: None,
            dataset: self.name.clone(),
            point: p[..self.domain.dim()].to_vec(),
        }
    }

    /// Reads the value at `point + offset`.
    pub fn read(&self, point: &[i64], offset: &[i64]) -> Result<f64> {
        let p = self.resolve(point, offset)?;
        self.get(&p).ok_or_else(|| self.out_of_extent(p))
    }

    pub fn write(&mut self, point: &[i64], value: f64) -> Result<()> {
        let p = self.resolve(point, &[])?;
        if self.store(&p, value) {
            Ok(())
        } else {
            Err(self.out_of_extent(p))
        }
    }

    fn resolve(&self, point: &[i64], offset: &[i64]) -> Result<Index> {
        let dim = self.domain.dim();
        if point.len() != dim || !(offset.is_empty() || offset.len() == dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: point.len(),
            });
        }
        let mut p = [0; MAX_DIM];
        for d in 0..dim {
            p[d] = point[d] + offset.get(d).copied().unwrap_or(0);
        }
        Ok(p)
    }

    /// Sets every allocated point (padding included).
    pub fn fill(&mut self, value: f64) {
        for v in self.data.iter_mut() {
            *v.get_mut() = value.to_bits();
        }
    }

    /// Sets every allocated point from a function of its index.
    pub fn fill_with(&mut self, mut f: impl FnMut(&Index) -> f64) {
        for p in self.alloc.points() {
            let v = f(&p);
            self.store(&p, v);
        }
    }

    /// Copies of the values over `region`, in storage order.
    pub fn values_in(&self, region: &Range) -> Vec<f64> {
        region
            .points()
            .map(|p| self.get(&p).unwrap_or(f64::NAN))
            .collect()
    }
}

impl Clone for Field {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            name: self.name.clone(),
            elem_bytes: self.elem_bytes,
            domain: self.domain,
            alloc: self.alloc,
            strides: self.strides,
            data: self
                .data
                .iter()
                .map(|v| AtomicU64::new(v.load(Ordering::Relaxed)))
                .collect(),
        }
    }
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("alloc", &self.alloc)
            .finish_non_exhaustive()
    }
}

/// All datasets of one block, indexed by [`DatasetId`].
#[derive(Clone, Debug, Default)]
pub struct FieldSet {
    fields: Vec<Field>,
}

impl FieldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, field: Field) -> DatasetId {
        let id = DatasetId(self.fields.len());
        assert_eq!(field.id, id, "fields must be pushed in id order");
        self.fields.push(field);
        id
    }

    pub fn get(&self, id: DatasetId) -> Result<&Field> {
        self.fields.get(id.0).ok_or(Error::UnknownDataset(id))
    }

    pub fn get_mut(&mut self, id: DatasetId) -> Result<&mut Field> {
        self.fields.get_mut(id.0).ok_or(Error::UnknownDataset(id))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Field> {
        self.fields.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Field> {
        self.fields.iter_mut()
    }

    /// Largest absolute pointwise difference over each field's domain.
    /// Points that differ in bit pattern but not numerically (e.g. two NaNs)
    /// count as infinitely different.
    pub fn max_abs_diff(&self, other: &FieldSet) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.fields.iter().zip(&other.fields) {
            for p in a.domain.points() {
                let (x, y) = (a.get(&p).unwrap(), b.get(&p).unwrap_or(f64::NAN));
                if x.to_bits() != y.to_bits() {
                    let d = (x - y).abs();
                    worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
                }
            }
        }
        worst
    }

    /// True when every field matches `other` bit for bit over its domain.
    pub fn bit_identical(&self, other: &FieldSet) -> bool {
        self.fields.len() == other.fields.len()
            && self.fields.iter().zip(&other.fields).all(|(a, b)| {
                a.domain
                    .points()
                    .all(|p| a.get(&p).map(f64::to_bits) == b.get(&p).map(f64::to_bits))
            })
    }
}

/// Declared access of one loop argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArgSpec {
    pub dataset: DatasetId,
    pub stencil: Stencil,
    pub mode: AccessMode,
    pub(crate) elem_bytes: usize,
}

impl ArgSpec {
    pub fn new(dataset: DatasetId, stencil: Stencil, mode: AccessMode) -> Self {
        Self {
            dataset,
            stencil,
            mode,
            elem_bytes: 8,
        }
    }

    pub fn read(dataset: DatasetId, stencil: &Stencil) -> Self {
        Self::new(dataset, stencil.clone(), AccessMode::Read)
    }

    pub fn write(dataset: DatasetId, dim: usize) -> Self {
        Self::new(dataset, Stencil::identity(dim), AccessMode::Write)
    }

    pub fn read_write(dataset: DatasetId, dim: usize) -> Self {
        Self::new(dataset, Stencil::identity(dim), AccessMode::ReadWrite)
    }

    pub fn increment(dataset: DatasetId, dim: usize) -> Self {
        Self::new(dataset, Stencil::identity(dim), AccessMode::Increment)
    }

    pub fn elem_bytes(&self) -> usize {
        self.elem_bytes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReductionOp {
    Sum,
    Min,
    Max,
}

impl ReductionOp {
    pub fn identity(self) -> f64 {
        match self {
            ReductionOp::Sum => 0.0,
            ReductionOp::Min => f64::INFINITY,
            ReductionOp::Max => f64::NEG_INFINITY,
        }
    }

    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            ReductionOp::Sum => a + b,
            ReductionOp::Min => a.min(b),
            ReductionOp::Max => a.max(b),
        }
    }
}

/// Token returned for a loop that requested a reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReductionHandle(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReductionSpec {
    pub op: ReductionOp,
    pub handle: ReductionHandle,
}

pub type KernelFn = dyn Fn(&mut PointCtx<'_>) + Send + Sync;

/// Per-point user function plus a name that identifies it in chain
/// signatures. Two kernels with the same name are assumed to compute the
/// same thing.
#[derive(Clone)]
pub struct Kernel {
    name: Arc<str>,
    func: Arc<KernelFn>,
}

impl Kernel {
    pub fn new(name: &str, f: impl Fn(&mut PointCtx<'_>) + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub(crate) fn call(&self, ctx: &mut PointCtx<'_>) {
        (self.func)(ctx)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kernel({})", self.name)
    }
}

/// One recorded parallel loop.
///
/// The kernel must give the same result regardless of the order in which
/// grid points are visited; this cannot be checked and is the caller's
/// responsibility.
#[derive(Clone, Debug)]
pub struct LoopRecord {
    pub loop_id: usize,
    pub kernel: Kernel,
    pub range: Range,
    pub args: Vec<ArgSpec>,
    pub reduction: Option<ReductionSpec>,
}

impl LoopRecord {
    pub fn dim(&self) -> usize {
        self.range.dim()
    }

    /// Checks the structural rules of the abstraction against `fields`.
    pub fn validate(&self, fields: &FieldSet) -> Result<()> {
        let bad = |reason: String| Error::InvalidArg {
            kernel: self.kernel.name().to_string(),
            reason,
        };
        let dim = self.range.dim();
        for (i, a) in self.args.iter().enumerate() {
            let field = fields.get(a.dataset)?;
            if a.stencil.dim() != dim || field.domain().dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.stencil.dim(),
                });
            }
            if a.mode.writes() && !a.stencil.is_identity() {
                return Err(bad(format!(
                    "argument {i} writes `{}` through a multi-point stencil",
                    field.name()
                )));
            }
            if a.mode.writes() {
                let stencil_read = self.args.iter().any(|b| {
                    b.dataset == a.dataset && b.mode.reads() && !b.stencil.is_identity()
                });
                if stencil_read {
                    return Err(bad(format!(
                        "`{}` is written and read through a stencil in the same loop",
                        field.name()
                    )));
                }
            }
            if !field.domain().contains_range(&self.range) {
                return Err(bad(format!(
                    "range {} leaves the domain {}",
                    self.range,
                    field.domain()
                )));
            }
        }
        Ok(())
    }
}

/// Bytes-moved estimate: each argument moves `|range|` elements once
/// (read or write) or twice (read-write, increment). Reuse from
/// multi-point stencils is ignored.
pub fn estimate_bytes_moved(lp: &LoopRecord, range: &Range) -> u64 {
    let n = range.num_points();
    lp.args
        .iter()
        .map(|a| n * a.elem_bytes as u64 * a.mode.traffic_weight())
        .sum()
}

#[derive(Clone, Copy)]
pub(crate) struct BoundArg<'a> {
    pub field: &'a Field,
    pub spec: &'a ArgSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Fault {
    OutOfExtent { arg: usize, point: Index },
    Access { arg: usize, reason: &'static str },
}

/// Handle given to a kernel for one grid point.
pub struct PointCtx<'a> {
    point: Index,
    dim: usize,
    args: &'a [BoundArg<'a>],
    reduction: Option<ReductionOp>,
    partial: f64,
    mask: Option<&'a Range>,
    fault: Option<Fault>,
}

impl<'a> PointCtx<'a> {
    pub(crate) fn new(
        dim: usize,
        args: &'a [BoundArg<'a>],
        reduction: Option<ReductionOp>,
        mask: Option<&'a Range>,
    ) -> Self {
        Self {
            point: [0; MAX_DIM],
            dim,
            args,
            reduction,
            partial: reduction.map_or(0.0, ReductionOp::identity),
            mask,
            fault: None,
        }
    }

    #[inline]
    pub(crate) fn set_point(&mut self, p: Index) {
        self.point = p;
    }

    pub(crate) fn take_fault(&mut self) -> Option<Fault> {
        self.fault.take()
    }

    pub(crate) fn partial(&self) -> f64 {
        self.partial
    }

    /// Current grid point.
    pub fn point(&self) -> &[i64] {
        &self.point[..self.dim]
    }

    pub fn idx(&self, d: usize) -> i64 {
        self.point[d]
    }

    fn flag(&mut self, fault: Fault) {
        if self.fault.is_none() {
            self.fault = Some(fault);
        }
    }

    /// Reads argument `arg` at the current point shifted by `offset`. The
    /// offset must lie within the argument's declared stencil bounds.
    #[inline]
    pub fn read(&mut self, arg: usize, offset: &[i64]) -> f64 {
        let b = self.args[arg];
        if !b.spec.mode.reads() {
            self.flag(Fault::Access {
                arg,
                reason: "read of a write-only argument",
            });
            return f64::NAN;
        }
        let mut off = [0; MAX_DIM];
        if offset.len() > self.dim {
            self.flag(Fault::Access {
                arg,
                reason: "offset has too many dimensions",
            });
            return f64::NAN;
        }
        off[..offset.len()].copy_from_slice(offset);
        if !b.spec.stencil.bounds_contain(&off) {
            self.flag(Fault::Access {
                arg,
                reason: "offset outside the declared stencil",
            });
            return f64::NAN;
        }
        let mut p = self.point;
        for d in 0..MAX_DIM {
            p[d] += off[d];
        }
        match b.field.get(&p) {
            Some(v) => v,
            None => {
                self.flag(Fault::OutOfExtent { arg, point: p });
                f64::NAN
            }
        }
    }

    /// Value of argument `arg` at the current point.
    #[inline]
    pub fn get(&mut self, arg: usize) -> f64 {
        self.read(arg, &[])
    }

    #[inline]
    pub fn write(&mut self, arg: usize, value: f64) {
        let b = self.args[arg];
        if !b.spec.mode.writes() {
            self.flag(Fault::Access {
                arg,
                reason: "write to a read-only argument",
            });
            return;
        }
        if !b.field.store(&self.point, value) {
            let point = self.point;
            self.flag(Fault::OutOfExtent { arg, point });
        }
    }

    /// Adds `value` to argument `arg` at the current point.
    #[inline]
    pub fn inc(&mut self, arg: usize, value: f64) {
        let b = self.args[arg];
        if !matches!(b.spec.mode, AccessMode::Increment | AccessMode::ReadWrite) {
            self.flag(Fault::Access {
                arg,
                reason: "increment of a non-increment argument",
            });
            return;
        }
        match b.field.get(&self.point) {
            Some(v) => {
                b.field.store(&self.point, v + value);
            }
            None => {
                let point = self.point;
                self.flag(Fault::OutOfExtent { arg, point });
            }
        }
    }

    /// Contributes `value` to the loop's reduction. Ignored on loops that
    /// did not request one, and at replicated points in distributed runs.
    #[inline]
    pub fn reduce(&mut self, value: f64) {
        if let Some(op) = self.reduction {
            if self.mask.is_none_or(|m| m.contains(&self.point)) {
                self.partial = op.combine(self.partial, value);
            }
        }
    }
}

/// Turns a kernel fault into a user-facing error.
pub(crate) fn fault_error(
    fault: Fault,
    lp: &LoopRecord,
    args: &[BoundArg<'_>],
    tile: Option<usize>,
) -> Error {
    match fault {
        Fault::OutOfExtent { arg, point } => Error::OutOfExtent {
            loop_id: Some(lp.loop_id),
            tile,
            dataset: args[arg].field.name().to_string(),
            point: point[..lp.dim()].to_vec(),
        },
        Fault::Access { arg, reason } => Error::AccessViolation {
            loop_id: lp.loop_id,
            dataset: args[arg].field.name().to_string(),
            reason: reason.to_string(),
        },
    }
}

pub(crate) fn bind_args<'a>(lp: &'a LoopRecord, fields: &'a FieldSet) -> Result<Vec<BoundArg<'a>>> {
    lp.args
        .iter()
        .map(|spec| {
            Ok(BoundArg {
                field: fields.get(spec.dataset)?,
                spec,
            })
        })
        .collect()
}
