//! Automatic tile-size selection from cache capacity and chain footprint.
//!
//! The chosen shape satisfies, for a cache of `C` bytes, `B` bytes per
//! point and `T` threads:
//!
//! 1. `prod(sizes) * B <= C`
//! 2. `X >= 2Y` (2D and 3D)
//! 3. `Y` (2D) or `Y*Z` (3D) is a positive multiple of `T`
//! 4. every size is at most the domain extent in that dimension

use crate::chain::LoopChain;
use crate::error::{Error, Result};
use crate::mesh::{FieldSet, Range};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SizerInput {
    pub cache_bytes: u64,
    pub threads: u64,
    pub dim: usize,
    pub bytes_per_point: u64,
    pub domain_extent: Range,
}

impl SizerInput {
    /// Footprint of `chain`: the sum of element sizes over distinct datasets
    /// it accesses. Extent is the chain's union bounds.
    pub fn for_chain(
        chain: &LoopChain,
        fields: &FieldSet,
        cache_bytes: u64,
        threads: u64,
    ) -> Result<Self> {
        let first = chain.loops().first().ok_or(Error::EmptyChain)?;
        let datasets: BTreeSet<_> = chain
            .loops()
            .iter()
            .flat_map(|l| l.args.iter().map(|a| a.dataset))
            .collect();
        let mut bytes_per_point = 0;
        for ds in datasets {
            bytes_per_point += fields.get(ds)?.elem_bytes() as u64;
        }
        let mut extent = first.range;
        for l in chain.loops() {
            for d in 0..extent.dim() {
                extent = extent.with_dim(
                    d,
                    extent.start(d).min(l.range.start(d)),
                    extent.end(d).max(l.range.end(d)),
                );
            }
        }
        Ok(Self {
            cache_bytes,
            threads,
            dim: first.dim(),
            bytes_per_point: bytes_per_point.max(1),
            domain_extent: extent,
        })
    }
}

/// Checks the four shape constraints; returns a description of the first
/// one violated.
pub fn check_constraints(input: &SizerInput, sizes: &[i64]) -> std::result::Result<(), String> {
    if sizes.len() != input.dim || sizes.iter().any(|&s| s <= 0) {
        return Err(format!("sizes {sizes:?} are not {} positive values", input.dim));
    }
    let points: u64 = sizes.iter().map(|&s| s as u64).product();
    if points.saturating_mul(input.bytes_per_point) > input.cache_bytes {
        return Err(format!("footprint of {sizes:?} exceeds cache"));
    }
    for (d, &s) in sizes.iter().enumerate() {
        if s > input.domain_extent.extent(d).max(1) {
            return Err(format!("size {s} exceeds extent in dim {d}"));
        }
    }
    if input.dim >= 2 {
        if sizes[0] < 2 * sizes[1] {
            return Err(format!("X={} is less than twice Y={}", sizes[0], sizes[1]));
        }
        let yz: u64 = sizes[1..].iter().map(|&s| s as u64).product();
        if yz % input.threads != 0 {
            return Err(format!("{yz} is not a multiple of {} threads", input.threads));
        }
    }
    Ok(())
}

/// Picks tile sizes for `input`. Errors when no shape meets all constraints.
pub fn auto_tile_size(input: &SizerInput) -> Result<Vec<i64>> {
    let infeasible = |why: &str| Error::SizerInfeasible(why.to_string());
    if input.threads == 0 || input.bytes_per_point == 0 || input.cache_bytes == 0 {
        return Err(infeasible("cache, threads and bytes per point must be positive"));
    }
    if input.domain_extent.dim() != input.dim {
        return Err(Error::DimensionMismatch {
            expected: input.dim,
            got: input.domain_extent.dim(),
        });
    }
    let cap = input.cache_bytes / input.bytes_per_point;
    let t = input.threads as i64;
    let ext: Vec<i64> = (0..input.dim)
        .map(|d| input.domain_extent.extent(d).max(1))
        .collect();
    let cap = cap.min(i64::MAX as u64) as i64;
    let sizes = match input.dim {
        1 => {
            if cap < t {
                return Err(infeasible("cache holds fewer points than threads"));
            }
            vec![ext[0].min(cap)]
        }
        2 => {
            let (ex, ey) = (ext[0], ext[1]);
            // Y: largest multiple of T with 2Y^2 <= cap, Y <= extent_Y, 2Y <= extent_X.
            let mut y_max = isqrt(cap / 2).min(ey).min(ex / 2);
            y_max -= y_max % t;
            if y_max < t {
                return Err(infeasible("no multiple of the thread count fits the cache and domain"));
            }
            let y = y_max;
            let x = ex.min((cap / y).max(2 * y));
            vec![x, y]
        }
        _ => size_3d(cap, t, &ext).ok_or_else(|| {
            infeasible("no Y=Z face with Y*Z a multiple of the thread count fits")
        })?,
    };
    if let Err(why) = check_constraints(input, &sizes) {
        return Err(Error::SizerInfeasible(why));
    }
    Ok(sizes)
}

/// Y = Z, largest value with `Y*Z % T == 0`. X prefers the full extent and
/// shrinks only if the full row does not fit.
fn size_3d(cap: i64, t: i64, ext: &[i64]) -> Option<Vec<i64>> {
    let limit = ext[1].min(ext[2]).min(ext[0] / 2);
    let feasible = |y: i64| y * y % t == 0;
    let full = (1..=limit)
        .rev()
        .find(|&y| feasible(y) && ext[0].saturating_mul(y * y) <= cap);
    if let Some(y) = full {
        return Some(vec![ext[0], y, y]);
    }
    (1..=limit).rev().find_map(|y| {
        if !feasible(y) {
            return None;
        }
        let x = ext[0].min(cap / (y * y));
        (x >= 2 * y).then(|| vec![x, y, y])
    })
}

fn isqrt(n: i64) -> i64 {
    if n <= 0 {
        return 0;
    }
    let mut r = (n as f64).sqrt() as i64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}
