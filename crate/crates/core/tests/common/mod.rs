//! Random loop-chain generator shared by the property and acceptance
//! suites.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skewtile::{
    AccessMode, ArgSpec, DatasetId, Field, FieldSet, Kernel, LoopChain, LoopRecord, Range,
    Stencil, TilingPlan, MAX_DIM,
};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

pub const PADDING: i64 = 24;

/// Per-point invocation counter for one loop.
pub struct Counter {
    range: Range,
    counts: Vec<AtomicU32>,
}

impl Counter {
    fn new(range: Range) -> Self {
        Self {
            range,
            counts: (0..range.num_points()).map(|_| AtomicU32::new(0)).collect(),
        }
    }

    fn slot(&self, p: &[i64]) -> usize {
        let mut off = 0usize;
        let mut stride = 1usize;
        for (d, &x) in p.iter().enumerate() {
            off += (x - self.range.start(d)) as usize * stride;
            stride *= self.range.extent(d) as usize;
        }
        off
    }

    fn hit(&self, p: &[i64]) {
        self.counts[self.slot(p)].fetch_add(1, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }

    /// Points not executed exactly once.
    pub fn bad_points(&self) -> usize {
        self.counts
            .iter()
            .filter(|c| c.load(Ordering::Relaxed) != 1)
            .count()
    }
}

pub struct Case {
    pub seed: u64,
    pub chain: LoopChain,
    pub fields: FieldSet,
    pub tile_sizes: Vec<i64>,
    pub counters: Vec<Arc<Counter>>,
    /// Largest absolute stencil offset in the chain, per dimension.
    pub max_offset: [i64; MAX_DIM],
}

impl Case {
    pub fn reset_counters(&self) {
        for c in &self.counters {
            c.reset();
        }
    }
}

fn random_range(rng: &mut ChaCha8Rng, n: i64) -> (i64, i64) {
    match rng.random_range(0..10) {
        0..=5 => (rng.random_range(0..=2), n - rng.random_range(0..=2)),
        6..=8 => {
            let s = rng.random_range(0..n - 1);
            (s, rng.random_range(s + 1..=n))
        }
        _ => {
            let s = rng.random_range(0..n);
            (s, s + 1)
        }
    }
}

fn random_stencil(rng: &mut ChaCha8Rng, dim: usize) -> Stencil {
    let radius = rng.random_range(0..=2i64);
    let one_sided = rng.random_bool(0.3);
    let count = rng.random_range(1..=5);
    let mut pts: Vec<Vec<i64>> = Vec::new();
    for _ in 0..count {
        let p: Vec<i64> = (0..dim)
            .map(|_| {
                if one_sided {
                    rng.random_range(0..=radius)
                } else {
                    rng.random_range(-radius..=radius)
                }
            })
            .collect();
        pts.push(p);
    }
    if one_sided && rng.random_bool(0.5) {
        for p in &mut pts {
            for x in p.iter_mut() {
                *x = -*x;
            }
        }
    }
    let refs: Vec<&[i64]> = pts.iter().map(Vec::as_slice).collect();
    Stencil::new(dim, &refs).unwrap()
}

/// A reduction-free chain of 2 to 10 loops on a random 1D or 2D domain,
/// with stencils of radius at most 2 and random tile sizes.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=2usize);
    let sizes: Vec<usize> = (0..dim)
        .map(|_| if dim == 1 { rng.random_range(8..=64) } else { rng.random_range(6..=24) })
        .collect();
    let domain = Range::zero_based(&sizes).unwrap();
    let nds = rng.random_range(2..=5usize);
    let mut fields = FieldSet::new();
    for i in 0..nds {
        let mut f = Field::new(DatasetId(i), format!("d{i}"), 8, domain, PADDING);
        let salt = rng.random_range(0..1000i64);
        f.fill_with(|p| ((p[0] * 131 + p[1] * 71 + salt).rem_euclid(257)) as f64 / 257.0);
        fields.push(f);
    }

    let nloops = rng.random_range(2..=10usize);
    let mut loops = Vec::new();
    let mut counters = Vec::new();
    let mut max_offset = [0; MAX_DIM];
    for l in 0..nloops {
        let bounds: Vec<(i64, i64)> = sizes.iter().map(|&n| random_range(&mut rng, n as i64)).collect();
        let range = Range::new(&bounds).unwrap();
        let w = DatasetId(rng.random_range(0..nds));
        let mode = match rng.random_range(0..10) {
            0..=5 => AccessMode::Write,
            6..=8 => AccessMode::ReadWrite,
            _ => AccessMode::Increment,
        };
        let mut args = vec![ArgSpec::new(w, Stencil::identity(dim), mode)];
        let mut others: Vec<usize> = (0..nds).filter(|&i| i != w.0).collect();
        let nreads = rng.random_range(1..=others.len().min(3));
        let mut terms: Vec<(usize, Vec<i64>, f64)> = Vec::new();
        for k in 0..nreads {
            let ds = others.remove(rng.random_range(0..others.len()));
            let s = random_stencil(&mut rng, dim);
            for d in 0..dim {
                max_offset[d] = max_offset[d].max(s.min_offset(d).abs()).max(s.max_offset(d).abs());
            }
            let weight = 1.0 / (s.points().len() * nreads) as f64;
            for p in s.points() {
                let c = weight * rng.random_range(-1.0..1.0);
                terms.push((k + 1, p[..dim].to_vec(), c));
            }
            args.push(ArgSpec::read(DatasetId(ds), &s));
        }
        let bias: f64 = rng.random_range(-0.5..0.5);
        let counter = Arc::new(Counter::new(range));
        counters.push(Arc::clone(&counter));
        let kernel = Kernel::new(&format!("k{l}"), move |c| {
            let mut acc = bias;
            for (a, off, w) in &terms {
                acc += w * c.read(*a, off);
            }
            match mode {
                AccessMode::Write => c.write(0, acc),
                AccessMode::ReadWrite => {
                    let old = c.get(0);
                    c.write(0, 0.5 * old + acc);
                }
                _ => c.inc(0, acc),
            }
            counter.hit(c.point());
        });
        loops.push(LoopRecord {
            loop_id: l,
            kernel,
            range,
            args,
            reduction: None,
        });
    }
    let tile_sizes = sizes
        .iter()
        .map(|&n| {
            if rng.random_bool(0.2) {
                n as i64
            } else {
                rng.random_range(1..=(n as i64 / 2).max(1))
            }
        })
        .collect();
    Case {
        seed,
        chain: LoopChain::new(loops),
        fields,
        tile_sizes,
        counters,
        max_offset,
    }
}

/// Consecutive tiles along each dimension meet exactly for every loop.
pub fn monotonic(plan: &TilingPlan) -> bool {
    let cfg = plan.config();
    (0..cfg.dim()).all(|d| {
        (0..plan.num_loops()).all(|l| {
            (1..cfg.num_tiles()[d]).all(|t| plan.dim_range(d, t - 1, l).1 == plan.dim_range(d, t, l).0)
        })
    })
}

/// Non-empty tile ends exceed their default position by at most
/// (loops after `l`) x (largest offset).
pub fn skew_bounded(plan: &TilingPlan, max_offset: &[i64; MAX_DIM]) -> bool {
    let cfg = plan.config();
    let nl = plan.num_loops();
    (0..cfg.dim()).all(|d| {
        (0..nl).all(|l| {
            (0..cfg.num_tiles()[d]).all(|t| {
                let (s, e) = plan.dim_range(d, t, l);
                s >= e || e - cfg.default_tile_end(d, t) <= (nl - 1 - l) as i64 * max_offset[d]
            })
        })
    })
}
