use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use skewtile::apps::{MiniHydro, Jacobi, JacobiInit, JacobiVariant};
use skewtile::{compute_union_bounds, construct_plan, run_app, Block, ExecMode, Range, Runtime, RuntimeConfig};
use skewtile_bench::{jacobi, pending_chain};

fn executors(c: &mut Criterion) {
    let mut g = c.benchmark_group("jacobi_512_10iter");
    g.sample_size(10);
    let modes = [
        ("untiled", ExecMode::Untiled),
        ("tiled_128x64", ExecMode::Tiled(vec![128, 64])),
        ("tiled_auto", ExecMode::TiledAuto),
    ];
    for (name, mode) in modes {
        let cfg = jacobi(512, 10, mode);
        g.bench_function(name, |b| b.iter(|| run_app(&cfg).unwrap()));
    }
    g.finish();
}

fn runtime(n: usize) -> Runtime {
    Runtime::new(
        Block::new("grid", 2).unwrap(),
        Range::zero_based(&[n, n]).unwrap(),
        RuntimeConfig::default(),
    )
    .unwrap()
}

fn planning(c: &mut Criterion) {
    let mut g = c.benchmark_group("plan_construction");
    for iters in [5usize, 50] {
        let mut rt = runtime(256);
        let mut app = Jacobi::setup(&mut rt, JacobiVariant::Copy, JacobiInit::Pattern).unwrap();
        app.enqueue(&mut rt, iters).unwrap();
        let chain = pending_chain(&rt);
        g.bench_with_input(BenchmarkId::new("jacobi", chain.len()), &chain, |b, chain| {
            b.iter(|| construct_plan(chain, &compute_union_bounds(chain, &[64, 32]).unwrap()).unwrap())
        });
    }
    let mut rt = runtime(256);
    let app = MiniHydro::setup(&mut rt).unwrap();
    for _ in 0..10 {
        app.enqueue_iteration(&mut rt).unwrap();
    }
    let chain = pending_chain(&rt);
    g.bench_with_input(BenchmarkId::new("minihydro", chain.len()), &chain, |b, chain| {
        b.iter(|| construct_plan(chain, &compute_union_bounds(chain, &[64, 32]).unwrap()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, executors, planning);
criterion_main!(benches);
