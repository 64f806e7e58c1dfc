//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skewtile::apps::{Jacobi, JacobiInit, JacobiVariant};
use skewtile::*;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 two-loop golden plan", golden_plan),
        ("2 apps tiled equal untiled", apps_tiled_equal_untiled),
        ("3 random chains", random_chains),
        ("4 distributed equals shared untiled", distributed_equivalence),
        ("5 halo depth equals chain depth", halo_depths),
        ("6 message aggregation", message_aggregation),
        ("7 tile sizer constraints", sizer_constraints),
        ("8 plan cache and planning cost", plan_cache_and_cost),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|e| Err(format!("panicked: {}", panic_message(&e))));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn golden_plan() -> Outcome {
    let t0 = Instant::now();
    let (d1, d2) = (DatasetId(0), DatasetId(1));
    let r = Range::new(&[(0, 8)]).map_err(err)?;
    let lp = |id, args| LoopRecord {
        loop_id: id,
        kernel: Kernel::new("k", |_| {}),
        range: r,
        args,
        reduction: None,
    };
    let chain = LoopChain::new(vec![
        lp(0, vec![ArgSpec::read(d1, &Stencil::identity(1)), ArgSpec::write(d2, 1)]),
        lp(1, vec![ArgSpec::read(d2, &Stencil::star(1, 1)), ArgSpec::write(d1, 1)]),
    ]);
    let plan = construct_plan(&chain, &compute_union_bounds(&chain, &[4]).map_err(err)?).map_err(err)?;
    let golden = "tile=0 loop=0 d=0 [0,5)\n\
                  tile=0 loop=1 d=0 [0,4)\n\
                  tile=1 loop=0 d=0 [5,8)\n\
                  tile=1 loop=1 d=0 [4,8)\n";
    ensure!(plan.dump() == golden, "dump was\n{}", plan.dump());
    let v = validate_dependencies(&plan, &chain);
    ensure!(v.is_empty(), "{} dependency violations", v.len());
    let c = validate_coverage(&plan, &chain);
    ensure!(c.is_empty(), "{} coverage violations", c.len());
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs}s");
    Ok("dump matches, no violations".into())
}

fn run(cfg: &AppConfig) -> std::result::Result<AppRun, String> {
    run_app(cfg).map_err(err)
}

fn apps_tiled_equal_untiled() -> Outcome {
    let mut compared = 0;
    let apps = [
        (AppKind::Jacobi(JacobiVariant::Copy), 64usize, 10usize),
        (AppKind::Jacobi(JacobiVariant::NonCopy), 64, 10),
        (AppKind::MiniHydro, 48, 3),
    ];
    for (app, n, iters) in apps {
        let base = run(&AppConfig::new(app, &[n, n], iters, ExecMode::Untiled))?;
        for tx in [8, 16, 32, n as i64] {
            for ty in [8, 16, 32, n as i64] {
                let tiled = run(&AppConfig::new(app, &[n, n], iters, ExecMode::Tiled(vec![tx, ty])))?;
                ensure!(
                    tiled.runtime.fields().bit_identical(base.runtime.fields()),
                    "{app:?} tile {tx}x{ty}: max diff {}",
                    tiled.runtime.fields().max_abs_diff(base.runtime.fields())
                );
                ensure!(tiled.reductions.len() == base.reductions.len(), "{app:?}: reduction count");
                for (a, b) in tiled.reductions.iter().zip(&base.reductions) {
                    ensure!(relative_diff(*a, *b) <= 1e-12, "{app:?} tile {tx}x{ty}: reduction {a} vs {b}");
                }
                compared += 1;
            }
        }
        let reference = run(&AppConfig {
            verify: true,
            ..AppConfig::new(app, &[n, n], iters, ExecMode::Tiled(vec![16, 16]))
        })?;
        let d = reference.report.verify_max_abs_diff.unwrap_or(f64::NAN);
        ensure!(d == 0.0, "{app:?}: differs from sequential reference by {d}");
    }
    Ok(format!("{compared} tiled runs bit-identical"))
}

fn random_chains() -> Outcome {
    let mut tiles = 0;
    for seed in 0..500u64 {
        let case = common::random_case(seed);
        let cfg = compute_union_bounds(&case.chain, &case.tile_sizes).map_err(err)?;
        let plan = construct_plan(&case.chain, &cfg).map_err(err)?;
        tiles += plan.num_tiles();
        let v = validate_coverage(&plan, &case.chain);
        ensure!(v.is_empty(), "seed {seed}: {}", v[0]);
        let v = validate_dependencies(&plan, &case.chain);
        ensure!(v.is_empty(), "seed {seed}: {}", v[0]);
        ensure!(common::monotonic(&plan), "seed {seed}: tiles not contiguous");
        ensure!(common::skew_bounded(&plan, &case.max_offset), "seed {seed}: skew bound exceeded");

        let mut untiled = case.fields.clone();
        execute_untiled(&case.chain, &mut untiled).map_err(err)?;
        case.reset_counters();
        let mut tiled = case.fields.clone();
        execute_plan(&plan, &case.chain, &mut tiled).map_err(err)?;
        for (l, c) in case.counters.iter().enumerate() {
            ensure!(c.bad_points() == 0, "seed {seed} loop {l}: {} points not run exactly once", c.bad_points());
        }
        ensure!(tiled.bit_identical(&untiled), "seed {seed}: tiled differs by {}", tiled.max_abs_diff(&untiled));
    }
    Ok(format!("500 chains, {tiles} tiles"))
}

fn distributed_equivalence() -> Outcome {
    let apps = [
        (AppKind::Jacobi(JacobiVariant::Copy), 64usize, 10usize),
        (AppKind::Jacobi(JacobiVariant::NonCopy), 64, 10),
        (AppKind::MiniHydro, 48, 3),
    ];
    let mut runs = 0;
    for (app, n, iters) in apps {
        let base = run(&AppConfig::new(app, &[n, n], iters, ExecMode::Untiled))?;
        for grid in [vec![2, 1], vec![2, 2]] {
            let dist = run(&AppConfig {
                ranks: Some(grid.clone()),
                ..AppConfig::new(app, &[n, n], iters, ExecMode::Tiled(vec![16, 16]))
            })?;
            ensure!(
                dist.runtime.fields().bit_identical(base.runtime.fields()),
                "{app:?} ranks {grid:?}: max diff {}",
                dist.runtime.fields().max_abs_diff(base.runtime.fields())
            );
            for (a, b) in dist.reductions.iter().zip(&base.reductions) {
                ensure!(relative_diff(*a, *b) <= 1e-12, "{app:?} ranks {grid:?}: reduction {a} vs {b}");
            }
            let comm = dist.report.comm.as_ref().ok_or("no communication stats")?;
            ensure!(comm.exchanges_during_execution == 0, "{app:?} ranks {grid:?}: exchange during execution");
            runs += 1;
        }
    }
    Ok(format!("{runs} distributed runs bit-identical, no mid-execution exchanges"))
}

fn jacobi_chain(n: usize, iters: usize) -> std::result::Result<(LoopChain, Jacobi), String> {
    let mut rt = Runtime::new(
        Block::new("grid", 2).map_err(err)?,
        Range::zero_based(&[n, n]).map_err(err)?,
        RuntimeConfig::default(),
    )
    .map_err(err)?;
    let mut app = Jacobi::setup(&mut rt, JacobiVariant::Copy, JacobiInit::Pattern).map_err(err)?;
    app.enqueue(&mut rt, iters).map_err(err)?;
    Ok((LoopChain::new(rt.pending_snapshot()), app))
}

fn halo_depths() -> Outcome {
    for k in [1usize, 2, 4] {
        let (chain, app) = jacobi_chain(64, k)?;
        let global = Range::zero_based(&[64, 64]).map_err(err)?;
        let layout = RankLayout::decompose(&global, &[2, 2]).map_err(err)?;
        for r in 0..layout.num_ranks() {
            let plan = construct_rank_plan(&chain, &layout, r, &[16, 16]).map_err(err)?;
            let halo = compute_halo_depths(&plan, &chain, &layout, r);
            let owned = layout.owned(r);
            let fp = input_footprint(&chain, owned);
            let u_fp = fp.get(&app.u).ok_or("u absent from footprint")?;
            if let Some(v_fp) = fp.get(&app.v) {
                ensure!(owned.contains_range(v_fp), "rank {r}: v footprint {v_fp} leaves {owned}");
            }
            let vh = halo.get(app.v).ok_or("no halo entry for v")?;
            ensure!(!vh.needed, "rank {r}: v marked as needed");
            for d in 0..2 {
                for side in [Side::Lo, Side::Hi] {
                    if layout.neighbor(r, d, side).is_none() {
                        continue;
                    }
                    let depth = halo.depth(app.u, d, side);
                    let oracle = match side {
                        Side::Lo => owned.start(d) - u_fp.start(d),
                        Side::Hi => u_fp.end(d) - owned.end(d),
                    };
                    ensure!(depth == k as i64, "K={k} rank {r} d{d} {side:?}: depth {depth}");
                    ensure!(depth == oracle, "K={k} rank {r} d{d} {side:?}: oracle {oracle}");
                }
            }
        }
    }
    Ok("depth K on u for K in 1,2,4; v not exchanged".into())
}

fn message_aggregation() -> Outcome {
    let mut detail = Vec::new();
    for k in [2usize, 4, 8] {
        let app = AppKind::Jacobi(JacobiVariant::Copy);
        let cfg = |mode| AppConfig {
            ranks: Some(vec![2, 2]),
            ..AppConfig::new(app, &[64, 64], k, mode)
        };
        let tiled = run(&cfg(ExecMode::Tiled(vec![16, 16])))?;
        let untiled = run(&cfg(ExecMode::Untiled))?;
        ensure!(
            tiled.runtime.fields().bit_identical(untiled.runtime.fields()),
            "K={k}: tiled and untiled distributed results differ"
        );
        let t = tiled.report.comm.as_ref().ok_or("no stats")?;
        let u = untiled.report.comm.as_ref().ok_or("no stats")?;
        let (tm, um) = (t.total_messages(), u.total_messages());
        ensure!(tm > 0 && um > 0, "K={k}: no messages (tiled {tm}, untiled {um})");
        ensure!(tm * k as u64 <= um, "K={k}: tiled {tm} messages, untiled {um}");
        let tb = t.total_bytes() as f64 / tm as f64;
        let ub = u.total_bytes() as f64 / um as f64;
        ensure!(tb >= ub, "K={k}: bytes per message {tb} < {ub}");
        detail.push(format!("K={k}: {tm} vs {um} msgs"));
    }
    Ok(detail.join(", "))
}

fn sizer_constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let dim = rng.random_range(1..=3usize);
        let ext: Vec<usize> = (0..dim).map(|_| rng.random_range(256..=4096)).collect();
        let input = SizerInput {
            cache_bytes: rng.random_range(4u64..=64) << 20,
            threads: rng.random_range(1..=32),
            dim,
            bytes_per_point: rng.random_range(8..=64),
            domain_extent: Range::zero_based(&ext).map_err(err)?,
        };
        let sizes = auto_tile_size(&input).map_err(|e| format!("input {i} {input:?}: {e}"))?;
        check_constraints(&input, &sizes).map_err(|e| format!("input {i} {input:?} -> {sizes:?}: {e}"))?;
    }
    Ok("200 inputs satisfied".into())
}

fn plan_cache_and_cost() -> Outcome {
    let mut rt = Runtime::new(
        Block::new("grid", 2).map_err(err)?,
        Range::zero_based(&[64, 64]).map_err(err)?,
        RuntimeConfig {
            mode: ExecMode::Tiled(vec![16, 16]),
            ..RuntimeConfig::default()
        },
    )
    .map_err(err)?;
    let star = rt.declare_stencil(&[&[0, 0], &[1, 0], &[-1, 0], &[0, 1], &[0, -1]]).map_err(err)?;
    let ids: Vec<_> = (0..3).map(|i| rt.declare_field(&format!("f{i}"), 8)).collect();
    for &id in &ids {
        rt.field_mut(id).map_err(err)?.fill_with(|p| (p[0] * 3 + p[1]) as f64);
    }
    let interior = Range::new(&[(1, 63), (1, 63)]).map_err(err)?;
    for _ in 0..2 {
        for l in 0..153 {
            let (src, dst) = (ids[l % 3], ids[(l + 1) % 3]);
            rt.par_loop(
                Kernel::new("smooth", |c| {
                    let s = c.read(0, &[1, 0]) + c.read(0, &[-1, 0]) + c.read(0, &[0, 1]) + c.read(0, &[0, -1]);
                    c.write(1, 0.25 * s);
                }),
                interior,
                vec![ArgSpec::read(src, &star), ArgSpec::write(dst, 2)],
                None,
            )
            .map_err(err)?;
        }
        rt.flush().map_err(err)?;
    }
    ensure!(rt.plan_builds() == 1, "{} plans built for two identical flushes", rt.plan_builds());
    ensure!(rt.plan_cache().hits() == 1, "{} cache hits", rt.plan_cache().hits());

    let jac = run(&AppConfig::new(
        AppKind::Jacobi(JacobiVariant::Copy),
        &[512, 512],
        10,
        ExecMode::Tiled(vec![128, 64]),
    ))?;
    let share = jac.report.planning_time.as_secs_f64() / jac.report.total_time.as_secs_f64();
    ensure!(share < 0.05, "planning is {:.1}% of the run", share * 100.0);
    Ok(format!("1 build for 2x153 loops; planning {:.3}% of Jacobi 512^2", share * 100.0))
}
