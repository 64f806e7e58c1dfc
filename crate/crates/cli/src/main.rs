//! Command-line driver for the benchmark applications.

use anyhow::{bail, Context};
use clap::{ArgGroup, Parser, ValueEnum};
use skewtile::apps::JacobiVariant;
use skewtile::{check_constraints, run_app, AppConfig, AppKind, ExecMode};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_ERROR: u8 = 1;
const EXIT_VERIFY_MISMATCH: u8 = 3;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum App {
    Jacobi2d,
    Minihydro,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    Copy,
    Noncopy,
}

#[derive(Debug, Parser)]
#[command(name = "skewtile", version, about = "Run a stencil loop-chain benchmark")]
#[command(group(ArgGroup::new("mode").args(["tile", "auto_tile", "untiled"])))]
struct Args {
    #[arg(long, value_enum, default_value = "jacobi2d")]
    app: App,
    /// Jacobi variant.
    #[arg(long, value_enum, default_value = "copy")]
    variant: Variant,
    /// Domain extents, NX[,NY[,NZ]].
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    size: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Tile sizes, TX[,TY[,TZ]].
    #[arg(long, value_delimiter = ',')]
    tile: Option<Vec<i64>>,
    /// Choose tile sizes from the cache and thread count.
    #[arg(long)]
    auto_tile: bool,
    /// Cache capacity used by --auto-tile, in KiB.
    #[arg(long, default_value_t = 20480)]
    cache_kb: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Simulated rank grid, PX[,PY].
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// Run loop at a time (the default when no tiling option is given).
    #[arg(long)]
    untiled: bool,
    /// Compare every flush against the sequential reference.
    #[arg(long)]
    verify: bool,
    /// Write the tiling plan of the last flush to PATH.
    #[arg(long)]
    dump_plan: Option<PathBuf>,
    /// Print the full key=value report.
    #[arg(long)]
    report: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(args: &Args) -> anyhow::Result<ExitCode> {
    let app = match (args.app, args.variant) {
        (App::Jacobi2d, Variant::Copy) => AppKind::Jacobi(JacobiVariant::Copy),
        (App::Jacobi2d, Variant::Noncopy) => AppKind::Jacobi(JacobiVariant::NonCopy),
        (App::Minihydro, _) => AppKind::MiniHydro,
    };
    let mode = match (&args.tile, args.auto_tile) {
        (Some(t), _) => ExecMode::Tiled(t.clone()),
        (None, true) => ExecMode::TiledAuto,
        (None, false) => ExecMode::Untiled,
    };
    let cfg = AppConfig {
        cache_bytes: args.cache_kb * 1024,
        threads: args.threads,
        ranks: args.ranks.clone(),
        verify: args.verify,
        ..AppConfig::new(app, &args.size, args.iters, mode)
    };
    let out = run_app(&cfg)?;

    if let Some(path) = &args.dump_plan {
        let Some(plan) = out.runtime.last_plan() else {
            bail!("--dump-plan needs a shared-memory tiled run");
        };
        std::fs::write(path, plan.dump())
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let tiles = out.runtime.last_tile_sizes().map(<[i64]>::to_vec);
    match &tiles {
        Some(t) => println!("tile={}", join(t)),
        None => println!("tile=none"),
    }
    if let (Some(t), Some(input)) = (&tiles, out.runtime.last_sizer_input()) {
        println!(
            "sizer_input=cache_bytes:{},threads:{},bytes_per_point:{},extent:{}",
            input.cache_bytes, input.threads, input.bytes_per_point, input.domain_extent
        );
        match check_constraints(input, t) {
            Ok(()) => println!("sizer_constraints=ok"),
            Err(why) => bail!("automatic tile sizes violate constraints: {why}"),
        }
    }
    if args.report {
        print!("{}", out.report.to_key_values());
    } else {
        println!("mode={}", out.report.mode);
        println!("total_time_s={:.6}", out.report.total_time.as_secs_f64());
    }
    for (i, r) in out.reductions.iter().enumerate() {
        println!("iteration.{i}.reduction={r:e}");
    }

    if args.verify {
        let diff = out.report.verify_max_abs_diff.unwrap_or(f64::NAN);
        let rel = out.report.verify_max_rel_reduction_diff.unwrap_or(0.0);
        if !args.report {
            println!("max_abs_diff={diff:e}");
            println!("max_rel_reduction_diff={rel:e}");
        }
        if diff != 0.0 || rel > 1e-12 {
            eprintln!("verification failed: max_abs_diff={diff:e} max_rel_reduction_diff={rel:e}");
            return Ok(ExitCode::from(EXIT_VERIFY_MISMATCH));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn join(v: &[i64]) -> String {
    v.iter().map(i64::to_string).collect::<Vec<_>>().join(",")
}
