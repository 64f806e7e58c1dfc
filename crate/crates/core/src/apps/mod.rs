//! Benchmark applications and a common driver.

pub mod jacobi;
pub mod minihydro;

pub use jacobi::{Jacobi, JacobiInit, JacobiVariant};
pub use minihydro::MiniHydro;

use crate::error::{Error, Result};
use crate::executor::ExecutionReport;
use crate::mesh::{Block, DatasetId, Range};
use crate::queue::{ExecMode, Runtime, RuntimeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppKind {
    Jacobi(JacobiVariant),
    MiniHydro,
}

#[derive(Clone, Debug)]
pub struct AppConfig {
    pub app: AppKind,
    pub sizes: Vec<usize>,
    pub iterations: usize,
    pub mode: ExecMode,
    pub cache_bytes: u64,
    pub threads: Option<usize>,
    pub ranks: Option<Vec<usize>>,
    pub verify: bool,
    /// Iterations queued per flush; `None` queues everything at once.
    pub iterations_per_flush: Option<usize>,
}

impl AppConfig {
    pub fn new(app: AppKind, sizes: &[usize], iterations: usize, mode: ExecMode) -> Self {
        Self {
            app,
            sizes: sizes.to_vec(),
            iterations,
            mode,
            cache_bytes: RuntimeConfig::default().cache_bytes,
            threads: None,
            ranks: None,
            verify: false,
            iterations_per_flush: None,
        }
    }
}

/// Outcome of [`run_app`].
pub struct AppRun {
    pub runtime: Runtime,
    /// Aggregate over all flushes.
    pub report: ExecutionReport,
    /// One value per iteration for apps that reduce.
    pub reductions: Vec<f64>,
    /// Dataset holding the primary solution.
    pub solution: DatasetId,
}

/// Sets up and runs an application to completion.
pub fn run_app(cfg: &AppConfig) -> Result<AppRun> {
    if cfg.sizes.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: cfg.sizes.len(),
        });
    }
    let rcfg = RuntimeConfig {
        mode: cfg.mode.clone(),
        cache_bytes: cfg.cache_bytes,
        threads: cfg.threads,
        ranks: cfg.ranks.clone(),
        verify: cfg.verify,
        ..RuntimeConfig::default()
    };
    let mut rt = Runtime::new(Block::new("grid", 2)?, Range::zero_based(&cfg.sizes)?, rcfg)?;
    let per_flush = cfg.iterations_per_flush.unwrap_or(cfg.iterations).max(1);
    let mut reductions = Vec::new();
    let solution = match cfg.app {
        AppKind::Jacobi(variant) => {
            let mut app = Jacobi::setup(&mut rt, variant, JacobiInit::Pattern)?;
            let mut left = cfg.iterations;
            while left > 0 {
                let k = left.min(per_flush);
                app.enqueue(&mut rt, k)?;
                rt.flush()?;
                left -= k;
            }
            app.solution()
        }
        AppKind::MiniHydro => {
            let app = MiniHydro::setup(&mut rt)?;
            let mut left = cfg.iterations;
            while left > 0 {
                let k = left.min(per_flush);
                let handles = (0..k)
                    .map(|_| app.enqueue_iteration(&mut rt))
                    .collect::<Result<Vec<_>>>()?;
                rt.flush()?;
                for h in handles {
                    reductions.push(rt.fetch_reduction(h)?);
                }
                left -= k;
            }
            app.rho
        }
    };
    Ok(AppRun {
        report: rt.totals().clone(),
        runtime: rt,
        reductions,
        solution,
    })
}
