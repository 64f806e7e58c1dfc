//! Shared workloads for the benchmarks.

use skewtile::apps::JacobiVariant;
use skewtile::{AppConfig, AppKind, ExecMode, LoopChain, Runtime};

/// Jacobi copy-variant configuration on an `n`x`n` grid.
pub fn jacobi(n: usize, iterations: usize, mode: ExecMode) -> AppConfig {
    AppConfig::new(AppKind::Jacobi(JacobiVariant::Copy), &[n, n], iterations, mode)
}

/// The loops queued on `rt` as a chain, without executing them.
pub fn pending_chain(rt: &Runtime) -> LoopChain {
    LoopChain::new(rt.pending_snapshot())
}
