//! Lazy execution of structured-mesh stencil loop chains with skewed
//! tiling, for shared memory and for simulated distributed ranks.

#![allow(clippy::needless_range_loop)]

pub mod apps;
pub mod chain;
pub mod dist;
pub mod error;
pub mod executor;
pub mod mesh;
pub mod oracle;
pub mod planner;
pub mod queue;
pub mod sizer;

pub use chain::{ChainSignature, LoopChain};
pub use error::{Error, Result};
pub use executor::{execute_plan, execute_untiled, CommStats, ExecutionReport, LoopReport};
pub use mesh::{
    declare_stencil, estimate_bytes_moved, AccessMode, ArgSpec, Block, DatasetId, Field, FieldSet,
    Index, Kernel, LoopRecord, PointCtx, Range, ReductionHandle, ReductionOp, ReductionSpec,
    Stencil, MAX_DIM,
};
pub use planner::{
    compute_union_bounds, construct_plan, DependencyExtents, DimDeps, PlanCache, PlanConfig,
    PlanStats, Span, TilingPlan,
};
pub use oracle::{
    input_footprint, sequential_reference, validate_coverage, validate_dependencies,
    validate_replicated_coverage, Reference, Violation, ViolationKind,
};
pub use sizer::{auto_tile_size, check_constraints, SizerInput};
pub use dist::{
    compute_halo_depths, construct_rank_plan, exchange_halos, run_distributed,
    run_distributed_untiled, DatasetHalo, Exchange, HaloSpec, RankLayout, RankPlanCache, Side,
};
pub use queue::{relative_diff, ExecMode, Runtime, RuntimeConfig};
pub use apps::{run_app, AppConfig, AppKind, AppRun};
