"""Asynchronous model-parallel proximal SGD toolkit.

Composite nonconvex objectives (smooth sparse logistic loss plus a
blockwise-separable convex regularizer) optimized by single-block proximal
stochastic gradient updates, either in a deterministic simulator with
injectable staleness or on a concurrent in-process parameter server with a
bounded-staleness barrier.
"""

from .analysis import (
    ConditionReport,
    ConstantStepPlan,
    SpeedupRecord,
    check_step_conditions,
    constant_step_plan,
    min_gradient_mapping,
    speedup_table,
    suboptimality_gap,
)
from .config import RunConfig
from .data_io import (
    RngStream,
    batch_stream,
    block_stream,
    data_stream,
    delay_stream,
    parse_libsvm,
    sample_with_replacement,
    synthesize,
    write_libsvm,
    write_truth,
)
from .engine import (
    ClusterResult,
    Pinned,
    PushRequest,
    ServerState,
    StalenessBarrier,
    UniformBlocks,
    run_cluster,
    run_cluster_on,
    server_pull,
    server_push,
    worker_loop,
)
from .objective import (
    LogisticProblem,
    SparseDataset,
    batch_gradient,
    estimate_lipschitz,
    estimate_variance,
    full_gradient,
    full_objective,
    sample_gradient,
    smooth_loss,
    stochastic_block_gradient,
)
from .prox import (
    BlockLayout,
    Regularizer,
    block_gradient_mapping,
    gradient_mapping,
    prox,
    prox_block,
    prox_objective_oracle,
)
from .simulate import (
    ConstantPerBlockDelay,
    ConstantStep,
    DivergedError,
    InverseSqrtStep,
    TraceDelay,
    Trajectory,
    UniformRandomDelay,
    VersionBuffer,
    ZeroDelay,
    estimate_psi_star,
    run_global,
    run_serial_proxsgd,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
