"""Coarse-to-fine architecture search over U-shaped segmentation topologies."""

from .arch import (
    ArchitectureIR,
    LayerSpec,
    count_flops,
    count_params,
    materialize,
    scaling_grid,
)
from .clustering import ClusterModel, assign, kmeans_cluster
from .evaluation import (
    Budget,
    CachedEvaluator,
    EvaluationRequest,
    EvaluationResult,
    ExternalEvaluator,
    ExternalSession,
    SurrogateEvaluator,
    SurrogateSpec,
    dice_score,
    surrogate_evaluate,
)
from .evolution import (
    EvolutionConfig,
    SearchState,
    Signal,
    best_model,
    cluster_proportions,
    init_search,
    next_assignment,
    record_result,
)
from .fine import (
    FineSearchConfig,
    OP_KINDS,
    op_space_size,
    random_search_rank,
    run_supernet_training,
    sample_uniform_path,
)
from .topology import (
    STEM,
    CellWiring,
    SpaceSpec,
    code_distance,
    count_full_space,
    count_pruned,
    derive_wiring,
    enumerate_pruned,
    validate_code,
)

__version__ = "0.1.0"
