"""Location obfuscation for spatial crowdsourcing.

Builds protection location sets over a discrete domain, reports through
distance-decay laws with adaptive per-set budgets, evaluates the
privacy/utility trade-off against a Bayesian adversary, and searches the
partition space with a multi-objective evolutionary loop.  A FastAPI
service and a thin CLI expose the pipeline.
"""

from .adversary import (
    ObjectivePair,
    Posterior,
    evaluate_objectives,
    expected_inference_error,
    min_conditional_error,
    optimal_attack,
    posterior,
    quality_loss,
)
from .domain import (
    ClusterSpec,
    DatasetSpec,
    Domain,
    Location,
    SyntheticSpec,
    distance,
    domain_from_payload,
    domain_payload,
    load_domain,
)
from .errors import (
    CellInfeasibleError,
    DegeneratePlsError,
    DomainTooSmallError,
    GeomoeaError,
    InvalidConfigError,
    NoIdleWorkerError,
    ParseError,
    UnreachableOutputError,
)
from .mechanism import (
    ObfuscationMatrix,
    build_matrix,
    identity_matrix,
    loss_kernel,
    matrix_from_payload,
    matrix_payload,
    mechanism_row,
    quality_loss_at,
    read_matrix_binary,
    row_sums,
    sample_pseudo,
    verify_cross_pls,
    verify_dp_within_pls,
    write_matrix_binary,
)
from .moea import (
    Individual,
    MoeaConfig,
    ParetoFront,
    binary_tournament,
    crossover,
    crowding_distance,
    dominates,
    dpive_baseline,
    evolve,
    fast_nondominated_sort,
    front_payload,
    hypervolume,
    mutate,
    pso_baseline,
    pso_budget,
)
from .partition import Cell, PartitionTree, binary_partition, cells_payload, tree_from_payload
from .pipeline import RunConfig, SimConfig, run_optimize, run_pipeline, run_sweep, verify_report
from .pls import (
    Pls,
    PlsPartition,
    PrivacyConfig,
    allocate_epsilon,
    build_reporting_ranges,
    e_prime,
    find_k,
    partition_from_payload,
    partition_payload,
    ret_c,
    validate_partition,
)
from .scsim import (
    Assignment,
    SimulationResult,
    Task,
    Worker,
    assign,
    geocast,
    run_simulation,
    sample_pseudo_locations,
    spawn_tasks,
    spawn_workers,
)

__version__ = "0.1.0"
