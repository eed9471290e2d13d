"""Three-layer adaptive memory architecture over simulated infrastructure.

Layers: crossbar matrix processing with adaptive error correction
(`crossbar`, `partition`), memory-aware peer-to-peer distribution (`dht`,
`p2p`), and dynamic deployment optimization (`deploy`). All layers share
the dual long-term/short-term store in `memory`; `pipeline` wires them into
the batch loop driven by scenario files (`scenario`, `cli`).
"""

from .crossbar import (
    CrossbarArray,
    NoiseModel,
    denoise,
    estimate_lambda_recent,
    first_order_correct,
    program_write_verify,
)
from .deploy import (
    AgentGraph,
    AgentSpec,
    ClusterState,
    Placement,
    TriggerConfig,
    apply_manifest,
    comm_cost,
    generate_manifest,
    network_cost,
    optimize_placement,
    parse_manifest,
    placement_cost,
    should_recompile,
)
from .dht import DhtNetwork, xor_distance
from .memory import (
    DEFAULT_LAMBDA,
    LtmRecord,
    MemoryStore,
    Observation,
    StmWindow,
    WorkloadClass,
    load_store,
    save_store,
)
from .p2p import (
    CacheEntry,
    CacheStore,
    NetworkModel,
    PeerProfile,
    SelectionWeights,
    cache_admit,
    cache_utility,
    score_peer,
    select_peers,
    simulate_transfer,
    update_weights,
)
from .partition import (
    DeviceSpec,
    PartitionPlan,
    classify_workload,
    concat_results,
    optimize_partition,
    split_matrix,
)
from .pipeline import MetricsRecord, gen_cid, run_ablation, run_scenario
from .scenario import ScenarioConfig, load_scenario

__version__ = "0.1.0"
