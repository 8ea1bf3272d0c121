"""Data-plane intrusion detection and response for software-defined networks."""

from .detection import (
    CongestionEstimator,
    ScanConfig,
    Scanner,
    StaleSnapshot,
    TrajectoryPair,
    Verdict,
    VerdictKind,
    classify,
    estimate_congestion,
    localize,
    scan_for_attacks,
)
from .headerspace import apply_transfer, expected_trajectories, reachability
from .netmodel import (
    CONTROLLER,
    Action,
    FlowRule,
    ForwardingDevice,
    NetworkSnapshot,
    NetworkState,
    build_snapshot,
    state_changed,
)
from .patterns import HeaderPattern, HeaderSpace, Rewrite
from .response import ResponseEngine, ResponsePolicy, apply_to_network, load_policies, match_and_execute, parse_policies
from .targetid import ScanPlan, build_scan_plan, representativeness
from .trajectory import (
    Observation,
    ObservationLog,
    PacketHeader,
    Trajectory,
    TrajectoryStore,
    label_packet,
    reconstruct_actual,
    store_and_dedupe,
)

__version__ = "0.1.0"
