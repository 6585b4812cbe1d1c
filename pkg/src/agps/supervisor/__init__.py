from .agents import (
    GUIDE,
    PRUNE,
    OracleConfig,
    RemoteAgent,
    ScriptedOracle,
    Subgoal,
    TaskProfile,
    decide_mode,
    digest,
    gen_bbox,
    gen_waypoints,
    hil_proxy_config,
    make_agent,
    perceive,
    recovery_plan,
    task_profile,
)
from .memory import INVALIDATION_LIMIT, EpisodicMemory, MemoryEntry, check_memory, record_outcome
from .wire import AgentDecision, BoxProposal, InterventionMode
