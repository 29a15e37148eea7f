"""Per-node deployment, memory and query-split scheduling."""

from .latency import (
    FAMILIES,
    FitError,
    LatencyModel,
    fit_latency,
    load_latency_store,
    predict_latency,
    save_latency_store,
    servable_range,
    synth_latency_samples,
)
from .oracle import InstanceTooLarge, brute_force_oracle
from .plan import GpuPlanState, ModelAssignment, NodePlan, build_plan, check_plan_feasibility, empty_plan
from .solver import solve_intranode
from .states import (
    bigm_rc_feasible,
    load_state,
    loading_time,
    loading_time_indicator,
    reload_state,
    resource_change,
    transition_flags,
    unload_state,
)
