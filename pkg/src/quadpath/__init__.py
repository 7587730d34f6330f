"""Predictive path-following control for a quadrotor, desk-scale simulation."""

from .controller import ControlDiagnostics, PathController
from .dynamics import (
    ModelParams,
    body_angular_velocity,
    dynamics,
    output_map,
    rk4_step,
    rotation_jacobian,
    rotation_matrix,
)
from .paths import (
    CorridorPath,
    Path,
    corridor_timing_law,
    eval_corridor,
    eval_lemniscate,
    eval_sinusoid,
    eval_spiral,
    make_path,
    nominal_yaw_rate,
    path_error,
    timing_law,
    wrap_angle,
)
from .simulate import (
    RunMetrics,
    ScenarioConfig,
    SimLog,
    compare_corridor,
    export_csv,
    load_config,
    run_scenario,
    scenario_config,
    sense,
    summarize_json,
)
from .solver import (
    DenseNlp,
    SolveResult,
    SolverSettings,
    kkt_residual,
    solve,
    warm_start_shift,
)
from .transcription import (
    OcpConfig,
    OcpProblem,
    build_ocp,
    stage_cost,
    terminal_cost,
    terminal_sets_stub,
)

__version__ = "0.1.0"
