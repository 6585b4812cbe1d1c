from .baselines import BASELINES, baseline_config, open_loop_episode, planner_plan, run_open_loop
from .cli import main, parse_config_text
from .experiments import (
    ExperimentSpec,
    MetricsArchive,
    ablate_memory,
    ablation_report,
    ablation_row,
    eval_checkpoint,
    eval_expert,
    export_qmap,
    insertion_slice,
    oracle_box,
    qmap_report,
    run_experiment,
)
