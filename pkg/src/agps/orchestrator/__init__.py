from .config import RunConfig, RunMetrics, nonincreasing_after_peak
from .records import load_checkpoint, save_checkpoint, write_outputs
from .run import Run, evaluate, interaction_step, loo_indices, prefix_points, run_training
