"""A short head-to-head: AGPS against the same learner without supervision.

At a 6k-step budget the supervised run is usually already solving the
insertion task while plain SERL is not.  Both converge by the default 30k
budget on this simulator, so the interesting number is how early each gets
there.  Takes about a minute per run on one core.
"""
from dataclasses import replace

from agps.harness import baseline_config
from agps.orchestrator import RunConfig, run_training

BUDGET = 6_000

for name in ("agps", "serl"):
    cfg = replace(baseline_config(name, RunConfig(budget=BUDGET)), seed=0)
    metrics, _ = run_training(cfg)
    curve = ", ".join(f"{step}: {rate:.1f}" for step, _, rate in metrics.checkpoints)
    print(f"{name:5s} eval success by step [{curve}]")
    print(f"      triggers {len(metrics.triggers)}, agent calls {metrics.fresh_calls}, "
          f"memory hits {metrics.memory_hits}, per-10 {metrics.triggers_per_10()}")
