"""Multi-seed experiments, the memory ablation, Q-map export and checkpoint evaluation."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import env as envmod
from ..errors import ConfigurationError
from ..geometry import denormalize_pixel, deproject
from ..orchestrator import RunConfig, evaluate, load_checkpoint, run_training, write_outputs
from ..orchestrator.records import metrics_csv
from ..rl_core import SliceSpec, q_landscape
from ..state import EnvAction
from ..supervisor import ScriptedOracle, task_profile
from .baselines import BASELINES, baseline_config, run_open_loop


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    baseline: str = "agps"
    seeds: tuple = (0,)
    base: RunConfig = field(default_factory=RunConfig)
    out_dir: str = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("an experiment needs at least one seed")
        if self.baseline not in BASELINES:
            raise ConfigurationError(f"unknown baseline {self.baseline!r}; expected one of {BASELINES}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def run_config(self, seed):
        return replace(baseline_config(self.baseline, self.base), seed=seed)


def _quantiles(values):
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q50), float(q25), float(q75)


@dataclass
class MetricsArchive:
    spec: ExperimentSpec
    runs: dict = field(default_factory=dict)  # seed -> RunMetrics

    @property
    def final_successes(self):
        return [self.runs[s].final_success for s in self.spec.seeds if s in self.runs]

    @property
    def median_final(self):
        return _quantiles(self.final_successes)[0]

    @property
    def aborted(self):
        return [s for s, m in self.runs.items() if m.aborted]

    def curve(self):
        """Median and IQR of the success rate at each checkpoint index."""
        n = min(len(m.checkpoints) for m in self.runs.values())
        rows = []
        for k in range(n):
            rates = [m.checkpoints[k][2] for m in self.runs.values()]
            steps = [m.checkpoints[k][0] for m in self.runs.values()]
            med, lo, hi = _quantiles(rates)
            rows.append({"checkpoint": k, "env_step": int(np.median(steps)), "median": med, "q25": lo, "q75": hi})
        return rows

    def report(self):
        return {
            "name": self.spec.name,
            "baseline": self.spec.baseline,
            "seeds": list(self.spec.seeds),
            "final_success": {str(s): self.runs[s].final_success for s in self.runs},
            "median_final_success": self.median_final,
            "curve": self.curve(),
            "aborted_seeds": self.aborted,
            "fingerprints": {str(s): m.config_fingerprint for s, m in self.runs.items()},
            "runs": {str(s): m.summary() for s, m in self.runs.items()},
        }

    def curve_csv(self):
        lines = ["checkpoint,env_step,median,q25,q75"]
        lines += [f"{r['checkpoint']},{r['env_step']},{r['median']!r},{r['q25']!r},{r['q75']!r}" for r in self.curve()]
        return "\n".join(lines) + "\n"


def run_experiment(spec, progress=None, demos=None):
    """One run per seed; per-seed outputs under ``out_dir/seed_<k>`` when an output dir is set."""
    archive = MetricsArchive(spec)
    out = Path(spec.out_dir) if spec.out_dir else None
    for seed in spec.seeds:
        cfg = spec.run_config(seed)
        if spec.baseline == "open_loop_planner":
            metrics, run = run_open_loop(cfg), None
        else:
            metrics, run = run_training(cfg, demos=demos)
        archive.runs[seed] = metrics
        if out is not None:
            if run is not None:
                write_outputs(out / f"seed_{seed}", metrics, run)
            else:
                seed_dir = out / f"seed_{seed}"
                seed_dir.mkdir(parents=True, exist_ok=True)
                (seed_dir / "metrics.csv").write_text(metrics_csv(metrics))
        if progress is not None:
            progress(seed, metrics)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(archive.curve_csv())
        (out / "report.json").write_text(json.dumps(archive.report(), indent=2) + "\n")
    return archive


# -- memory ablation ----------------------------------------------------------

def _repeat_subgoals(metrics):
    """Subgoals that drew at least two pruning triggers in a run."""
    counts = {}
    for t in metrics.pruning_triggers():
        counts[t["subgoal"]] = counts.get(t["subgoal"], 0) + 1
    return sorted(s for s, c in counts.items() if c >= 2)


def _steps_to(metrics, level=0.9):
    for step, _, rate in metrics.checkpoints:
        if rate >= level:
            return step
    return None


def ablation_row(seed, on, off, ratio=0.7):
    """Compare one paired memory-on / memory-off run."""
    repeats = _repeat_subgoals(off)
    s_on, s_off = _steps_to(on), _steps_to(off)
    return {
        "seed": seed,
        "fresh_calls_on": on.fresh_calls,
        "fresh_calls_off": off.fresh_calls,
        "memory_hits_on": on.memory_hits,
        "call_ratio": on.fresh_calls / off.fresh_calls if off.fresh_calls else None,
        "repeat_subgoals": repeats,
        "eligible": bool(repeats),
        "passes": (not repeats) or on.fresh_calls <= ratio * off.fresh_calls,
        "steps_to_90_on": s_on,
        "steps_to_90_off": s_off,
        "speedup": (s_off / s_on) if (s_on and s_off) else None,
        "final_success_on": on.final_success,
        "final_success_off": off.final_success,
    }


def ablation_report(rows, ratio=0.7, out_dir=None):
    report = {"ratio_bound": ratio, "seeds": [r["seed"] for r in rows], "rows": rows,
              "all_pass": all(r["passes"] for r in rows)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "memory_ablation.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def ablate_memory(seeds, base=None, out_dir=None, ratio=0.7):
    """Paired AGPS runs with memory on and off; compares fresh agent calls and convergence."""
    base = baseline_config("agps", base)
    rows = []
    for seed in seeds:
        on, _ = run_training(replace(base, seed=seed, memory=True))
        off, _ = run_training(replace(base, seed=seed, memory=False))
        rows.append(ablation_row(seed, on, off, ratio))
    return ablation_report(rows, ratio, out_dir)


# -- Q landscape --------------------------------------------------------------

def insertion_slice(cfg, resolution=25, state=None):
    """y-z grid through the socket, restricted to the free space above the fixture."""
    state = envmod.reset(cfg, np.random.default_rng(0)) if state is None else state
    goal = np.asarray(cfg.goal, dtype=float)
    base = envmod.observe(state, cfg).vector().copy()
    base[0] = goal[0]
    base[3:6] = 0.0
    lo = np.asarray(cfg.workspace_lo)
    hi = np.asarray(cfg.workspace_hi)
    ys = np.linspace(max(lo[1], goal[1] - 0.06), min(hi[1], goal[1] + 0.06), resolution)
    zs = np.linspace(cfg.surface_z, min(hi[2], cfg.surface_z + 0.12), resolution)
    return SliceSpec(base, (1, 2), ys, zs, names=("y", "z"))


def oracle_box(cfg, run_cfg=None, rng=None):
    """The box a noiseless scripted oracle proposes for the insertion scene."""
    run_cfg = RunConfig(env=cfg) if run_cfg is None else run_cfg
    profile = task_profile(cfg, run_cfg.bbox_margins)
    oracle = ScriptedOracle(profile, cfg, replace(run_cfg.oracle, perception_noise_sigma=0.0,
                                                  keypoint_dropout_prob=0.0), rng)
    cam = envmod.camera(cfg)
    state = envmod.reset(cfg, np.random.default_rng(0))
    pts = []
    for kp in oracle.perceive(envmod.observe(state, cfg), cam):
        u, v = denormalize_pixel(kp, cam.width, cam.height)
        pts.append(deproject(cam, u, v, name=kp.name))
    return oracle.gen_bbox(pts)


def qmap_report(agent, cfg, resolution=25):
    """Q grid over the insertion slice plus the oracle box; reports argmax-to-centre distance."""
    if cfg.env.task != envmod.INSERTION:
        raise ConfigurationError("the Q-map slice is defined for the insertion task")
    spec = insertion_slice(cfg.env, resolution)
    land = q_landscape(agent, spec)
    box = oracle_box(cfg.env, cfg)
    ay, az = land.argmax()
    peak = np.array([cfg.env.goal[0], ay, az])
    dist = float(np.linalg.norm(peak - box.center))
    report = {
        "argmax": peak.tolist(),
        "bbox_3d": box.to_bbox3d(),
        "bbox_center": box.center.tolist(),
        "bbox_half_diagonal": float(box.half_diagonal),
        "distance": dist,
        "aligned": dist <= box.half_diagonal,
        "q_max": float(land.values.max()),
        "q_min": float(land.values.min()),
    }
    return report, land


def export_qmap(checkpoint, out_dir=None, resolution=25):
    agent, cfg = load_checkpoint(checkpoint)
    report, land = qmap_report(agent, cfg, resolution)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        land.to_csv(out / "qmap.csv")
        (out / "qmap_report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report, land


# -- evaluation ---------------------------------------------------------------

def eval_checkpoint(checkpoint, n_episodes=10, seed=0):
    agent, cfg = load_checkpoint(checkpoint)
    lim = np.asarray(cfg.env.action_limit)

    def policy(state):
        a = agent.policy_mean(envmod.observe(state, cfg.env).vector())[0]
        return EnvAction(np.clip(a, -1.0, 1.0) * lim)

    return evaluate(policy, n_episodes, seed=seed, cfg=cfg.env)


def eval_expert(cfg, n_episodes=10, seed=0):
    return evaluate(lambda s: envmod.expert_action(s, cfg), n_episodes, seed=seed, cfg=cfg)
