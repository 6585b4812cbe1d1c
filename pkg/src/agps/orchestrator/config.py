"""Run configuration and the metrics a run produces."""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

from ..env import EnvConfig, insertion_config
from ..errors import ConfigurationError
from ..ot_float import DetectorConfig
from ..rl_core import TrainConfig
from ..supervisor import OracleConfig

AGENT_KINDS = ("oracle", "remote", "none")
PERSISTENCE = ("episode", "run")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=insertion_config)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    agent: str = "oracle"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    remote_url: str = None
    remote_timeout: float = 30.0
    on_agent_failure: str = "fallback"  # or "abort"
    guidance: bool = True
    pruning: bool = True
    memory: bool = True
    # "episode": a box lasts until the episode ends; "run": it stays for the rest of training
    bbox_persistence: str = "episode"
    bbox_margins: tuple = None
    perception_fallback: str = "guidance"  # or "skip"
    guidance_to_demo_buffer: bool = False
    eval_checkpoints: int = 4
    eval_episodes: int = 10
    budget: int = 30_000
    seed: int = 0
    n_demos: int = 20
    d_emb: int = 32
    threshold_refresh_every: int = 20
    threshold_min_successes: int = 5
    cooldown_strides: int = 1
    # skip detector checks until the prefix is as long as the longest demonstration
    min_prefix_from_demos: bool = True
    waypoint_step_cap: int = 40
    threaded: bool = False
    name: str = "agps"

    def __post_init__(self):
        if self.budget <= 0:
            raise ConfigurationError("budget must be positive")
        if self.agent not in AGENT_KINDS:
            raise ConfigurationError(f"agent must be one of {AGENT_KINDS}")
        if self.bbox_persistence not in PERSISTENCE:
            raise ConfigurationError(f"bbox_persistence must be one of {PERSISTENCE}")
        if self.on_agent_failure not in ("fallback", "abort"):
            raise ConfigurationError("on_agent_failure must be 'fallback' or 'abort'")
        if self.perception_fallback not in ("guidance", "skip"):
            raise ConfigurationError("perception_fallback must be 'guidance' or 'skip'")
        if self.eval_episodes < 1 or self.eval_checkpoints < 0:
            raise ConfigurationError("eval cadence must be positive")
        if self.agent == "remote" and not self.remote_url:
            raise ConfigurationError("remote agent needs remote_url")
        if self.n_demos < 1:
            raise ConfigurationError("need at least one demonstration")

    @property
    def interventions(self):
        return self.agent != "none" and (self.guidance or self.pruning)

    def to_json(self):
        return _jsonable(self)

    def fingerprint(self):
        text = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        """``replace`` that also accepts dotted keys for nested configs, e.g. ``train.hidden``."""
        nested = {}
        flat = {}
        for k, v in kw.items():
            if "." in k:
                head, tail = k.split(".", 1)
                nested.setdefault(head, {})[tail] = v
            else:
                flat[k] = v
        for head, sub in nested.items():
            flat[head] = replace(flat.get(head, getattr(self, head)), **sub)
        return replace(self, **flat)


def _jsonable(obj):
    if is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_jsonable(x) for x in obj]
    return obj


@dataclass
class RunMetrics:
    config_fingerprint: str = ""
    # (env_step, episodes, success_rate) per checkpoint
    checkpoints: list = field(default_factory=list)
    # one dict per finished training episode
    episodes: list = field(default_factory=list)
    # (env_step, lambda, threshold, triggered)
    lambdas: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    triggers: list = field(default_factory=list)
    fresh_calls: int = 0
    memory_hits: int = 0
    guidance_plans: int = 0
    agent_calls: dict = field(default_factory=dict)
    latency_steps: int = 0
    env_steps: int = 0
    updates: int = 0
    wall_clock: float = 0.0
    aborted: bool = False
    error: str = ""

    @property
    def final_success(self):
        return self.checkpoints[-1][2] if self.checkpoints else 0.0

    def triggers_per_10(self):
        """Trigger counts in consecutive blocks of 10 training episodes."""
        counts = [ep["triggers"] for ep in self.episodes]
        return [sum(counts[i: i + 10]) for i in range(0, len(counts), 10)]

    def final_triggers(self, n=10):
        return sum(ep["triggers"] for ep in self.episodes[-n:])

    def pruning_triggers(self):
        return [t for t in self.triggers if t["mode"] == "exploration_pruning"]

    def summary(self):
        return {
            "final_success": self.final_success,
            "checkpoints": [list(c) for c in self.checkpoints],
            "episodes": len(self.episodes),
            "triggers": len(self.triggers),
            "final_triggers": self.final_triggers(),
            "triggers_per_10": self.triggers_per_10(),
            "fresh_calls": self.fresh_calls,
            "memory_hits": self.memory_hits,
            "guidance_plans": self.guidance_plans,
            "agent_calls": dict(self.agent_calls),
            "latency_steps": self.latency_steps,
            "env_steps": self.env_steps,
            "updates": self.updates,
            "wall_clock": self.wall_clock,
            "aborted": self.aborted,
            "error": self.error,
            "config_fingerprint": self.config_fingerprint,
        }


def nonincreasing_after_peak(series, window=3):
    """True if the moving average (``window``) never rises after its maximum."""
    if len(series) < window:
        return True
    smooth = [sum(series[i: i + window]) / window for i in range(len(series) - window + 1)]
    peak = max(range(len(smooth)), key=lambda i: (smooth[i], -i))
    tail = smooth[peak:]
    return all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
