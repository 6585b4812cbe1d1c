"""Files a run leaves behind: metrics CSV, episode CSV, audit log, report, checkpoint."""
import csv
import io
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

CHECKPOINT_FIELDS = ("checkpoint", "env_step", "episodes", "success_rate")
EPISODE_FIELDS = ("episode", "start_step", "length", "success", "triggers", "guidance_steps", "pruned", "lambda_max")


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_csv(metrics):
    rows = [(i, s, e, repr(float(r))) for i, (s, e, r) in enumerate(metrics.checkpoints)]
    return _csv(rows, CHECKPOINT_FIELDS)


def episodes_csv(metrics):
    rows = []
    for ep in metrics.episodes:
        rows.append([ep[k] if k != "lambda_max" else repr(float(ep[k])) for k in EPISODE_FIELDS])
    return _csv(rows, EPISODE_FIELDS)


def audit_jsonl(records):
    return "".join(json.dumps(r, sort_keys=True, default=_default) + "\n" for r in records)


def _default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def write_outputs(out_dir, metrics, run=None, extra=None):
    """Write ``metrics.csv``, ``episodes.csv``, ``audit.jsonl`` and ``report.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(metrics))
    (out / "episodes.csv").write_text(episodes_csv(metrics))
    (out / "audit.jsonl").write_text(audit_jsonl(run.audit if run is not None else metrics.triggers))
    report = metrics.summary()
    if run is not None:
        report["config"] = run.cfg.to_json()
    if extra:
        report.update(extra)
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_default) + "\n")
    if run is not None:
        save_checkpoint(out / "checkpoint.npz", run)
    return out


def save_checkpoint(path, run):
    arrays = dict(run.agent_rl.state_arrays())
    arrays["config_json"] = np.array(json.dumps(run.cfg.to_json(), sort_keys=True))
    arrays["config_fingerprint"] = np.array(run.cfg.fingerprint())
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild ``(agent, config_json)`` from a checkpoint written by :func:`save_checkpoint`."""
    from ..env import obs_dim
    from ..rl_core import SACAgent

    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    try:
        cfg = config_from_json(json.loads(str(arrays["config_json"])))
        agent = SACAgent(obs_dim(cfg.env), 6, cfg.train)
        agent.load_arrays(arrays)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a usable checkpoint ({exc!r})") from exc
    return agent, cfg


def config_from_json(d):
    from ..env import _cfg_from_json
    from ..ot_float import DetectorConfig
    from ..rl_core import TrainConfig
    from ..supervisor import OracleConfig
    from .config import RunConfig

    d = dict(d)
    d["env"] = _cfg_from_json(d["env"])
    d["detector"] = DetectorConfig(**d["detector"])
    d["train"] = TrainConfig(**d["train"])
    d["oracle"] = OracleConfig(**d["oracle"])
    if d.get("bbox_margins") is not None:
        d["bbox_margins"] = tuple(d["bbox_margins"])
    return RunConfig(**d)
