"""Optimal-transport deviation index between embedded trajectories.

Two solvers are provided: an exact one for short sequences (uniform marginals
make the transport LP integral after rescaling, so it reduces to an assignment
problem) and an entropic Sinkhorn solver with marginal rounding for long ones
(kernel-space scaling, falling back to log-domain updates on overflow).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, DimensionError, EmptyInputError, SolverSizeError

EXACT_SIZE_CAP = 16


@dataclass(frozen=True)
class DetectorConfig:
    epsilon: float = 1e-2
    max_iters: int = 1000
    convergence_tol: float = 1e-6
    eval_stride: int = 10
    min_prefix: int = 1
    percentile: float = 95.0
    exact_size_cap: int = EXACT_SIZE_CAP

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_iters < 1 or self.eval_stride < 1 or self.min_prefix < 1:
            raise ConfigurationError("max_iters, eval_stride and min_prefix must be >= 1")
        if not self.convergence_tol > 0:
            raise ConfigurationError("convergence_tol must be positive")
        if not 0 < self.percentile <= 100:
            raise ConfigurationError("percentile must lie in (0, 100]")


@dataclass
class EmbeddedTrajectory:
    embeddings: np.ndarray
    label: object = None

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=float)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise DimensionError("trajectory needs a non-empty (L, d) embedding array")
        self.embeddings = emb

    def __len__(self):
        return self.embeddings.shape[0]

    def prefix(self, t):
        return EmbeddedTrajectory(self.embeddings[:t], self.label)


@dataclass
class TransportPlan:
    coupling: np.ndarray
    total_cost: float
    converged: bool = True
    n_iters: int = 0


@dataclass(frozen=True)
class FloatIndex:
    value: float
    argmin_demo: object
    distances: tuple = field(default=(), compare=False)


def _as_array(traj):
    if isinstance(traj, EmbeddedTrajectory):
        return traj.embeddings
    arr = np.asarray(traj, dtype=float)
    if arr.ndim != 2:
        raise DimensionError("expected an (L, d) embedding array")
    return arr


def cosine_cost(a, b):
    """Cost matrix ``1 - <a_i, b_j>`` for unit-norm embeddings, clipped to [0, 2]."""
    xa, xb = _as_array(a), _as_array(b)
    if xa.shape[1] != xb.shape[1]:
        raise DimensionError(f"embedding dimensions differ: {xa.shape[1]} vs {xb.shape[1]}")
    return np.clip(1.0 - xa @ xb.T, 0.0, 2.0)


def ot_exact(cost, cap=EXACT_SIZE_CAP):
    """Exact uniform-marginal OT.

    Scaling the marginals by ``lcm(m, n)`` gives integer supplies, so an optimal
    vertex is an assignment on the graph with each row repeated ``lcm/m`` times
    and each column ``lcm/n`` times.
    """
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if m > cap or n > cap:
        raise SolverSizeError(
            f"exact solver limited to {cap}x{cap}, got {m}x{n}; use ot_sinkhorn instead"
        )
    big = m * n // math.gcd(m, n)
    rep_r, rep_c = big // m, big // n
    expanded = np.repeat(np.repeat(cost, rep_r, axis=0), rep_c, axis=1)
    rows, cols = linear_sum_assignment(expanded)
    counts = np.zeros((m, n))
    np.add.at(counts, (rows // rep_r, cols // rep_c), 1.0)
    coupling = counts / big
    total = float(np.sum(cost * coupling))
    return TransportPlan(coupling, total, True, 0)


def _lse(x, axis):
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):  # all -inf rows (padding) give log(0) = -inf
        out = np.log(np.sum(np.exp(x - mx), axis=axis, keepdims=True)) + mx
    return np.squeeze(out, axis=axis)


def _sinkhorn_log(cost, log_a, log_b, eps, max_iters, tol):
    """Batched log-domain Sinkhorn on same-shape problems ``cost`` (B, m, n).

    Each problem stops at its own convergence check, so its result does not
    depend on what else is in the batch.
    """
    f = np.zeros(log_a.shape)
    g = np.zeros(log_b.shape)
    a = np.exp(log_a)
    # annealed warm start: large eps first, then down to the target
    stages = []
    e = max(1.0, eps)
    while e > eps:
        stages.append(e)
        e /= 4.0
    for e in stages:
        for _ in range(10):
            f = e * (log_a - _lse((g[:, None, :] - cost) / e, axis=2))
            g = e * (log_b - _lse((f[:, :, None] - cost) / e, axis=1))
    converged = np.zeros(len(cost), dtype=bool)
    iters = np.zeros(len(cost), dtype=int)
    live = np.arange(len(cost))
    it = 0
    while it < max_iters and live.size:
        c, la, lb = cost[live], log_a[live], log_b[live]
        fl = eps * (la - _lse((g[live][:, None, :] - c) / eps, axis=2))
        gl = eps * (lb - _lse((fl[:, :, None] - c) / eps, axis=1))
        f[live], g[live] = fl, gl
        it += 1
        iters[live] = it
        if it % 5 == 0:
            rows = np.exp(_lse((fl[:, :, None] + gl[:, None, :] - c) / eps, axis=2))
            done = np.abs(rows - a[live]).sum(axis=1) < tol
            converged[live[done]] = True
            live = live[~done]
    plan = np.exp((f[:, :, None] + g[:, None, :] - cost) / eps)
    return plan, converged, iters


def round_to_marginals(plan, a, b):
    """Project a nonnegative matrix onto the transport polytope U(a, b)."""
    x = plan * np.minimum(a / np.maximum(plan.sum(axis=1), 1e-300), 1.0)[:, None]
    x = x * np.minimum(b / np.maximum(x.sum(axis=0), 1e-300), 1.0)[None, :]
    # both residuals are nonnegative in exact arithmetic
    err_a = np.maximum(a - x.sum(axis=1), 0.0)
    err_b = np.maximum(b - x.sum(axis=0), 0.0)
    mass = err_a.sum()
    if mass > 0:
        x = x + np.outer(err_a, err_b) / mass
    return x


def ot_sinkhorn(cost, cfg=None):
    """Entropic OT, rounded so the marginals are exact; reports ``converged``."""
    cfg = cfg or DetectorConfig()
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    plans, converged, iters = _sinkhorn_batch([cost], cfg)
    plan = plans[0]
    return TransportPlan(plan, float(np.sum(cost * plan)), bool(converged[0]), int(iters[0]))


def _sinkhorn_kernel(cost, a, b, eps, max_iters, tol):
    """Scaling iterations on ``exp(-C/eps)`` for same-shape problems (B, m, n).

    Returns ``(plan, converged, iters, ok)``; ``ok`` is False where the scalings
    overflowed, and those plans must be recomputed in the log domain.
    """
    K = np.exp(-cost / eps)
    Kt = K.transpose(0, 2, 1)
    u = np.ones_like(a)
    v = np.ones_like(b)
    converged = np.zeros(len(cost), dtype=bool)
    ok = np.ones(len(cost), dtype=bool)
    iters = np.zeros(len(cost), dtype=int)
    live = np.arange(len(cost))
    it = 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        while it < max_iters and live.size:
            # re-slice only when the live set changes
            Kl, Ktl, al, bl = K[live], Kt[live], a[live, :, None], b[live, :, None]
            ul = u[live, :, None]
            while it < max_iters:
                vl = bl / (Ktl @ ul)
                ul = al / (Kl @ vl)
                it += 1
                if it % 10 == 0:
                    break
            u[live], v[live] = ul[..., 0], vl[..., 0]
            iters[live] = it
            if it % 10:
                break
            finite = np.isfinite(ul[..., 0]).all(axis=1) & np.isfinite(vl[..., 0]).all(axis=1)
            cols = (vl * (Ktl @ ul))[..., 0]
            done = finite & (np.abs(cols - bl[..., 0]).sum(axis=1) < tol)
            ok[live[~finite]] = False
            converged[live[done]] = True
            live = live[finite & ~done]
        plan = u[:, :, None] * K * v[:, None, :]
    ok &= np.isfinite(plan).all(axis=(1, 2))
    return plan, converged, iters, ok


def _sinkhorn_batch(costs, cfg):
    """Rounded Sinkhorn plans for a list of cost matrices.

    Problems of equal shape share vectorised iterations; there is no padding,
    and each problem converges on its own, so every plan is what a solo solve
    would give.
    """
    eps, iters_cap, tol = cfg.epsilon, cfg.max_iters, cfg.convergence_tol
    plans = [None] * len(costs)
    converged = np.zeros(len(costs), dtype=bool)
    iters = np.zeros(len(costs), dtype=int)
    groups = {}
    for k, c in enumerate(costs):
        groups.setdefault(c.shape, []).append(k)
    for (m, n), idx in groups.items():
        stack = np.stack([costs[k] for k in idx])
        a = np.full((len(idx), m), 1.0 / m)
        b = np.full((len(idx), n), 1.0 / n)
        raw, conv, its, ok = _sinkhorn_kernel(stack, a, b, eps, iters_cap, tol)
        if not ok.all():
            bad = np.flatnonzero(~ok)
            raw[bad], conv[bad], its[bad] = _sinkhorn_log(stack[bad], np.log(a[bad]), np.log(b[bad]), eps, iters_cap, tol)
        for pos, k in enumerate(idx):
            plans[k] = round_to_marginals(raw[pos], a[pos], b[pos])
            converged[k], iters[k] = conv[pos], its[pos]
    return plans, converged, iters


def ot_distance(cost, cfg=None):
    """Exact when both sides fit under the cap, Sinkhorn otherwise."""
    cfg = cfg or DetectorConfig()
    cost = np.asarray(cost, dtype=float)
    if max(cost.shape) <= cfg.exact_size_cap:
        return ot_exact(cost, cfg.exact_size_cap).total_cost
    return ot_sinkhorn(cost, cfg).total_cost


def float_index(rollout, experts, cfg=None):
    """Minimum transport distance from ``rollout`` to any expert trajectory.

    Ties go to the lowest expert position.
    """
    cfg = cfg or DetectorConfig()
    if len(experts) == 0:
        raise EmptyInputError("float_index needs at least one expert trajectory")
    roll = _as_array(rollout)
    if roll.shape[0] < cfg.min_prefix:
        raise ValueError(f"rollout length {roll.shape[0]} below min_prefix {cfg.min_prefix}")
    cap = cfg.exact_size_cap
    dists = np.empty(len(experts))
    long_idx, long_costs = [], []
    for k, e in enumerate(experts):
        c = cosine_cost(e, roll)
        if max(c.shape) <= cap:
            dists[k] = ot_exact(c, cap).total_cost
        else:
            long_idx.append(k)
            long_costs.append(c)
    if long_costs:
        plans, _, _ = _sinkhorn_batch(long_costs, cfg)
        for k, c, p in zip(long_idx, long_costs, plans):
            dists[k] = float(np.sum(c * p))
    best = int(np.argmin(dists))
    labels = [getattr(e, "label", None) for e in experts]
    label = labels[best] if labels[best] is not None else best
    return FloatIndex(float(dists[best]), label, tuple(float(d) for d in dists))


def calibrate_threshold(successful_indices, cfg=None, percentile=None):
    """Nearest-rank percentile: the value at 1-based rank ceil(p/100 * N)."""
    values = sorted(float(v) for v in successful_indices)
    if not values:
        raise EmptyInputError("cannot calibrate a threshold from an empty list")
    p = percentile if percentile is not None else (cfg or DetectorConfig()).percentile
    if not 0 < p <= 100:
        raise ConfigurationError("percentile must lie in (0, 100]")
    rank = math.ceil(round(p * len(values) / 100.0, 9))
    return values[max(rank, 1) - 1]


def should_trigger(lambda_t, threshold):
    if not (math.isfinite(lambda_t) and math.isfinite(threshold)):
        raise ValueError("deviation and threshold must be finite")
    return lambda_t > threshold
