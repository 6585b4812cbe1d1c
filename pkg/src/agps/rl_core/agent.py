"""Entropy-regularised actor-critic with twin critics (SAC family) in NumPy."""
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError, NonFiniteLossError
from ..geometry import clamp_action_to_box
from ..state import EnvAction
from .nets import Adam, EnsembleMLP

LOG2PI = float(np.log(2 * np.pi))
SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    gamma: float = 0.97
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    tau: float = 0.005
    init_alpha: float = 0.1
    auto_alpha: bool = True
    target_entropy: float = None
    utd_ratio: int = 1
    min_buffer: int = 100
    hidden: int = 64
    log_std_min: float = -5.0
    log_std_max: float = 1.0
    capacity: int = 200_000
    dtype: str = "float32"
    # entropy term in the critic target; off keeps Q within the [0, 1] return range of a sparse task
    backup_entropy: bool = False
    # clip TD targets to this (lo, hi) return range; None disables
    target_bounds: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigurationError("gamma must lie in (0, 1)")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigurationError("batch size must be even and >= 2")
        if self.utd_ratio < 1 or self.min_buffer < 1:
            raise ConfigurationError("utd_ratio and min_buffer must be >= 1")
        if self.target_bounds is not None:
            lo, hi = (float(x) for x in self.target_bounds)
            if not lo < hi:
                raise ConfigurationError("target_bounds must be an increasing (lo, hi) pair")
            object.__setattr__(self, "target_bounds", (lo, hi))

    def fingerprint(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def squash(mean, raw_log_std, noise, lo, hi):
    """Reparameterised tanh-Gaussian sample and its log-density."""
    log_std = lo + 0.5 * (hi - lo) * (np.tanh(raw_log_std) + 1.0)
    std = np.exp(log_std)
    u = mean + std * noise
    a = np.tanh(u)
    logp = np.sum(-0.5 * noise**2 - log_std - 0.5 * LOG2PI - np.log(1.0 - a**2 + SQUASH_EPS), axis=-1)
    return a, logp, (log_std, std, u)


class SACAgent:
    def __init__(self, obs_dim, act_dim=6, cfg=None, rng=None, obs_center=None, obs_scale=None,
                 zero_final_critic=False):
        self.cfg = cfg or TrainConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.obs_center = np.zeros(obs_dim) if obs_center is None else np.asarray(obs_center, dtype=float)
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=float)
        h = self.cfg.hidden
        self.dtype = np.dtype(self.cfg.dtype)
        self.actor = EnsembleMLP((obs_dim, h, h, 2 * act_dim), 1, rng, dtype=self.dtype)
        self.critic = EnsembleMLP((obs_dim + act_dim, h, h, 1), 2, rng, zero_final=zero_final_critic,
                                  dtype=self.dtype)
        self.critic_target = self.critic.copy()
        self.log_alpha = np.log(self.cfg.init_alpha)
        self.target_entropy = -float(act_dim) if self.cfg.target_entropy is None else self.cfg.target_entropy
        self.actor_opt = Adam(self.actor.flat, self.cfg.actor_lr)
        self.critic_opt = Adam(self.critic.flat, self.cfg.critic_lr)
        self.alpha_opt = Adam(np.zeros(1), self.cfg.alpha_lr)
        self.n_updates = 0

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    def normalize(self, obs):
        return ((np.asarray(obs, dtype=float) - self.obs_center) / self.obs_scale).astype(self.dtype)

    # -- forward passes -----------------------------------------------------
    def _actor_out(self, obs_n, params=None):
        out, cache = self.actor.forward(obs_n, params)
        out = out[0]
        return out[:, : self.act_dim], out[:, self.act_dim:], cache

    def policy_mean(self, obs):
        """Deterministic action in [-1, 1]^act_dim for a batch of raw observations."""
        obs_n = self.normalize(np.atleast_2d(obs))
        mean, _, _ = self._actor_out(obs_n)
        return np.tanh(mean)

    def sample(self, obs, rng):
        obs_n = self.normalize(np.atleast_2d(obs))
        mean, raw, _ = self._actor_out(obs_n)
        noise = rng.standard_normal(mean.shape)
        a, _, _ = squash(mean, raw, noise, self.cfg.log_std_min, self.cfg.log_std_max)
        return a

    def q_values(self, obs, act, target=False):
        net = self.critic_target if target else self.critic
        x = np.concatenate([self.normalize(np.atleast_2d(obs)), np.atleast_2d(act)], axis=-1)
        q, _ = net.forward(x)
        return q[..., 0]

    # -- losses with explicit noise, used by update() and gradient checks ----
    def critic_loss(self, batch, next_noise, critic_params=None, grads=False):
        cfg = self.cfg
        obs_n = self.normalize(batch["obs"])
        next_n = self.normalize(batch["next_obs"])
        mean, raw, _ = self._actor_out(next_n)
        a_next, logp_next, _ = squash(mean, raw, next_noise, cfg.log_std_min, cfg.log_std_max)
        q_targ, _ = self.critic_target.forward(np.concatenate([next_n, a_next], axis=-1))
        q_targ = q_targ[..., 0].min(axis=0)
        if cfg.backup_entropy:
            q_targ = q_targ - self.alpha * logp_next
        y = batch["rew"] + cfg.gamma * (1.0 - batch["done"]) * q_targ
        if cfg.target_bounds is not None:
            y = np.clip(y, *cfg.target_bounds)
        params = self.critic.params if critic_params is None else critic_params
        q, cache = self.critic.forward(np.concatenate([obs_n, batch["act"]], axis=-1), params)
        err = q[..., 0] - y[None, :]
        n = err.shape[1]
        loss = 0.5 * np.sum(np.mean(err**2, axis=1))
        if not grads:
            return loss, y
        g, _ = self.critic.backward(cache, (err / n)[..., None], params)
        return loss, y, g

    def actor_loss(self, batch, noise, actor_params=None, grads=False):
        cfg = self.cfg
        obs_n = self.normalize(batch["obs"])
        mean, raw, cache = self._actor_out(obs_n, actor_params)
        a, logp, (log_std, std, u) = squash(mean, raw, noise, cfg.log_std_min, cfg.log_std_max)
        x = np.concatenate([obs_n, a], axis=-1)
        q, ccache = self.critic.forward(x)
        q = q[..., 0]
        which = np.argmin(q, axis=0)
        qmin = q[which, np.arange(q.shape[1])]
        alpha = self.alpha
        n = q.shape[1]
        loss = float(np.mean(alpha * logp - qmin))
        if not grads:
            return loss, logp
        # dQmin/da through the critic that attains the minimum
        gq = np.zeros_like(q)[..., None]
        gq[which, np.arange(n), 0] = 1.0
        _, gx = self.critic.backward(ccache, gq, need_input=True, need_params=False)
        dq_da = gx.sum(axis=0)[:, self.obs_dim:]
        one_m_a2 = 1.0 - a**2
        dlogp_du = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)
        dL_du = (-dq_da * one_m_a2 + alpha * dlogp_du) / n
        dL_dmean = dL_du
        dL_dlogstd = dL_du * std * noise - alpha / n
        dlogstd_draw = 0.5 * (cfg.log_std_max - cfg.log_std_min) * (1.0 - np.tanh(raw) ** 2)
        g_out = np.concatenate([dL_dmean, dL_dlogstd * dlogstd_draw], axis=-1)[None]
        g, _ = self.actor.backward(cache, g_out, actor_params)
        return loss, logp, g

    # -- training -----------------------------------------------------------
    def update(self, batch, rng, batch_id=None):
        """One critic step, one actor step, temperature step and target smoothing."""
        cfg = self.cfg
        dt = self.dtype
        batch = {k: (v.astype(dt) if k in ("act", "rew", "done") else v) for k, v in batch.items()}
        n = batch["obs"].shape[0]
        next_noise = rng.standard_normal((n, self.act_dim)).astype(dt)
        c_loss, _, c_grads = self.critic_loss(batch, next_noise, grads=True)
        if not np.isfinite(c_loss):
            raise NonFiniteLossError(f"critic loss is {c_loss}", batch_id)
        self.critic_opt.step(self.critic.flat, self.critic.grad_flat)
        noise = rng.standard_normal((n, self.act_dim)).astype(dt)
        a_loss, logp, a_grads = self.actor_loss(batch, noise, grads=True)
        if not np.isfinite(a_loss):
            raise NonFiniteLossError(f"actor loss is {a_loss}", batch_id)
        self.actor_opt.step(self.actor.flat, self.actor.grad_flat)
        alpha_loss = 0.0
        if cfg.auto_alpha:
            gap = float(np.mean(logp + self.target_entropy))
            alpha_loss = -self.log_alpha * gap
            la = np.array([self.log_alpha])
            self.alpha_opt.step(la, np.array([-gap]))
            self.log_alpha = float(la[0])
        tflat = self.critic_target.flat
        tflat *= 1.0 - cfg.tau
        tflat += cfg.tau * self.critic.flat
        self.n_updates += 1
        return {"critic": float(c_loss), "actor": float(a_loss), "alpha": self.alpha,
                "alpha_loss": float(alpha_loss), "entropy": float(-np.mean(logp))}

    # -- snapshots ----------------------------------------------------------
    def actor_snapshot(self):
        return PolicySnapshot(
            [p.copy() for p in self.actor.params], self.obs_center.copy(), self.obs_scale.copy(),
            self.act_dim, self.cfg.log_std_min, self.cfg.log_std_max, self.n_updates,
        )

    def state_arrays(self):
        arrays = {}
        for name, net in (("actor", self.actor), ("critic", self.critic), ("critic_target", self.critic_target)):
            for i, p in enumerate(net.params):
                arrays[f"{name}_{i}"] = p
        arrays["log_alpha"] = np.array([self.log_alpha])
        arrays["obs_center"] = self.obs_center
        arrays["obs_scale"] = self.obs_scale
        return arrays

    def load_arrays(self, arrays):
        for name, net in (("actor", self.actor), ("critic", self.critic), ("critic_target", self.critic_target)):
            for i in range(len(net.params)):
                net.params[i][...] = arrays[f"{name}_{i}"]
        self.log_alpha = float(arrays["log_alpha"][0])
        self.obs_center = np.array(arrays["obs_center"])
        self.obs_scale = np.array(arrays["obs_scale"])


class PolicySnapshot:
    """Frozen copy of actor weights published to the interaction loop."""

    def __init__(self, params, obs_center, obs_scale, act_dim, lo, hi, version=0):
        self.params = params
        self.obs_center = obs_center
        self.obs_scale = obs_scale
        self.act_dim = act_dim
        self.lo, self.hi = lo, hi
        self.version = version

    def _forward(self, obs):
        h = ((np.asarray(obs, dtype=float) - self.obs_center) / self.obs_scale)[None, None, :]
        n = len(self.params) // 2
        for i in range(n):
            h = np.matmul(h, self.params[2 * i]) + self.params[2 * i + 1]
            if i < n - 1:
                h = np.maximum(h, 0.0)
        out = h[0, 0]
        return out[: self.act_dim], out[self.act_dim:]

    def __call__(self, obs, rng=None, deterministic=False):
        mean, raw = self._forward(obs)
        if deterministic or rng is None:
            return np.tanh(mean)
        a, _, _ = squash(mean, raw, rng.standard_normal(self.act_dim), self.lo, self.hi)
        return a


def act(policy, obs, constraint=None, tcp_pos=None, mode="stochastic", rng=None, action_limit=None):
    """Policy action scaled to the env limits, clipped into ``constraint`` when one is active."""
    deterministic = mode == "deterministic"
    if not deterministic and rng is None:
        raise ValueError("stochastic mode needs an rng")
    a = policy(obs, rng, deterministic) if isinstance(policy, PolicySnapshot) else (
        policy.policy_mean(obs)[0] if deterministic else policy.sample(obs, rng)[0]
    )
    lim = np.ones(len(a)) if action_limit is None else np.asarray(action_limit, dtype=float)
    delta = np.clip(a, -1.0, 1.0) * lim
    if constraint is not None:
        delta = clamp_action_to_box(tcp_pos, delta, constraint)
    return EnvAction(delta)
