"""The training loop: policy learning plus FLOAT-gated agent interventions.

``run_training`` drives everything.  In single-threaded mode the learner
performs ``utd_ratio`` updates after every environment step, which makes a run
a pure function of its config.  In threaded mode a learner thread trains
continuously and publishes actor snapshots that the interaction loop picks up.
"""
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import env as envmod
from ..encoding import make_encoder
from ..errors import AGPSError, PerceptionEmptyError, ProtocolError, RunAborted
from ..geometry import SpatialConstraint, WorldPoint, clamp_action_to_box, contains, denormalize_pixel, deproject
from ..ot_float import calibrate_threshold, float_index, should_trigger
from ..primitives import reached, resolve, track_step, gripper_action
from ..rl_core import ReplayBuffer, SACAgent, sample_batch
from ..state import EnvAction
from ..supervisor import (
    GUIDE,
    PRUNE,
    EpisodicMemory,
    InterventionMode,
    ScriptedOracle,
    Subgoal,
    check_memory,
    digest,
    make_agent,
    record_outcome,
    task_profile,
)
from .config import RunMetrics


@dataclass
class Event:
    kind: str
    data: dict = field(default_factory=dict)


@dataclass
class Episode:
    """Mutable per-episode bookkeeping owned by the interaction loop."""

    index: int
    start_step: int
    state: object
    obs: object
    embeddings: list = field(default_factory=list)
    length: int = 0
    triggers: int = 0
    guidance_steps: int = 0
    box: SpatialConstraint = None
    box_subgoal: Subgoal = None
    box_fresh: bool = False
    next_eval: int = 0
    lambda_max: float = 0.0
    done: bool = False
    success: bool = False


def _streams(seed):
    names = ("env", "policy", "learn", "agent", "demo", "eval", "init")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def demo_embeddings(demos, encoder):
    return [encoder.encode_vectors(arr) for arr in demos.observation_arrays()]


def prefix_points(length, stride, min_prefix=1):
    """Prefix lengths at which the detector looks at a trajectory of ``length`` observations."""
    pts = [t for t in range(stride, length, stride) if t >= min_prefix]
    if length >= min_prefix:
        pts.append(length)
    return pts


def loo_indices(embedded, cfg):
    """Leave-one-out FLOAT indices of demonstration prefixes."""
    out = []
    for k, traj in enumerate(embedded):
        others = embedded[:k] + embedded[k + 1:]
        if not others:
            continue
        for t in prefix_points(len(traj), cfg.eval_stride, cfg.min_prefix):
            out.append(float_index(traj[:t], others, cfg).value)
    return out


class Run:
    """All state of one training run.  Use :func:`run_training` rather than this directly."""

    def __init__(self, cfg, demos=None, agent=None):
        self.cfg = cfg
        ecfg = cfg.env
        self.ecfg = ecfg
        self.rngs = _streams(cfg.seed)
        self.metrics = RunMetrics(config_fingerprint=cfg.fingerprint())
        self.demos = demos if demos is not None else envmod.generate_demos(ecfg, cfg.n_demos, self.rngs["demo"])
        self.obs_dim = envmod.obs_dim(ecfg)
        self.limit = np.asarray(ecfg.action_limit, dtype=float)
        center, scale = envmod.obs_normalizer(ecfg)
        self.agent_rl = SACAgent(self.obs_dim, 6, cfg.train, self.rngs["init"], center, scale)
        self.demo_buf = ReplayBuffer(max(1000, 20 * len(self.demos) * ecfg.horizon // 10), self.obs_dim)
        self.online_buf = ReplayBuffer(cfg.train.capacity, self.obs_dim)
        for tr in self.demos.transitions():
            tr.action = tr.action / self.limit
            self.demo_buf.add_transition(tr)
        self.encoder = make_encoder(cfg.seed, self.obs_dim, cfg.d_emb, center, scale)
        self.demo_emb = demo_embeddings(self.demos, self.encoder)
        self.threshold = calibrate_threshold(loo_indices(self.demo_emb, cfg.detector), cfg.detector)
        self.detector = cfg.detector
        if cfg.min_prefix_from_demos:
            # a prefix shorter than the longest demo is compared against complete demos,
            # which inflates its transport cost; wait until it could be complete
            longest = max(len(e) for e in self.demo_emb)
            self.detector = replace(cfg.detector, min_prefix=max(cfg.detector.min_prefix, longest))
        self.metrics.thresholds.append((0, self.threshold, "demos"))
        self.camera = envmod.camera(ecfg)
        self.profile = task_profile(ecfg, cfg.bbox_margins)
        if agent is None and cfg.interventions:
            agent = make_agent(cfg.agent, ecfg, self.profile, cfg.oracle, self.rngs["agent"],
                               cfg.remote_url, cfg.remote_timeout)
        self.agent = agent
        self.fallback = None
        if cfg.interventions and cfg.on_agent_failure == "fallback" and not isinstance(agent, ScriptedOracle):
            self.fallback = ScriptedOracle(self.profile, ecfg, cfg.oracle, self.rngs["agent"])
        self.memory = EpisodicMemory()
        self.run_box = None  # persistent box when bbox_persistence == "run"
        self.audit = []
        self.success_pool = {}  # episode index -> FLOAT indices of its prefixes
        self.env_steps = 0
        self.episode = None
        self.episode_count = 0
        self._snapshot = None
        self._snap_lock = threading.Lock()
        self._stop = threading.Event()
        self.learner_error = None
        self.eval_steps = self._eval_schedule()

    # -- schedule -------------------------------------------------------------
    def _eval_schedule(self):
        n = self.cfg.eval_checkpoints
        steps = [round(self.cfg.budget * k / (n + 1)) for k in range(1, n + 1)]
        return sorted(set(s for s in steps if 0 < s < self.cfg.budget)) + [self.cfg.budget]

    # -- policy access ----------------------------------------------------------
    def policy_action(self, obs_vec, deterministic=False):
        """Normalised action in [-1, 1]^6 from the live agent or the latest snapshot."""
        if self.cfg.threaded:
            with self._snap_lock:
                snap = self._snapshot
            return snap(obs_vec, self.rngs["policy"], deterministic)
        if deterministic:
            return self.agent_rl.policy_mean(obs_vec)[0]
        return self.agent_rl.sample(obs_vec, self.rngs["policy"])[0]

    # -- episodes -------------------------------------------------------------
    def start_episode(self):
        state = envmod.reset(self.ecfg, self.rngs["env"])
        obs = envmod.observe(state, self.ecfg)
        ep = Episode(self.episode_count, self.env_steps, state, obs)
        ep.embeddings.append(self.encoder(obs))
        stride = self.detector.eval_stride
        ep.next_eval = -(-self.detector.min_prefix // stride) * stride
        if self.run_box is not None:
            ep.box, ep.box_subgoal = self.run_box
        self.episode = ep
        return ep

    def end_episode(self):
        ep = self.episode
        cfg = self.cfg
        if ep.box_subgoal is not None and cfg.memory and (ep.box_fresh or ep.box_subgoal.id in self.memory):
            record_outcome(self.memory, ep.box_subgoal, ep.box, ep.success)
        if ep.success and cfg.interventions:
            # only prefixes the online detector could have seen: stride points, not the end
            emb = np.asarray(ep.embeddings)
            det = self.detector
            pts = [t for t in range(det.eval_stride, len(emb), det.eval_stride) if t >= det.min_prefix]
            self.success_pool[ep.index] = [float_index(emb[:t], self.demo_emb, det).value for t in pts]
        self.metrics.episodes.append({
            "episode": ep.index,
            "start_step": ep.start_step,
            "length": ep.length,
            "success": bool(ep.success),
            "triggers": ep.triggers,
            "guidance_steps": ep.guidance_steps,
            "pruned": ep.box is not None,
            "lambda_max": ep.lambda_max,
        })
        self.episode_count += 1
        if self.episode_count % cfg.threshold_refresh_every == 0:
            self._refresh_threshold()
        self.episode = None

    def _refresh_threshold(self):
        pool = [v for vals in self.success_pool.values() for v in vals]
        if len(self.success_pool) >= self.cfg.threshold_min_successes and pool:
            self.threshold = calibrate_threshold(pool, self.cfg.detector)
            self.metrics.thresholds.append((self.env_steps, self.threshold, "successes"))

    # -- environment interaction --------------------------------------------------
    def env_step(self, action, source):
        ep = self.episode
        res = envmod.step(ep.state, action, self.ecfg, self.rngs["env"])
        nxt = envmod.observe(res.next, self.ecfg)
        buf = self.demo_buf if (source == "guidance" and self.cfg.guidance_to_demo_buffer) else self.online_buf
        buf.add(ep.obs.vector(), action.delta / self.limit, res.reward, nxt.vector(), res.done,
                res.success, source, ep.index)
        ep.state, ep.obs = res.next, nxt
        ep.embeddings.append(self.encoder(nxt))
        ep.length += 1
        ep.done, ep.success = res.done, res.success
        if source == "guidance":
            ep.guidance_steps += 1
        self.env_steps += 1
        self.after_env_step()
        return res

    def after_env_step(self):
        if not self.cfg.threaded:
            self.learn(self.cfg.train.utd_ratio)
        if self.eval_steps and self.env_steps >= self.eval_steps[0]:
            self.eval_steps.pop(0)
            rate = evaluate(self, self.cfg.eval_episodes, seed=self.cfg.seed * 7919 + len(self.metrics.checkpoints))
            self.metrics.checkpoints.append((self.env_steps, self.episode_count, rate))

    def learn(self, n):
        for _ in range(n):
            batch = sample_batch(self.demo_buf, self.online_buf, self.cfg.train.batch_size,
                                 self.rngs["learn"], self.cfg.train.min_buffer)
            if batch is None:
                return
            self.agent_rl.update(batch, self.rngs["learn"], self.metrics.updates)
            self.metrics.updates += 1

    # -- detection --------------------------------------------------------------
    def detector_due(self):
        ep = self.episode
        cfg = self.cfg
        if not cfg.interventions or ep.done:
            return False
        t = len(ep.embeddings)
        if t < ep.next_eval or t < self.detector.min_prefix:
            return False
        if ep.box is not None:
            # exploration is already confined; re-triggering would only re-issue the box
            return False
        return True

    def detect(self):
        ep = self.episode
        stride = self.detector.eval_stride
        t = len(ep.embeddings)
        lam = float_index(np.asarray(ep.embeddings), self.demo_emb, self.detector).value
        ep.next_eval = (t // stride + 1) * stride
        ep.lambda_max = max(ep.lambda_max, lam)
        fire = should_trigger(lam, self.threshold)
        self.metrics.lambdas.append((self.env_steps, lam, self.threshold, fire))
        return lam, fire

    # -- agent calls with fallback -------------------------------------------------
    def _call(self, name, *args):
        try:
            return getattr(self.agent, name)(*args)
        except ProtocolError as exc:
            if self.fallback is None:
                raise RunAborted(f"agent protocol failure in {name}: {exc}", self.metrics) from exc
            self.audit.append({"event": "fallback", "op": name, "error": str(exc)})
            return getattr(self.fallback, name)(*args)

    def perceive_world(self):
        """Perceived static keypoints deprojected into the base frame (one retry on empty)."""
        ep = self.episode
        for attempt in range(2):
            try:
                kps = self._call("perceive", ep.obs, self.camera)
                break
            except PerceptionEmptyError:
                if attempt == 1:
                    raise
        out = []
        for kp in kps:
            u, v = denormalize_pixel(kp, self.camera.width, self.camera.height)
            out.append(deproject(self.camera, u, v, name=kp.name))
        return out

    # -- interventions -----------------------------------------------------------
    def intervene(self, lam):
        ep = self.episode
        cfg = self.cfg
        subgoal = Subgoal(ep.state.phase)
        if cfg.guidance and cfg.pruning:
            mode = self._call("decide_mode", ep.obs, subgoal).mode
        else:
            mode = GUIDE if cfg.guidance else PRUNE
        ep.triggers += 1
        record = {
            "step": self.env_steps, "episode": ep.index, "t": ep.length, "lambda": lam,
            "threshold": self.threshold, "mode": mode.value, "subgoal": subgoal.id,
            "memory_hit": False, "fresh": False,
        }
        self.metrics.latency_steps += getattr(getattr(self.agent, "config", None), "latency_steps", 0)
        events = [Event("trigger", record)]
        if mode == PRUNE:
            events += self.prune(subgoal, record)
        else:
            events += self.guide(record)
        self.metrics.triggers.append(record)
        self.audit.append(record)
        cool = cfg.cooldown_strides * cfg.detector.eval_stride
        ep.next_eval = max(ep.next_eval, len(ep.embeddings) + cool)
        return events

    def prune(self, subgoal, record):
        ep = self.episode
        cfg = self.cfg
        box = check_memory(self.memory, subgoal) if cfg.memory else None
        if box is not None:
            self.metrics.memory_hits += 1
            record["memory_hit"] = True
            ep.box_fresh = False
        else:
            try:
                pts = self.perceive_world()
            except PerceptionEmptyError:
                record["perception"] = "empty"
                if cfg.perception_fallback == "guidance" and cfg.guidance:
                    return self.guide(record)
                return [Event("skipped", record)]
            box = self._call("gen_bbox", pts, self.profile)
            self.metrics.fresh_calls += 1
            record["fresh"] = True
            record["payload"] = digest([wp.p.tolist() for wp in pts])
            ep.box_fresh = True
        record["bbox_3d"] = box.to_bbox3d()
        ep.box, ep.box_subgoal = box, subgoal
        if cfg.bbox_persistence == "run":
            self.run_box = (box, subgoal)
        events = [Event("prune", {"box": box.to_bbox3d()})]
        if not contains(box, ep.state.tcp.position):
            events.append(self.enter_box(box))
        return events

    def enter_box(self, box):
        """Guided straight-line move to the nearest interior point of ``box``."""
        ep = self.episode
        inner = np.minimum(0.002, box.size / 4)
        target = np.clip(ep.state.tcp.position, box.lo + inner, box.hi - inner)
        n = 0
        while not ep.done and not contains(box, ep.state.tcp.position) and n < self.cfg.waypoint_step_cap:
            if self.env_steps >= self.cfg.budget:
                break
            delta = np.zeros(6)
            delta[:3] = np.clip(target - ep.state.tcp.position, -self.limit[:3], self.limit[:3])
            self.env_step(EnvAction(delta), "guidance")
            n += 1
        return Event("enter_box", {"steps": n})

    def _keypoint_map(self, static):
        kps = {wp.name: wp.p for wp in static}
        kps.update(envmod.proprio_keypoints(self.episode.state, self.ecfg))
        return kps

    def guide(self, record):
        ep = self.episode
        static = self.perceive_world()
        kps = self._keypoint_map(static)
        kps = self.agent.perturb_keypoints(kps, ep.state.tcp.position) if self.agent else kps
        plan = self._call("gen_waypoints", ep.obs, kps)
        self.metrics.guidance_plans += 1
        record["plan"] = [c.to_json() for c in plan]
        record["payload"] = digest(record["plan"])
        static_names = {wp.name for wp in static}
        n_steps = 0
        for call in plan:
            if ep.done or self.env_steps >= self.cfg.budget:
                break
            # proprioceptive keypoints (tcp, ring) are refreshed before each call
            live = dict(kps)
            live.update({k: v for k, v in envmod.proprio_keypoints(ep.state, self.ecfg).items()
                         if k not in static_names})
            wp = resolve(call, live, ep.state.tcp)
            if wp.kind == "gripper":
                self.env_step(gripper_action(wp), "guidance")
                n_steps += 1
                continue
            k = 0
            while not reached(ep.state.tcp, wp) and k < self.cfg.waypoint_step_cap:
                if ep.done or self.env_steps >= self.cfg.budget:
                    break
                a = track_step(ep.state.tcp, wp, self.limit[:3], 1.0, self.limit[3:])
                self.env_step(a, "guidance")
                k += 1
            n_steps += k
        return [Event("guide", {"steps": n_steps})]

    # -- autonomous step --------------------------------------------------------
    def masked_delta(self, delta):
        box = self.episode.box
        if box is None:
            return delta
        tcp = self.episode.state.tcp.position
        if contains(box, tcp):
            return clamp_action_to_box(tcp, delta, box)
        out = np.array(delta, dtype=float)
        out[:3] = np.clip(np.clip(tcp + out[:3], box.lo, box.hi) - tcp, -self.limit[:3], self.limit[:3])
        return out

    def policy_step(self):
        ep = self.episode
        a = self.policy_action(ep.obs.vector())
        delta = self.masked_delta(np.clip(a, -1.0, 1.0) * self.limit)
        self.env_step(EnvAction(delta), "policy")
        return Event("act", {"delta": delta})


def interaction_step(run):
    """One decision of the interaction loop: a detector check then an action or an intervention.

    Returns ``(kind, events)`` where ``kind`` is ``"act"`` or ``"intervention"``.
    """
    events = []
    if run.detector_due():
        lam, fire = run.detect()
        events.append(Event("lambda", {"value": lam, "threshold": run.threshold, "trigger": fire}))
        if fire:
            events += run.intervene(lam)
            return "intervention", events
    events.append(run.policy_step())
    return "act", events


def evaluate(run_or_policy, n_episodes=10, seed=0, cfg=None, max_steps=None):
    """Success rate of a deterministic policy with interventions and constraints off.

    Accepts a :class:`Run` or a callable ``policy(state) -> EnvAction`` together with ``cfg``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    if isinstance(run_or_policy, Run):
        run = run_or_policy
        ecfg = run.ecfg
        lim = run.limit

        def policy(state):
            a = run.policy_action(envmod.observe(state, ecfg).vector(), deterministic=True)
            return EnvAction(np.clip(a, -1.0, 1.0) * lim)
    else:
        policy, ecfg = run_or_policy, cfg
    rng = np.random.default_rng(seed)
    wins = 0
    for _ in range(n_episodes):
        ep = envmod.rollout(ecfg, rng, policy, max_steps=max_steps)
        wins += ep.success
    return wins / n_episodes


def _learner_thread(run):
    utd = run.cfg.train.utd_ratio
    try:
        while not run._stop.is_set():
            if run.metrics.updates >= utd * run.env_steps:
                time.sleep(0.0005)
                continue
            batch = sample_batch(run.demo_buf, run.online_buf, run.cfg.train.batch_size,
                                 run.rngs["learn"], run.cfg.train.min_buffer)
            if batch is None:
                time.sleep(0.001)
                continue
            run.agent_rl.update(batch, run.rngs["learn"], run.metrics.updates)
            run.metrics.updates += 1
            if run.metrics.updates % 10 == 0:
                snap = run.agent_rl.actor_snapshot()
                with run._snap_lock:
                    run._snapshot = snap
    except Exception as exc:  # surfaced by the interaction loop
        run.learner_error = exc


def run_training(cfg, demos=None, agent=None, progress=None):
    """Execute one run and return ``(metrics, run)``.

    On an agent failure with ``on_agent_failure="abort"`` the partial metrics
    are returned with ``aborted`` set.
    """
    t0 = time.perf_counter()
    run = Run(cfg, demos, agent)
    learner = None
    if cfg.threaded:
        run._snapshot = run.agent_rl.actor_snapshot()
        learner = threading.Thread(target=_learner_thread, args=(run,), daemon=True)
        learner.start()
    try:
        while run.env_steps < cfg.budget:
            if run.learner_error is not None:
                raise RunAborted(f"learner failed: {run.learner_error}", run.metrics)
            if run.episode is None:
                run.start_episode()
            interaction_step(run)
            if run.episode.done or run.episode.length >= cfg.env.horizon:
                run.end_episode()
                if progress is not None:
                    progress(run)
    except (RunAborted, AGPSError) as exc:
        run.metrics.aborted = True
        run.metrics.error = str(exc)
    finally:
        if learner is not None:
            run._stop.set()
            learner.join()
    if run.episode is not None and run.episode.length > 0:
        run.end_episode()
    m = run.metrics
    m.env_steps = run.env_steps
    m.agent_calls = dict(run.agent.calls) if run.agent is not None else {}
    m.wall_clock = time.perf_counter() - t0
    return m, run
