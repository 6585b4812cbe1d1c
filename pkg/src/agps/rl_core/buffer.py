"""FIFO replay storage shared by the interaction loop (writer) and learner (readers)."""
import threading

import numpy as np

SOURCES = ("demo", "policy", "guidance")


class ReplayBuffer:
    """Fixed-capacity ring of transitions.

    One writer appends while any number of readers sample; a lock makes each
    append visible atomically to the next ``sample`` call.
    """

    def __init__(self, capacity, obs_dim, act_dim=6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.success = np.zeros(capacity, dtype=bool)
        self.source = np.zeros(capacity, dtype=np.int8)
        self.episode = np.zeros(capacity, dtype=np.int64)
        self.ptr = 0
        self.size = 0
        self.total_added = 0
        self._lock = threading.Lock()
        # episode id -> FLOAT indices of that successful episode's prefixes
        self.success_index = {}

    def __len__(self):
        return self.size

    def add(self, obs, act, rew, next_obs, done, success=False, source="policy", episode=0):
        if rew not in (0, 1, 0.0, 1.0):
            raise ValueError("rewards are binary")
        if success and not done:
            raise ValueError("a success transition must be terminal")
        with self._lock:
            i = self.ptr
            evicted = self.episode[i] if self.size == self.capacity else None
            self.obs[i] = obs
            self.act[i] = act
            self.rew[i] = rew
            self.next_obs[i] = next_obs
            self.done[i] = float(done)
            self.success[i] = bool(success)
            self.source[i] = SOURCES.index(source)
            self.episode[i] = episode
            self.ptr = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
            self.total_added += 1
            if evicted is not None and evicted in self.success_index:
                if not np.any(self.episode[: self.size] == evicted):
                    del self.success_index[evicted]

    def add_transition(self, tr, episode=0):
        self.add(tr.obs, tr.action, tr.reward, tr.next_obs, tr.done, tr.success, tr.source, episode)

    def mark_success(self, episode, float_indices):
        with self._lock:
            self.success_index[episode] = list(float_indices)

    def successful_float_indices(self):
        with self._lock:
            return [v for vals in self.success_index.values() for v in vals]

    def n_successful_episodes(self):
        return len(self.success_index)

    def sample_idx(self, n, rng):
        with self._lock:
            size = self.size
        return rng.integers(0, size, n)

    def gather(self, idx):
        with self._lock:
            return {
                "obs": self.obs[idx].copy(),
                "act": self.act[idx].copy(),
                "rew": self.rew[idx].copy(),
                "next_obs": self.next_obs[idx].copy(),
                "done": self.done[idx].copy(),
            }

    def sources(self):
        return [SOURCES[s] for s in self.source[: self.size]]

    def oldest_first(self):
        """Indices ordered from oldest to newest stored transition."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.ptr) % self.capacity


def sample_batch(demo, online, batch_size, rng, min_buffer=100):
    """Half the batch from demos, half from online data, both uniform with replacement.

    Returns ``None`` while the online buffer holds fewer than ``min_buffer`` transitions.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch size must be even and >= 2")
    if len(online) < min_buffer or len(online) == 0:
        return None
    half = batch_size // 2
    parts = []
    if len(demo) > 0:
        parts.append(demo.gather(demo.sample_idx(half, rng)))
        parts.append(online.gather(online.sample_idx(half, rng)))
    else:
        parts.append(online.gather(online.sample_idx(batch_size, rng)))
    batch = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    batch["n_demo"] = half if len(demo) > 0 else 0
    return batch
