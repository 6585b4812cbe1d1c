from .agent import PolicySnapshot, SACAgent, TrainConfig, act, squash
from .buffer import ReplayBuffer, sample_batch
from .landscape import QLandscape, SliceSpec, q_landscape
from .nets import Adam, EnsembleMLP

__all__ = [
    "Adam", "EnsembleMLP", "PolicySnapshot", "QLandscape", "ReplayBuffer", "SACAgent",
    "SliceSpec", "TrainConfig", "act", "q_landscape", "sample_batch", "squash",
]
