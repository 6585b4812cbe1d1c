"""Episodic memory: subgoal -> last exploration box that led to a success."""
from dataclasses import dataclass, field

INVALIDATION_LIMIT = 3


@dataclass
class MemoryEntry:
    constraint: object
    successes: int = 0
    failures: int = 0  # failures since the last success

    def __post_init__(self):
        if self.successes < 0 or self.failures < 0:
            raise ValueError("memory counters must be nonnegative")


@dataclass
class EpisodicMemory:
    entries: dict = field(default_factory=dict)
    invalidation_limit: int = INVALIDATION_LIMIT

    def __len__(self):
        return len(self.entries)

    def __contains__(self, subgoal):
        return _key(subgoal) in self.entries


def _key(subgoal):
    return getattr(subgoal, "id", subgoal)


def check_memory(memory, subgoal):
    """Stored box for ``subgoal`` if it has succeeded and is not invalidated, else ``None``."""
    entry = memory.entries.get(_key(subgoal))
    if entry is None or entry.successes < 1 or entry.failures >= memory.invalidation_limit:
        return None
    return entry.constraint


def record_outcome(memory, subgoal, constraint, success):
    """Upsert the entry; a success resets the failure streak, too many failures evict it."""
    key = _key(subgoal)
    entry = memory.entries.get(key)
    if entry is None:
        entry = MemoryEntry(constraint)
        memory.entries[key] = entry
    entry.constraint = constraint
    if success:
        entry.successes += 1
        entry.failures = 0
    else:
        entry.failures += 1
        if entry.failures >= memory.invalidation_limit:
            del memory.entries[key]
    return memory
