"""Agent-guided policy search: FLOAT-triggered supervision of an off-policy learner.

Subpackages: ``rl_core`` (learner), ``supervisor`` (agents, wire format, memory),
``orchestrator`` (training loop) and ``harness`` (experiments and CLI).
"""
__version__ = "0.1.0"
