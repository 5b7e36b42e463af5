"""Experiment runner, CSV reporting, CLI, and the networked three-process mode."""

from .runner import (
    ExperimentConfig,
    ExperimentResult,
    TrialRow,
    aggregate,
    attack_demo,
    emit_csv,
    replay_verify,
    run_experiment,
)
from .wire import (
    FrameError,
    HandshakeError,
    UnknownTag,
    recv_event,
    recv_hello,
    send_event,
    send_hello,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "TrialRow",
    "aggregate",
    "attack_demo",
    "emit_csv",
    "replay_verify",
    "run_experiment",
    "FrameError",
    "HandshakeError",
    "UnknownTag",
    "recv_event",
    "recv_hello",
    "send_event",
    "send_hello",
]
