"""Batch experiment driver.

Runs many seeded sessions, collects per-trial statistics (including the
lumped single-rate estimate that the protocol itself deliberately avoids),
aggregates them, and writes deterministic CSV. Also verifies recorded
transcripts by replaying their configuration and comparing event streams.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..channel import AttackStrategy, BiasedInterceptResend, RngStreams
from ..codes import CssPair, steane_pair
from ..protocol import (
    ProtocolParams,
    SessionOutcome,
    SessionStatus,
    biased_attack_rates,
    bob_measure,
    channel_transform,
    decode_symbols,
    encode_symbols,
    naive_average_rate,
    naive_estimate,
    alice_prepare,
    run_session,
    sift,
    strategy_from_dict,
)
from ..transcript import SessionTranscript

CSV_FIELDS = (
    "trial",
    "seed",
    "status",
    "e1",
    "e2",
    "naive_rate",
    "retained_fraction",
    "num_blocks",
    "key_length",
    "key_match",
    "blocks_match",
)


@dataclass(frozen=True)
class ExperimentConfig:
    params: ProtocolParams
    strategy: AttackStrategy
    css: CssPair = field(default_factory=steane_pair)
    trials: int = 20
    base_seed: int = 0

    def seed_for(self, trial: int) -> int:
        return self.base_seed + trial


@dataclass(frozen=True, eq=False)
class TrialRow:
    trial: int
    seed: int
    status: str
    e1: float | None
    e2: float | None
    naive_rate: float | None
    retained_fraction: float | None
    num_blocks: int
    key_length: int
    key_match: bool | None
    blocks_match: int | None


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    rows: list[TrialRow]
    summary: dict
    outcomes: list[SessionOutcome]


def _quantum_phase_stats(
    params: ProtocolParams, strategy: AttackStrategy, seed: int
) -> tuple[float, float | None]:
    """Retained fraction and lumped test rate for one seed.

    Re-derives the session's quantum phase from the same seed and substreams,
    so the sifted data matches the protocol run bit for bit; the lumped
    sample itself comes from a dedicated substream the protocol never touches.
    """
    streams = RngStreams(seed)
    symbols = alice_prepare(params, streams)
    delivered = decode_symbols(
        channel_transform(encode_symbols(symbols), strategy, streams)
    )
    results = bob_measure(delivered, params, streams.stream("bob_bases"))
    sifted = sift(symbols, results)
    try:
        naive = naive_estimate(sifted, params, streams.stream("naive_test"))
    except ValueError:
        naive = None
    return sifted.retained_fraction, naive


def run_trial(config: ExperimentConfig, trial: int) -> tuple[TrialRow, SessionOutcome]:
    seed = config.seed_for(trial)
    outcome = run_session(config.params, config.strategy, config.css, seed)
    retained, naive = _quantum_phase_stats(config.params, config.strategy, seed)
    est = outcome.estimate
    key_match = None
    blocks_match = None
    key_length = 0
    if outcome.status is SessionStatus.ACCEPTED:
        key_length = int(outcome.alice_key.size)
        key_match = bool(np.array_equal(outcome.alice_key, outcome.bob_key))
        k = config.css.k
        a = outcome.alice_key.reshape(outcome.num_blocks, k)
        b = outcome.bob_key.reshape(outcome.num_blocks, k)
        blocks_match = int((a == b).all(axis=1).sum())
    row = TrialRow(
        trial=trial,
        seed=seed,
        status=outcome.status.value,
        e1=None if est is None else est.e1,
        e2=None if est is None else est.e2,
        naive_rate=naive,
        retained_fraction=retained,
        num_blocks=outcome.num_blocks,
        key_length=key_length,
        key_match=key_match,
        blocks_match=blocks_match,
    )
    return row, outcome


def run_experiment(config: ExperimentConfig, keep_outcomes: bool = False) -> ExperimentResult:
    rows: list[TrialRow] = []
    outcomes: list[SessionOutcome] = []
    for trial in range(config.trials):
        row, outcome = run_trial(config, trial)
        rows.append(row)
        if keep_outcomes:
            outcomes.append(outcome)
    return ExperimentResult(
        config=config, rows=rows, summary=aggregate(rows), outcomes=outcomes
    )


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def aggregate(rows: list[TrialRow]) -> dict:
    statuses = {s.value: 0 for s in SessionStatus}
    for row in rows:
        statuses[row.status] += 1
    accepted = [r for r in rows if r.status == SessionStatus.ACCEPTED.value]
    total_blocks = sum(r.num_blocks for r in accepted)
    matched_blocks = sum(r.blocks_match for r in accepted)
    return {
        "trials": len(rows),
        "status_counts": statuses,
        "accept_rate": len(accepted) / len(rows) if rows else None,
        "mean_e1": _mean(r.e1 for r in rows),
        "mean_e2": _mean(r.e2 for r in rows),
        "mean_naive_rate": _mean(r.naive_rate for r in rows),
        "mean_retained_fraction": _mean(r.retained_fraction for r in rows),
        "mean_key_length": _mean(r.key_length for r in accepted),
        "key_match_rate": _mean(r.key_match for r in accepted),
        "total_blocks": total_blocks,
        "matched_blocks": matched_blocks,
        "block_match_rate": matched_blocks / total_blocks if total_blocks else None,
    }


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows: list[TrialRow], destination=None) -> str:
    """Write trial rows as CSV; returns the text, optionally writing a path."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([_cell(getattr(row, f)) for f in CSV_FIELDS])
    text = buf.getvalue()
    if destination is not None:
        Path(destination).write_text(text)
    return text


def attack_demo(
    params: ProtocolParams,
    p1: float,
    p2: float,
    trials: int = 50,
    base_seed: int = 0,
    css: CssPair | None = None,
) -> dict:
    """Contrast refined and lumped estimation under biased interception.

    Returns analytic per-class rates alongside empirical means, the refined
    protocol's abort rate, and the fraction of sessions a lumped-rate check
    (same threshold, merged sample) would have waved through.
    """
    strategy = BiasedInterceptResend(p1=p1, p2=p2)
    config = ExperimentConfig(
        params=params,
        strategy=strategy,
        css=css if css is not None else steane_pair(),
        trials=trials,
        base_seed=base_seed,
    )
    result = run_experiment(config)
    e1, e2 = biased_attack_rates(p1, p2)
    threshold = params.threshold
    decided = [r for r in result.rows if r.e1 is not None]
    naive_rows = [r for r in result.rows if r.naive_rate is not None]
    refined_aborts = sum(
        1 for r in decided if r.status == SessionStatus.ABORTED_ERROR_RATE.value
    )
    naive_accepts = sum(1 for r in naive_rows if r.naive_rate < threshold)
    return {
        "bias_p": params.bias_p,
        "p1": p1,
        "p2": p2,
        "threshold": threshold,
        "analytic": {
            "e1": e1,
            "e2": e2,
            "naive_rate": naive_average_rate(params.bias_p, e1, e2),
        },
        "empirical": {
            "mean_e1": result.summary["mean_e1"],
            "mean_e2": result.summary["mean_e2"],
            "mean_naive_rate": result.summary["mean_naive_rate"],
        },
        "trials": trials,
        "refined_abort_rate": refined_aborts / len(decided) if decided else None,
        "naive_accept_rate": naive_accepts / len(naive_rows) if naive_rows else None,
        "summary": result.summary,
    }


def replay_verify(transcript: SessionTranscript | str | Path) -> tuple[bool, str]:
    """Re-run a recorded session from its embedded configuration.

    Returns ``(True, detail)`` when the replay reproduces the recorded
    canonical event stream exactly, else ``(False, detail)`` naming the
    first divergence. Partial (single-party) transcripts are rejected.
    """
    if not isinstance(transcript, SessionTranscript):
        transcript = SessionTranscript.from_jsonl(Path(transcript).read_text())
    meta = transcript.meta
    for field_name in ("seed", "params", "strategy", "css"):
        if field_name not in meta:
            return False, f"transcript metadata lacks {field_name!r}"
    params = ProtocolParams.from_dict(meta["params"])
    strategy = strategy_from_dict(meta["strategy"])
    from ..codes import css_from_meta

    css = css_from_meta(meta["css"])
    replayed = run_session(params, strategy, css, int(meta["seed"]))
    want = transcript.event_lines()
    got = replayed.transcript.event_lines()
    if len(want) != len(got):
        return False, f"event count differs: recorded {len(want)}, replayed {len(got)}"
    for i, (w, g) in enumerate(zip(want, got)):
        if w != g:
            return False, f"first divergence at event {i}"
    return True, f"replay reproduced all {len(want)} events"
