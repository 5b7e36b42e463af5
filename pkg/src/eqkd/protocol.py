"""The two-party key distribution protocol with biased basis choice.

Both parties pick the rectilinear basis with probability p (0 < p <= 1/2)
and the diagonal basis otherwise, so a fraction p^2 + (1-p)^2 of positions
survives sifting, approaching 1 as p shrinks. Error rates are estimated
separately per same-basis class: a session is accepted only when both class
rates clear the threshold, which is what defeats basis-biased interception
that a single lumped rate would miss. The raw key is taken from untested
both-diagonal positions only, then reconciled block-wise over a nested code
pair.

The party logic lives in two explicit state machines exchanging (actor,
kind, payload) messages; the in-process driver and the networked endpoints
shuttle the same messages, so both modes produce identical transcripts.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .channel import (
    AttackStrategy,
    Basis,
    BiasedInterceptResend,
    DepolarizingPauli,
    FixedPauliString,
    Passive,
    PauliLetter,
    RngStreams,
    SymbolBlock,
    strategy_stream_name,
    transmit,
)
from .codes import (
    CssPair,
    block_permutations,
    css_meta,
    reconcile_alice_blocks,
    reconcile_bob_blocks,
)
from .transcript import (
    Actor,
    Event,
    EventKind,
    SessionTranscript,
    pack_bits,
    unpack_bits,
)


class ProtocolError(Exception):
    pass


class InsufficientSample(ProtocolError):
    """A test class is smaller than the requested sample."""


class ProtocolViolation(ProtocolError):
    """A message arrived out of protocol order or malformed."""


@dataclass(frozen=True)
class ProtocolParams:
    """Session parameters.

    Parameters
    ----------
    n_qubits : number of transmitted symbols N
    bias_p : rectilinear-basis probability p, 0 < p <= 1/2
    m1, m2 : test-sample sizes for the both-rectilinear and both-diagonal
        classes
    e_max : acceptance threshold on each class error rate
    delta_e : safety margin; sessions abort at rates >= e_max - delta_e
    delta_prime : sampling slack; defaults to p^2 / 10. Feasibility demands
        N (p^2 - delta_prime) >= m1.
    """

    n_qubits: int
    bias_p: float
    m1: int
    m2: int
    e_max: float = 0.11
    delta_e: float = 0.01
    delta_prime: float | None = None

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if not (0.0 < self.bias_p <= 0.5):
            raise ValueError("bias_p must lie in (0, 1/2]")
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("test sample sizes must be at least 1")
        if not (0.0 < self.e_max - self.delta_e):
            raise ValueError("e_max - delta_e must be positive")
        if self.delta_prime is None:
            object.__setattr__(self, "delta_prime", self.bias_p**2 / 10.0)
        if self.delta_prime <= 0.0:
            raise ValueError("delta_prime must be positive")
        if self.n_qubits * (self.bias_p**2 - self.delta_prime) < self.m1:
            raise ValueError(
                "infeasible: N (p^2 - delta_prime) must be at least m1"
            )

    @property
    def threshold(self) -> float:
        return self.e_max - self.delta_e

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "bias_p": self.bias_p,
            "m1": self.m1,
            "m2": self.m2,
            "e_max": self.e_max,
            "delta_e": self.delta_e,
            "delta_prime": self.delta_prime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        return cls(**d)


class SiftClass(enum.Enum):
    BOTH_RECT = "both_rect"
    BOTH_DIAG = "both_diag"
    ALICE_RECT_BOB_DIAG = "alice_rect_bob_diag"
    ALICE_DIAG_BOB_RECT = "alice_diag_bob_rect"


@dataclass(frozen=True, eq=False)
class SiftClassData:
    """One same-basis class: global positions with both parties' bits."""

    positions: np.ndarray
    alice_bits: np.ndarray
    bob_bits: np.ndarray

    def __len__(self) -> int:
        return int(self.positions.size)


@dataclass(frozen=True, eq=False)
class SiftedData:
    both_rect: SiftClassData
    both_diag: SiftClassData
    class_counts: dict
    n_total: int

    @property
    def retained_fraction(self) -> float:
        kept = self.class_counts[SiftClass.BOTH_RECT] + self.class_counts[SiftClass.BOTH_DIAG]
        return kept / self.n_total


@dataclass(frozen=True, eq=False)
class ErrorEstimate:
    """Refined per-class error estimate from disjoint test samples."""

    r1: int
    m1: int
    r2: int
    m2: int
    tested_rect: np.ndarray
    tested_diag: np.ndarray

    @property
    def e1(self) -> float:
        return self.r1 / self.m1

    @property
    def e2(self) -> float:
        return self.r2 / self.m2

    @property
    def tested_positions(self) -> np.ndarray:
        return np.sort(np.concatenate([self.tested_rect, self.tested_diag]))


class SessionStatus(str, enum.Enum):
    ACCEPTED = "accepted"
    ABORTED_ERROR_RATE = "aborted_error_rate"
    ABORTED_INSUFFICIENT_SAMPLE = "aborted_insufficient_sample"


@dataclass(frozen=True, eq=False)
class SessionOutcome:
    status: SessionStatus
    estimate: ErrorEstimate | None
    alice_key: np.ndarray | None
    bob_key: np.ndarray | None
    transcript: SessionTranscript
    num_blocks: int = 0


# ---------------------------------------------------------------------------
# Pipeline steps
# ---------------------------------------------------------------------------

def alice_prepare(params: ProtocolParams, streams: RngStreams) -> SymbolBlock:
    """Draw Alice's bases (rectilinear w.p. p) and uniform bits."""
    n = params.n_qubits
    bases = (streams.stream("alice_bases").random(n) >= params.bias_p).astype(np.uint8)
    bits = streams.stream("alice_bits").integers(0, 2, size=n, dtype=np.uint8)
    return SymbolBlock(bases, bits)


def bob_measure(
    received: SymbolBlock, params: ProtocolParams, rng: np.random.Generator
) -> SymbolBlock:
    """Measure each symbol in an independently drawn basis.

    A matching basis reproduces the encoded bit; a mismatched one yields a
    uniform outcome. Returns the (basis, outcome) record as a SymbolBlock.
    """
    n = len(received)
    if n != params.n_qubits:
        raise ValueError("received block length does not match params")
    bases = (rng.random(n) >= params.bias_p).astype(np.uint8)
    bits = received.bits.copy()
    mismatch = bases != received.bases
    bits[mismatch] = rng.integers(0, 2, size=int(mismatch.sum()), dtype=np.uint8)
    return SymbolBlock(bases, bits)


def _sift_positions(
    alice_bases: np.ndarray, bob_bases: np.ndarray
) -> tuple[np.ndarray, np.ndarray, dict]:
    rect = int(Basis.RECTILINEAR)
    diag = int(Basis.DIAGONAL)
    both_rect = np.nonzero((alice_bases == rect) & (bob_bases == rect))[0]
    both_diag = np.nonzero((alice_bases == diag) & (bob_bases == diag))[0]
    counts = {
        SiftClass.BOTH_RECT: int(both_rect.size),
        SiftClass.BOTH_DIAG: int(both_diag.size),
        SiftClass.ALICE_RECT_BOB_DIAG: int(
            ((alice_bases == rect) & (bob_bases == diag)).sum()
        ),
        SiftClass.ALICE_DIAG_BOB_RECT: int(
            ((alice_bases == diag) & (bob_bases == rect)).sum()
        ),
    }
    return both_rect, both_diag, counts


def sift(alice_symbols: SymbolBlock, bob_results: SymbolBlock) -> SiftedData:
    """Keep the two same-basis classes, with positions and both bit strings."""
    if len(alice_symbols) != len(bob_results):
        raise ValueError("mismatched block lengths")
    rect_pos, diag_pos, counts = _sift_positions(alice_symbols.bases, bob_results.bases)
    return SiftedData(
        both_rect=SiftClassData(
            positions=rect_pos,
            alice_bits=alice_symbols.bits[rect_pos],
            bob_bits=bob_results.bits[rect_pos],
        ),
        both_diag=SiftClassData(
            positions=diag_pos,
            alice_bits=alice_symbols.bits[diag_pos],
            bob_bits=bob_results.bits[diag_pos],
        ),
        class_counts=counts,
        n_total=len(alice_symbols),
    )


def _draw_class_samples(
    n_rect: int, n_diag: int, m1: int, m2: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted without-replacement index samples for both classes."""
    i1 = np.sort(rng.choice(n_rect, size=m1, replace=False))
    i2 = np.sort(rng.choice(n_diag, size=m2, replace=False))
    return i1, i2


def refined_estimate(
    sifted: SiftedData, params: ProtocolParams, rng: np.random.Generator
) -> ErrorEstimate:
    """Estimate e1 and e2 from disjoint per-class samples.

    Raises
    ------
    InsufficientSample
        When a class holds fewer positions than its sample size.
    """
    if len(sifted.both_rect) < params.m1 or len(sifted.both_diag) < params.m2:
        raise InsufficientSample(
            f"classes hold ({len(sifted.both_rect)}, {len(sifted.both_diag)}) "
            f"positions; need ({params.m1}, {params.m2})"
        )
    i1, i2 = _draw_class_samples(
        len(sifted.both_rect), len(sifted.both_diag), params.m1, params.m2, rng
    )
    r1 = int(
        (sifted.both_rect.alice_bits[i1] != sifted.both_rect.bob_bits[i1]).sum()
    )
    r2 = int(
        (sifted.both_diag.alice_bits[i2] != sifted.both_diag.bob_bits[i2]).sum()
    )
    return ErrorEstimate(
        r1=r1,
        m1=params.m1,
        r2=r2,
        m2=params.m2,
        tested_rect=sifted.both_rect.positions[i1],
        tested_diag=sifted.both_diag.positions[i2],
    )


def naive_estimate(
    sifted: SiftedData, params: ProtocolParams, rng: np.random.Generator
) -> float:
    """Single lumped error rate over a merged test sample.

    The sample is drawn uniformly from the union of both same-basis classes,
    so each class is weighted by its size. Demonstration statistic only; the
    protocol itself never uses it.
    """
    a = np.concatenate([sifted.both_rect.alice_bits, sifted.both_diag.alice_bits])
    b = np.concatenate([sifted.both_rect.bob_bits, sifted.both_diag.bob_bits])
    total = a.size
    if total == 0:
        raise ValueError("nothing survived sifting")
    size = min(params.m1 + params.m2, total)
    idx = rng.choice(total, size=size, replace=False)
    return float((a[idx] != b[idx]).mean())


def naive_average_rate(p: float, e1: float, e2: float) -> float:
    """Population value of the lumped rate: class rates weighted by size."""
    w1, w2 = p * p, (1.0 - p) ** 2
    return (w1 * e1 + w2 * e2) / (w1 + w2)


def biased_attack_rates(p1: float, p2: float) -> tuple[float, float]:
    """Per-class error rates (e1, e2) = (p2/2, p1/2) under biased interception."""
    return p2 / 2.0, p1 / 2.0


def weighted_error_rates(q: float, e1: float, e2: float) -> tuple[float, float]:
    """(bit-flip, phase) rates when a fraction q of the key is rectilinear.

    With a diagonal-only key (q = 0) the bit-flip rate is e2 and the phase
    rate is e1: flips show up in the key's own basis, phase errors in the
    other one.
    """
    if not (0.0 <= q <= 1.0):
        raise ValueError("q must lie in [0, 1]")
    e_bitflip = q * e1 + (1.0 - q) * e2
    e_phase = q * e2 + (1.0 - q) * e1
    return e_bitflip, e_phase


# ---------------------------------------------------------------------------
# Wire-facing helpers
# ---------------------------------------------------------------------------

def encode_symbols(block: SymbolBlock) -> dict:
    return {
        "n": len(block),
        "bases": pack_bits(block.bases),
        "bits": pack_bits(block.bits),
    }


def decode_symbols(payload: dict) -> SymbolBlock:
    n = int(payload["n"])
    return SymbolBlock(
        unpack_bits(payload["bases"], n), unpack_bits(payload["bits"], n)
    )


def channel_transform(payload: dict, strategy: AttackStrategy, streams: RngStreams) -> dict:
    """Apply the channel strategy to a qubits payload (the relay's job)."""
    block = decode_symbols(payload)
    name = strategy_stream_name(strategy)
    rng = streams.stream(name if name is not None else "noise")
    return encode_symbols(transmit(block, strategy, rng))


def key_digest_payload(key: np.ndarray) -> dict:
    digest = hashlib.sha256(np.packbits(np.asarray(key, dtype=np.uint8)).tobytes())
    return {"algo": "sha256", "bits": int(key.size), "digest": digest.hexdigest()}


def strategy_to_dict(strategy: AttackStrategy) -> dict:
    if isinstance(strategy, Passive):
        return {"kind": "passive"}
    if isinstance(strategy, BiasedInterceptResend):
        return {"kind": "biased_intercept_resend", "p1": strategy.p1, "p2": strategy.p2}
    if isinstance(strategy, DepolarizingPauli):
        return {
            "kind": "depolarizing",
            "q": [strategy.q_i, strategy.q_x, strategy.q_y, strategy.q_z],
        }
    if isinstance(strategy, FixedPauliString):
        return {
            "kind": "fixed_pauli",
            "letters": "".join(PauliLetter(l).name for l in strategy.letters),
        }
    raise TypeError(f"unknown strategy {strategy!r}")


def strategy_from_dict(d: dict) -> AttackStrategy:
    kind = d["kind"]
    if kind == "passive":
        return Passive()
    if kind == "biased_intercept_resend":
        return BiasedInterceptResend(p1=d["p1"], p2=d["p2"])
    if kind == "depolarizing":
        return DepolarizingPauli(*d["q"])
    if kind == "fixed_pauli":
        return FixedPauliString(tuple(PauliLetter[ch] for ch in d["letters"]))
    raise ValueError(f"unknown strategy kind {kind!r}")


def session_meta(
    params: ProtocolParams, strategy: AttackStrategy, css: CssPair, seed: int
) -> dict:
    return {
        "seed": int(seed),
        "params": params.to_dict(),
        "strategy": strategy_to_dict(strategy),
        "css": css_meta(css),
    }


def config_digest(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Party state machines
# ---------------------------------------------------------------------------

Message = tuple[Actor, EventKind, dict]

_DECISION_FOR_STATUS = {
    SessionStatus.ACCEPTED: "proceed",
    SessionStatus.ABORTED_ERROR_RATE: "abort_error_rate",
    SessionStatus.ABORTED_INSUFFICIENT_SAMPLE: "abort_insufficient_sample",
}


@dataclass(frozen=True, eq=False)
class PartyResult:
    """One party's view of the session outcome."""

    status: SessionStatus
    estimate: ErrorEstimate | None
    key: np.ndarray | None
    own_digest: str | None
    peer_digest: str | None
    num_blocks: int


class _PartyMachine:
    def __init__(
        self,
        params: ProtocolParams,
        css: CssPair,
        streams: RngStreams,
        meta: dict | None = None,
    ):
        self.params = params
        self.css = css
        self.streams = streams
        self.transcript = SessionTranscript(meta=dict(meta or {}))
        self.done = False
        self.result: PartyResult | None = None

    def _emit(self, actor: Actor, kind: EventKind, payload: dict) -> Message:
        self.transcript.append(actor, kind, payload)
        return (actor, kind, payload)

    def _log(self, actor: Actor, kind: EventKind, payload: dict) -> None:
        self.transcript.append(actor, kind, payload)

    def _expect(self, kind: EventKind, expected: Iterable[EventKind]) -> None:
        if kind not in tuple(expected):
            raise ProtocolViolation(f"unexpected {kind} in state {self._state}")

    def _raw_key_layout(
        self, rect_pos: np.ndarray, diag_pos: np.ndarray, tested_diag: np.ndarray
    ) -> np.ndarray:
        untested = np.setdiff1d(diag_pos, tested_diag, assume_unique=True)
        blocks = untested.size // self.css.n
        return untested[: blocks * self.css.n]


class AliceMachine(_PartyMachine):
    """Alice: prepares symbols, discloses bases second, decides, reconciles."""

    def __init__(self, params, css, streams, meta=None):
        super().__init__(params, css, streams, meta)
        self._state = "start"
        self.symbols: SymbolBlock | None = None
        self._rect_pos: np.ndarray | None = None
        self._diag_pos: np.ndarray | None = None
        self._test_rect: np.ndarray | None = None
        self._test_diag: np.ndarray | None = None
        self._estimate: ErrorEstimate | None = None
        self._key: np.ndarray | None = None
        self._own_digest: str | None = None
        self._num_blocks = 0

    def start(self) -> list[Message]:
        if self._state != "start":
            raise ProtocolViolation("start called twice")
        self.symbols = alice_prepare(self.params, self.streams)
        msg = self._emit(Actor.ALICE, EventKind.QUBITS_SENT, encode_symbols(self.symbols))
        self.transcript.skip()  # channel delivery is not visible to Alice
        self._state = "await_bob_bases"
        return [msg]

    def receive(self, actor: Actor, kind: EventKind, payload: dict) -> list[Message]:
        if self._state == "await_bob_bases":
            self._expect(kind, (EventKind.BASES_ANNOUNCED_BOB,))
            self._log(actor, kind, payload)
            bob_bases = unpack_bits(payload["bases"], int(payload["n"]))
            out = [
                self._emit(
                    Actor.ALICE,
                    EventKind.BASES_ANNOUNCED_ALICE,
                    {"n": len(self.symbols), "bases": pack_bits(self.symbols.bases)},
                )
            ]
            self._rect_pos, self._diag_pos, _ = _sift_positions(
                self.symbols.bases, bob_bases
            )
            self._state = "await_test"
            return out
        if self._state == "await_test":
            self._expect(kind, (EventKind.TEST_INDICES, EventKind.DECISION))
            self._log(actor, kind, payload)
            if kind is EventKind.DECISION:
                return self._finish_aborted(payload)
            self._test_rect = np.asarray(payload["rect"], dtype=np.int64)
            self._test_diag = np.asarray(payload["diag"], dtype=np.int64)
            self._state = "await_disclosure"
            return []
        if self._state == "await_disclosure":
            self._expect(kind, (EventKind.TEST_DISCLOSURE,))
            self._log(actor, kind, payload)
            return self._estimate_and_decide(payload)
        if self._state == "await_bob_digest":
            self._expect(kind, (EventKind.KEY_DIGEST,))
            self._log(actor, kind, payload)
            self.result = PartyResult(
                status=SessionStatus.ACCEPTED,
                estimate=self._estimate,
                key=self._key,
                own_digest=self._own_digest,
                peer_digest=payload["digest"],
                num_blocks=self._num_blocks,
            )
            self.done = True
            return []
        raise ProtocolViolation(f"no messages expected in state {self._state}")

    def _finish_aborted(self, payload: dict) -> list[Message]:
        if payload.get("status") != "abort_insufficient_sample":
            raise ProtocolViolation("unexpected early decision")
        self.result = PartyResult(
            status=SessionStatus.ABORTED_INSUFFICIENT_SAMPLE,
            estimate=None,
            key=None,
            own_digest=None,
            peer_digest=None,
            num_blocks=0,
        )
        self.done = True
        self._state = "done"
        return []

    def _estimate_and_decide(self, payload: dict) -> list[Message]:
        bob_rect = unpack_bits(payload["rect_bits"], int(payload["m1"]))
        bob_diag = unpack_bits(payload["diag_bits"], int(payload["m2"]))
        mine_rect = self.symbols.bits[self._test_rect]
        mine_diag = self.symbols.bits[self._test_diag]
        r1 = int((mine_rect != bob_rect).sum())
        r2 = int((mine_diag != bob_diag).sum())
        est = ErrorEstimate(
            r1=r1,
            m1=int(payload["m1"]),
            r2=r2,
            m2=int(payload["m2"]),
            tested_rect=self._test_rect,
            tested_diag=self._test_diag,
        )
        self._estimate = est
        out = [
            self._emit(
                Actor.ALICE,
                EventKind.ESTIMATE,
                {"r1": est.r1, "m1": est.m1, "r2": est.r2, "m2": est.m2},
            )
        ]
        threshold = self.params.threshold
        accepted = est.e1 < threshold and est.e2 < threshold
        status = SessionStatus.ACCEPTED if accepted else SessionStatus.ABORTED_ERROR_RATE
        out.append(
            self._emit(
                Actor.ALICE, EventKind.DECISION, {"status": _DECISION_FOR_STATUS[status]}
            )
        )
        if not accepted:
            self.result = PartyResult(
                status=status,
                estimate=est,
                key=None,
                own_digest=None,
                peer_digest=None,
                num_blocks=0,
            )
            self.done = True
            self._state = "done"
            return out
        out.extend(self._reconcile())
        self._state = "await_bob_digest"
        return out

    def _reconcile(self) -> list[Message]:
        css = self.css
        used = self._raw_key_layout(self._rect_pos, self._diag_pos, self._test_diag)
        blocks = used.size // css.n
        self._num_blocks = blocks
        v = self.symbols.bits[used].reshape(blocks, css.n)
        perm_seed = int(self.streams.stream("permutation").integers(0, 2**63))
        perms = block_permutations(css.n, blocks, perm_seed)
        v_perm = np.take_along_axis(v, perms, axis=1)
        announcements, keys = reconcile_alice_blocks(
            css, v_perm, self.streams.stream("codeword")
        )
        self._key = keys.reshape(-1)
        digest_payload = key_digest_payload(self._key)
        self._own_digest = digest_payload["digest"]
        return [
            self._emit(
                Actor.ALICE,
                EventKind.PERMUTATION_SEED,
                {"seed": perm_seed, "blocks": blocks, "block_len": css.n},
            ),
            self._emit(
                Actor.ALICE,
                EventKind.CODEWORD_ANNOUNCEMENT,
                {
                    "blocks": blocks,
                    "block_len": css.n,
                    "masked": pack_bits(announcements.reshape(-1)),
                },
            ),
            self._emit(Actor.ALICE, EventKind.KEY_DIGEST, digest_payload),
        ]


class BobMachine(_PartyMachine):
    """Bob: measures, announces bases first, draws the test sample, decodes."""

    def __init__(self, params, css, streams, meta=None):
        super().__init__(params, css, streams, meta)
        self.transcript.skip()  # Alice's pre-channel symbols are not visible
        self._state = "await_qubits"
        self.results: SymbolBlock | None = None
        self._rect_pos: np.ndarray | None = None
        self._diag_pos: np.ndarray | None = None
        self._test_rect: np.ndarray | None = None
        self._test_diag: np.ndarray | None = None
        self._estimate: ErrorEstimate | None = None
        self._status: SessionStatus | None = None
        self._perm_seed: int | None = None
        self._num_blocks = 0
        self._key: np.ndarray | None = None

    def receive(self, actor: Actor, kind: EventKind, payload: dict) -> list[Message]:
        if self._state == "await_qubits":
            self._expect(kind, (EventKind.QUBITS_SENT,))
            self._log(actor, kind, payload)
            received = decode_symbols(payload)
            self.results = bob_measure(received, self.params, self.streams.stream("bob_bases"))
            self._state = "await_alice_bases"
            return [
                self._emit(
                    Actor.BOB,
                    EventKind.BASES_ANNOUNCED_BOB,
                    {"n": len(self.results), "bases": pack_bits(self.results.bases)},
                )
            ]
        if self._state == "await_alice_bases":
            self._expect(kind, (EventKind.BASES_ANNOUNCED_ALICE,))
            self._log(actor, kind, payload)
            alice_bases = unpack_bits(payload["bases"], int(payload["n"]))
            self._rect_pos, self._diag_pos, _ = _sift_positions(
                alice_bases, self.results.bases
            )
            return self._select_test()
        if self._state == "await_estimate":
            self._expect(kind, (EventKind.ESTIMATE,))
            self._log(actor, kind, payload)
            self._estimate = ErrorEstimate(
                r1=int(payload["r1"]),
                m1=int(payload["m1"]),
                r2=int(payload["r2"]),
                m2=int(payload["m2"]),
                tested_rect=self._test_rect,
                tested_diag=self._test_diag,
            )
            self._state = "await_decision"
            return []
        if self._state == "await_decision":
            self._expect(kind, (EventKind.DECISION,))
            self._log(actor, kind, payload)
            if payload["status"] != "proceed":
                self.result = PartyResult(
                    status=SessionStatus(
                        "aborted_error_rate"
                        if payload["status"] == "abort_error_rate"
                        else "aborted_insufficient_sample"
                    ),
                    estimate=self._estimate,
                    key=None,
                    own_digest=None,
                    peer_digest=None,
                    num_blocks=0,
                )
                self.done = True
                self._state = "done"
                return []
            self._state = "await_permutation"
            return []
        if self._state == "await_permutation":
            self._expect(kind, (EventKind.PERMUTATION_SEED,))
            self._log(actor, kind, payload)
            self._perm_seed = int(payload["seed"])
            self._num_blocks = int(payload["blocks"])
            self._state = "await_codeword"
            return []
        if self._state == "await_codeword":
            self._expect(kind, (EventKind.CODEWORD_ANNOUNCEMENT,))
            self._log(actor, kind, payload)
            self._decode_blocks(payload)
            self._state = "await_alice_digest"
            return []
        if self._state == "await_alice_digest":
            self._expect(kind, (EventKind.KEY_DIGEST,))
            self._log(actor, kind, payload)
            digest_payload = key_digest_payload(self._key)
            out = [self._emit(Actor.BOB, EventKind.KEY_DIGEST, digest_payload)]
            self.result = PartyResult(
                status=SessionStatus.ACCEPTED,
                estimate=self._estimate,
                key=self._key,
                own_digest=digest_payload["digest"],
                peer_digest=payload["digest"],
                num_blocks=self._num_blocks,
            )
            self.done = True
            self._state = "done"
            return out
        raise ProtocolViolation(f"no messages expected in state {self._state}")

    def _select_test(self) -> list[Message]:
        p = self.params
        enough = (
            self._rect_pos.size >= p.m1
            and self._diag_pos.size >= p.m2 + self.css.n
        )
        if not enough:
            out = [
                self._emit(
                    Actor.BOB,
                    EventKind.DECISION,
                    {"status": "abort_insufficient_sample"},
                )
            ]
            self.result = PartyResult(
                status=SessionStatus.ABORTED_INSUFFICIENT_SAMPLE,
                estimate=None,
                key=None,
                own_digest=None,
                peer_digest=None,
                num_blocks=0,
            )
            self.done = True
            self._state = "done"
            return out
        i1, i2 = _draw_class_samples(
            self._rect_pos.size,
            self._diag_pos.size,
            p.m1,
            p.m2,
            self.streams.stream("test_selection"),
        )
        self._test_rect = self._rect_pos[i1]
        self._test_diag = self._diag_pos[i2]
        out = [
            self._emit(
                Actor.BOB,
                EventKind.TEST_INDICES,
                {
                    "rect": [int(x) for x in self._test_rect],
                    "diag": [int(x) for x in self._test_diag],
                },
            ),
            self._emit(
                Actor.BOB,
                EventKind.TEST_DISCLOSURE,
                {
                    "m1": p.m1,
                    "rect_bits": pack_bits(self.results.bits[self._test_rect]),
                    "m2": p.m2,
                    "diag_bits": pack_bits(self.results.bits[self._test_diag]),
                },
            ),
        ]
        self._state = "await_estimate"
        return out

    def _decode_blocks(self, payload: dict) -> None:
        css = self.css
        blocks = int(payload["blocks"])
        n = int(payload["block_len"])
        if n != css.n or blocks != self._num_blocks:
            raise ProtocolViolation("codeword announcement does not match this pair")
        used = self._raw_key_layout(self._rect_pos, self._diag_pos, self._test_diag)
        w = self.results.bits[used].reshape(blocks, n)
        perms = block_permutations(n, blocks, self._perm_seed)
        w_perm = np.take_along_axis(w, perms, axis=1)
        announcements = unpack_bits(payload["masked"], blocks * n).reshape(blocks, n)
        keys, _ok = reconcile_bob_blocks(css, w_perm, announcements)
        self._key = keys.reshape(-1)


# ---------------------------------------------------------------------------
# In-process driver
# ---------------------------------------------------------------------------

def run_session(
    params: ProtocolParams, strategy: AttackStrategy, css: CssPair, seed: int
) -> SessionOutcome:
    """Run one full session in-process and return the canonical record.

    The same state machines that serve the networked mode are driven over an
    in-memory queue; the channel strategy is applied to the qubit payload in
    flight, exactly as the networked relay does.
    """
    streams = RngStreams(seed)
    meta = session_meta(params, strategy, css, seed)
    canonical = SessionTranscript(meta=meta)
    alice = AliceMachine(params, css, streams, meta=meta)
    bob = BobMachine(params, css, streams, meta=meta)

    queue: deque[tuple[str, Message]] = deque(
        ("bob", msg) for msg in alice.start()
    )
    while queue:
        dest, (actor, kind, payload) = queue.popleft()
        if actor is Actor.ALICE and kind is EventKind.QUBITS_SENT:
            canonical.append(Actor.ALICE, kind, payload)
            delivered = channel_transform(payload, strategy, streams)
            canonical.append(Actor.CHANNEL, EventKind.QUBITS_SENT, delivered)
            replies = bob.receive(Actor.CHANNEL, EventKind.QUBITS_SENT, delivered)
            queue.extend(("alice", m) for m in replies)
            continue
        canonical.append(actor, kind, payload)
        if dest == "bob":
            replies = bob.receive(actor, kind, payload)
            queue.extend(("alice", m) for m in replies)
        else:
            replies = alice.receive(actor, kind, payload)
            queue.extend(("bob", m) for m in replies)

    if not (alice.done and bob.done):
        raise ProtocolError("session stalled before both parties finished")
    canonical.validate()
    a, b = alice.result, bob.result
    if a.status is not b.status:
        raise ProtocolError("parties disagree on the session status")
    return SessionOutcome(
        status=a.status,
        estimate=a.estimate,
        alice_key=a.key,
        bob_key=b.key,
        transcript=canonical,
        num_blocks=a.num_blocks,
    )
