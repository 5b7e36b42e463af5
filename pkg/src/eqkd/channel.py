"""Classical model of the polarization channel.

A transmitted photon is reduced to a (basis, bit) pair: the preparation basis
and the encoded bit. Pauli errors and intercept-resend eavesdropping act on
these pairs exactly as they would on the corresponding polarization states,
which is all the protocol analysis ever observes.

Encoding convention: in the rectilinear basis bit 0 is horizontal and bit 1 is
vertical; in the diagonal basis bit 0 is 45 degrees and bit 1 is 135 degrees.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

import numpy as np


class Basis(enum.IntEnum):
    """Measurement/preparation basis for one photon."""

    RECTILINEAR = 0
    DIAGONAL = 1


class PauliLetter(enum.IntEnum):
    """Single-qubit Pauli error acting on a polarization state."""

    I = 0
    X = 1
    Y = 2
    Z = 3


# _FLIP[letter, basis] == 1 when the letter flips the encoded bit in that
# basis: X flips rectilinear encodings only, Z diagonal only, Y both.
_FLIP = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.uint8)


@dataclass(frozen=True)
class QubitSymbol:
    """One transmitted photon, reduced to its preparation basis and bit."""

    basis: Basis
    bit: int

    def __post_init__(self) -> None:
        if self.bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {self.bit!r}")
        if not isinstance(self.basis, Basis):
            object.__setattr__(self, "basis", Basis(self.basis))


class SymbolBlock:
    """A batch of qubit symbols stored as parallel bit arrays.

    Behaves as a sequence of :class:`QubitSymbol`; bulk operations work on the
    underlying arrays directly.
    """

    __slots__ = ("bases", "bits")

    def __init__(self, bases: np.ndarray, bits: np.ndarray):
        bases = np.asarray(bases, dtype=np.uint8)
        bits = np.asarray(bits, dtype=np.uint8)
        if bases.shape != bits.shape or bases.ndim != 1:
            raise ValueError("bases and bits must be equal-length 1-d arrays")
        if bases.size and (bases.max() > 1 or bits.max() > 1):
            raise ValueError("bases and bits must be 0/1 valued")
        self.bases = bases
        self.bits = bits

    @classmethod
    def from_symbols(cls, symbols: Iterable[QubitSymbol]) -> "SymbolBlock":
        syms = list(symbols)
        bases = np.fromiter((int(s.basis) for s in syms), dtype=np.uint8, count=len(syms))
        bits = np.fromiter((s.bit for s in syms), dtype=np.uint8, count=len(syms))
        return cls(bases, bits)

    def __len__(self) -> int:
        return int(self.bases.size)

    def __getitem__(self, i: int) -> QubitSymbol:
        return QubitSymbol(Basis(int(self.bases[i])), int(self.bits[i]))

    def __iter__(self) -> Iterator[QubitSymbol]:
        for b, v in zip(self.bases, self.bits):
            yield QubitSymbol(Basis(int(b)), int(v))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SymbolBlock):
            return NotImplemented
        return np.array_equal(self.bases, other.bases) and np.array_equal(
            self.bits, other.bits
        )

    def copy(self) -> "SymbolBlock":
        return SymbolBlock(self.bases.copy(), self.bits.copy())


@dataclass(frozen=True)
class Passive:
    """No eavesdropping, no noise: the channel is the identity."""


@dataclass(frozen=True)
class BiasedInterceptResend:
    """Intercept-resend attack with per-basis interception probabilities.

    Each photon is independently measured in the rectilinear basis with
    probability ``p1``, in the diagonal basis with probability ``p2``, and
    passed untouched otherwise. A photon measured in its own preparation
    basis is re-sent unchanged; a photon measured in the other basis is
    re-sent in the measurement basis with Eve's (uniformly random) outcome.
    """

    p1: float
    p2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.p1 and 0.0 <= self.p2):
            raise ValueError("interception probabilities must be nonnegative")
        if self.p1 + self.p2 > 1.0 + 1e-12:
            raise ValueError("p1 + p2 must not exceed 1")


@dataclass(frozen=True)
class DepolarizingPauli:
    """I.i.d. Pauli noise with letter probabilities (q_i, q_x, q_y, q_z)."""

    q_i: float
    q_x: float
    q_y: float
    q_z: float

    def __post_init__(self) -> None:
        qs = (self.q_i, self.q_x, self.q_y, self.q_z)
        if any(q < 0 for q in qs):
            raise ValueError("letter probabilities must be nonnegative")
        if abs(sum(qs) - 1.0) > 1e-12:
            raise ValueError("letter probabilities must sum to 1 within 1e-12")

    @classmethod
    def symmetric(cls, w: float) -> "DepolarizingPauli":
        """Equal X/Y/Z weight w each; per-basis bit-flip rate is 2w."""
        return cls(1.0 - 3.0 * w, w, w, w)


@dataclass(frozen=True)
class FixedPauliString:
    """Apply one fixed Pauli letter per position; length must match the block."""

    letters: tuple

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "letters", tuple(PauliLetter(l) for l in self.letters)
        )


AttackStrategy = Union[Passive, BiasedInterceptResend, DepolarizingPauli, FixedPauliString]


def apply_pauli(symbol: QubitSymbol, letter: PauliLetter) -> QubitSymbol:
    """Apply one Pauli letter to one symbol.

    The basis never changes; the bit flips according to whether the letter
    anticommutes with the encoding of that basis.
    """
    flip = int(_FLIP[int(letter), int(symbol.basis)])
    return QubitSymbol(symbol.basis, symbol.bit ^ flip)


def apply_pauli_block(block: SymbolBlock, letters: np.ndarray) -> SymbolBlock:
    """Vectorized :func:`apply_pauli` over a block."""
    letters = np.asarray(letters, dtype=np.uint8)
    if letters.shape != block.bases.shape:
        raise ValueError("letter string length must match the block")
    flips = _FLIP[letters, block.bases]
    return SymbolBlock(block.bases.copy(), block.bits ^ flips)


def intercept_resend(
    symbol: QubitSymbol, measure_basis: Basis, rng: np.random.Generator
) -> QubitSymbol:
    """Measure one symbol in ``measure_basis`` and re-send the result.

    Matching basis leaves the symbol unchanged; a mismatched measurement
    yields a uniformly random outcome, re-sent in the measurement basis.
    """
    if symbol.basis == measure_basis:
        return symbol
    return QubitSymbol(measure_basis, int(rng.integers(0, 2)))


def _as_block(symbols) -> SymbolBlock:
    if isinstance(symbols, SymbolBlock):
        return symbols
    return SymbolBlock.from_symbols(symbols)


def transmit(symbols, strategy: AttackStrategy, rng: np.random.Generator) -> SymbolBlock:
    """Send a block of symbols through the channel under one strategy.

    Parameters
    ----------
    symbols : SymbolBlock or iterable of QubitSymbol
        What Alice transmitted.
    strategy : AttackStrategy
        Channel behaviour for this session.
    rng : numpy Generator
        Randomness source for the strategy (unused for Passive and
        FixedPauliString).

    Returns
    -------
    SymbolBlock
        What arrives at Bob's end.
    """
    block = _as_block(symbols)
    if isinstance(strategy, Passive):
        return block.copy()
    if isinstance(strategy, FixedPauliString):
        letters = np.fromiter(
            (int(l) for l in strategy.letters), dtype=np.uint8, count=len(strategy.letters)
        )
        return apply_pauli_block(block, letters)
    if isinstance(strategy, DepolarizingPauli):
        probs = (strategy.q_i, strategy.q_x, strategy.q_y, strategy.q_z)
        letters = rng.choice(4, size=len(block), p=probs).astype(np.uint8)
        return apply_pauli_block(block, letters)
    if isinstance(strategy, BiasedInterceptResend):
        n = len(block)
        u = rng.random(n)
        meas_rect = u < strategy.p1
        meas_diag = (u >= strategy.p1) & (u < strategy.p1 + strategy.p2)
        bases = block.bases.copy()
        bits = block.bits.copy()
        # mismatched measurements randomize the re-sent bit
        mismatch = (meas_rect & (bases == Basis.DIAGONAL)) | (
            meas_diag & (bases == Basis.RECTILINEAR)
        )
        coins = rng.integers(0, 2, size=int(mismatch.sum()), dtype=np.uint8)
        bits[mismatch] = coins
        bases[meas_rect] = Basis.RECTILINEAR
        bases[meas_diag] = Basis.DIAGONAL
        return SymbolBlock(bases, bits)
    raise TypeError(f"unknown strategy {strategy!r}")


def strategy_stream_name(strategy: AttackStrategy) -> str | None:
    """Name of the RNG substream a strategy consumes, if any."""
    if isinstance(strategy, BiasedInterceptResend):
        return "eve"
    if isinstance(strategy, DepolarizingPauli):
        return "noise"
    return None


# Named substreams used by a protocol session. Every consumer of randomness
# gets its own stream derived from the master seed, so transcripts do not
# depend on evaluation order.
STREAM_NAMES = (
    "alice_bases",
    "alice_bits",
    "bob_bases",
    "eve",
    "noise",
    "test_selection",
    "codeword",
    "permutation",
)

_MAX_SEED = 2**64


class RngStreams:
    """Named, independently seeded RNG substreams from one 64-bit master seed.

    The same (seed, name) pair always yields the same stream; repeated calls
    for a name return the same stateful generator.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not (0 <= seed < _MAX_SEED):
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            ss = np.random.SeedSequence([self.seed, *name.encode("ascii")])
            gen = np.random.default_rng(ss)
            self._streams[name] = gen
        return gen
