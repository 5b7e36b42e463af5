"""Simulator and analysis toolkit for biased-basis quantum key distribution.

The package splits into five layers: ``channel`` (symbols, attack and noise
strategies, seeded randomness), ``protocol`` (the two-party session with
per-basis error estimation), ``codes`` (nested linear code pairs for
reconciliation and key extraction), ``bounds`` (finite-size security bounds
and the parameter planner), and ``harness`` (experiment runner, CSV, CLI,
and the networked three-process mode). Everything is a classical simulation:
qubits are (basis, bit) records, and attacks are restricted to the
intercept-resend and bit/phase-flip families that this reduction captures.
"""

from .bounds import (
    FidelityBudget,
    Lemma1Result,
    ParameterPlan,
    SamplingInstance,
    SecurityParams,
    binary_entropy,
    exponent_A,
    hypergeometric_pmf,
    key_rate,
    lemma1_bound,
    plan_parameters,
    rate_threshold,
    theorem2_asymptotic,
    theorem2_bound,
    theorem3_fidelity,
)
from .channel import (
    Basis,
    BiasedInterceptResend,
    DepolarizingPauli,
    FixedPauliString,
    Passive,
    PauliLetter,
    QubitSymbol,
    RngStreams,
    SymbolBlock,
    apply_pauli,
    intercept_resend,
    transmit,
)
from .codes import (
    CssPair,
    DecodeFailure,
    LinearCode,
    Permutation,
    load_code,
    load_css,
    reconcile_alice,
    reconcile_bob,
    steane_pair,
    validate_css,
)
from .protocol import (
    AliceMachine,
    BobMachine,
    ErrorEstimate,
    InsufficientSample,
    ProtocolParams,
    SessionOutcome,
    SessionStatus,
    SiftClass,
    SiftedData,
    alice_prepare,
    biased_attack_rates,
    bob_measure,
    naive_average_rate,
    naive_estimate,
    refined_estimate,
    run_session,
    sift,
    weighted_error_rates,
)
from .transcript import Actor, Event, EventKind, SessionTranscript

__version__ = "0.1.0"

__all__ = [
    "Actor",
    "AliceMachine",
    "Basis",
    "BiasedInterceptResend",
    "BobMachine",
    "CssPair",
    "DecodeFailure",
    "DepolarizingPauli",
    "ErrorEstimate",
    "Event",
    "EventKind",
    "FidelityBudget",
    "FixedPauliString",
    "InsufficientSample",
    "Lemma1Result",
    "LinearCode",
    "ParameterPlan",
    "Passive",
    "PauliLetter",
    "Permutation",
    "ProtocolParams",
    "QubitSymbol",
    "RngStreams",
    "SamplingInstance",
    "SecurityParams",
    "SessionOutcome",
    "SessionStatus",
    "SessionTranscript",
    "SiftClass",
    "SiftedData",
    "SymbolBlock",
    "alice_prepare",
    "apply_pauli",
    "biased_attack_rates",
    "binary_entropy",
    "bob_measure",
    "exponent_A",
    "hypergeometric_pmf",
    "intercept_resend",
    "key_rate",
    "lemma1_bound",
    "load_code",
    "load_css",
    "naive_average_rate",
    "naive_estimate",
    "plan_parameters",
    "rate_threshold",
    "reconcile_alice",
    "reconcile_bob",
    "refined_estimate",
    "run_session",
    "sift",
    "steane_pair",
    "theorem2_asymptotic",
    "theorem2_bound",
    "theorem3_fidelity",
    "transmit",
    "validate_css",
    "weighted_error_rates",
    "__version__",
]
