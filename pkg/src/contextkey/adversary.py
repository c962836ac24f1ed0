"""Eavesdropper strategies, key-leakage measurement, and localization.

Eve sits on one link of the chain and applies a projective dichotomic
measurement to the transiting state (a measurement-resend attack).  Her
observable either commutes with everything measured afterwards — in which
case the violation statistics are provably untouched and only masking
denies her the key — or it does not, in which case the statistics collapse
below the classical bound and the attack is detected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qmath
from .inequality import InequalityEstimate
from .noise import mutual_information_from_pairs

STRATEGIES = ("none", "commuting-measure", "noncommuting-measure", "measure-resend")
RESEND_MODES = ("post-state", "fresh-reference")


@dataclass(frozen=True)
class EveConfig:
    """Position, strategy, and observable of the eavesdropper.

    ``position`` is the link index: link k sits between parties k and k+1.
    ``observable`` is a setting label such as ``"Z1"``; an arbitrary
    dichotomic observable can be supplied as an involution ``matrix``
    instead.  ``activity_rate`` is the fraction of rounds attacked.
    """

    position: int
    observable: str | None = None
    strategy: str = "commuting-measure"
    activity_rate: float = 1.0
    resend: str = "post-state"
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown eve strategy {self.strategy!r}")
        if self.resend not in RESEND_MODES:
            raise ValueError(f"unknown resend mode {self.resend!r}")
        if not 0.0 <= self.activity_rate <= 1.0:
            raise ValueError("activity_rate must lie in [0, 1]")
        if self.position < 1:
            raise ValueError("position is a 1-based link index")
        if self.strategy != "none" and self.observable is None and self.matrix is None:
            raise ValueError("an active eve needs an observable label or matrix")


@dataclass(frozen=True)
class LeakageReport:
    """How much key Eve learned, and whether the checks caught her."""

    eve_key_mutual_information: float | None
    attacked_key_rounds: int
    observed: dict[str, InequalityEstimate]
    expected_clean: dict[str, float]
    detected: bool
    sufficient_data: bool


def eve_observable(config: EveConfig, indexing) -> qmath.DichotomicObservable:
    """The full-space dichotomic observable Eve measures."""
    from .inequality import LOCAL_MATRICES, split_label
    from .mapping import lift_matrix

    if config.matrix is not None:
        return qmath.DichotomicObservable.from_involution(
            np.asarray(config.matrix, dtype=np.complex128), label=config.observable or "custom"
        )
    prefix, party = split_label(config.observable)
    lifted = lift_matrix(LOCAL_MATRICES[prefix], party, indexing)
    return qmath.DichotomicObservable.from_involution(lifted, label=config.observable)


def eve_intercept(
    state: qmath.StateVector,
    config: EveConfig,
    rng: np.random.Generator,
    indexing,
    reference: qmath.StateVector | None = None,
) -> tuple[qmath.StateVector, int | None]:
    """Apply Eve's measurement to a transiting state.

    Rounds she skips (per ``activity_rate``) pass through untouched.  With
    the ``fresh-reference`` resend rule she forwards her outcome's
    projection of ``reference`` instead of the post-measurement state.
    """
    if config.strategy == "none":
        return state, None
    if config.activity_rate < 1.0 and rng.random() >= config.activity_rate:
        return state, None
    obs = eve_observable(config, indexing)
    outcome, post = qmath.measure_projective(state, obs, rng)
    if config.resend == "fresh-reference":
        if reference is None:
            raise ValueError("fresh-reference resend needs the protocol reference state")
        projected = obs.projector(outcome) @ reference.amplitudes
        post = qmath.StateVector(projected / np.linalg.norm(projected))
    return post, outcome


def leakage_analysis(transcript, reference_party: int = 1) -> LeakageReport:
    """Mutual information between Eve's record and the key, plus detection.

    The key symbol is the reference party's key bit; in the protocols'
    noiseless runs every party holds the same bit, so the choice only
    matters under simultaneous noise.
    """
    from . import protocol as proto

    sifting = proto.sift(transcript)
    by_id = {rec.round_id: rec for rec in transcript.records}
    pairs = []
    for i, round_id in enumerate(sifting.key_rounds):
        rec = by_id[round_id]
        if rec.eve_outcome is None:
            continue
        bit = sifting.key_bits[reference_party - 1][i]
        if bit is None:
            continue
        pairs.append(((1 - rec.eve_outcome) // 2, bit))
    observed = proto.check_estimates(transcript)
    if transcript.config.kind == "mermin":
        expected = {"mermin": 2.0 ** (transcript.config.num_parties - 1)}
    else:
        expected = {name: 2.0 for name in observed}
    detected = not proto.all_checks_violated(observed)
    sufficient = len(pairs) > 0
    mi = mutual_information_from_pairs(pairs) if sufficient else None
    return LeakageReport(
        eve_key_mutual_information=mi,
        attacked_key_rounds=len(pairs),
        observed=observed,
        expected_clean=expected,
        detected=detected,
        sufficient_data=sufficient,
    )


class InsufficientCheckData(ValueError):
    """A link's pairwise estimate has empty setting combinations."""


def localize_eve(pairwise_estimates: dict[int, InequalityEstimate]) -> frozenset[int]:
    """Links whose pairwise statistic fails the violation test.

    With a single intruder only the attacked link fails while its
    neighbours keep violating; overlapping failures are all returned.
    """
    for link, estimate in pairwise_estimates.items():
        if not estimate.usable:
            raise InsufficientCheckData(f"link {link} has setting combinations with no data")
    return frozenset(link for link, est in pairwise_estimates.items() if not est.violated)
