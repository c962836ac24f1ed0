"""Preparation and detector noise models and the induced key rates.

The key generation rate here is the minimum pairwise Shannon mutual
information between the parties' key records.  The analytic path builds
the exact joint distribution of the three parties' records by enumerating
the small classical probability space each model induces (preparation
flips, detector flips, erasures), so the reported numbers carry no
sampling error; the empirical path estimates the same tables from
simulated transcripts.

Lossy-detector (erasure) models are reported under two conventions,
because the conditioning is not uniquely determined by the model
statement: ``conditional`` renormalizes each pair's table to rounds where
both records exist, ``throughput`` multiplies that by the probability of
both records existing.  Models without erasures are unaffected by the
choice.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .qmath import DichotomicObservable, DensityOperator, StateVector

ERASED = "e"

MODELS = ("flip", "white", "detector", "model1", "model2")


@dataclass(frozen=True)
class FlipPrep:
    """Key-basis preparation flip: intended bit 0 flips w.p. eps1, bit 1 w.p. eps2."""

    eps1: float
    eps2: float

    def __post_init__(self):
        _check_unit("eps1", self.eps1)
        _check_unit("eps2", self.eps2)


@dataclass(frozen=True)
class WhitePrep:
    """Key-basis preparation contaminated by white noise of weight eps."""

    eps: float

    def __post_init__(self):
        _check_unit("eps", self.eps)


@dataclass(frozen=True)
class MisreadDetector:
    """Detector that reports the opposite outcome with probability eta."""

    eta: float

    def __post_init__(self):
        _check_unit("eta", self.eta)


@dataclass(frozen=True)
class LossDetector:
    """Detector that registers with probability eta and otherwise misses."""

    eta: float

    def __post_init__(self):
        _check_unit("eta", self.eta)


PrepNoise = FlipPrep | WhitePrep
DetectorNoise = MisreadDetector | LossDetector


@dataclass(frozen=True)
class NoiseConfig:
    prep: PrepNoise | None = None
    detector: DetectorNoise | None = None


@dataclass(frozen=True)
class KeyRateReport:
    model: str
    kind: str
    convention: str
    pairwise_mi: dict[tuple[int, int], float]
    key_rate: float
    min_pair: tuple[int, int]

    def __post_init__(self):
        lowest = min(self.pairwise_mi.values())
        if abs(self.key_rate - lowest) > 1e-12:
            raise ValueError("key_rate must be the minimum pairwise mutual information")


def _check_unit(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} = {value} outside [0, 1]")


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def binary_mutual_information(joint) -> float:
    """Shannon mutual information (bits) of a small joint probability table."""
    table = np.asarray(joint, dtype=float)
    if table.ndim != 2:
        raise ValueError("joint table must be two-dimensional")
    if np.any(table < -1e-12):
        raise ValueError("joint table has negative entries")
    total = table.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"joint table sums to {total}, expected 1")
    px = table.sum(axis=1)
    py = table.sum(axis=0)
    info = 0.0
    for i, j in itertools.product(range(table.shape[0]), range(table.shape[1])):
        p = table[i, j]
        if p > 0.0:
            info += p * math.log2(p / (px[i] * py[j]))
    return float(max(info, 0.0))


def key_basis_states(kind: str, dim: int) -> tuple[int, int]:
    """Computational-basis indices encoding key bits 0 and 1."""
    if kind == "mermin":
        return 0, dim - 1
    if kind == "chsh":
        return 1, 2
    raise ValueError(f"unknown protocol kind {kind!r}")


def noisy_preparation(ideal_bit: int, noise: PrepNoise, kind: str, num_parties: int = 3) -> DensityOperator:
    """Density operator actually emitted when preparing a key-basis state."""
    if ideal_bit not in (0, 1):
        raise ValueError("ideal_bit must be 0 or 1")
    dim = 2**num_parties if kind == "mermin" else 4
    zero_idx, one_idx = key_basis_states(kind, dim)
    target = zero_idx if ideal_bit == 0 else one_idx
    other = one_idx if ideal_bit == 0 else zero_idx
    out = np.zeros((dim, dim), dtype=np.complex128)
    if isinstance(noise, FlipPrep):
        eps = noise.eps1 if ideal_bit == 0 else noise.eps2
        out[target, target] = 1.0 - eps
        out[other, other] = eps
    elif isinstance(noise, WhitePrep):
        out[target, target] = 1.0 - noise.eps
        out += (noise.eps / dim) * np.eye(dim)
    else:
        raise TypeError(f"unsupported preparation noise {noise!r}")
    return DensityOperator(out)


def detector_effects(obs: DichotomicObservable, noise: DetectorNoise) -> list[tuple[object, np.ndarray]]:
    """Measurement effects of a noisy detector for one dichotomic observable.

    Misreading mixes the two projectors; loss scales them and adds a
    no-click effect.  Both are mixtures/scalings of the ideal projectors,
    so sampling them as an ideal measurement followed by a classical flip
    (or erasure) of the record is exactly equivalent.
    """
    plus, minus = obs.plus_projector, obs.minus_projector
    if isinstance(noise, MisreadDetector):
        eta = noise.eta
        return [(+1, (1 - eta) * plus + eta * minus), (-1, eta * plus + (1 - eta) * minus)]
    if isinstance(noise, LossDetector):
        eta = noise.eta
        eye = np.eye(obs.dim)
        return [(+1, eta * plus), (-1, eta * minus), (ERASED, (1 - eta) * eye)]
    raise TypeError(f"unsupported detector noise {noise!r}")


def sample_noisy_preparation(
    ideal_bit: int, noise: PrepNoise | None, kind: str, dim: int, rng: np.random.Generator
) -> int:
    """Sample the basis index actually emitted for a key-basis preparation.

    Exact for these models: every noisy preparation is a classical mixture
    of computational-basis states, so sampling the mixture and proceeding
    with pure states reproduces all downstream statistics.
    """
    zero_idx, one_idx = key_basis_states(kind, dim)
    target = zero_idx if ideal_bit == 0 else one_idx
    if noise is None:
        return target
    if isinstance(noise, FlipPrep):
        eps = noise.eps1 if ideal_bit == 0 else noise.eps2
        if eps > 0.0 and rng.random() < eps:
            return one_idx if ideal_bit == 0 else zero_idx
        return target
    if isinstance(noise, WhitePrep):
        if noise.eps > 0.0 and rng.random() < noise.eps:
            return int(rng.integers(dim))
        return target
    raise TypeError(f"unsupported preparation noise {noise!r}")


# --- analytic key rates -------------------------------------------------

def _flip(bit: int, prob: float):
    """(probability, value) branches of a classical bit flip."""
    if prob <= 0.0:
        return [(1.0, bit)]
    if prob >= 1.0:
        return [(1.0, 1 - bit)]
    return [(1.0 - prob, bit), (prob, 1 - bit)]


def _erase(bit, prob_click: float):
    if prob_click >= 1.0:
        return [(1.0, bit)]
    if prob_click <= 0.0:
        return [(1.0, ERASED)]
    return [(prob_click, bit), (1.0 - prob_click, ERASED)]


def _prep_flip_branches(bit: int, eps1: float, eps2: float):
    return _flip(bit, eps1 if bit == 0 else eps2)


def _mermin_distribution(model: str, eps1: float, eps2: float, eps: float, eta: float):
    """Joint distribution of the three parties' key records for one round."""
    dist: dict[tuple, float] = {}

    def add(prob, triple):
        if prob > 0.0:
            dist[triple] = dist.get(triple, 0.0) + prob

    for b1 in (0, 1):
        p1 = 0.5
        if model == "white":
            # Emitted basis state determines both readers' records directly.
            dim = 8
            target = 0 if b1 == 0 else dim - 1
            emissions = [(1.0 - eps + eps / dim, target)] + [
                (eps / dim, s) for s in range(dim) if s != target
            ]
            for pe, s in emissions:
                digits = ((s >> 2) & 1, (s >> 1) & 1, s & 1)
                add(p1 * pe, (b1, digits[1], digits[2]))
            continue
        e1, e2 = (eps1, eps2) if model in ("flip", "model1", "model2") else (0.0, 0.0)
        for pv, v in _prep_flip_branches(b1, e1, e2):
            if model in ("detector", "model1"):
                for p2, r2 in _flip(v, eta):
                    for p3, r3 in _flip(v, eta):
                        add(p1 * pv * p2 * p3, (b1, r2, r3))
            elif model == "model2":
                for p2, r2 in _erase(v, eta):
                    for p3, r3 in _erase(v, eta):
                        add(p1 * pv * p2 * p3, (b1, r2, r3))
            else:
                add(p1 * pv, (b1, v, v))
    return dist


def _chsh_distribution(model: str, eps1: float, eps2: float, eps: float, eta: float):
    """Same, for the pairwise-grouped protocol where every party re-prepares."""
    dist: dict[tuple, float] = {}

    def add(prob, triple):
        if prob > 0.0:
            dist[triple] = dist.get(triple, 0.0) + prob

    def emit(bit):
        """Reader's bit after one noisy preparation of `bit`."""
        if model == "white":
            if eps <= 0.0:
                return [(1.0, bit)]
            # Uniform basis emission reads as a fair bit.
            return [(1.0 - eps, bit), (eps / 2, 0), (eps / 2, 1)]
        if model in ("flip", "model1", "model2"):
            return _prep_flip_branches(bit, eps1, eps2)
        return [(1.0, bit)]

    def detect(true_bit):
        if model in ("detector", "model1"):
            return _flip(true_bit, eta)
        if model == "model2":
            return _erase(true_bit, eta)
        return [(1.0, true_bit)]

    for b1 in (0, 1):
        for pe1, v1 in emit(b1):
            for pd2, r2 in detect(v1):
                # An erased record re-prepares from a fresh fair draw.
                reprep = [(1.0, r2)] if r2 != ERASED else [(0.5, 0), (0.5, 1)]
                for pr, intent2 in reprep:
                    for pe2, v2 in emit(intent2):
                        for pd3, r3 in detect(v2):
                            add(0.5 * pe1 * pd2 * pr * pe2 * pd3, (b1, r2, r3))
    return dist


def _pair_table(dist: dict[tuple, float], i: int, j: int):
    symbols_i = sorted({k[i] for k in dist}, key=str)
    symbols_j = sorted({k[j] for k in dist}, key=str)
    table = np.zeros((len(symbols_i), len(symbols_j)))
    for key, prob in dist.items():
        table[symbols_i.index(key[i]), symbols_j.index(key[j])] += prob
    return table, symbols_i, symbols_j


def _pair_mi(dist, i, j, convention: str) -> float:
    table, symbols_i, symbols_j = _pair_table(dist, i, j)
    if ERASED not in symbols_i and ERASED not in symbols_j:
        return binary_mutual_information(table)
    keep_i = [k for k, s in enumerate(symbols_i) if s != ERASED]
    keep_j = [k for k, s in enumerate(symbols_j) if s != ERASED]
    sub = table[np.ix_(keep_i, keep_j)]
    weight = sub.sum()
    if weight <= 0.0:
        return 0.0
    conditional = binary_mutual_information(sub / weight)
    if convention == "conditional":
        return conditional
    if convention == "throughput":
        return float(conditional * weight)
    raise ValueError(f"unknown erasure convention {convention!r}")


def analytic_key_rate(
    model: str,
    kind: str = "mermin",
    *,
    eps1: float = 0.0,
    eps2: float = 0.0,
    eps: float = 0.0,
    eta: float = 0.0,
    num_parties: int = 3,
    convention: str = "conditional",
) -> KeyRateReport:
    """Exact pairwise mutual informations and their minimum for one model.

    Models: ``flip`` (preparation flips eps1/eps2), ``white`` (white-noise
    weight eps), ``detector`` (misread probability eta), ``model1`` (flips
    plus misreads), ``model2`` (flips plus lossy detectors with click
    probability eta).
    """
    if model not in MODELS:
        raise ValueError(f"unknown noise model {model!r}")
    if kind not in ("mermin", "chsh"):
        raise ValueError(f"unknown protocol kind {kind!r}")
    if num_parties != 3:
        raise ValueError("the analytic path covers three parties; simulate for other sizes")
    for name, value in (("eps1", eps1), ("eps2", eps2), ("eps", eps), ("eta", eta)):
        _check_unit(name, value)
    builder = _mermin_distribution if kind == "mermin" else _chsh_distribution
    dist = builder(model, eps1, eps2, eps, eta)
    pairs = [(1, 2), (1, 3), (2, 3)]
    mi = {(i, j): _pair_mi(dist, i - 1, j - 1, convention) for i, j in pairs}
    min_pair = min(pairs, key=lambda p: mi[p])
    effective = convention if model == "model2" else "exact"
    return KeyRateReport(model, kind, effective, mi, mi[min_pair], min_pair)


def mutual_information_from_pairs(pairs) -> float:
    """Plug-in mutual information of a list of (x, y) symbol pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no samples")
    xs = sorted({x for x, _ in pairs}, key=str)
    ys = sorted({y for _, y in pairs}, key=str)
    table = np.zeros((len(xs), len(ys)))
    for x, y in pairs:
        table[xs.index(x), ys.index(y)] += 1.0
    return binary_mutual_information(table / table.sum())


class InsufficientKeyRounds(ValueError):
    """Too few key rounds to estimate pairwise mutual information."""


def empirical_key_rate(transcript, min_key_rounds: int = 1000) -> KeyRateReport:
    """Pairwise mutual information estimated from a transcript's key rounds.

    Erased records enter the tables as a third symbol.
    """
    from .protocol import sift

    sifting = sift(transcript)
    num_rounds = len(sifting.key_rounds)
    if num_rounds < min_key_rounds:
        raise InsufficientKeyRounds(
            f"{num_rounds} key rounds, need at least {min_key_rounds}"
        )
    num_parties = transcript.config.num_parties
    bits = sifting.key_bits
    pairs = [(i, j) for i in range(1, num_parties + 1) for j in range(i + 1, num_parties + 1)]
    mi = {}
    for i, j in pairs:
        samples = [
            (bits[i - 1][r] if bits[i - 1][r] is not None else ERASED,
             bits[j - 1][r] if bits[j - 1][r] is not None else ERASED)
            for r in range(num_rounds)
        ]
        mi[(i, j)] = mutual_information_from_pairs(samples)
    min_pair = min(pairs, key=lambda p: mi[p])
    return KeyRateReport("empirical", transcript.config.kind, "empirical", mi, mi[min_pair], min_pair)
