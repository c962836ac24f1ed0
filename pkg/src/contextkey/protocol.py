"""Round-by-round execution of the Mermin and CHSH conference protocols.

One round: the first party samples a preparation of the reference state
under a random setting, masks it, and sends it down the chain; every later
party measures its random setting, masks (all but the last), and forwards.
In the pairwise-grouped CHSH variant each party re-prepares a fresh
four-dimensional state instead of forwarding the measured one.

All randomness flows from one 64-bit seed through named substreams
(round, masking, eve, noise).  Each stream is materialized as one array
row per round before execution, so rounds are independent, reproducible,
order-independent, and may run concurrently with a transcript identical
to sequential execution.  Toggling masking, noise, or the eavesdropper
never shifts the other streams.

The engine keeps states as raw amplitude vectors and applies single-party
2×2 operators by index arithmetic; the wrapped qmath/mapping primitives
define the semantics and are cross-checked against this fast path in the
test suite.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import inequality, qmath
from .adversary import EveConfig
from .inequality import LOCAL_MATRICES, InequalityEstimate, split_label
from .mapping import PartyIndexing, lift_matrix
from .noise import (
    FlipPrep,
    LossDetector,
    MisreadDetector,
    NoiseConfig,
    WhitePrep,
)
from .qmath import InvariantViolation, PROB_FLOOR, UnitaryOperator

KINDS = ("mermin", "chsh")

MERMIN_PREFIXES = ("X", "Y", "Z")
CHSH_ODD_PREFIXES = ("X", "XpZ", "Z")
CHSH_EVEN_PREFIXES = ("XpZ", "Z", "ZmX")

# Setting prefixes whose outcomes can enter the key.
KEY_PREFIXES = {"mermin": ("Z",), "chsh": ("XpZ", "Z")}

TWO_PI = 2.0 * math.pi

_STREAMS = {"round": 0, "masking": 1, "eve": 2, "noise": 3}


def stream_generator(seed: int, name: str) -> np.random.Generator:
    """The named top-level substream of one run."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[name],)))


def substream(seed: int, name: str, round_id: int) -> np.random.Generator:
    """Per-round generator, for consumers that need a full Generator."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAMS[name], round_id))
    )


@dataclass(frozen=True)
class ProtocolConfig:
    kind: str
    num_parties: int
    rounds: int
    seed: int = 0
    masking_enabled: bool = True
    # Whether the key-generating observable joins the masking generators
    # (both variants scramble fully; the toggle exists for comparison runs).
    masking_include_key: bool = True
    noise: NoiseConfig | None = None
    eve: EveConfig | None = None

    #: size t of each party's setting set
    observable_set_size: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        minimum = 3 if self.kind == "mermin" else 2
        if self.num_parties < minimum:
            raise ValueError(f"{self.kind} protocol needs at least {minimum} parties")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if self.observable_set_size != 3:
            raise ValueError("each party draws from exactly three settings")
        if self.eve is not None and not 1 <= self.eve.position < self.num_parties:
            raise ValueError(
                f"eve position {self.eve.position} is not a link index in 1..{self.num_parties - 1}"
            )

    @property
    def dim(self) -> int:
        return 2**self.num_parties if self.kind == "mermin" else 4


@dataclass(frozen=True)
class MaskingSpec:
    """Generators available for one masking transformation."""

    num_parties: int
    generator_labels: tuple[str, ...]


def masking_unitary(
    k: int, spec: MaskingSpec, rng: np.random.Generator, indexing: PartyIndexing | None = None
) -> UnitaryOperator:
    """exp(i Σⱼ θⱼGⱼ), θⱼ ~ U[0, 2π), over the spec's lifted generators.

    Every generator must act on parties 1..k so the result commutes with
    all observables of parties k+1..N.
    """
    if indexing is None:
        indexing = PartyIndexing(spec.num_parties)
    terms = []
    for label in spec.generator_labels:
        prefix, party = split_label(label)
        if party > k:
            raise InvariantViolation(
                f"masking generator {label} leaks onto party {party} > {k}"
            )
        theta = rng.uniform(0.0, TWO_PI)
        terms.append(
            (theta, qmath.HermitianOperator(lift_matrix(LOCAL_MATRICES[prefix], party, indexing)))
        )
    return qmath.unitary_from_generator(terms, dim=indexing.total_dim)


@dataclass(frozen=True)
class RoundRecord:
    round_id: int
    labels: tuple[str, ...]
    outcomes: tuple[int | None, ...]
    eve_label: str | None = None
    eve_outcome: int | None = None
    revealed: bool = False
    key_round: bool = False


@dataclass(frozen=True)
class Transcript:
    config: ProtocolConfig
    records: tuple[RoundRecord, ...]
    seed: int

    def __post_init__(self):
        if len(self.records) != self.config.rounds:
            raise ValueError("record count does not match the configured rounds")


@dataclass(frozen=True)
class SiftingResult:
    key_rounds: tuple[int, ...]
    check_rounds: tuple[int, ...]
    discarded: tuple[int, ...]
    key_bits: tuple[tuple[int | None, ...], ...]


@dataclass(frozen=True)
class KeyMaterial:
    bits: tuple[tuple[int | None, ...], ...]
    num_key_rounds: int
    num_complete: int
    agreement_fraction: float | None


def party_labels(kind: str, num_parties: int) -> tuple[tuple[str, ...], ...]:
    """The three setting labels each party draws from, uniformly."""
    sets = []
    for k in range(1, num_parties + 1):
        if kind == "mermin":
            sets.append(tuple(f"{p}{k}" for p in MERMIN_PREFIXES))
        elif k % 2 == 1:
            sets.append(tuple(f"{p}1" for p in CHSH_ODD_PREFIXES))
        else:
            sets.append(tuple(f"{p}2" for p in CHSH_EVEN_PREFIXES))
    return tuple(sets)


def _key_round_from_prefixes(kind: str, prefixes) -> bool:
    if kind == "mermin":
        return all(p == "Z" for p in prefixes)
    return all(p == "Z" for p in prefixes) or all(p == "XpZ" for p in prefixes)


def _chsh_pair_matches(prefix_a: str, prefix_b: str, first_is_odd: bool) -> bool:
    odd, even = (prefix_a, prefix_b) if first_is_odd else (prefix_b, prefix_a)
    return odd in ("X", "Z") and even in ("XpZ", "ZmX")


def _check_round_from_prefixes(kind: str, prefixes) -> bool:
    if kind == "mermin":
        return all(p in ("X", "Y") for p in prefixes)
    if _key_round_from_prefixes(kind, prefixes):
        return False
    return any(
        _chsh_pair_matches(prefixes[k - 1], prefixes[k], first_is_odd=(k % 2 == 1))
        for k in range(1, len(prefixes))
    )


def is_key_round(kind: str, labels) -> bool:
    return _key_round_from_prefixes(kind, [split_label(lab)[0] for lab in labels])


def is_check_round(kind: str, labels) -> bool:
    return _check_round_from_prefixes(kind, [split_label(lab)[0] for lab in labels])


def is_revealed(kind: str, labels) -> bool:
    if kind == "mermin":
        return is_check_round(kind, labels)
    return not is_key_round(kind, labels)


def key_bit(kind: str, party: int, outcome: int | None) -> int | None:
    """Outcome-to-bit map; adjacent CHSH outcomes alternate, so parity-adjust."""
    if outcome is None:
        return None
    raw = (1 - outcome) // 2
    if kind == "chsh":
        return (raw + (party - 1)) % 2
    return raw


def _su2_product(axes: tuple[str, ...], angles) -> np.ndarray:
    """Composition of exp(iθ·σ_axis) factors, earliest listed applied first.

    Composing rotations about distinct fixed axes with independent uniform
    angles makes the ensemble-average Bloch map vanish identically, which
    a single exponential of a summed generator does not achieve (the
    component along the mean rotation axis survives).
    """
    a, b, c, d = 1.0 + 0j, 0j, 0j, 1.0 + 0j
    for axis, theta in zip(axes, angles):
        cos = math.cos(theta)
        sin = math.sin(theta)
        if axis == "X":
            ra, rb, rc, rd = cos, 1j * sin, 1j * sin, cos
        elif axis == "Y":
            ra, rb, rc, rd = cos, sin, -sin, cos
        elif axis == "Z":
            ra, rb, rc, rd = cos + 1j * sin, 0j, 0j, cos - 1j * sin
        else:
            raise ValueError(f"masking axis must be a Pauli label, got {axis!r}")
        a, b, c, d = ra * a + rb * c, ra * b + rb * d, rc * a + rd * c, rc * b + rd * d
    return np.array([[a, b], [c, d]])


class _Engine:
    """Precomputed per-run machinery; play_round is thread-safe."""

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self.kind = config.kind
        self.num_parties = config.num_parties
        self.dim = config.dim
        num_qudit_parties = config.num_parties if self.kind == "mermin" else 2
        self.indexing = PartyIndexing(num_qudit_parties)
        self.labels = party_labels(self.kind, self.num_parties)
        self.parsed = tuple(tuple(split_label(lab) for lab in labs) for labs in self.labels)
        self.key_prefixes = KEY_PREFIXES[self.kind]
        self.plus_projectors = {
            prefix: (np.eye(2, dtype=np.complex128) + mat) / 2
            for prefix, mat in LOCAL_MATRICES.items()
        }
        self.reference = self._reference_state()
        self.pre_post = {
            party: (2 ** (party - 1), self.dim // 2**party)
            for party in range(1, num_qudit_parties + 1)
        }
        self.mask_axes = (
            ("X", "Y", "Z") if (config.masking_include_key or self.kind == "chsh") else ("X", "Y")
        )
        self.mask_plan = self._masking_plan()
        self.prep_noise = config.noise.prep if config.noise else None
        self.det_noise = config.noise.detector if config.noise else None
        self.eve = config.eve if (config.eve and config.eve.strategy != "none") else None
        self.eve_parsed = None
        self.eve_custom = None
        if self.eve is not None:
            self._prepare_eve()
        self._pregenerate()

    # -- construction ----------------------------------------------------

    def _reference_state(self) -> np.ndarray:
        amps = np.zeros(self.dim, dtype=np.complex128)
        if self.kind == "mermin":
            amps[0] = 1 / math.sqrt(2)
            amps[-1] = 1j / math.sqrt(2)
        else:
            amps[1] = 1 / math.sqrt(2)
            amps[2] = -1 / math.sqrt(2)
        return amps

    def _masking_plan(self):
        """Per sending party: (qudit party, angle-slice) pairs to re-randomize."""
        width = len(self.mask_axes)
        plan = {}
        offset = 0
        for k in range(1, self.num_parties):
            if self.kind == "mermin":
                hops = []
                for party in range(1, k + 1):
                    hops.append((party, slice(offset, offset + width)))
                    offset += width
                plan[k] = tuple(hops)
            else:
                side = 1 if k % 2 == 1 else 2
                plan[k] = ((side, slice(offset, offset + width)),)
                offset += width
        self._mask_angle_count = offset
        return plan

    def _future_labels(self, link: int) -> list[str]:
        """Observables that may still be measured on a state crossing ``link``."""
        if self.kind == "mermin":
            out = []
            for k in range(link + 1, self.num_parties + 1):
                out.extend(self.labels[k - 1])
            return out
        return list(self.labels[link])  # the receiving party's settings

    def _prepare_eve(self):
        eve = self.eve
        if eve.matrix is not None:
            involution = np.asarray(eve.matrix, dtype=np.complex128)
            label = eve.observable or "custom"
            self.eve_custom = qmath.DichotomicObservable.from_involution(involution, label=label)
            lifted = involution
        else:
            if eve.observable is None:
                raise ValueError("eve strategy needs an observable label or matrix")
            prefix, party = split_label(eve.observable)
            self.indexing._check_party(party)
            self.eve_parsed = (prefix, party)
            lifted = lift_matrix(LOCAL_MATRICES[prefix], party, self.indexing)
        if eve.strategy == "commuting-measure":
            for label in self._future_labels(eve.position):
                prefix, party = split_label(label)
                other = lift_matrix(LOCAL_MATRICES[prefix], party, self.indexing)
                if qmath.commutator_norm(lifted, other) > 1e-10:
                    raise InvariantViolation(
                        f"eve observable {eve.observable} does not commute with {label}; "
                        "use the noncommuting-measure strategy"
                    )

    def _pregenerate(self):
        """Materialize every named substream as one row per round."""
        config = self.config
        rounds = config.rounds
        n = self.num_parties
        g_round = stream_generator(config.seed, "round")
        self._picks = g_round.integers(0, 3, size=(rounds, n))
        born_cols = n + (n - 1 if self.kind == "chsh" else 0)
        self._born = g_round.random(size=(rounds, born_cols))
        if config.masking_enabled and self._mask_angle_count:
            g_mask = stream_generator(config.seed, "masking")
            self._angles = g_mask.random(size=(rounds, self._mask_angle_count)) * TWO_PI
        else:
            self._angles = None
        if self.eve is not None and self.eve_custom is None:
            g_eve = stream_generator(config.seed, "eve")
            self._eve_u = g_eve.random(size=(rounds, 2))
        else:
            self._eve_u = None
        if config.noise is not None:
            g_noise = stream_generator(config.seed, "noise")
            preparers = 1 if self.kind == "mermin" else n - 1
            detectors = n - 1
            self._noise_u = g_noise.random(size=(rounds, preparers + detectors))
            self._white_idx = g_noise.integers(0, self.dim, size=(rounds, preparers))
            self._noise_preparers = preparers
        else:
            self._noise_u = None

    # -- fast single-party linear algebra ---------------------------------

    def _apply_local(self, mat2: np.ndarray, state: np.ndarray, party: int) -> np.ndarray:
        pre, post = self.pre_post[party]
        if pre == 1:
            return (mat2 @ state.reshape(2, post)).reshape(-1)
        s3 = state.reshape(pre, 2, post)
        out = np.empty_like(s3)
        out[:, 0, :] = mat2[0, 0] * s3[:, 0, :] + mat2[0, 1] * s3[:, 1, :]
        out[:, 1, :] = mat2[1, 0] * s3[:, 0, :] + mat2[1, 1] * s3[:, 1, :]
        return out.reshape(-1)

    def _measure_local(
        self, state: np.ndarray, prefix: str, party: int, u: float
    ) -> tuple[int, np.ndarray]:
        """Born-rule branch selection driven by one uniform variate."""
        branch_plus = self._apply_local(self.plus_projectors[prefix], state, party)
        p_plus = np.vdot(branch_plus, branch_plus).real
        p_minus = 1.0 - p_plus
        if p_plus < PROB_FLOOR:
            outcome = -1
        elif p_minus < PROB_FLOOR:
            outcome = +1
        else:
            outcome = +1 if u < p_plus else -1
        if outcome > 0:
            return outcome, branch_plus / math.sqrt(p_plus)
        branch_minus = state - branch_plus
        return outcome, branch_minus / math.sqrt(max(p_minus, PROB_FLOOR))

    def _project_reference(self, prefix: str, party: int, outcome: int) -> np.ndarray:
        branch = self._apply_local(self.plus_projectors[prefix], self.reference, party)
        if outcome < 0:
            branch = self.reference - branch
        return branch / math.sqrt(np.vdot(branch, branch).real)

    # -- per-round hooks ---------------------------------------------------

    def _mask(self, state: np.ndarray, sender: int, angles) -> np.ndarray:
        if angles is None:
            return state
        for party, chunk in self.mask_plan[sender]:
            state = self._apply_local(_su2_product(self.mask_axes, angles[chunk]), state, party)
        return state

    def _eve_hook(self, state: np.ndarray, link: int, round_id: int):
        eve = self.eve
        if eve is None or eve.position != link:
            return state, None
        if self.eve_custom is not None:
            rng = substream(self.config.seed, "eve", round_id)
            if eve.activity_rate < 1.0 and rng.random() >= eve.activity_rate:
                return state, None
            outcome, post = qmath.measure_projective(qmath.StateVector(state), self.eve_custom, rng)
            return post.amplitudes, outcome
        u_active, u_measure = self._eve_u[round_id]
        if eve.activity_rate < 1.0 and u_active >= eve.activity_rate:
            return state, None
        prefix, party = self.eve_parsed
        outcome, post = self._measure_local(state, prefix, party, u_measure)
        if eve.resend == "fresh-reference":
            post = self._project_reference(prefix, party, outcome)
        return post, outcome

    def _detector_record(self, outcome: int, prefix: str, bob: int, round_id: int) -> int | None:
        if self.det_noise is None or prefix not in self.key_prefixes:
            return outcome
        u = self._noise_u[round_id, self._noise_preparers + bob - 2]
        if isinstance(self.det_noise, MisreadDetector):
            return -outcome if u < self.det_noise.eta else outcome
        if isinstance(self.det_noise, LossDetector):
            return outcome if u < self.det_noise.eta else None
        raise TypeError(f"unsupported detector noise {self.det_noise!r}")

    def _prepare(
        self, bob: int, prefix: str, party: int, outcome: int, round_id: int
    ) -> np.ndarray:
        """State actually emitted when ``bob`` prepares with the given intent."""
        if self.prep_noise is not None and prefix == "Z":
            slot = 0 if self.kind == "mermin" else bob - 1
            u = self._noise_u[round_id, slot]
            shared_bit = key_bit(self.kind, bob, outcome)
            zero_idx, one_idx = (0, self.dim - 1) if self.kind == "mermin" else (1, 2)
            target = zero_idx if shared_bit == 0 else one_idx
            if isinstance(self.prep_noise, FlipPrep):
                eps = self.prep_noise.eps1 if shared_bit == 0 else self.prep_noise.eps2
                if u < eps:
                    target = one_idx if shared_bit == 0 else zero_idx
            elif isinstance(self.prep_noise, WhitePrep):
                if u < self.prep_noise.eps:
                    target = int(self._white_idx[round_id, slot])
            else:
                raise TypeError(f"unsupported preparation noise {self.prep_noise!r}")
            ket = np.zeros(self.dim, dtype=np.complex128)
            ket[target] = 1.0
            return ket
        return self._project_reference(prefix, party, outcome)

    # -- round execution ---------------------------------------------------

    def play_round(self, round_id: int) -> RoundRecord:
        picks = self._picks[round_id]
        born = self._born[round_id]
        angles = self._angles[round_id] if self._angles is not None else None
        n = self.num_parties

        labels = tuple(self.labels[k][picks[k]] for k in range(n))
        parsed = [self.parsed[k][picks[k]] for k in range(n)]
        prefixes = [p for p, _ in parsed]

        outcomes: list[int | None] = []
        eve_outcome = None

        prefix1, party1 = parsed[0]
        first_outcome, _ = self._measure_local(self.reference, prefix1, party1, born[0])
        outcomes.append(first_outcome)
        state = self._prepare(1, prefix1, party1, first_outcome, round_id)
        state = self._mask(state, 1, angles)
        state, hit = self._eve_hook(state, 1, round_id)
        if hit is not None:
            eve_outcome = hit

        for bob in range(2, n + 1):
            prefix, party = parsed[bob - 1]
            true_outcome, state = self._measure_local(state, prefix, party, born[bob - 1])
            recorded = true_outcome
            if self.det_noise is not None:
                recorded = self._detector_record(true_outcome, prefix, bob, round_id)
            outcomes.append(recorded)
            if bob == n:
                break
            if self.kind == "chsh":
                intent = recorded
                if intent is None:
                    intent, _ = self._measure_local(
                        self.reference, prefix, party, born[n + bob - 2]
                    )
                state = self._prepare(bob, prefix, party, intent, round_id)
            state = self._mask(state, bob, angles)
            state, hit = self._eve_hook(state, bob, round_id)
            if hit is not None:
                eve_outcome = hit

        return RoundRecord(
            round_id=round_id,
            labels=labels,
            outcomes=tuple(outcomes),
            eve_label=self.eve.observable if eve_outcome is not None else None,
            eve_outcome=eve_outcome,
            revealed=(
                _check_round_from_prefixes("mermin", prefixes)
                if self.kind == "mermin"
                else not _key_round_from_prefixes("chsh", prefixes)
            ),
            key_round=_key_round_from_prefixes(self.kind, prefixes),
        )


def run_mermin_round(config: ProtocolConfig, round_id: int = 0) -> RoundRecord:
    """Play a single chain round; randomness derives from (seed, round_id)."""
    if config.kind != "mermin":
        raise ValueError("config is not a mermin protocol")
    return _Engine(config).play_round(round_id)


def run_chsh_round(config: ProtocolConfig, round_id: int = 0) -> RoundRecord:
    """Play a single pairwise-grouped round; randomness derives from (seed, round_id)."""
    if config.kind != "chsh":
        raise ValueError("config is not a chsh protocol")
    return _Engine(config).play_round(round_id)


def run_protocol(config: ProtocolConfig, threads: int = 1) -> Transcript:
    """Execute all rounds; the transcript is independent of ``threads``."""
    engine = _Engine(config)
    round_ids = range(config.rounds)
    if threads <= 1:
        records = [engine.play_round(i) for i in round_ids]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(engine.play_round, round_ids, chunksize=256))
    return Transcript(config=config, records=tuple(records), seed=config.seed)


def sift(transcript: Transcript) -> SiftingResult:
    """Partition rounds into key / check / discarded and derive key bits."""
    kind = transcript.config.kind
    key_rounds, check_rounds, discarded = [], [], []
    for rec in transcript.records:
        if rec.key_round:
            key_rounds.append(rec.round_id)
        elif kind == "mermin" and rec.revealed:
            check_rounds.append(rec.round_id)
        elif kind == "chsh" and is_check_round(kind, rec.labels):
            check_rounds.append(rec.round_id)
        else:
            discarded.append(rec.round_id)
    by_id = {rec.round_id: rec for rec in transcript.records}
    num_parties = transcript.config.num_parties
    key_bits = tuple(
        tuple(key_bit(kind, party, by_id[r].outcomes[party - 1]) for r in key_rounds)
        for party in range(1, num_parties + 1)
    )
    return SiftingResult(tuple(key_rounds), tuple(check_rounds), tuple(discarded), key_bits)


def extract_key(sifting: SiftingResult) -> KeyMaterial:
    """Aligned per-party bit strings plus the all-party agreement fraction."""
    num_rounds = len(sifting.key_rounds)
    complete = 0
    agree = 0
    for i in range(num_rounds):
        column = [bits[i] for bits in sifting.key_bits]
        if any(b is None for b in column):
            continue
        complete += 1
        if len(set(column)) == 1:
            agree += 1
    fraction = agree / complete if complete else None
    return KeyMaterial(sifting.key_bits, num_rounds, complete, fraction)


def mermin_check_estimate(transcript: Transcript) -> InequalityEstimate:
    spec = inequality.mermin_spec(transcript.config.num_parties)
    return inequality.estimate_from_transcript(transcript.records, spec)


def chsh_pair_estimates(transcript: Transcript) -> dict[int, InequalityEstimate]:
    """Per adjacent pair (link k joins parties k and k+1)."""
    out = {}
    for k in range(1, transcript.config.num_parties):
        spec = inequality.chsh_pair_spec(k, first_party_odd=(k % 2 == 1))
        out[k] = inequality.estimate_from_transcript(transcript.records, spec)
    return out


def check_estimates(transcript: Transcript) -> dict[str, InequalityEstimate]:
    """All violation statistics relevant to the transcript's protocol."""
    if transcript.config.kind == "mermin":
        return {"mermin": mermin_check_estimate(transcript)}
    return {f"pair_{k}": est for k, est in chsh_pair_estimates(transcript).items()}


def all_checks_violated(estimates: dict[str, InequalityEstimate]) -> bool:
    return all(est.violated for est in estimates.values())
