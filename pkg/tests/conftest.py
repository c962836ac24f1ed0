import math
import time

import numpy as np
import pytest

from contextkey import protocol, qmath

# Wall-clock build time of the shared simulation fixtures, keyed by name;
# the acceptance suite asserts its runtime budget against these.
RUN_TIMES: dict[str, float] = {}


def ghz_state(num_parties: int) -> qmath.StateVector:
    """(|0…0⟩ + i|1…1⟩)/√2 in the single-qudit indexing."""
    amps = np.zeros(2**num_parties, dtype=np.complex128)
    amps[0] = 1 / math.sqrt(2)
    amps[-1] = 1j / math.sqrt(2)
    return qmath.StateVector(amps)


def singlet_state() -> qmath.StateVector:
    """(|1⟩ − |2⟩)/√2, the mapped two-qubit singlet."""
    amps = np.zeros(4, dtype=np.complex128)
    amps[1] = 1 / math.sqrt(2)
    amps[2] = -1 / math.sqrt(2)
    return qmath.StateVector(amps)


def _timed_run(name: str, config: protocol.ProtocolConfig) -> protocol.Transcript:
    start = time.perf_counter()
    transcript = protocol.run_protocol(config)
    RUN_TIMES[name] = time.perf_counter() - start
    return transcript


@pytest.fixture(scope="session")
def mermin3_run():
    return _timed_run("mermin3_run", protocol.ProtocolConfig("mermin", 3, 100_000, seed=101))


@pytest.fixture(scope="session")
def chsh3_run():
    return _timed_run("chsh3_run", protocol.ProtocolConfig("chsh", 3, 100_000, seed=202))


@pytest.fixture(scope="session")
def mermin3_agreement_run():
    # 280k rounds put the expected key-round count above 10^4.
    return _timed_run(
        "mermin3_agreement_run", protocol.ProtocolConfig("mermin", 3, 280_000, seed=303)
    )


@pytest.fixture(scope="session")
def chsh3_agreement_run():
    return _timed_run(
        "chsh3_agreement_run", protocol.ProtocolConfig("chsh", 3, 140_000, seed=404)
    )
