import numpy as np
import pytest

from krausopt.quantum import KrausStack, sample_random_channel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(d, rng, rank=None):
    rank = rank or d
    a = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_povm(d, n_el, rng):
    """Random POVM from a Haar isometry C^d -> C^(n_el*d) split into blocks."""
    V = sample_random_channel(d, n_el, rng).blocks
    return np.array([v.conj().T @ v for v in V])


def mixed_stack(k: KrausStack, rng) -> KrausStack:
    """Same channel, Kraus operators mixed by a random m x m unitary."""
    from krausopt.quantum import haar_unitary

    u = haar_unitary(k.m, rng)
    return KrausStack(np.kron(u, np.eye(k.d)) @ k.data)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:].rstrip(":"))):
            terminalreporter.write_line(line)
