"""Kraus stacks, density matrices, Choi states and POVMs.

A channel on a ``d``-dimensional system with ``m`` Kraus operators is stored
as a single complex ``(m*d, d)`` matrix: the Kraus operators are stacked
row-wise in index order, ``K = [k_1; k_2; ...; k_m]``. Trace preservation is
then the Stiefel condition ``K^dagger K = I_d``.

Density matrices and Choi states are plain ``numpy`` arrays; the validators
in this module check their invariants.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STIEFEL_TOL = 1e-8
LOAD_STIEFEL_TOL = 1e-6
HERMITIAN_TOL = 1e-10
EIG_CLAMP_TOL = 1e-10


class ChannelError(ValueError):
    """Raised when an object violates a channel/state invariant."""


def stiefel_residual(K: np.ndarray) -> float:
    """Return ``||K^dagger K - I||_F``."""
    K = np.asarray(K)
    d = K.shape[1]
    return float(np.linalg.norm(K.conj().T @ K - np.eye(d)))


@dataclass(frozen=True)
class KrausStack:
    """Point on the complex Stiefel manifold St(m*d, d).

    ``data`` is the row-stacked ``(m*d, d)`` matrix. Construction validates
    shape and trace preservation (``tol``); pass ``tol=None`` to skip the
    Stiefel check for intermediate, possibly off-manifold matrices.
    """

    data: np.ndarray
    tol: float | None = field(default=STIEFEL_TOL, repr=False, compare=False)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.complex128, copy=True)
        if data.ndim != 2:
            raise ChannelError(f"Kraus stack must be 2-D, got shape {data.shape}")
        rows, d = data.shape
        if d < 2 or rows % d != 0 or rows == 0:
            raise ChannelError(f"Kraus stack shape {data.shape} is not (m*d, d) with d >= 2")
        if not np.all(np.isfinite(data)):
            raise ChannelError("Kraus stack contains non-finite entries")
        if self.tol is not None:
            res = stiefel_residual(data)
            if res > self.tol:
                raise ChannelError(f"Stiefel residual {res:.3e} exceeds {self.tol:.1e}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_operators(cls, ops: Sequence[np.ndarray], tol: float | None = STIEFEL_TOL) -> "KrausStack":
        return cls(np.vstack([np.asarray(op, dtype=np.complex128) for op in ops]), tol=tol)

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def m(self) -> int:
        return self.data.shape[0] // self.data.shape[1]

    @property
    def blocks(self) -> np.ndarray:
        """Kraus operators as an ``(m, d, d)`` array (read-only view)."""
        return self.data.reshape(self.m, self.d, self.d)

    def residual(self) -> float:
        return stiefel_residual(self.data)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "re": self.data.real.tolist(),
            "im": self.data.imag.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KrausStack":
        """Load a stack from its JSON document; validates at the looser load tolerance."""
        try:
            d, m = int(doc["d"]), int(doc["m"])
            data = np.asarray(doc["re"], dtype=float) + 1j * np.asarray(doc["im"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ChannelError(f"malformed channel document: {exc}") from exc
        if data.shape != (m * d, d):
            raise ChannelError(f"channel document declares d={d}, m={m} but matrix has shape {data.shape}")
        res = stiefel_residual(data)
        if res > LOAD_STIEFEL_TOL:
            raise ChannelError(f"loaded channel has Stiefel residual {res:.3e} > {LOAD_STIEFEL_TOL:.0e}")
        return cls(data, tol=LOAD_STIEFEL_TOL)


def save_channel(k: KrausStack, path: str | Path) -> None:
    Path(path).write_text(json.dumps(k.to_json()))


def load_channel(path: str | Path) -> tuple[KrausStack, float]:
    """Read a channel JSON file. Returns the stack and its Stiefel residual."""
    k = KrausStack.from_json(json.loads(Path(path).read_text()))
    return k, k.residual()


def as_matrix(k) -> np.ndarray:
    """Stacked matrix of a :class:`KrausStack` or anything array-like."""
    if isinstance(k, KrausStack):
        return k.data
    return np.asarray(k, dtype=np.complex128)


def _blocks(K: np.ndarray) -> np.ndarray:
    d = K.shape[1]
    return K.reshape(-1, d, d)


# ---------------------------------------------------------------------------
# validators


def check_density_matrix(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ChannelError(f"density matrix must be square, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise ChannelError("density matrix contains non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ChannelError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ChannelError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ChannelError("density matrix has negative eigenvalues")
    return rho


def check_choi_state(chi: np.ndarray, tol: float = STIEFEL_TOL) -> np.ndarray:
    chi = check_density_matrix(chi)
    d = int(round(np.sqrt(chi.shape[0])))
    if d * d != chi.shape[0]:
        raise ChannelError(f"Choi state dimension {chi.shape[0]} is not a square")
    reduced = np.einsum("ajak->jk", chi.reshape(d, d, d, d))
    if np.linalg.norm(reduced - np.eye(d) / d) > tol:
        raise ChannelError("Choi state is not trace preserving")
    return chi


@dataclass(frozen=True)
class Povm:
    """Measurement with elements ``elements[beta]`` of shape ``(d, d)``."""

    elements: np.ndarray

    def __post_init__(self) -> None:
        els = np.array(self.elements, dtype=np.complex128, copy=True)
        if els.ndim != 3 or els.shape[1] != els.shape[2]:
            raise ChannelError(f"POVM elements must have shape (n, d, d), got {els.shape}")
        if np.max(np.abs(els - els.conj().transpose(0, 2, 1))) > HERMITIAN_TOL:
            raise ChannelError("POVM element is not Hermitian")
        if np.linalg.eigvalsh(els).min() < -HERMITIAN_TOL:
            raise ChannelError("POVM element is not positive semidefinite")
        if np.linalg.norm(els.sum(axis=0) - np.eye(els.shape[1])) > STIEFEL_TOL:
            raise ChannelError("POVM elements do not sum to the identity")
        els.setflags(write=False)
        object.__setattr__(self, "elements", els)

    @property
    def d(self) -> int:
        return self.elements.shape[1]

    def __len__(self) -> int:
        return self.elements.shape[0]


def computational_povm(d: int) -> Povm:
    return Povm(np.array([np.diag(row) for row in np.eye(d)], dtype=np.complex128))


# ---------------------------------------------------------------------------
# channel action and statistics


def apply_channel(k, rho: np.ndarray) -> np.ndarray:
    """Return ``sum_k k_k rho k_k^dagger``."""
    K = as_matrix(k)
    rho = np.asarray(rho, dtype=np.complex128)
    if rho.shape != (K.shape[1], K.shape[1]):
        raise ChannelError(f"state of shape {rho.shape} does not match channel dimension {K.shape[1]}")
    B = _blocks(K)
    return np.einsum("kab,bc,kdc->ad", B, rho, B.conj())


def apply_channel_batch(K: np.ndarray, rhos: np.ndarray) -> np.ndarray:
    """Channel outputs for a batch of states ``rhos`` of shape ``(n, d, d)``."""
    d = K.shape[1]
    B = K.reshape(-1, d, d)
    # (K rho) stacked: (n, m*d, d), then contract block-wise with K^dagger
    Y = np.matmul(K, rhos).reshape(rhos.shape[0], -1, d, d)
    return np.einsum("nkab,kcb->nac", Y, B.conj())


def outcome_probabilities(k, rho: np.ndarray, povm: Povm) -> np.ndarray:
    """Outcome distribution ``p(beta) = tr[M_beta T[rho]]`` clamped to [0, 1]."""
    if povm.d != as_matrix(k).shape[1]:
        raise ChannelError(f"POVM dimension {povm.d} does not match channel dimension {as_matrix(k).shape[1]}")
    out = apply_channel(k, rho)
    p = np.einsum("bij,ji->b", povm.elements, out).real
    return np.clip(p, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Choi machinery


def choi_vectors(k) -> np.ndarray:
    """Columns ``(k_k (x) I)|Phi+>``, shape ``(d^2, m)``; ``chi = V V^dagger``."""
    K = as_matrix(k)
    d = K.shape[1]
    return (K.reshape(-1, d * d) / np.sqrt(d)).T


def choi_state(k) -> np.ndarray:
    """Choi state ``sum_k (k_k (x) I)|Phi+><Phi+|(k_k^dagger (x) I)``.

    Ordering is (output system) (x) (reference), ``|Phi+> = sum_j |j>|j> / sqrt(d)``.
    """
    V = choi_vectors(k)
    chi = V @ V.conj().T
    return 0.5 * (chi + chi.conj().T)


def gram_matrix(K: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt overlaps ``tr(k_k^dagger k_l)`` of the Kraus blocks."""
    d = K.shape[1]
    flat = K.reshape(-1, d * d)
    return flat.conj() @ flat.T


def choi_purity(k) -> float:
    """``tr chi^2`` from the Kraus Gram matrix, without forming ``chi``."""
    K = as_matrix(k)
    d = K.shape[1]
    g = gram_matrix(K)
    return float(np.sum(np.abs(g) ** 2).real / d**2)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.conj().T


def choi_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Root fidelity ``tr sqrt(sqrt(a) b sqrt(a))`` clamped to [0, 1]."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise ChannelError(f"Choi states have different shapes {a.shape} and {b.shape}")
    for x in (a, b):
        if np.max(np.abs(x - x.conj().T)) > HERMITIAN_TOL:
            raise ChannelError("fidelity requires Hermitian arguments")
    sa = _psd_sqrt(a)
    inner = sa @ b @ sa
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    return min(max(f, 0.0), 1.0)


def choi_spectrum(k) -> np.ndarray:
    """Choi eigenvalues in descending order, clamped to [0, 1]."""
    K = as_matrix(k)
    # nonzero spectrum of V V^dagger equals that of the m x m Gram matrix V^dagger V
    V = choi_vectors(K)
    if V.shape[1] < V.shape[0]:
        w = np.linalg.eigvalsh(V.conj().T @ V)
        w = np.concatenate([w, np.zeros(V.shape[0] - V.shape[1])])
    else:
        w = np.linalg.eigvalsh(V @ V.conj().T)
    return np.clip(np.sort(w)[::-1], 0.0, 1.0)


def cumulative_spectrum(k) -> np.ndarray:
    """Running sums of :func:`choi_spectrum` (sum of the ``i`` largest eigenvalues)."""
    return np.cumsum(choi_spectrum(k))


def effective_rank(k, threshold: float = 1e-2) -> int:
    return int(np.sum(choi_spectrum(k) > threshold))


# ---------------------------------------------------------------------------
# sampling


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _haar_isometry(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    z = complex_gaussian(rng, (rows, cols))
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    mag = np.abs(diag)
    ph = np.where(mag > 0, diag / np.where(mag > 0, mag, 1.0), 1.0)
    # column phases make R's diagonal positive, which gives the Haar measure
    return q * ph


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    return _haar_isometry(d, d, rng)


def sample_random_channel(d: int, r: int, rng: np.random.Generator) -> KrausStack:
    """Random rank-``r`` channel: a Haar-distributed point of St(r*d, d)."""
    if not 1 <= r <= d * d:
        raise ValueError(f"rank must lie in [1, {d * d}], got {r}")
    return KrausStack(_haar_isometry(r * d, d, rng))


def sample_unitary_init(d: int, m: int, rng: np.random.Generator) -> KrausStack:
    """Unitary channel embedded in St(m*d, d) as blocks ``sqrt(x_i) u / sqrt(sum x)``."""
    if m < 1:
        raise ValueError(f"need at least one Kraus operator, got m={m}")
    u = haar_unitary(d, rng)
    x = rng.uniform(0.0, 1.0, size=m)
    w = np.sqrt(x / x.sum())
    return KrausStack(np.vstack([wi * u for wi in w]))


# ---------------------------------------------------------------------------
# Pauli input states and measurement

PAULI_LABELS = ("x+", "x-", "y+", "y-", "z+", "z-")

_S = 1 / np.sqrt(2)
_PAULI_KETS = np.array(
    [
        [_S, _S],
        [_S, -_S],
        [_S, 1j * _S],
        [_S, -1j * _S],
        [1, 0],
        [0, 1],
    ],
    dtype=np.complex128,
)
PAULI_PROJECTORS = np.einsum("ni,nj->nij", _PAULI_KETS, _PAULI_KETS.conj())


def pauli_labels(n: int) -> list[str]:
    return ["".join(p) for p in itertools.product(PAULI_LABELS, repeat=n)]


def _pauli_products(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"qubit count must be >= 1, got {n}")
    out = PAULI_PROJECTORS
    for _ in range(n - 1):
        # last qubit varies fastest
        out = np.einsum("aij,bkl->abikjl", out, PAULI_PROJECTORS)
        s = out.shape
        out = out.reshape(s[0] * s[1], s[2] * s[3], s[4] * s[5])
    return out


def pauli_input_states(n: int) -> np.ndarray:
    """The ``6**n`` products of single-qubit Pauli eigenprojectors.

    Per-qubit order is x+, x-, y+, y-, z+, z-; the last qubit varies fastest.
    Returned as an array of shape ``(6**n, 2**n, 2**n)``.
    """
    return _pauli_products(n)


def pauli_povm(n: int) -> Povm:
    """Informationally complete POVM ``M_beta = Pi_beta / 3**n``."""
    return Povm(_pauli_products(n) / 3**n)


def depolarizing_kraus(d: int = 2) -> KrausStack:
    """Completely depolarizing qubit channel with Kraus ops ``{I, X, Y, Z} / 2``."""
    if d != 2:
        raise ValueError("only the qubit depolarizer is provided")
    ops = [
        np.eye(2),
        np.array([[0, 1], [1, 0]]),
        np.array([[0, -1j], [1j, 0]]),
        np.array([[1, 0], [0, -1]]),
    ]
    return KrausStack.from_operators([op / 2 for op in ops])


def unitary_channel(u: np.ndarray) -> KrausStack:
    return KrausStack(np.asarray(u, dtype=np.complex128))
