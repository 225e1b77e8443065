"""Rank-penalizing regularization terms for Kraus stacks.

Every term returns ``(value, grad)`` with ``grad`` the conjugate Wirtinger
gradient ``(dR/dK)^*``, matching :class:`krausopt.stiefel.CostFunction`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .quantum import as_matrix, gram_matrix
from .stiefel import CostFunction

_ZERO_BLOCK = 1e-24
_ZERO_ENTRY = 1e-12


class Kind(str, enum.Enum):
    NONE = "none"
    HS = "hs"
    CHOI = "choi"
    L1 = "l1"


@dataclass(frozen=True)
class RegularizerKind:
    kind: Kind = Kind.NONE
    gamma: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @classmethod
    def parse(cls, name: str, gamma: float = 0.0) -> "RegularizerKind":
        try:
            return cls(Kind(name.lower()), float(gamma))
        except ValueError:
            raise ValueError(f"unknown regularizer {name!r}; choose from {[k.value for k in Kind]}") from None

    @property
    def active(self) -> bool:
        return self.kind is not Kind.NONE and self.gamma > 0


def r_hs(k) -> tuple[float, np.ndarray]:
    """Mean Hilbert-Schmidt norm of the Kraus operators."""
    K = as_matrix(k)
    d = K.shape[1]
    B = K.reshape(-1, d, d)
    m = B.shape[0]
    sq = np.einsum("kij,kij->k", B.conj(), B).real
    norms = np.sqrt(sq)
    safe = np.where(sq > _ZERO_BLOCK, norms, 1.0)
    scale = np.where(sq > _ZERO_BLOCK, 1.0 / (2 * m * safe), 0.0)
    grad = (B * scale[:, None, None]).reshape(K.shape)
    return float(norms.sum() / m), grad


def r_choi(k) -> tuple[float, np.ndarray]:
    """Negative log purity of the Choi state, ``-ln tr chi^2``."""
    K = as_matrix(k)
    d = K.shape[1]
    flat = K.reshape(-1, d * d)
    g = gram_matrix(K)
    purity = float(np.sum(np.abs(g) ** 2) / d**2)
    # d(tr chi^2)/d conj(k_k) = (2/d^2) sum_l tr(k_l^dagger k_k) k_l
    dpurity = (2.0 / d**2) * (g.T @ flat)
    grad = (-dpurity / purity).reshape(K.shape)
    return -float(np.log(purity)), grad


def r_l1(k) -> tuple[float, np.ndarray]:
    """Maximum absolute column sum of the stacked matrix, with a subgradient.

    The subgradient lives on the lowest-index maximizing column and is zero
    at entries of (near) zero modulus.
    """
    K = as_matrix(k)
    mod = np.abs(K)
    colsums = mod.sum(axis=0)
    j = int(np.argmax(colsums))
    grad = np.zeros_like(K)
    col = K[:, j]
    a = mod[:, j]
    nz = a > _ZERO_ENTRY
    grad[nz, j] = col[nz] / (2 * a[nz])
    return float(colsums[j]), grad


TERMS = {Kind.HS: r_hs, Kind.CHOI: r_choi, Kind.L1: r_l1}


class RegularizedCost(CostFunction):
    """``base + gamma * R``."""

    def __init__(self, base: CostFunction, reg: RegularizerKind):
        self.base = base
        self.reg = reg
        self._term = TERMS.get(reg.kind)

    def value_and_grad(self, K):
        value, grad = self.base.value_and_grad(K)
        if self._term is None or self.reg.gamma == 0:
            return value, grad
        rv, rg = self._term(K)
        return value + self.reg.gamma * rv, grad + self.reg.gamma * rg


def combine(base: CostFunction, reg: RegularizerKind) -> CostFunction:
    if not reg.active:
        return base
    return RegularizedCost(base, reg)
