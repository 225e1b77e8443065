"""Riemannian gradient descent on St(m*d, d) with the Cayley retraction.

The update uses the Sherman-Morrison-Woodbury form of the Cayley transform,

    K' = K - eps * U (I + eps/2 * V^dagger U)^{-1} V^dagger K,
    U = [G~, K],  V = [K, -G~],  G~ = G / ||G||_F,

so each step only solves a ``2d x 2d`` linear system. ``G`` is the conjugate
Wirtinger gradient ``(dL/dK)^*`` of the cost.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .quantum import KrausStack, as_matrix

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """Raised when an update cannot be computed reliably."""


class OptimizationError(RuntimeError):
    """Wraps an error raised during :func:`optimize` with the failing epoch."""

    def __init__(self, epoch: int, cause: BaseException):
        super().__init__(f"epoch {epoch}: {cause}")
        self.epoch = epoch
        self.cause = cause


class CostFunction:
    """Scalar cost of a stacked Kraus matrix with its conjugate gradient.

    Subclasses implement :meth:`value_and_grad` on a raw ``(m*d, d)`` complex
    array. Inputs need not lie on the manifold (finite differences probe
    off-manifold points).
    """

    def value_and_grad(self, K: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def evaluate(self, k) -> float:
        return self.value_and_grad(as_matrix(k))[0]

    def euclidean_grad(self, k) -> np.ndarray:
        return self.value_and_grad(as_matrix(k))[1]


class FunctionCost(CostFunction):
    """Adapter from a plain ``K -> (value, grad)`` callable."""

    def __init__(self, fn: Callable[[np.ndarray], tuple[float, np.ndarray]]):
        self.fn = fn

    def value_and_grad(self, K):
        return self.fn(K)


@dataclass(frozen=True)
class OptimizerConfig:
    epsilon: float = 1.0
    epochs: int = 20_000
    grad_norm_floor: float = 1e-12
    record_every: int = 100

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")


@dataclass
class TrainingTrace:
    """Recorded ``(epoch, cost, metrics...)`` rows with increasing epochs."""

    metric_names: tuple[str, ...] = ()
    epochs: list[int] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    metrics: list[tuple[float, ...]] = field(default_factory=list)

    def append(self, epoch: int, cost: float, metrics: tuple[float, ...] = ()) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(f"trace epochs must increase ({epoch} after {self.epochs[-1]})")
        if len(metrics) != len(self.metric_names):
            raise ValueError("metric row length does not match metric names")
        self.epochs.append(int(epoch))
        self.costs.append(float(cost))
        self.metrics.append(tuple(float(v) for v in metrics))

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> np.ndarray:
        if name == "cost":
            return np.asarray(self.costs)
        i = self.metric_names.index(name)
        return np.asarray([row[i] for row in self.metrics])

    def rows(self):
        for e, c, m in zip(self.epochs, self.costs, self.metrics):
            yield (e, c, *m)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "cost", *self.metric_names])
            for e, *vals in self.rows():
                w.writerow([e, *(f"{v:.17g}" for v in vals)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainingTrace":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            trace = cls(metric_names=tuple(header[2:]))
            for row in r:
                trace.append(int(row[0]), float(row[1]), tuple(float(v) for v in row[2:]))
        return trace


def _cayley_update(K: np.ndarray, G: np.ndarray, epsilon: float, floor: float = 1e-12) -> np.ndarray:
    gnorm = np.linalg.norm(G)
    if not np.isfinite(gnorm):
        raise NumericalError("gradient contains non-finite entries")
    if gnorm <= floor:
        return K
    Gt = G / gnorm
    d = K.shape[1]
    U = np.hstack([Gt, K])
    Vh = np.vstack([K.conj().T, -Gt.conj().T])
    A = np.eye(2 * d) + (0.5 * epsilon) * (Vh @ U)
    try:
        # LAPACK gesv: dense LU with partial pivoting
        X = np.linalg.solve(A, Vh @ K)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cayley inner system is singular: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise NumericalError("Cayley inner solve produced non-finite values")
    return K - epsilon * (U @ X)


def cayley_step(k, g: np.ndarray, epsilon: float = 1.0, grad_norm_floor: float = 1e-12) -> KrausStack:
    """One retraction step along ``-g``; returns ``k`` unchanged if ``||g|| <= floor``."""
    K = as_matrix(k)
    g = np.asarray(g, dtype=np.complex128)
    if g.shape != K.shape:
        raise ValueError(f"gradient shape {g.shape} does not match stack shape {K.shape}")
    if np.linalg.norm(g) <= grad_norm_floor and isinstance(k, KrausStack):
        return k
    return KrausStack(_cayley_update(K, g, epsilon, grad_norm_floor))


Metric = Callable[[np.ndarray], float]


def optimize(
    k0,
    cost: CostFunction,
    cfg: OptimizerConfig = OptimizerConfig(),
    metrics: Mapping[str, Metric] | None = None,
) -> tuple[KrausStack, TrainingTrace]:
    """Run ``cfg.epochs`` Cayley steps from ``k0``.

    Every ``cfg.record_every`` epochs (and at the last epoch) the cost of the
    current iterate and each metric callback are appended to the trace.
    Metric callbacks receive the raw stacked matrix.
    """
    metrics = dict(metrics or {})
    trace = TrainingTrace(metric_names=tuple(metrics))
    K = as_matrix(k0).copy()
    for epoch in range(1, cfg.epochs + 1):
        try:
            _, G = cost.value_and_grad(K)
            K = _cayley_update(K, G, cfg.epsilon, cfg.grad_norm_floor)
            if epoch % cfg.record_every == 0 or epoch == cfg.epochs:
                value = cost.evaluate(K)
                if not np.isfinite(value):
                    raise NumericalError(f"cost became non-finite ({value})")
                trace.append(epoch, value, tuple(fn(K) for fn in metrics.values()))
        except Exception as exc:
            raise OptimizationError(epoch, exc) from exc
    if cfg.epochs == 0 and isinstance(k0, KrausStack):
        return k0, trace
    return KrausStack(K), trace


def grad_check(cost: CostFunction, k, h: float = 1e-5) -> float:
    """Max relative deviation of ``cost``'s gradient from central differences.

    Real and imaginary parts of every entry are perturbed independently
    (plain Euclidean perturbation, no retraction). With ``a = dL/dRe`` and
    ``b = dL/dIm`` the conjugate Wirtinger gradient is ``(a + i b) / 2``.
    The deviation is ``max|G_fd - G| / max|G|``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-3], got {h}")
    K = np.array(as_matrix(k), dtype=np.complex128)
    G = np.asarray(cost.euclidean_grad(K))
    fd = np.zeros_like(K)
    for idx in np.ndindex(K.shape):
        parts = []
        for step in (h, 1j * h):
            Kp = K.copy()
            Kp[idx] += step
            Km = K.copy()
            Km[idx] -= step
            parts.append((cost.evaluate(Kp) - cost.evaluate(Km)) / (2 * h))
        fd[idx] = 0.5 * (parts[0] + 1j * parts[1])
    scale = np.max(np.abs(G))
    if scale == 0:
        return float(np.max(np.abs(fd)))
    return float(np.max(np.abs(fd - G)) / scale)
