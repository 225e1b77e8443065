"""Process tomography with Pauli inputs and the Pauli POVM.

Statistics tables are indexed ``[alpha, beta]``: row ``alpha`` is an input
state, column ``beta`` a POVM outcome, both in :func:`pauli_labels` order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .quantum import (
    KrausStack,
    Povm,
    as_matrix,
    apply_channel_batch,
    choi_fidelity,
    choi_purity,
    choi_state,
    pauli_input_states,
    pauli_povm,
    sample_random_channel,
)
from .regularizers import RegularizerKind, combine
from .stiefel import CostFunction, OptimizerConfig, TrainingTrace, optimize

log = logging.getLogger(__name__)

P_FLOOR = 1e-12

APP_C_GRID = (0.0, 0.0001, 0.000215, 0.000464, 0.001, 0.002154, 0.004642, 0.01, 0.021544, 0.046416, 0.1)


@dataclass(frozen=True)
class TomographyData:
    """Measured (or exact) statistics of a channel on ``n`` qubits.

    ``shots == 0`` marks an exact probability table; otherwise ``counts``
    holds integer outcome counts with every row summing to ``shots``.
    """

    n: int
    probs: np.ndarray
    shots: int = 0
    counts: np.ndarray | None = None
    inputs: np.ndarray = field(default=None, repr=False)
    povm: Povm = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.inputs is None:
            object.__setattr__(self, "inputs", pauli_input_states(self.n))
        if self.povm is None:
            object.__setattr__(self, "povm", pauli_povm(self.n))
        rows = self.probs.sum(axis=1)
        if self.shots == 0:
            if np.max(np.abs(rows - 1)) > 1e-10:
                raise ValueError("exact probability rows must sum to 1")
        else:
            if self.counts is None or np.any(self.counts.sum(axis=1) != self.shots):
                raise ValueError(f"count rows must sum to shots={self.shots}")

    @classmethod
    def from_counts(cls, n: int, counts: np.ndarray, shots: int) -> "TomographyData":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(n=n, probs=counts / shots, shots=shots, counts=counts)


def _channel_probs(K: np.ndarray, inputs: np.ndarray, povm: Povm) -> np.ndarray:
    outs = apply_channel_batch(K, inputs)
    return np.einsum("bij,aji->ab", povm.elements, outs).real


def _check_dim(target, n: int) -> np.ndarray:
    K = as_matrix(target)
    if K.shape[1] != 2**n:
        raise ValueError(f"channel dimension {K.shape[1]} does not match {n} qubits")
    return K


def exact_statistics(target, n: int) -> TomographyData:
    K = _check_dim(target, n)
    inputs = pauli_input_states(n)
    povm = pauli_povm(n)
    p = np.clip(_channel_probs(K, inputs, povm), 0.0, 1.0)
    p /= p.sum(axis=1, keepdims=True)
    return TomographyData(n=n, probs=p, inputs=inputs, povm=povm)


def _draw(p: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    # multinomial needs sum(pvals[:-1]) <= 1 exactly
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    return rng.multinomial(shots, p)


def simulate_shots(target, n: int, shots: int, rng: np.random.Generator) -> TomographyData:
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    exact = exact_statistics(target, n)
    return TomographyData.from_counts(n, _draw(exact.probs, shots, rng), shots)


def split_train_test(
    target, n: int, shots: int, rng: np.random.Generator, fraction: float = 0.8
) -> tuple[TomographyData, TomographyData]:
    """Independent multinomial draws with ``floor(fraction*s)`` and the remaining shots."""
    if not 0 < fraction < 1:
        raise ValueError(f"train fraction must lie in (0, 1), got {fraction}")
    if shots < 5:
        raise ValueError(f"need at least 5 shots to split, got {shots}")
    s_train = int(np.floor(fraction * shots))
    s_test = shots - s_train
    if s_train < 1 or s_test < 1:
        raise ValueError(f"split of {shots} shots at {fraction} leaves an empty set")
    exact = exact_statistics(target, n)
    train = TomographyData.from_counts(n, _draw(exact.probs, s_train, rng), s_train)
    test = TomographyData.from_counts(n, _draw(exact.probs, s_test, rng), s_test)
    return train, test


class KLCost(CostFunction):
    """Prior-averaged KL divergence between measured and modelled statistics.

    Uniform prior over inputs; ``0 ln 0 = 0``; the model probability is
    floored at ``1e-12`` inside the log (with zero derivative where floored).
    """

    def __init__(self, data: TomographyData):
        self.data = data
        rhos = np.asarray(data.inputs)
        M = np.asarray(data.povm.elements)
        d = rhos.shape[1]
        self.d = d
        self.R = rhos.reshape(rhos.shape[0], d * d)
        self.M = M.reshape(M.shape[0], d * d)
        # Mt[(a, c), beta] = M_beta[c, a]
        self.Mt = np.ascontiguousarray(M.transpose(0, 2, 1).reshape(M.shape[0], d * d).T)
        pm = np.asarray(data.probs, dtype=float)
        self.prior = 1.0 / pm.shape[0]
        self.pm = pm
        self.support = pm > 0
        logs = np.zeros_like(pm)
        logs[self.support] = np.log(pm[self.support])
        self.entropy_term = float(self.prior * np.sum(pm * logs))

    def probs(self, K: np.ndarray) -> np.ndarray:
        d = self.d
        X = np.asarray(K).reshape(-1, d * d)
        # C[a, b, c, d'] = sum_k k_k[a, b] conj(k_k[c, d'])
        C = (X.T @ X.conj()).reshape(d, d, d, d)
        outs = self.R @ C.transpose(1, 3, 0, 2).reshape(d * d, d * d)
        return (outs @ self.Mt).real

    def value_and_grad(self, K):
        K = np.asarray(K, dtype=np.complex128)
        d = self.d
        pt = self.probs(K)
        floored = pt <= P_FLOOR
        pt_c = np.where(floored, P_FLOOR, pt)
        value = self.entropy_term - self.prior * float(np.sum(self.pm[self.support] * np.log(pt_c[self.support])))
        # dL/d conj(k_k) = sum_a A_a k_k rho_a,  A_a = -p0 sum_b (pm/pt) M_b
        w = np.where(floored, 0.0, self.pm / pt_c) * (-self.prior)
        A = w @ self.M
        Q = (A.T @ self.R).reshape(d, d, d, d)
        grad = K.reshape(-1, d * d) @ Q.transpose(1, 2, 0, 3).reshape(d * d, d * d)
        return value, grad.reshape(K.shape)


def kl_cost(data: TomographyData) -> KLCost:
    return KLCost(data)


def infidelity(model, target) -> float:
    f = choi_fidelity(choi_state(model), choi_state(target))
    return min(max(1.0 - f, 0.0), 1.0)


def run_tomography(
    target,
    m_model: int,
    reg: RegularizerKind,
    data: TomographyData,
    cfg: OptimizerConfig,
    rng: np.random.Generator | None = None,
    k0: KrausStack | None = None,
) -> tuple[KrausStack, TrainingTrace]:
    """Fit a random full-rank ``m_model`` channel to ``data``.

    The trace records the regularized cost plus infidelity to ``target``
    (when given) and Choi purity. ``k0`` overrides the random init.
    """
    if m_model < 1:
        raise ValueError(f"model needs at least one Kraus operator, got {m_model}")
    d = 2**data.n
    if k0 is None:
        if rng is None:
            raise ValueError("need an rng or an explicit initial stack")
        k0 = sample_random_channel(d, m_model, rng)
    cost = combine(kl_cost(data), reg)
    metrics = {}
    if target is not None:
        chi_target = choi_state(target)
        metrics["infidelity"] = lambda K: 1.0 - choi_fidelity(choi_state(K), chi_target)
    metrics["choi_purity"] = choi_purity
    return optimize(k0, cost, cfg, metrics)


@dataclass
class GridSearchReport:
    gamma_values: list[float]
    test_costs: list[float]
    chosen_gamma: float
    fidelities: list[float] | None = None
    failed: dict[float, str] = field(default_factory=dict)

    @property
    def chosen_index(self) -> int:
        return self.gamma_values.index(self.chosen_gamma)

    def delta_fidelity(self) -> float:
        """Fidelity at the chosen gamma minus fidelity at gamma = 0."""
        if self.fidelities is None or 0.0 not in self.gamma_values:
            raise ValueError("delta fidelity needs target fidelities and a gamma=0 entry")
        return self.fidelities[self.chosen_index] - self.fidelities[self.gamma_values.index(0.0)]

    def to_dict(self) -> dict:
        return {
            "gamma_values": self.gamma_values,
            "test_costs": self.test_costs,
            "chosen_gamma": self.chosen_gamma,
            "fidelities": self.fidelities,
            "failed": {repr(g): msg for g, msg in self.failed.items()},
        }


def grid_search_gamma(
    train: TomographyData,
    test: TomographyData,
    m_model: int,
    kind,
    gammas=APP_C_GRID,
    cfg: OptimizerConfig = OptimizerConfig(),
    rng: np.random.Generator | None = None,
    target=None,
    k0: KrausStack | None = None,
) -> tuple[GridSearchReport, dict[float, KrausStack]]:
    """Train one model per gamma on ``train`` and pick the lowest test KL.

    All gammas start from the same initial stack. Test cost is the
    unregularized KL divergence; ties go to the smaller gamma. A gamma whose
    run fails is dropped from the selection and listed in ``failed``.
    """
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("gamma grid is empty")
    if k0 is None:
        k0 = sample_random_channel(2**train.n, m_model, rng)
    test_kl = kl_cost(test)
    kept, costs, fids, models, failed = [], [], [], {}, {}
    for g in gammas:
        reg = RegularizerKind(kind, g) if g > 0 else RegularizerKind()
        try:
            model, _ = run_tomography(None, m_model, reg, train, cfg, k0=k0)
        except Exception as exc:  # noqa: BLE001 - a failed gamma is reported, not fatal
            log.warning("grid search: gamma=%g failed: %s", g, exc)
            failed[g] = str(exc)
            continue
        kept.append(g)
        costs.append(test_kl.evaluate(model))
        models[g] = model
        if target is not None:
            fids.append(1.0 - infidelity(model, target))
    if not kept:
        raise RuntimeError(f"every gamma in the grid failed: {failed}")
    best = min(range(len(kept)), key=lambda i: (costs[i], kept[i]))
    report = GridSearchReport(
        gamma_values=kept,
        test_costs=costs,
        chosen_gamma=kept[best],
        fidelities=fids if target is not None else None,
        failed=failed,
    )
    return report, models
