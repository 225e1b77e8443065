"""Quantum classification with a trainable channel.

Features are min-max scaled (optionally after PCA), dense-angle encoded two
per qubit, pushed through the channel and read out in the computational
basis. The first ``c`` basis outcomes are the class labels.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .quantum import KrausStack, as_matrix, choi_spectrum, sample_unitary_init
from .regularizers import RegularizerKind, combine
from .stiefel import CostFunction, OptimizerConfig, TrainingTrace, optimize

log = logging.getLogger(__name__)

P_FLOOR = 1e-12
ENCODE_TOL = 1e-9
TIE_TOL = 1e-12

DATASETS = ("iris", "wine")
# Wine is reduced to six principal components (three qubits).
DEFAULT_PCA = {"iris": None, "wine": 6}
DEFAULT_EPOCHS = {"iris": 1500, "wine": 750}


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"features {X.shape} and labels {y.shape} do not line up")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name, self.feature_names)


def load_dataset(name: str) -> Dataset:
    """Load a bundled CSV (header row, features then an integer ``label`` column)."""
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; available: {', '.join(DATASETS)}")
    try:
        text = resources.files("krausopt").joinpath("data", f"{name}.csv").read_text()
    except FileNotFoundError as exc:
        raise OSError(f"bundled dataset {name!r} is missing") from exc
    rows = list(csv.reader(text.splitlines()))
    header, body = rows[0], rows[1:]
    if not body or header[-1] != "label":
        raise OSError(f"bundled dataset {name!r} is corrupt")
    try:
        X = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
    except (ValueError, IndexError) as exc:
        raise OSError(f"bundled dataset {name!r} is corrupt: {exc}") from exc
    return Dataset(X, y, name, tuple(header[:-1]))


def _minmax(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return X.min(axis=0), X.max(axis=0)


def _scale(X, lo, hi):
    span = hi - lo
    ok = span > 0
    out = np.zeros_like(X, dtype=float)
    out[:, ok] = (X[:, ok] - lo[ok]) / span[ok]
    return out


@dataclass(frozen=True)
class Preprocessor:
    """Min-max scaling, optionally preceded by PCA, fitted on training rows.

    With PCA the raw features are first min-max scaled, projected onto the
    leading principal components, and the projections min-max scaled again.
    """

    x_min: np.ndarray
    x_max: np.ndarray
    pca_mean: np.ndarray | None = None
    pca_components: np.ndarray | None = None
    explained_variance: np.ndarray | None = None
    out_min: np.ndarray | None = None
    out_max: np.ndarray | None = None

    @property
    def output_dim(self) -> int:
        if self.pca_components is not None:
            return self.pca_components.shape[0]
        return self.x_min.shape[0]

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = _scale(X, self.x_min, self.x_max)
        if self.pca_components is not None:
            Z = _scale((Z - self.pca_mean) @ self.pca_components.T, self.out_min, self.out_max)
        # test rows may fall outside the training range
        return np.clip(Z, 0.0, 1.0)


def fit_preprocessor(train: Dataset, pca_components: int | None = None) -> Preprocessor:
    X = train.features
    lo, hi = _minmax(X)
    flat = np.flatnonzero(hi <= lo)
    if flat.size:
        warnings.warn(f"features {flat.tolist()} are constant on the training set; they map to 0", stacklevel=2)
    if pca_components is None:
        return Preprocessor(lo, hi)
    if not 1 <= pca_components <= X.shape[1]:
        raise ValueError(f"cannot keep {pca_components} components of {X.shape[1]} features")
    Z = _scale(X, lo, hi)
    mean = Z.mean(axis=0)
    _, s, vt = np.linalg.svd(Z - mean, full_matrices=False)
    comps = vt[:pca_components]
    # sign convention: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    var = s[:pca_components] ** 2 / max(Z.shape[0] - 1, 1)
    P = (Z - mean) @ comps.T
    plo, phi = _minmax(P)
    return Preprocessor(lo, hi, mean, comps, var, plo, phi)


def _check_unit_interval(x: np.ndarray) -> np.ndarray:
    if np.any(x < -ENCODE_TOL) or np.any(x > 1 + ENCODE_TOL):
        raise ValueError("encoded features must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def encode_kets(X) -> np.ndarray:
    """Dense angle encoding of each row of ``X`` as a state vector.

    Feature pairs ``(a, b)`` become ``cos(pi a / 2)|0> + e^{2 pi i b} sin(pi a / 2)|1>``;
    an odd feature count is padded with a trailing zero. Returns ``(n, 2**q)``.
    """
    X = _check_unit_interval(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] % 2:
        X = np.hstack([X, np.zeros((X.shape[0], 1))])
    theta = 0.5 * np.pi * X[:, 0::2]
    phase = np.exp(2j * np.pi * X[:, 1::2])
    qubits = np.stack([np.cos(theta), phase * np.sin(theta)], axis=-1)
    out = qubits[:, 0]
    for q in range(1, qubits.shape[1]):
        out = np.einsum("ni,nj->nij", out, qubits[:, q]).reshape(X.shape[0], -1)
    return out


def dense_angle_encode(x) -> np.ndarray:
    """Density matrix ``|psi_x><psi_x|`` of one feature vector."""
    psi = encode_kets(np.asarray(x, dtype=float)[None, :])[0]
    return np.outer(psi, psi.conj())


def _amplitudes(K: np.ndarray, kets: np.ndarray) -> np.ndarray:
    """``a[i, k, b] = <b| k_k |psi_i>``."""
    d = K.shape[1]
    return np.einsum("kbj,ij->ikb", K.reshape(-1, d, d), kets)


def outcome_distribution(k, kets: np.ndarray) -> np.ndarray:
    """Computational-basis probabilities for every encoded input, ``(n, d)``."""
    a = _amplitudes(as_matrix(k), np.atleast_2d(kets))
    return np.sum(np.abs(a) ** 2, axis=1)


class CrossEntropyCost(CostFunction):
    """``-sum_i ln p(y_i | x_i)`` with probabilities floored at 1e-12."""

    def __init__(self, kets: np.ndarray, labels: np.ndarray, class_count: int):
        labels = np.asarray(labels, dtype=int)
        if labels.size and labels.max() >= class_count:
            raise ValueError("label outside the class range")
        if class_count > kets.shape[1]:
            raise ValueError(f"{class_count} classes do not fit into dimension {kets.shape[1]}")
        self.kets = np.asarray(kets, dtype=np.complex128)
        self.labels = labels
        self.class_count = class_count
        self._groups = [(c, np.flatnonzero(labels == c)) for c in range(class_count)]
        self._groups = [(c, idx) for c, idx in self._groups if idx.size]

    def value_and_grad(self, K):
        K = np.asarray(K, dtype=np.complex128)
        d = K.shape[1]
        B = K.reshape(-1, d, d)
        grad = np.zeros_like(B)
        value = 0.0
        for c, idx in self._groups:
            psi = self.kets[idx]
            a = psi @ B[:, c, :].T  # a[i, k] = <c|k_k|psi_i>
            p = np.sum(np.abs(a) ** 2, axis=1)
            low = p <= P_FLOOR
            value -= float(np.sum(np.log(np.where(low, P_FLOOR, p))))
            coef = np.where(low, 0.0, 1.0 / np.where(low, 1.0, p))
            # dp/d conj(k_k) = |c><c| k_k |psi><psi|
            grad[:, c, :] = -(a * coef[:, None]).T @ psi.conj()
        return value, grad.reshape(K.shape)


def cross_entropy_cost(kets, labels, class_count: int) -> CrossEntropyCost:
    return CrossEntropyCost(kets, labels, class_count)


@dataclass(frozen=True)
class Classifier:
    stack: KrausStack
    class_count: int

    def __post_init__(self) -> None:
        if not 1 <= self.class_count <= self.stack.d:
            raise ValueError(f"class count {self.class_count} exceeds dimension {self.stack.d}")

    @property
    def qubits(self) -> int:
        return int(round(math.log2(self.stack.d)))

    def predict(self, kets: np.ndarray) -> np.ndarray:
        p = outcome_distribution(self.stack, kets)[:, : self.class_count]
        # smallest label among (numerically) tied maxima
        top = p.max(axis=1, keepdims=True)
        return np.argmax(p >= top - TIE_TOL, axis=1)


def _as_kets(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 2 and x.shape[0] == x.shape[1]:
        # density matrix of a pure state: principal eigenvector
        w, v = np.linalg.eigh(x)
        return v[:, -1][None, :]
    return np.atleast_2d(x)


def classify(c: Classifier, x) -> int:
    """Label of one encoded input (state vector or pure density matrix)."""
    return int(c.predict(_as_kets(x))[0])


def accuracy(c: Classifier, kets: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(c.predict(kets) == labels))


@dataclass
class ClassificationReport:
    train_acc: float
    test_acc: float
    choi_eigs: np.ndarray
    cumulative: np.ndarray
    trace: TrainingTrace = field(repr=False)
    classifier: Classifier = field(repr=False)
    train_idx: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "choi_eigs": self.choi_eigs.tolist(),
            "cumulative": self.cumulative.tolist(),
        }


def split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < fraction < 1:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    perm = rng.permutation(n)
    cut = int(round(fraction * n))
    if cut < 1 or cut >= n:
        raise ValueError(f"split of {n} rows at {fraction} leaves an empty set")
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def run_classification(
    dataset: Dataset,
    m_model: int,
    reg: RegularizerKind,
    epochs: int,
    rng: np.random.Generator,
    split: float = 0.8,
    pca_components: int | None | str = "default",
    record_every: int = 100,
) -> ClassificationReport:
    """Split, preprocess, train from a random unitary channel, and evaluate.

    One generator drives the split and the initialization, in that order.
    """
    if pca_components == "default":
        pca_components = DEFAULT_PCA.get(dataset.name)
    train_idx, test_idx = split_indices(len(dataset), split, rng)
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    pre = fit_preprocessor(train, pca_components)
    kets_train = encode_kets(pre.transform(train.features))
    kets_test = encode_kets(pre.transform(test.features))
    d = kets_train.shape[1]
    c = dataset.class_count
    k0 = sample_unitary_init(d, m_model, rng)
    cost = combine(cross_entropy_cost(kets_train, train.labels, c), reg)
    stack, trace = optimize(k0, cost, OptimizerConfig(epochs=epochs, record_every=record_every))
    clf = Classifier(stack, c)
    eigs = choi_spectrum(stack)
    return ClassificationReport(
        train_acc=accuracy(clf, kets_train, train.labels),
        test_acc=accuracy(clf, kets_test, test.labels),
        choi_eigs=eigs,
        cumulative=np.cumsum(eigs),
        trace=trace,
        classifier=clf,
        train_idx=train_idx,
    )
