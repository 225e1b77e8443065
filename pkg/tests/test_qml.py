import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krausopt.quantum import (
    KrausStack,
    depolarizing_kraus,
    sample_random_channel,
    sample_unitary_init,
    unitary_channel,
)
from krausopt.qml import (
    Classifier,
    Dataset,
    accuracy,
    classify,
    cross_entropy_cost,
    dense_angle_encode,
    encode_kets,
    fit_preprocessor,
    load_dataset,
    outcome_distribution,
    run_classification,
    split_indices,
)
from krausopt.regularizers import RegularizerKind
from krausopt.stiefel import grad_check


@pytest.fixture(scope="module")
def iris():
    return load_dataset("iris")


@pytest.fixture(scope="module")
def wine():
    return load_dataset("wine")


def bloch_ket(a, b):
    return np.array([np.cos(np.pi * a / 2), np.exp(2j * np.pi * b) * np.sin(np.pi * a / 2)])


class TestDatasets:
    def test_iris(self, iris):
        assert iris.features.shape == (150, 4)
        assert set(iris.labels) == {0, 1, 2}
        assert iris.class_count == 3

    def test_wine(self, wine):
        assert wine.features.shape == (178, 13)
        assert set(wine.labels) == {0, 1, 2}
        assert len(wine.feature_names) == 13

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown dataset"):
            load_dataset("mnist")

    def test_mismatched_labels(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2))


class TestPreprocessing:
    def test_iris_unit_range(self, iris):
        pre = fit_preprocessor(iris)
        Z = pre.transform(iris.features)
        assert pre.output_dim == 4
        assert Z.min() == 0.0 and Z.max() == 1.0
        np.testing.assert_allclose(Z.min(axis=0), 0)
        np.testing.assert_allclose(Z.max(axis=0), 1)

    def test_wine_pca(self, wine):
        pre = fit_preprocessor(wine, 6)
        assert pre.output_dim == 6
        assert np.all(np.diff(pre.explained_variance) <= 0)
        Z = pre.transform(wine.features)
        assert Z.shape == (178, 6)
        np.testing.assert_allclose(Z.min(axis=0), 0, atol=1e-15)
        np.testing.assert_allclose(Z.max(axis=0), 1, atol=1e-15)

    def test_pca_variance_matches_covariance(self, wine):
        pre = fit_preprocessor(wine, 6)
        Z = (wine.features - pre.x_min) / (pre.x_max - pre.x_min)
        w = np.linalg.eigvalsh(np.cov(Z, rowvar=False))[::-1]
        np.testing.assert_allclose(pre.explained_variance, w[:6], rtol=1e-10)

    def test_too_many_components(self, iris):
        with pytest.raises(ValueError):
            fit_preprocessor(iris, 5)

    def test_test_rows_clamped(self, iris):
        pre = fit_preprocessor(iris.subset(np.arange(10)))
        Z = pre.transform(iris.features)
        assert Z.min() >= 0 and Z.max() <= 1

    def test_constant_feature_warns(self):
        ds = Dataset(np.array([[1.0, 2.0], [1.0, 3.0]]), np.array([0, 1]))
        with pytest.warns(UserWarning, match="constant"):
            pre = fit_preprocessor(ds)
        np.testing.assert_array_equal(pre.transform(ds.features)[:, 0], 0)

    def test_no_leakage(self, wine):
        rng = np.random.default_rng(0)
        for _ in range(5):
            tr, te = split_indices(len(wine), 0.8, rng)
            a = fit_preprocessor(wine.subset(tr), 6)
            b = fit_preprocessor(wine.subset(tr), 6)
            full = fit_preprocessor(wine, 6)
            np.testing.assert_array_equal(a.out_max, b.out_max)
            # the fit depends only on the training rows it was given
            assert not np.allclose(a.pca_mean, full.pca_mean)
            # moving test rows leaves the training fit untouched
            X = wine.features.copy()
            X[te] *= 10
            c = fit_preprocessor(Dataset(X, wine.labels).subset(tr), 6)
            np.testing.assert_array_equal(a.pca_components, c.pca_components)


class TestEncoding:
    def test_zero(self):
        np.testing.assert_allclose(encode_kets([0.0, 0.0])[0], [1, 0])

    def test_phase_cancels(self):
        psi = encode_kets([1.0, 0.25])[0]
        np.testing.assert_allclose(psi, [0, 1j], atol=1e-15)
        np.testing.assert_allclose(dense_angle_encode([1.0, 0.25]), [[0, 0], [0, 1]], atol=1e-15)

    def test_half_angles(self):
        x = [0.5, 0.5, 0.5, 0.5]
        q = bloch_ket(0.5, 0.5)
        np.testing.assert_allclose(encode_kets(x)[0], np.kron(q, q), atol=1e-15)
        # Bloch vector (sin t cos f, sin t sin f, cos t) with t = pi/2, f = pi
        rho = np.outer(q, q.conj())
        bloch = [2 * rho[0, 1].real, -2 * rho[0, 1].imag, (rho[0, 0] - rho[1, 1]).real]
        np.testing.assert_allclose(bloch, [-1, 0, 0], atol=1e-15)

    def test_odd_padding(self):
        np.testing.assert_allclose(encode_kets([0.3, 0.7, 0.2])[0], np.kron(bloch_ket(0.3, 0.7), bloch_ket(0.2, 0)))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_kets([1.1, 0.0])
        np.testing.assert_allclose(encode_kets([1 + 1e-10, 0])[0], [0, 1], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(x=st.lists(st.floats(0, 1), min_size=1, max_size=6))
    def test_pure_product_state(self, x):
        psi = encode_kets(x)[0]
        assert abs(np.vdot(psi, psi) - 1) <= 1e-10
        rho = dense_angle_encode(x)
        assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-10)
        xp = list(x) + [0.0] * (len(x) % 2)
        ref = np.array([1.0 + 0j])
        for i in range(0, len(xp), 2):
            ref = np.kron(ref, bloch_ket(xp[i], xp[i + 1]))
        np.testing.assert_allclose(psi, ref, atol=1e-12)


def ce_reference(K, kets, labels):
    d = K.shape[1]
    total = 0.0
    for psi, y in zip(kets, labels):
        rho = np.outer(psi, psi.conj())
        out = sum(k @ rho @ k.conj().T for k in K.reshape(-1, d, d))
        total -= np.log(max(out[y, y].real, 1e-12))
    return total


class TestCrossEntropy:
    def test_perfect_channel(self):
        # X maps |0> to |1>
        kets = encode_kets([[0.0, 0.0]])
        cost = cross_entropy_cost(kets, [1], 2)
        assert cost.evaluate(unitary_channel(np.array([[0, 1], [1, 0]]))) == pytest.approx(0.0, abs=1e-15)

    def test_loop_oracle(self, iris):
        rng = np.random.default_rng(3)
        pre = fit_preprocessor(iris)
        idx = rng.choice(len(iris), 5, replace=False)
        kets = encode_kets(pre.transform(iris.features[idx]))
        k = sample_random_channel(4, 3, rng)
        cost = cross_entropy_cost(kets, iris.labels[idx], 3)
        assert cost.evaluate(k) == pytest.approx(ce_reference(k.data, kets, iris.labels[idx]), abs=1e-12)

    @pytest.mark.parametrize("m", [1, 4, 16])
    def test_gradient(self, iris, m):
        rng = np.random.default_rng(m)
        pre = fit_preprocessor(iris)
        idx = rng.choice(len(iris), 20, replace=False)
        kets = encode_kets(pre.transform(iris.features[idx]))
        cost = cross_entropy_cost(kets, iris.labels[idx], 3)
        assert grad_check(cost, sample_random_channel(4, m, rng)) <= 1e-6

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy_cost(encode_kets([[0.0, 0.0]]), [2], 2)


class TestClassify:
    def test_identity(self):
        clf = Classifier(unitary_channel(np.eye(4)), 3)
        assert classify(clf, dense_angle_encode([0, 0, 0, 0])) == 0
        assert classify(clf, encode_kets([0, 0, 1, 0])[0]) == 1

    def test_uniform_ties_to_zero(self):
        # completely depolarizing on two qubits: Pauli products / 4
        paulis = depolarizing_kraus().blocks
        K = np.vstack([np.kron(a, b) for a in paulis for b in paulis])
        clf = Classifier(KrausStack(K), 3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            assert classify(clf, encode_kets(rng.random(4))[0]) == 0

    def test_class_count_limit(self):
        with pytest.raises(ValueError):
            Classifier(unitary_channel(np.eye(2)), 3)


class TestAccuracy:
    def toy(self):
        kets = encode_kets([[0, 0, 0, 0], [0, 0, 1, 0], [1, 0, 0, 0]])
        return Classifier(unitary_channel(np.eye(4)), 3), kets

    def test_all_correct(self):
        clf, kets = self.toy()
        assert accuracy(clf, kets, [0, 1, 2]) == 1.0

    def test_all_wrong(self):
        clf, kets = self.toy()
        assert accuracy(clf, kets, [1, 2, 0]) == 0.0

    def test_empty(self):
        clf, _ = self.toy()
        with pytest.raises(ValueError):
            accuracy(clf, np.zeros((0, 4)), [])

    def test_chance_level(self, iris):
        kets = encode_kets(fit_preprocessor(iris).transform(iris.features))
        accs = [
            accuracy(Classifier(sample_unitary_init(4, 16, np.random.default_rng(s)), 3), kets, iris.labels)
            for s in range(100)
        ]
        assert abs(np.mean(accs) - 1 / 3) <= 0.15

    def test_probabilities_sum_to_one(self, iris):
        kets = encode_kets(fit_preprocessor(iris).transform(iris.features))
        p = outcome_distribution(sample_random_channel(4, 16, np.random.default_rng(1)), kets)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-8)


class TestRunClassification:
    def test_split_sizes(self):
        tr, te = split_indices(150, 0.8, np.random.default_rng(0))
        assert len(tr) == 120 and len(te) == 30
        assert not set(tr) & set(te)

    def test_bad_split(self):
        with pytest.raises(ValueError):
            split_indices(150, 1.0, np.random.default_rng(0))

    def test_short_run(self, iris):
        rep = run_classification(iris, 4, RegularizerKind(), 50, np.random.default_rng(0), record_every=10)
        assert 0 <= rep.test_acc <= 1
        assert rep.train_acc > 0.5
        assert rep.cumulative[-1] == pytest.approx(1.0, abs=1e-8)
        assert rep.trace.epochs[-1] == 50
        assert rep.classifier.stack.residual() <= 1e-8
        assert set(rep.to_dict()) == {"train_acc", "test_acc", "choi_eigs", "cumulative"}

    def test_deterministic(self, wine):
        a = run_classification(wine, 2, RegularizerKind(), 5, np.random.default_rng(9))
        b = run_classification(wine, 2, RegularizerKind(), 5, np.random.default_rng(9))
        assert a.classifier.stack.data.tobytes() == b.classifier.stack.data.tobytes()
        assert a.classifier.qubits == 3

    @pytest.mark.slow
    def test_iris_unregularized_rank(self, iris):
        tops = [
            run_classification(iris, 16, RegularizerKind(), 1500, np.random.default_rng(s)).cumulative[2]
            for s in range(3)
        ]
        assert np.mean(tops) >= 0.99

    @pytest.mark.slow
    @pytest.mark.xfail(reason="Choi term at gamma=0.02 lowers the Wine rank only to top-3 ~0.85 at 750 epochs", strict=False)
    def test_wine_choi_rank_three(self, wine):
        tops = [
            run_classification(wine, 16, RegularizerKind("choi", 0.02), 750, np.random.default_rng(s)).cumulative[2]
            for s in range(4)
        ]
        assert np.mean(tops) >= 0.99

    @pytest.mark.slow
    def test_wine_unitary_underperforms(self, wine):
        gaps = []
        for s in range(20):
            a = run_classification(wine, 1, RegularizerKind(), 750, np.random.default_rng(s)).test_acc
            b = run_classification(wine, 16, RegularizerKind(), 750, np.random.default_rng(s)).test_acc
            gaps.append(b - a)
        assert np.mean(gaps) >= 0
