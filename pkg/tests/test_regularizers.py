import numpy as np
import pytest

from krausopt.quantum import (
    KrausStack,
    choi_purity,
    choi_state,
    depolarizing_kraus,
    sample_random_channel,
    sample_unitary_init,
    unitary_channel,
)
from krausopt.regularizers import Kind, RegularizerKind, combine, r_choi, r_hs, r_l1
from krausopt.stiefel import FunctionCost, OptimizerConfig, grad_check, optimize

from conftest import mixed_stack

H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


class TestHilbertSchmidt:
    def test_unitary(self):
        assert r_hs(unitary_channel(np.eye(2)))[0] == pytest.approx(np.sqrt(2))

    def test_equal_weight_unitary_init(self, rng):
        u = sample_random_channel(2, 1, rng).data
        k = KrausStack(np.vstack([u / 2] * 4))
        assert r_hs(k)[0] == pytest.approx(np.sqrt(2) / 2)

    @pytest.mark.parametrize("d, m", [(2, 1), (2, 4), (4, 16)])
    def test_bounds(self, rng, d, m):
        v = r_hs(sample_random_channel(d, m, rng))[0]
        assert np.sqrt(d) / m - 1e-12 <= v <= np.sqrt(d / m) + 1e-12

    def test_gradient(self, rng):
        k = sample_random_channel(4, 16, rng)
        assert grad_check(FunctionCost(r_hs), k) <= 1e-6

    def test_zero_block_gradient(self, rng):
        u = sample_random_channel(2, 1, rng).data
        k = KrausStack(np.vstack([u, np.zeros((2, 2))]))
        _, g = r_hs(k)
        np.testing.assert_array_equal(g[2:], 0)
        np.testing.assert_allclose(g[:2], u / (2 * 2 * np.sqrt(2)))


class TestChoiPurity:
    def test_unitary(self, rng):
        assert r_choi(sample_random_channel(4, 1, rng))[0] == pytest.approx(0.0, abs=1e-12)

    def test_depolarizing(self):
        assert r_choi(depolarizing_kraus())[0] == pytest.approx(1.3862944, abs=1e-7)
        assert r_choi(depolarizing_kraus())[0] == pytest.approx(np.log(4), abs=1e-10)

    def test_bounds(self, rng):
        for m in (1, 4, 16):
            v = r_choi(sample_random_channel(4, m, rng))[0]
            assert -1e-12 <= v <= 2 * np.log(4) + 1e-12

    def test_gradient(self, rng):
        assert grad_check(FunctionCost(r_choi), sample_random_channel(4, 16, rng)) <= 1e-6

    def test_matches_dense_purity(self, rng):
        k = sample_random_channel(3, 4, rng)
        chi = choi_state(k)
        assert r_choi(k)[0] == pytest.approx(-np.log(np.trace(chi @ chi).real), abs=1e-10)


class TestL1:
    def test_identity(self):
        assert r_l1(unitary_channel(np.eye(2)))[0] == pytest.approx(1.0)

    def test_hadamard(self):
        assert r_l1(unitary_channel(H))[0] == pytest.approx(np.sqrt(2))

    def test_tie_breaks_to_lowest_column(self):
        _, g = r_l1(unitary_channel(H))
        assert np.all(g[:, 1] == 0) and np.all(g[:, 0] != 0)

    def test_zero_entries_have_zero_subgradient(self):
        _, g = r_l1(unitary_channel(np.eye(2)))
        np.testing.assert_array_equal(g, [[0.5, 0], [0, 0]])

    def test_directional_derivative(self, rng):
        k = sample_random_channel(4, 4, rng)
        value, g = r_l1(k)
        sums = np.abs(k.data).sum(axis=0)
        j = int(np.argmax(sums))
        assert np.sort(sums)[-2] < sums[j] - 1e-3
        h = 1e-6
        for _ in range(10):
            delta = np.zeros_like(k.data)
            delta[:, j] = rng.standard_normal(k.data.shape[0]) + 1j * rng.standard_normal(k.data.shape[0])
            fd = (r_l1(k.data + h * delta)[0] - r_l1(k.data - h * delta)[0]) / (2 * h)
            # directional derivative of a real function: 2 Re <G, delta>
            assert fd == pytest.approx(2 * np.vdot(g, delta).real, abs=1e-5)


class TestCombine:
    def base(self, rng):
        A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        return FunctionCost(lambda K: (float(np.linalg.norm(A @ K) ** 2), A.conj().T @ A @ K))

    @pytest.mark.parametrize("kind", list(Kind))
    def test_gamma_zero_is_base(self, rng, kind):
        base = self.base(rng)
        K = sample_random_channel(2, 4, rng).data
        cost = combine(base, RegularizerKind(kind, 0.0))
        v0, g0 = base.value_and_grad(K)
        v1, g1 = cost.value_and_grad(K)
        assert v0 == v1
        np.testing.assert_array_equal(g0, g1)

    @pytest.mark.parametrize("kind", [Kind.HS, Kind.CHOI])
    def test_combined_gradient(self, rng, kind):
        cost = combine(self.base(rng), RegularizerKind(kind, 1e-2))
        assert grad_check(cost, sample_random_channel(2, 4, rng)) <= 1e-6

    def test_sum_of_parts(self, rng):
        base = self.base(rng)
        K = sample_random_channel(2, 4, rng).data
        v, g = combine(base, RegularizerKind("hs", 0.3)).value_and_grad(K)
        bv, bg = base.value_and_grad(K)
        rv, rg = r_hs(K)
        assert v == pytest.approx(bv + 0.3 * rv)
        np.testing.assert_allclose(g, bg + 0.3 * rg)

    def test_hs_alone_concentrates_weight(self):
        rng = np.random.default_rng(2)
        k0 = sample_unitary_init(2, 4, rng)
        zero = FunctionCost(lambda K: (0.0, np.zeros_like(K)))
        cost = combine(zero, RegularizerKind("hs", 1.0))
        # with only the HS term the normalized step does not shrink, so use a small epsilon
        _, trace = optimize(k0, cost, OptimizerConfig(epsilon=0.01, epochs=2000, record_every=50))
        v = trace.column("cost")
        assert v[-1] < r_hs(k0)[0]
        assert v[-1] == pytest.approx(np.sqrt(2) / 4, abs=2e-3)
        # fixed step size leaves an O(eps^2) ripple near the minimum
        assert np.all(np.diff(v) <= 1e-5)

    def test_parse(self):
        assert RegularizerKind.parse("HS", 0.1) == RegularizerKind(Kind.HS, 0.1)
        with pytest.raises(ValueError, match="unknown regularizer"):
            RegularizerKind.parse("l2")
        with pytest.raises(ValueError):
            RegularizerKind("hs", -1.0)


class TestRepresentation:
    def test_choi_term_invariant(self, rng):
        k = sample_random_channel(4, 6, rng)
        assert r_choi(mixed_stack(k, rng))[0] == pytest.approx(r_choi(k)[0], abs=1e-10)

    def test_hs_and_l1_not_invariant(self, rng):
        k = sample_random_channel(4, 6, rng)
        k2 = mixed_stack(k, rng)
        assert abs(r_hs(k2)[0] - r_hs(k)[0]) > 1e-6
        assert abs(r_l1(k2)[0] - r_l1(k)[0]) > 1e-6
        assert choi_purity(k2) == pytest.approx(choi_purity(k), abs=1e-10)
