import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tabcl.nn import ContractError
from tabcl.normalization import (
    CleanNormalizer,
    ContinualNormalizer,
    GlobalNormalizer,
    LocalNormalizer,
    MinMaxBounds,
    global_fit,
    make_normalizer,
    minmax_transform,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def chunk(rows, d, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(rows, d)) * 10.0 ** rng.uniform(0, 3, d) + rng.normal(size=d) * 50


def fitted(name, d=4, seed=0):
    n = make_normalizer(name, d)
    if name == "global":
        n.fit_all([chunk(30, d, seed), chunk(30, d, seed + 1)])
    n.update(chunk(30, d, seed))
    n.update(chunk(30, d, seed + 2))
    if name == "clean":
        rng = np.random.default_rng(seed)
        n.scale_w[...] = rng.uniform(0.5, 2, d)
        n.scale_b[...] = rng.normal(size=d)
    return n


class TestGlobal:
    def test_single_chunk_equals_local_bounds(self):
        X = chunk(20, 3, 0)
        b = global_fit([X])
        np.testing.assert_array_equal(b.low, X.min(axis=0))
        np.testing.assert_array_equal(b.high, X.max(axis=0))

    def test_union_of_chunks(self):
        b = global_fit([np.array([[0.0], [10.0]]), np.array([[5.0], [20.0]])])
        assert b.low[0] == 0 and b.high[0] == 20

    def test_constant_feature_maps_to_zero(self):
        parts = [np.full((4, 1), 3.5), np.full((2, 1), 3.5)]
        b = global_fit(parts)
        assert b.low[0] == b.high[0] == 3.5
        assert np.all(minmax_transform(np.full((6, 1), 3.5), b) == 0.0)

    def test_empty_union_is_an_error(self):
        with pytest.raises(ValueError):
            global_fit([np.empty((0, 2))])

    def test_flagged_as_oracle(self):
        assert GlobalNormalizer.oracle and not CleanNormalizer.oracle

    def test_unfitted_update_is_a_contract_error(self):
        with pytest.raises(ContractError):
            GlobalNormalizer(2).update(np.zeros((3, 2)))


class TestMinMax:
    def test_endpoints_and_midpoint(self):
        b = MinMaxBounds(np.array([2.0, -4.0]), np.array([6.0, 4.0]))
        X = np.array([[2.0, -4.0], [6.0, 4.0], [4.0, 0.0]])
        np.testing.assert_array_equal(minmax_transform(X, b), [[0, 0], [1, 1], [0.5, 0.5]])

    def test_degenerate_range(self):
        b = MinMaxBounds(np.array([7.0]), np.array([7.0]))
        assert minmax_transform(np.array([[7.0]]), b, 1e-8)[0, 0] == 0.0

    def test_no_clipping(self):
        b = MinMaxBounds(np.array([0.0]), np.array([10.0]))
        np.testing.assert_array_equal(minmax_transform(np.array([[-5.0], [25.0]]), b), [[-0.5], [2.5]])


class TestLocal:
    def test_train_chunk_spans_unit_interval(self):
        X = np.random.default_rng(0).uniform(3, 9, size=(50, 3))
        X[0], X[1] = 3.0, 9.0
        out = LocalNormalizer(3).update_transform(X)
        np.testing.assert_array_equal(out.min(axis=0), 0.0)
        np.testing.assert_array_equal(out.max(axis=0), 1.0)

    def test_same_value_maps_differently_across_chunks(self):
        n = LocalNormalizer(1)
        n.update(np.array([[0.0], [10.0]]))
        first = n.transform(np.array([[5.0]]))[0, 0]
        n.update(np.array([[0.0], [5.0]]))
        second = n.transform(np.array([[5.0]]))[0, 0]
        assert (first, second) == (0.5, 1.0)

    def test_test_row_below_train_minimum_goes_negative(self):
        n = LocalNormalizer(1)
        n.update(np.array([[2.0], [4.0]]))
        assert n.transform(np.array([[1.0]]))[0, 0] == -0.5

    def test_single_row_chunk(self):
        n = LocalNormalizer(2)
        assert np.all(n.update_transform(np.array([[1.0, 2.0]])) == 0.0)


class TestContinual:
    def test_lambda_one_tracks_current_chunk(self):
        n = ContinualNormalizer(3, lam=1.0)
        n.update(chunk(40, 3, 0))
        X = chunk(40, 3, 1)
        n.update(X)
        np.testing.assert_array_equal(n.mean, X.mean(axis=0))
        np.testing.assert_array_equal(n.std, X.std(axis=0))

    def test_blend(self):
        n = ContinualNormalizer(1, lam=0.1)
        n.update(np.array([[-1.0], [1.0]]))  # mean 0
        n.update(np.array([[10.0], [10.0]]))
        assert n.mean[0] == pytest.approx(1.0, abs=1e-15)

    def test_identical_chunks_are_a_fixed_point(self):
        n = ContinualNormalizer(2, lam=0.3)
        X = chunk(25, 2, 4)
        n.update(X)
        n.update(X)
        np.testing.assert_allclose(n.mean, X.mean(axis=0), rtol=1e-15)

    def test_transform_values(self):
        n = ContinualNormalizer(1)
        n.update(np.array([[1.0], [3.0]]))  # mean 2, std 1
        out = n.transform(np.array([[2.0], [3.0]]))
        assert out[0, 0] == 0.0
        assert out[1, 0] == pytest.approx(1.0 / (1.0 + 1e-8), rel=1e-15)

    def test_constant_feature(self):
        n = ContinualNormalizer(1)
        n.update(np.full((5, 1), 4.0))
        assert n.transform(np.array([[4.0]]))[0, 0] == 0.0

    def test_uninitialised_transform_is_a_contract_error(self):
        with pytest.raises(ContractError):
            ContinualNormalizer(2).transform(np.zeros((1, 2)))


class TestClean:
    def test_initial_estimates(self):
        n = CleanNormalizer(3)
        np.testing.assert_array_equal(n.high, 1.0)
        np.testing.assert_array_equal(n.low, 0.0)

    def test_eta_one_freezes_estimates(self):
        n = CleanNormalizer(2, eta=1.0)
        n.update(chunk(10, 2, 0) * 1000)
        np.testing.assert_array_equal(n.high, 1.0)
        np.testing.assert_array_equal(n.low, 0.0)

    def test_eta_zero_tracks_chunk(self):
        n = CleanNormalizer(2, eta=0.0)
        X = chunk(10, 2, 0)
        n.update(X)
        np.testing.assert_array_equal(n.high, X.max(axis=0))
        np.testing.assert_array_equal(n.low, X.min(axis=0))

    def test_ema_hand_value(self):
        n = CleanNormalizer(1, eta=0.9)
        n.high = np.array([10.0])
        n.update(np.array([[0.0], [20.0]]))
        assert n.high[0] == pytest.approx(11.0, abs=1e-12)

    def test_identity_scaling_equals_estimated_minmax(self):
        n = CleanNormalizer(3, eta=0.5)
        n.update(chunk(20, 3, 0))
        X = chunk(5, 3, 1)
        np.testing.assert_array_equal(n.transform(X), minmax_transform(X, n.bounds))

    def test_scaling_layer_is_diagonal_affine(self):
        n = CleanNormalizer(2, eta=0.0)
        n.update(np.array([[0.0, 0.0], [1.0, 2.0]]))
        n.scale_w[...] = [2.0, 3.0]
        n.scale_b[...] = [1.0, -1.0]
        np.testing.assert_allclose(n.transform(np.array([[0.5, 1.0]])), [[2.0, 0.5]])

    def test_bind_shares_memory(self):
        from tabcl.nn import Mlp

        net = Mlp(3, scaling=True)
        n = CleanNormalizer(3)
        n.bind(net.scale_w, net.scale_b)
        net.theta[:3] = 5.0
        np.testing.assert_array_equal(n.scale_w, 5.0)

    def test_degeneracy_to_local(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            X = rng.normal(size=(50, 4)) * rng.uniform(1, 1000, 4)
            c, l = CleanNormalizer(4, eta=0.0), LocalNormalizer(4)
            c.update(X)
            l.update(X)
            assert np.array_equal(c.transform(X), l.transform(X))


ALL = ["global", "local", "cn", "clean"]


@pytest.mark.parametrize("name", ALL)
class TestNormalizerProperties:
    @settings(max_examples=40, deadline=None)
    @given(X=arrays(np.float64, (6, 4), elements=finite), j=st.integers(0, 3), delta=finite)
    def test_feature_isolation(self, name, X, j, delta):
        n = fitted(name)
        Y = X.copy()
        Y[:, j] += delta
        a, b = n.transform(X), n.transform(Y)
        others = [k for k in range(4) if k != j]
        np.testing.assert_array_equal(a[:, others], b[:, others])

    @settings(max_examples=40, deadline=None)
    @given(x=arrays(np.float64, (4,), elements=finite), y=arrays(np.float64, (4,), elements=finite),
           alpha=st.floats(0, 1))
    def test_affine_per_feature(self, name, x, y, alpha):
        n = fitted(name)
        lhs = n.transform((alpha * x + (1 - alpha) * y)[None])[0]
        rhs = alpha * n.transform(x[None])[0] + (1 - alpha) * n.transform(y[None])[0]
        scale = 1 + np.abs(n.transform(x[None])[0]) + np.abs(n.transform(y[None])[0])
        assert np.all(np.abs(lhs - rhs) <= 1e-9 * scale)

    def test_transform_does_not_mutate(self, name):
        n = fitted(name)
        before = {k: np.copy(v) for k, v in n.state_dict().items()}
        n.transform(chunk(10, 4, 9) * 1e3)
        after = n.state_dict()
        for k, v in before.items():
            np.testing.assert_array_equal(v, after[k])


@settings(max_examples=60, deadline=None)
@given(eta=st.floats(0, 1), maxima=st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=8))
def test_clean_estimate_stays_inside_hull(eta, maxima):
    n = CleanNormalizer(1, eta=eta)
    seen = [1.0]
    for m in maxima:
        n.update(np.array([[m - 1.0], [m]]))
        seen.append(m)
        tol = 1e-12 * max(1.0, max(abs(s) for s in seen))
        assert min(seen) - tol <= n.high[0] <= max(seen) + tol
