import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from cytofam.model import (
    ExpressionDataset, Hyperparams, ModelError, ModelState, RawDataset, inverse_transform,
    log_mixture_density, mixture_density, preprocess, transform,
)
from helpers import random_problem


def _raw(values, cut):
    return RawDataset([np.asarray(v, dtype=float) for v in values], np.asarray(cut, dtype=float),
                      [f"m{j}" for j in range(np.shape(cut)[1])])


class TestTransform:
    def test_ratio_one_is_zero(self):
        d = transform(_raw([[[3.0]]], [[3.0]]))
        assert d.y[0, 0] == 0.0

    def test_natural_log_unit(self):
        d = transform(_raw([[[2.0 * math.e]]], [[2.0]]))
        assert d.y[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_half_ratio_round_trips(self):
        d = transform(_raw([[[2.0]]], [[4.0]]))
        assert d.y[0, 0] == pytest.approx(-0.6931471805599453, abs=1e-15)
        assert math.exp(d.y[0, 0]) * 4.0 == pytest.approx(2.0, rel=1e-15)

    def test_absent_value_is_missing(self):
        d = transform(_raw([[[1.0, np.nan], [2.0, 3.0]]], [[1.0, 1.0]]))
        assert d.m.tolist() == [[True, False], [True, True]]
        assert np.isnan(d.y[0, 1])

    def test_nonpositive_value_names_entry(self):
        with pytest.raises(ModelError, match="cell 1, marker 'm0'"):
            transform(_raw([[[1.0], [-2.0]]], [[1.0]]))

    def test_nonpositive_cutoff_names_entry(self):
        with pytest.raises(ModelError, match="sample 1, marker 'm1'"):
            transform(_raw([[[1.0, 1.0]], [[1.0, 1.0]]], [[1.0, 1.0], [1.0, 0.0]]))

    def test_mismatched_marker_count(self):
        with pytest.raises(ModelError):
            RawDataset([np.ones((2, 3))], np.ones((1, 2)), ["a", "b"])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1e-6, 1e6), min_size=6, max_size=6), st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3))
    def test_inverse_round_trip(self, vals, cuts):
        raw = np.array(vals).reshape(2, 3)
        cut = np.array([cuts])
        back = inverse_transform(transform(_raw([raw], cut)), cut)[0]
        np.testing.assert_allclose(back, raw, rtol=1e-12)


class TestDataset:
    def test_requires_finite_observed(self):
        with pytest.raises(ModelError):
            ExpressionDataset(np.array([[np.inf]]), np.array([[True]]), np.array([0]), np.array([1]))

    def test_layout(self):
        d = ExpressionDataset.from_samples([np.zeros((2, 3)), np.ones((1, 3))])
        assert (d.I, d.J, d.N) == (2, 3, 3)
        assert d.sample.tolist() == [0, 0, 1]
        assert d.sample_y(1).tolist() == [[1.0, 1.0, 1.0]]


class TestPreprocess:
    def _data(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 1, (50, 3))
        a[:, 0] = np.abs(a[:, 0]) + 0.1  # always positive
        return ExpressionDataset.from_samples([a, a.copy()], markers=["pos", "b", "c"])

    def test_always_positive_marker_removed(self):
        out, rep = preprocess(self._data(), 0.9, 1.0, -np.inf)
        assert rep.dropped_markers == ["pos"]
        assert out.markers == ["b", "c"]

    def test_low_cell_removed(self):
        d = ExpressionDataset.from_samples([np.array([[0.5, -7.0], [0.1, 1.0]])])
        out, rep = preprocess(d, 1.0, 1.0, -6.0)
        assert out.N == 1 and rep.dropped_cells == [1]

    def test_vacuous_thresholds_unchanged(self):
        d = self._data()
        out, rep = preprocess(d, 1.0, 1.0, -np.inf)
        np.testing.assert_array_equal(out.y, d.y)
        assert rep.dropped_markers == [] and rep.dropped_cells == [0, 0]

    def test_mostly_missing_marker_removed(self):
        y = np.array([[1.0, np.nan], [2.0, -1.0], [0.5, np.nan]])
        out, rep = preprocess(ExpressionDataset.from_samples([y], ["a", "b"]), 1.0, 0.9, -np.inf)
        assert rep.dropped_markers == ["b"]

    def test_marker_kept_if_one_sample_disagrees(self):
        pos = np.ones((10, 2))
        mixed = np.ones((10, 2))
        mixed[:, 0] = -1.0
        out, rep = preprocess(ExpressionDataset.from_samples([pos, mixed], ["a", "b"]), 0.9, 1.0, -np.inf)
        assert rep.dropped_markers == ["b"]

    def test_all_markers_dropped(self):
        with pytest.raises(ModelError):
            preprocess(ExpressionDataset.from_samples([np.ones((5, 2))]), 0.5, 1.0, -np.inf)


def _state(eta, mu_star, sigma2, z=1):
    """One-sample, one-marker state with the given z-mixture."""
    L = len(eta)
    delta = np.abs(np.diff(np.concatenate([[0.0], np.abs(mu_star)])))
    s = ModelState(Z=np.ones((1, 1), np.int8), v=np.array([.5]), alpha=1.0, w=np.ones((1, 1)), eps=np.array([.1]),
                   lam=np.array([1]), gam=np.zeros((1, 1), np.int8), delta0=delta.copy(), delta1=delta.copy(),
                   sigma2=np.array([sigma2]), eta0=np.array([[eta]]), eta1=np.array([[eta]]), y=np.zeros((1, 1)))
    return s, Hyperparams(K=1, L0=L, L1=L)


class TestMixtureDensity:
    def test_mode_height(self):
        s, h = _state([1.0], [2.0], 0.3)
        assert mixture_density(2.0, 1, 0, 0, s, h) == pytest.approx((2 * np.pi * 0.3) ** -0.5, rel=1e-14)

    def test_identical_components_collapse(self):
        s, h = _state([0.5, 0.5], [1.0, 1.0 + 1e-300], 0.3)
        s.delta1 = np.array([1.0, 1e-300])
        single = stats.norm.pdf(0.4, 1.0, math.sqrt(0.3))
        assert mixture_density(0.4, 1, 0, 0, s, h) == pytest.approx(single, rel=1e-12)

    def test_two_components_vs_direct_sum(self):
        s, h = _state([0.3, 0.7], [-1.0, -3.3], 0.2)
        s.delta0 = np.array([1.0, 2.3])
        expect = 0.3 * stats.norm.pdf(-2, -1, math.sqrt(.2)) + 0.7 * stats.norm.pdf(-2, -3.3, math.sqrt(.2))
        assert mixture_density(-2.0, 0, 0, 0, s, h) == pytest.approx(expect, rel=1e-12, abs=1e-12)

    def test_noisy_density(self):
        s, h = _state([1.0], [1.0], 0.3)
        assert mixture_density(1.5, 1, 0, 0, s, h, noisy=True) == pytest.approx(stats.norm.pdf(1.5, 0, math.sqrt(10)))

    @pytest.mark.parametrize("seed", range(5))
    def test_integrates_to_one(self, seed):
        data, h, _, s = random_problem(np.random.default_rng(seed))
        for z in (0, 1):
            val, _ = integrate.quad(lambda y: mixture_density(y, z, 0, 0, s, h), -60, 60, points=[-10, -5, 0, 5, 10], limit=200)
            assert val == pytest.approx(1.0, abs=1e-6)

    def test_log_mixture_broadcasts(self):
        eta = np.array([[0.2, 0.8], [0.5, 0.5]])
        out = log_mixture_density(np.array([0.0, 1.0]), eta, np.array([1.0, 2.0]), np.array([1.0, 1.0]))
        assert out.shape == (2,)


class TestStateCheck:
    def test_random_state_valid(self):
        _, _, _, s = random_problem(np.random.default_rng(1))
        s.check()

    @pytest.mark.parametrize("field,value", [("alpha", -1.0), ("eps", np.array([0.0, 0.5]))])
    def test_invalid_rejected(self, field, value):
        _, _, _, s = random_problem(np.random.default_rng(1))
        setattr(s, field, value)
        with pytest.raises(ModelError):
            s.check()

    def test_w_off_simplex_rejected(self):
        _, _, _, s = random_problem(np.random.default_rng(1))
        s.w = s.w * 1.01
        with pytest.raises(ModelError):
            s.check()

    def test_location_ordering(self):
        _, _, _, s = random_problem(np.random.default_rng(2))
        assert np.all(np.diff(s.mu_star0) < 0) and s.mu_star0[0] < 0
        assert np.all(np.diff(s.mu_star1) > 0) and s.mu_star1[0] > 0


def test_hyperparams_must_be_positive():
    with pytest.raises(ModelError):
        Hyperparams(K=3, tau2_0=0.0)
    with pytest.raises(ModelError):
        Hyperparams(K=2.5)
