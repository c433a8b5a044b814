import math

import numpy as np
import pytest

from survtransfer.errors import DataError, MetricUndefinedError
from survtransfer.metrics import (CensoringKM, ValidationSet, censoring_km,
                                  d_tau, integrated_brier, l2_distance,
                                  rmst_error, uno_c_index)
from survtransfer.model import StepIntensity, TargetModel, TransformationSpec

from conftest import make_subjects
from oracles import censoring_km_oracle


def flat_model(p=2, surv_level=None):
    """Model with no jumps (survival identically 1), optionally one huge jump."""
    if surv_level is None:
        intensity = StepIntensity(np.empty(0), np.empty(0))
    else:
        intensity = StepIntensity(np.array([1e-9]), np.array([-math.log(surv_level)]))
    return TargetModel(beta=np.zeros(p), intensity=intensity,
                       transform=TransformationSpec(0.0))


def oracle_const(level):
    def oracle(times, x):
        return np.full((len(x), len(times)), level)
    return oracle


class TestCensoringKM:
    def test_all_events_is_one(self):
        subs = make_subjects(np.array([1.0, 2.0, 3.0]), np.array([True] * 3),
                             np.zeros((3, 1)), names=None)
        km = censoring_km(subs)
        assert np.all(km.values == 1.0)

    def test_single_censoring_drops_to_zero(self):
        subs = make_subjects(np.array([2.0]), np.array([False]),
                             np.zeros((1, 1)), names=None)
        km = censoring_km(subs)
        assert km.at(1.9) == 1.0
        assert km.at(2.0) == 0.0
        assert km.at_left(2.0) == 1.0

    def test_five_subject_product_limit(self):
        y = np.array([0.5, 1.0, 1.0, 1.5, 2.0])
        d = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
        subs = make_subjects(y, d.astype(bool), np.zeros((5, 1)), names=None)
        km = censoring_km(subs)
        # hand product limit, events first at ties:
        # t=0.5: no censorings -> 1
        # t=1.0: at risk 4, minus 1 event -> factor 1 - 1/3
        # t=1.5: at risk 2 -> factor 1 - 1/2
        assert km.at(0.5) == 1.0
        assert km.at(1.0) == pytest.approx(2.0 / 3.0, rel=1e-14)
        assert km.at(1.5) == pytest.approx(1.0 / 3.0, rel=1e-14)
        assert km.at(2.0) == pytest.approx(1.0 / 3.0, rel=1e-14)
        t_o, v_o = censoring_km_oracle(y, d)
        assert km.values == pytest.approx(v_o, rel=1e-14)

    def test_matches_oracle_on_random_data(self):
        rng = np.random.default_rng(12)
        y = np.round(rng.uniform(0.1, 3.0, 40), 1)  # force ties
        d = rng.random(40) < 0.5
        subs = make_subjects(y, d, np.zeros((40, 1)), names=None)
        km = censoring_km(subs)
        t_o, v_o = censoring_km_oracle(y, d.astype(float))
        assert np.array_equal(km.times, t_o)
        assert km.values == pytest.approx(v_o, rel=1e-12)


class TestCurveMetrics:
    def test_l2_zero_when_equal(self):
        subs = make_subjects(np.array([1.0, 1.5]), np.array([True, True]),
                             np.zeros((2, 2)))
        val = ValidationSet(tuple(subs), oracle_const(1.0))
        assert l2_distance(flat_model(), val, tau=2.0) == 0.0

    def test_l2_constant_offset(self):
        subs = make_subjects(np.array([1.0]), np.array([True]), np.zeros((1, 2)))
        val = ValidationSet(tuple(subs), oracle_const(0.9))
        got = l2_distance(flat_model(), val, tau=2.0)
        assert got == pytest.approx(0.1 * math.sqrt(2.0), rel=1e-12)

    def test_dtau(self):
        subs = make_subjects(np.array([1.0]), np.array([True]), np.zeros((1, 2)))
        val = ValidationSet(tuple(subs), oracle_const(0.95))
        assert d_tau(flat_model(), val, tau=2.0) == pytest.approx(0.05, abs=1e-12)
        val_eq = ValidationSet(tuple(subs), oracle_const(1.0))
        assert d_tau(flat_model(), val_eq, tau=2.0) == 0.0

    def test_missing_oracle_raises(self):
        subs = make_subjects(np.array([1.0]), np.array([True]), np.zeros((1, 2)))
        with pytest.raises(DataError):
            l2_distance(flat_model(), ValidationSet(tuple(subs)), tau=2.0)


def brute_force_c_index(y, d, risk, w, tau):
    num = den = 0.0
    n = len(y)
    for i in range(n):
        if not d[i] or y[i] >= tau:
            continue
        for j in range(n):
            if y[j] > y[i]:
                den += w[i]
                if risk[i] > risk[j]:
                    num += w[i]
                elif risk[i] == risk[j]:
                    num += 0.5 * w[i]
    return num / den


class TestUnoCIndex:
    def _model_with_scores(self, scores):
        # one covariate; risk = 1 - S(tau|x) increasing in x via beta = 1
        return TargetModel(beta=np.array([1.0]),
                           intensity=StepIntensity(np.array([0.5]), np.array([0.5])),
                           transform=TransformationSpec(0.0))

    def test_perfect_concordance(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        x = -y[:, None]  # later failures get lower risk
        subs = make_subjects(y, np.array([True] * 4), x, names=None)
        val = ValidationSet(tuple(subs))
        c = uno_c_index(self._model_with_scores(None), val, tau=5.0)
        assert c == 1.0

    def test_all_tied_scores(self):
        y = np.array([1.0, 2.0, 3.0])
        subs = make_subjects(y, np.array([True] * 3), np.zeros((3, 1)), names=None)
        val = ValidationSet(tuple(subs))
        c = uno_c_index(self._model_with_scores(None), val, tau=5.0)
        assert c == 0.5

    def test_matches_brute_force_with_ties_and_censoring(self):
        rng = np.random.default_rng(3)
        y = np.round(rng.uniform(0.2, 3.0, 60), 1)
        d = rng.random(60) < 0.7
        x = np.round(rng.normal(size=(60, 1)), 1)
        subs = make_subjects(y, d, x, names=None)
        val = ValidationSet(tuple(subs))
        model = self._model_with_scores(None)
        tau = 2.4
        c = uno_c_index(model, val, tau)
        s_tau = np.exp(-0.5 * np.exp(x[:, 0]))
        km = censoring_km(subs)
        w = 1.0 / np.maximum(np.asarray(km.at(y)), 1e-6) ** 2
        want = brute_force_c_index(y, d, 1.0 - s_tau, w, tau)
        assert c == pytest.approx(want, rel=1e-12)

    def test_no_comparable_pairs(self):
        subs = make_subjects(np.array([1.0]), np.array([True]), np.zeros((1, 1)),
                             names=None)
        with pytest.raises(MetricUndefinedError):
            uno_c_index(self._model_with_scores(None), ValidationSet(tuple(subs)), 2.0)

    def test_order_invariance(self):
        rng = np.random.default_rng(9)
        y = rng.uniform(0.2, 3.0, 50)
        d = rng.random(50) < 0.6
        x = rng.normal(size=(50, 1))
        model = self._model_with_scores(None)
        subs = make_subjects(y, d, x, names=None)
        c1 = uno_c_index(model, ValidationSet(tuple(subs)), 2.0)
        perm = rng.permutation(50)
        c2 = uno_c_index(model, ValidationSet(tuple(subs[i] for i in perm)), 2.0)
        assert c1 == pytest.approx(c2, rel=1e-12)


class TestIntegratedBrier:
    def test_perfect_prediction_zero(self):
        subs = make_subjects(np.array([3.0, 4.0]), np.array([True, True]),
                             np.zeros((2, 2)))
        val = ValidationSet(tuple(subs))
        assert integrated_brier(flat_model(), val, tau=2.0) == 0.0

    def test_constant_half(self):
        # survival 1/2 everywhere except the S(0)=1 anchor, so BS(t) = 1/4 on
        # (0, tau]; the first trapezoid cell sees the anchor
        subs = make_subjects(np.array([0.5, 1.2, 1.9]), np.array([True] * 3),
                             np.zeros((3, 2)))
        val = ValidationSet(tuple(subs))
        got = integrated_brier(flat_model(surv_level=0.5), val, tau=2.0)
        t = np.linspace(0.0, 2.0, 200)
        bs = np.full_like(t, 0.25)
        bs[0] = 0.0
        assert got == pytest.approx(np.trapezoid(bs, t) / 2.0, rel=1e-12)
        assert got == pytest.approx(0.25, abs=1e-3)

    def test_uncensored_weights_are_one(self):
        subs = make_subjects(np.array([0.5, 1.2]), np.array([True, True]),
                             np.zeros((2, 2)))
        val = ValidationSet(tuple(subs))
        assert np.all(val.censoring.values == 1.0)


class TestRmstError:
    def test_uncensored_plain_mean(self):
        # with no censoring the weights drop out: plain mean of |Y - T_hat|
        from survtransfer.model import survival_grid
        y = np.array([0.4, 0.9, 1.6])
        subs = make_subjects(y, np.array([True] * 3), np.zeros((3, 2)))
        val = ValidationSet(tuple(subs))
        model = flat_model(surv_level=0.5)
        t = np.linspace(0, 2.0, 200)
        t_hat = np.trapezoid(survival_grid(model, np.zeros((1, 2)), t)[0], t)
        want = np.mean(np.abs(y - t_hat))
        assert rmst_error(model, val, tau=2.0) == pytest.approx(want, rel=1e-12)

    def test_single_exact_prediction(self):
        # survival 1 up to t=1 then ~0: restricted mean 1 matches the event time
        model = TargetModel(beta=np.zeros(2),
                            intensity=StepIntensity(np.array([1.0]), np.array([50.0])),
                            transform=TransformationSpec(0.0))
        subs = make_subjects(np.array([1.0]), np.array([True]), np.zeros((1, 2)))
        val = ValidationSet(tuple(subs))
        assert rmst_error(model, val, tau=2.0) == pytest.approx(0.0, abs=0.011)

    def test_no_events_undefined(self):
        subs = make_subjects(np.array([1.0]), np.array([False]), np.zeros((1, 2)))
        with pytest.raises(MetricUndefinedError):
            rmst_error(flat_model(), ValidationSet(tuple(subs)), tau=2.0)
