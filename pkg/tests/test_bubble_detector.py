import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from marbubble.bubble_detector import (
    BubbleEpisode,
    XiPoint,
    delta_xi,
    detect,
    detect_episodes,
    diagnose,
    forward_conditional_prob,
    known_fit,
    xi,
    xi_series,
    xi_sigma,
)
from marbubble.estimation import HEAVY_TAIL_TRANSFORMS, gcov_estimate
from marbubble.mar_model import ErrorDist, MarModel, latent_components, simulate

OMEGA = np.array([[0.4, -0.1], [-0.1, 0.3]])


@pytest.fixture(scope="module")
def t3_path():
    return simulate(MarModel(1, 1, 0.3, 0.9, ErrorDist.student_t(3)), 400, seed=0)


@pytest.fixture(scope="module")
def fit11():
    return known_fit(1, 1, 0.3, 0.9, OMEGA, 400)


def fd_sigma(y, phi, psi, omega, t, h, step=1e-6):
    # oracle: latent-component product and a numerical gradient in (phi, psi)
    def f(p, q):
        lc = latent_components(y, p, q)
        return lc.u[t + h + 1] * lc.v[t + h] / y[t] ** 2

    g = np.array([
        (f(phi + step, psi) - f(phi - step, psi)) / (2 * step),
        (f(phi, psi + step) - f(phi, psi - step)) / (2 * step),
    ])
    return f(phi, psi), np.sqrt(g @ omega @ g)


class TestStatistic:
    @pytest.mark.parametrize("t,h", [(10, 0), (57, 3), (200, 10)])
    def test_against_latent_components(self, t3_path, fit11, t, h):
        x0, s0 = fd_sigma(t3_path, 0.3, 0.9, OMEGA, t, h)
        assert xi(t3_path, fit11, t, h) == pytest.approx(x0, rel=1e-10)
        assert xi_sigma(t3_path, fit11, t, h) == pytest.approx(s0, rel=1e-6)

    def test_zero_when_next_value_follows_causal_root(self, fit11):
        y = np.array([1.0, 2.0, 0.6, 5.0, 3.0])
        assert xi(y, fit11, 1, 0) == pytest.approx(0.0)

    def test_one_sided_models(self):
        y = np.array([2.0, 4.0, -1.0, 3.0, 0.5])
        f01 = known_fit(0, 1, psi=0.8, omega=[[0.5]], T=5)
        f10 = known_fit(1, 0, phi=0.4, omega=[[0.5]], T=5)
        assert xi(y, f01, 1) == pytest.approx((4.0 - 0.8 * -1.0) / 4.0)
        assert xi(y, f10, 1) == pytest.approx((-1.0 - 0.4 * 4.0) / 4.0)
        assert xi_sigma(y, f01, 1) == pytest.approx(np.sqrt(0.5) * 1.0 / 4.0)
        assert xi_sigma(y, f10, 1) == pytest.approx(np.sqrt(0.5))

    def test_zero_covariance(self, t3_path):
        f = known_fit(1, 1, 0.3, 0.9, np.zeros((2, 2)), 400)
        p = diagnose(t3_path, f, 50, [0])[0]
        assert p.sigma == 0.0 and p.band_halfwidth == 0.0

    def test_degenerate_point_is_not_rejected(self):
        p = XiPoint(0, 0, 0.0, 0.0, 0.0, False)
        assert p.decision == 1
        y = np.array([1.0, 0.3, 0.09, 0.027])
        f = known_fit(1, 1, 0.3, 0.9, np.zeros((2, 2)), 4)
        assert diagnose(y, f, 0, [0])[0].decision == 1

    def test_zero_guard(self, fit11):
        y = np.array([1.0, 0.0, 2.0, -1.0, 3.0])
        assert np.isnan(xi(y, fit11, 1))
        pts = xi_series(y, fit11)
        assert pts[1].rejected is None and pts[1].decision is None

    def test_index_errors(self, fit11):
        y = np.arange(1.0, 6.0)
        with pytest.raises(IndexError):
            xi(y, fit11, 3, 1)
        with pytest.raises(ValueError):
            xi(y, fit11, 0, -1)
        with pytest.raises(ValueError):
            xi(y, known_fit(0, 0), 0)

    def test_band_and_decision(self, t3_path, fit11):
        for p in xi_series(t3_path, fit11)[:50]:
            assert p.band_halfwidth == pytest.approx(1.96 * p.sigma / np.sqrt(400))
            assert p.rejected == (abs(np.sqrt(400) * p.xi / p.sigma) > 1.96)

    @given(st.floats(1e-3, 1e3), st.integers(0, 380), st.integers(0, 10))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance(self, c, t, h):
        y = simulate(MarModel(1, 1, 0.3, 0.9, ErrorDist.student_t(3)), 400, seed=0)
        f = known_fit(1, 1, 0.3, 0.9, OMEGA, 400)
        a = diagnose(y, f, t, [h])[0]
        b = diagnose(c * y, f, t, [h])[0]
        assert abs(a.xi - b.xi) < 1e-12 * max(1.0, abs(a.xi))
        assert a.rejected == b.rejected

    @given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(0.1, 10))
    @settings(max_examples=60, deadline=None)
    def test_depends_on_growth_ratio_only(self, ratio, s1, s2):
        f = known_fit(1, 1, 0.3, 0.9, OMEGA, 10)
        y1 = np.array([s1, ratio * s1, 1.0, 1.0])
        y2 = np.array([s2, ratio * s2, 7.0, -2.0])
        p1, p2 = diagnose(y1, f, 0, [0])[0], diagnose(y2, f, 0, [0])[0]
        assert p1.xi == pytest.approx(p2.xi, rel=1e-12, abs=1e-15)
        assert p1.sigma == pytest.approx(p2.sigma, rel=1e-12, abs=1e-15)

    @given(st.floats(1.0, 100.0), st.integers(0, 380))
    @settings(max_examples=60, deadline=None)
    def test_wider_band_never_rejects_more(self, k, t):
        y = simulate(MarModel(1, 1, 0.3, 0.9, ErrorDist.student_t(3)), 400, seed=0)
        base = diagnose(y, known_fit(1, 1, 0.3, 0.9, OMEGA, 400), t, range(0, 10))
        wide = diagnose(y, known_fit(1, 1, 0.3, 0.9, k * OMEGA, 400), t, range(0, 10))
        for a, b in zip(base, wide):
            assert not (a.decision == 1 and b.decision == 0)


class TestDiagnose:
    def test_horizons(self, t3_path, fit11):
        pts = diagnose(t3_path, fit11, 100)
        assert [p.h for p in pts] == list(range(1, 11))
        assert all(p.decision in (0, 1) for p in pts)

    def test_overflow_truncates_with_warning(self, t3_path, fit11):
        with pytest.warns(RuntimeWarning, match="dropped"):
            pts = diagnose(t3_path, fit11, 392)
        assert [p.h for p in pts] == [1, 2, 3, 4, 5, 6]

    def test_bad_time(self, t3_path, fit11):
        with pytest.raises(IndexError):
            diagnose(t3_path, fit11, -1, [0])


class TestDeltaXi:
    def test_constant_series(self, fit11):
        assert_allclose(delta_xi(np.full(30, 2.5), fit11), 0.0, atol=0)

    def test_gaps(self, fit11):
        y = np.array([1.0, 2.0, 0.0, 3.0, 1.0, 2.0])
        d = delta_xi(y, fit11)
        assert np.isnan(d[1]) and np.isnan(d[2]) and np.isfinite(d[0])

    def test_white_noise_moves_beyond_band(self):
        fit = gcov_estimate(simulate(MarModel(1, 1, 0.3, 0.9, ErrorDist.student_t(3)), 400, seed=0),
                            1, 1, HEAVY_TAIL_TRANSFORMS, 3)
        w = np.random.default_rng(0).standard_t(3, 400)
        d = delta_xi(w, fit)
        band = np.array([p.band_halfwidth for p in xi_series(w, fit)])[1:]
        assert np.nanmean(np.abs(d) > band) > 0.5

    def test_flat_during_cauchy_bubbles(self):
        m = MarModel(1, 1, 0.3, 0.9, ErrorDist.cauchy())
        inside = []
        for seed in range(5):
            y = simulate(m, 400, seed=seed)
            fit = gcov_estimate(y, 1, 1, HEAVY_TAIL_TRANSFORMS, 3)
            rep = detect(y, fit)
            d = delta_xi(y, fit)
            band = np.array([p.band_halfwidth for p in rep.points])
            for e in rep.episodes:
                # the last difference straddles the crash
                idx = np.arange(e.start, e.end - 1)
                inside.extend(np.abs(d[idx]) < band[idx])
        assert len(inside) > 20
        assert np.mean(inside) >= 0.8

    def test_too_short(self, fit11):
        with pytest.raises(ValueError):
            delta_xi([1.0, 2.0], fit11)


def _pts(flags):
    return [XiPoint(i, 0, 0.0, 1.0, 0.1, None if f is None else not f) for i, f in enumerate(flags)]


class TestEpisodes:
    def test_constant_series(self, fit11):
        assert detect_episodes(np.full(50, 3.0), fit11) == []

    def test_short_series(self, fit11):
        with pytest.raises(ValueError):
            detect_episodes(np.ones(10), fit11)

    def test_geometric_bubble(self):
        # explosive rise at rate 1/psi and a crash, on a flat noisy background
        rng = np.random.default_rng(1)
        y = 0.01 * rng.standard_normal(100)
        y[60:68] = 0.8 ** np.arange(7, -1, -1) * 50
        fit = known_fit(0, 1, psi=0.8, omega=[[0.01]], T=100)
        eps = detect_episodes(y, fit)
        assert len(eps) == 1
        e = eps[0]
        assert e.start <= 60 and e.end >= 67 and e.peak == 67

    def test_run_logic(self, fit11):
        y = np.zeros(40)
        y[[5, 20, 30]] = [10.0, 11.0, 12.0]
        ok = [False] * 40
        for i in (3, 4, 5, 6):
            ok[i] = True
        for i in (18, 19, 21, 22):  # runs of two either side of a rejection at 20
            ok[i] = True
        ok[30] = True  # isolated single point
        eps = detect_episodes(y, fit11, 0.9, 2, points=_pts(ok))
        assert [(e.start, e.end, e.peak) for e in eps] == [(3, 6, 5), (18, 22, 20)]
        eps1 = detect_episodes(y, fit11, 0.9, 1, points=_pts(ok))
        assert (30, 30, 30) in [(e.start, e.end, e.peak) for e in eps1]

    def test_episode_invariant(self):
        with pytest.raises(ValueError):
            BubbleEpisode(5, 3, 4, 0.975)
        assert BubbleEpisode(2, 6, 6, 0.975).length == 5

    def test_arguments(self, fit11):
        y = np.random.default_rng(0).standard_normal(50)
        with pytest.raises(ValueError):
            detect_episodes(y, fit11, threshold_q=1.2)
        with pytest.raises(ValueError):
            detect_episodes(y, fit11, min_run=0)


class TestForwardProbability:
    def test_increasing(self):
        assert forward_conditional_prob(np.arange(1.0, 101.0)) == 1.0

    def test_no_exceedance(self):
        assert np.isnan(forward_conditional_prob(np.ones(30)))

    def test_direct_count(self):
        y = np.random.default_rng(4).standard_cauchy(1000)
        q = np.quantile(y, 0.975)
        hits = [t for t in range(999) if y[t] > q]
        assert forward_conditional_prob(y) == pytest.approx(np.mean([y[t + 1] >= y[t] for t in hits]))

    def test_tail_limit_cauchy(self):
        y = simulate(MarModel(0, 1, 0.0, 0.7, ErrorDist.cauchy()), 100_000, seed=3)
        assert forward_conditional_prob(y, 0.975) == pytest.approx(0.7, abs=0.1)

    @pytest.mark.slow
    def test_tail_limit_student_extreme_threshold(self):
        y = simulate(MarModel(0, 1, 0.0, 0.9, ErrorDist.student_t(3)), 1_000_000, seed=3)
        assert forward_conditional_prob(y, 0.9999) == pytest.approx(0.9**3, abs=0.1)


class TestReport:
    def test_json_and_csv(self, t3_path, fit11):
        dates = [f"d{i}" for i in range(400)]
        rep = detect(t3_path, fit11, dates=dates)
        d = json.loads(rep.to_json())
        assert set(d) == {"points", "episodes", "forward_prob"}
        assert set(d["points"][0]) == {"t", "date", "xi", "sigma", "band", "rejected"}
        for e in d["episodes"]:
            assert set(e) == {"start_date", "end_date", "peak_date", "threshold_q"}
        lines = rep.to_csv().splitlines()
        assert lines[0] == "date,y,xi,band_lo,band_hi,in_episode"
        assert len(lines) == 401
        inside = sum(int(l.rsplit(",", 1)[1]) for l in lines[1:])
        assert inside == sum(e.length for e in rep.episodes)

    def test_nan_serialised_as_null(self, fit11):
        y = np.array([1.0, 0.0, 2.0] + [1.0] * 20)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d = detect(y, fit11).to_dict()
        assert d["points"][1]["xi"] is None
