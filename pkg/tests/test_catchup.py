import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgrowth.basis import BSplineBasis, PenaltyConfig, Spline, make_knots
from condgrowth.catchup import (
    CatchupEstimate,
    CatchupModel,
    UnidentifiableError,
    center,
    estimate_b,
    is_catchup,
    midpoint_ages,
    simulate_cohort,
    step_eq3,
    step_eq4,
    uncenter,
)
from condgrowth.data import LongitudinalDataset, Measurement, Subject

# a smooth, strictly positive population curve keeps simulated weights valid
G_BASIS = BSplineBasis(make_knots(0, 10, 3))
G = Spline(G_BASIS, 50 + np.linspace(0, 8, G_BASIS.num_basis) + np.sin(np.arange(G_BASIS.num_basis)))


def _schedules(n, visits, seed, gap=(0.5, 1.5), start=(0, 1)):
    rng = np.random.default_rng(seed)
    starts = rng.uniform(*start, n)
    gaps = rng.uniform(*gap, (n, visits - 1))
    return [np.concatenate([[s], s + np.cumsum(d)]) for s, d in zip(starts, gaps)]


class TestTransitions:
    def test_eq3_eq4_identity(self):
        rng = np.random.default_rng(0)
        model = CatchupModel(G, b=-0.7, sigma=1.3)
        worst = 0.0
        for _ in range(2000):
            t_prev = rng.uniform(0, 9)
            t = t_prev + rng.uniform(1e-6, 10 - t_prev)
            w_prev = rng.uniform(30, 80)
            e = rng.normal()
            lhs = step_eq3(model, t_prev, t, w_prev, e) - G(t)
            rhs = step_eq4(model, t_prev, t, w_prev - G(t_prev), e)
            worst = max(worst, abs(lhs - rhs))
        assert worst < 1e-12

    def test_persistence_without_catchup(self):
        model = CatchupModel(G, b=0.0, sigma=0.0)
        assert step_eq4(model, 1.0, 2.5, 3.2, 0.7) == 3.2
        assert step_eq3(model, 1.0, 2.5, G(1.0) + 3.2, 0.0) == pytest.approx(G(2.5) + 3.2, abs=1e-12)

    def test_on_curve_stays(self):
        model = CatchupModel(G, b=-0.4, sigma=2.0)
        assert step_eq4(model, 1.0, 2.0, 0.0, 0.0) == 0.0

    def test_full_catchup(self):
        model = CatchupModel(G, b=-0.5, sigma=0.0)
        assert step_eq4(model, 1.0, 3.0, 5.0, 0.0) == 0.0

    def test_sqrt_gap_noise(self):
        m_lin = CatchupModel(G, b=0.0, sigma=1.0)
        m_sqrt = CatchupModel(G, b=0.0, sigma=1.0, noise_scaling="sqrt_gap")
        assert step_eq4(m_lin, 1.0, 5.0, 0.0, 1.0) == pytest.approx(4.0)
        assert step_eq4(m_sqrt, 1.0, 5.0, 0.0, 1.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("D", [1e-3, 1e-6, 1e-9])
    def test_gap_continuity(self, D):
        model = CatchupModel(G, b=-0.5, sigma=1.0)
        rng = np.random.default_rng(1)
        diffs = []
        for _ in range(500):
            t_prev = rng.uniform(0, 9)
            w_prev = G(t_prev) + rng.uniform(-5, 5)
            e = rng.uniform(-3, 3)
            diffs.append(abs(step_eq3(model, t_prev, t_prev + D, w_prev, e) - w_prev))
        # |g'| < 10, |b W*| <= 2.5 and |e| <= 3 bound the step by 16 D
        assert max(diffs) < 16 * D + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3),
        st.floats(0.01, 3),
        st.floats(-20, 20).filter(lambda v: abs(v) > 1e-3),
    )
    def test_mean_reversion_direction(self, b, D, w_star):
        model = CatchupModel(G, b=b, sigma=0.0)
        nxt = abs(step_eq4(model, 1.0, 1.0 + D, w_star, 0.0))
        bD = b * D
        if -2 + 1e-9 < bD < 0:
            assert nxt < abs(w_star)
        elif bD > 0:
            assert nxt > abs(w_star)

    def test_errors(self):
        model = CatchupModel(G)
        with pytest.raises(ValueError):
            step_eq3(model, 2.0, 2.0, 50.0, 0.0)
        with pytest.raises(ValueError):
            step_eq4(model, 9.0, 11.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            CatchupModel(G, sigma=-1.0)
        with pytest.raises(ValueError):
            CatchupModel(G, noise_scaling="cubic")

    def test_spline_b_at_midpoint(self):
        b = Spline.linear(0.0, -0.1, BSplineBasis(make_knots(0, 10, 2)))
        model = CatchupModel(G, b=b, sigma=0.0)
        assert model.b_at(2.0, 4.0) == pytest.approx(-0.3)
        assert step_eq4(model, 2.0, 4.0, 1.0, 0.0) == pytest.approx(1 - 0.6)


class TestSimulate:
    def test_halving(self):
        model = CatchupModel(G, b=-0.5, sigma=0.0)
        data = simulate_cohort(model, [np.arange(6.0)], initial_deviations=[4.0])
        (tr,) = center(data, G)
        np.testing.assert_allclose(tr.w_star, [4, 2, 1, 0.5, 0.25, 0.125], atol=1e-12)

    def test_no_catchup_constant_deviation(self):
        model = CatchupModel(G, b=0.0, sigma=0.0)
        data = simulate_cohort(model, _schedules(5, 4, 0), initial_deviations=[-3, -1, 0, 1, 3])
        for tr, d in zip(center(data, G), [-3, -1, 0, 1, 3]):
            np.testing.assert_allclose(tr.w_star, d, atol=1e-12)

    def test_deterministic(self):
        model = CatchupModel(G, b=-0.3, sigma=0.5)
        sched = _schedules(20, 5, 3)
        assert simulate_cohort(model, sched, seed=9) == simulate_cohort(model, sched, seed=9)
        assert simulate_cohort(model, sched, seed=9) != simulate_cohort(model, sched, seed=10)

    def test_subject_stream_independent_of_cohort_size(self):
        model = CatchupModel(G, b=-0.3, sigma=0.5)
        sched = _schedules(10, 5, 3)
        full = simulate_cohort(model, sched, seed=4)
        part = simulate_cohort(model, sched[:3], seed=4)
        assert full.subjects[:3] == part.subjects

    def test_schedule_errors(self):
        model = CatchupModel(G)
        with pytest.raises(ValueError):
            simulate_cohort(model, [[1.0, 1.0]])
        with pytest.raises(ValueError):
            simulate_cohort(model, [[1.0, 12.0]])
        with pytest.raises(ValueError):
            simulate_cohort(model, [[]])
        with pytest.raises(ValueError):
            simulate_cohort(model, [[1.0, 2.0]], initial_deviations=[0.0, 1.0])


class TestCenter:
    def test_on_curve(self):
        t = np.array([0.5, 1.5, 4.0])
        data = LongitudinalDataset((Subject("a", tuple(Measurement(a, float(G(a))) for a in t)),))
        np.testing.assert_allclose(center(data, G)[0].w_star, 0.0, atol=1e-12)

    def test_zero_curve(self):
        data = LongitudinalDataset.from_records([("a", 1.0, 3.0, None), ("a", 2.0, 4.5, None)])
        zero = Spline.constant(0.0, 0, 10)
        np.testing.assert_allclose(center(data, zero)[0].w_star, [3.0, 4.5], atol=1e-14)

    def test_round_trip(self):
        data = simulate_cohort(CatchupModel(G, b=-0.2, sigma=1.0), _schedules(30, 4, 7), seed=1)
        back = uncenter(center(data, G), G)
        for s, w in zip(data, back):
            np.testing.assert_allclose(w, [m.w for m in s.measurements], rtol=0, atol=1e-12)


class TestEstimateScalar:
    @pytest.mark.parametrize("b", [-0.5, 0.0, -0.1])
    def test_noiseless_exact(self, b):
        sched = _schedules(40, 6, 2)
        dev0 = np.random.default_rng(2).uniform(-4, 4, 40)
        data = simulate_cohort(CatchupModel(G, b=b, sigma=0.0), sched, dev0)
        est = estimate_b(data, G)
        assert abs(est.b_hat - b) < 1e-10
        assert est.n_transitions == 200

    def test_monte_carlo_coverage(self):
        hits = 0
        reps = 20
        for r in range(reps):
            data = simulate_cohort(CatchupModel(G, b=-0.5, sigma=1.0), _schedules(500, 6, 100 + r), seed=r)
            hits += -0.6 <= estimate_b(data, G).b_hat <= -0.4
        assert hits >= 0.95 * reps

    def test_consistency(self):
        errs = {}
        for n in (50, 500):
            errs[n] = np.median(
                [
                    abs(
                        estimate_b(
                            simulate_cohort(CatchupModel(G, b=-0.5, sigma=1.0), _schedules(n, 6, 1000 + r), seed=r), G
                        ).b_hat
                        + 0.5
                    )
                    for r in range(50)
                ]
            )
        assert errs[500] < errs[50]

    def test_standard_error_calibrated(self):
        data = simulate_cohort(CatchupModel(G, b=-0.5, sigma=1.0), _schedules(500, 6, 5), seed=5)
        est = estimate_b(data, G)
        assert 0 < est.standard_error < 0.05
        assert est.residual_sd == pytest.approx(1.0, rel=0.1)

    def test_sqrt_gap(self):
        model = CatchupModel(G, b=-0.5, sigma=1.0, noise_scaling="sqrt_gap")
        data = simulate_cohort(model, _schedules(500, 6, 6), seed=6)
        assert abs(estimate_b(data, G, noise_scaling="sqrt_gap").b_hat + 0.5) < 0.1

    def test_unidentifiable(self):
        flat = Spline.constant(50.0, 0, 10)
        on_curve = LongitudinalDataset.from_records([("a", t, 50.0, None) for t in (1.0, 2.0, 3.0)])
        with pytest.raises(UnidentifiableError):
            estimate_b(on_curve, flat)
        single = LongitudinalDataset.from_records([("a", 1.0, 60.0, None)])
        with pytest.raises(UnidentifiableError):
            estimate_b(single, G)


class TestEstimateSpline:
    @staticmethod
    def _basis(data, k=2):
        mids = midpoint_ages(data)
        return BSplineBasis(make_knots(mids.min(), mids.max(), k))

    def test_midpoint_ages(self):
        data = LongitudinalDataset.from_records([("a", 1.0, 3.0, None), ("a", 2.0, 4.0, None), ("a", 4.0, 5.0, None)])
        np.testing.assert_array_equal(midpoint_ages(data), [1.5, 3.0])

    def test_noiseless_constant(self):
        sched = _schedules(60, 6, 8, gap=(0.3, 1.0), start=(0, 4.5))
        dev0 = np.random.default_rng(8).uniform(2, 6, 60) * np.random.default_rng(9).choice([-1, 1], 60)
        data = simulate_cohort(CatchupModel(G, b=-0.3, sigma=0.0), sched, dev0)
        basis = self._basis(data)
        est = estimate_b(data, G, basis=basis)
        assert not est.is_scalar
        grid = np.linspace(*basis.domain, 20)
        assert np.max(np.abs(est.b_hat(grid) + 0.3)) < 1e-8

    def test_noisy_constant(self):
        data = simulate_cohort(
            CatchupModel(G, b=-0.3, sigma=1.0), _schedules(500, 6, 11, gap=(0.3, 1.0), start=(0, 4.5)), seed=11
        )
        est = estimate_b(data, G, basis=self._basis(data))
        # the outermost midpoints are sparse, so check where the data live
        grid = np.quantile(midpoint_ages(data), np.linspace(0.05, 0.95, 20))
        assert np.max(np.abs(est.b_hat(grid) + 0.3)) < 0.1

    def test_penalized_runs(self):
        data = simulate_cohort(
            CatchupModel(G, b=-0.3, sigma=1.0), _schedules(200, 6, 12, gap=(0.3, 1.0), start=(0, 4.5)), seed=12
        )
        est = estimate_b(data, G, basis=self._basis(data), penalty=PenaltyConfig(2, 10.0))
        assert abs(est.b_hat(4.0) + 0.3) < 0.2

    def test_midpoints_not_spanning(self):
        data = simulate_cohort(CatchupModel(G, b=-0.3, sigma=0.0), [np.arange(6.0)] * 3, [1.0, 2.0, 3.0])
        with pytest.raises(UnidentifiableError):
            estimate_b(data, G, basis=BSplineBasis(make_knots(0, 10, 6)))


class TestIsCatchup:
    @pytest.mark.parametrize(
        "b,se,verdict",
        [(-0.5, 0.05, "catchup"), (-0.01, 0.2, "no_evidence"), (0.3, 0.01, "no_evidence"), (0.3, 10.0, "no_evidence")],
    )
    def test_examples(self, b, se, verdict):
        assert is_catchup(CatchupEstimate(b, se, 10, 1.0), 0.05) == verdict

    def test_noiseless_zero_not_significant(self):
        assert is_catchup(CatchupEstimate(-1e-17, 0.0, 10, 0.0)) == "no_evidence"
        assert is_catchup(CatchupEstimate(-0.5, 0.0, 10, 0.0)) == "catchup"

    def test_errors(self):
        with pytest.raises(ValueError):
            is_catchup(CatchupEstimate(Spline.constant(0.0, 0, 1), None, 10, 1.0))
        with pytest.raises(ValueError):
            is_catchup(CatchupEstimate(-0.5, None, 1, float("nan")))
        with pytest.raises(ValueError):
            is_catchup(CatchupEstimate(-0.5, 0.1, 10, 1.0), alpha=1.5)
