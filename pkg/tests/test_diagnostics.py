import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boa.core import uniform
from boa.diagnostics import (
    RiskLedger, b_known, b_unknown, batch_average, best_convex_oracle, bound_adaptive,
    bound_fixed_ms, bound_multi, bound_time_varying, conversion_bound, excess_risk_quantile,
    fast_rate_bound, realized_ranges, regret_vs_best_expert, risk_bound_stochastic,
)
from boa.engine import (
    ExcessLossMode, boa_step_adaptive, boa_step_fixed, boa_step_multi, excess_losses, init_state,
)
from boa.environments import EnvironmentConfig, EnvKind, expert_risks, risk_of_constant
from boa.errors import EmptyHistory, EmptyLedger, EmptySample, FlaggedRun, NoAnalyticRisk
from boa.losses import LossKind, LossSpec, eval_loss
from boa.rates import RangeInfo, RateSchedule

SQ = LossSpec(LossKind.SQUARE)
AB = LossSpec(LossKind.ABSOLUTE)


def run_fixed(preds, ys, eta, mode="centered", spec=SQ, risks=None, env=None, strict=True):
    """Drive fixed-rate aggregation over a stream with rounds on axis -2 of ``preds``."""
    M = preds.shape[-1]
    batch = preds.shape[:-2]
    state = init_state("boa-fixed", uniform(M), batch_shape=batch)
    ledger = RiskLedger(uniform(M), mode, batch, keep_history=True, loss_spec=spec)
    for t in range(preds.shape[-2]):
        p, y = preds[..., t, :], ys[..., t]
        w = state.weights
        raw = np.asarray(eval_loss(spec, np.asarray(y)[..., None], p))
        ell = excess_losses(mode, w, p, y, spec)
        state = boa_step_fixed(state, ell, eta, strict=strict)
        ra, re = None, None
        if risks is not None:
            re = risks
            ra = risk_of_constant(env, (w * p).sum(-1), spec)
        ledger.record(w, p, y, raw, ell, state.eta, state.eta, state.weights,
                      violation=state.last_violation, doubled=state.last_doubling,
                      risk_experts=re, risk_agg=ra)
    return ledger, state


class TestLedger:
    def test_length_and_resummation(self, rng):
        preds, ys = rng.random((100, 3)), rng.random(100)
        ledger, _ = run_fixed(preds, ys, 0.3)
        assert len(ledger) == 100
        h = ledger.history
        raw = (ys[:, None] - preds) ** 2
        np.testing.assert_allclose(ledger.cum_loss_experts, raw.sum(0), rtol=1e-13)
        fhat = np.array(h["fhat"])
        np.testing.assert_allclose(ledger.cum_loss_agg, ((ys - fhat) ** 2).sum(), rtol=1e-13)
        brute = ((ys - fhat) ** 2).sum() - raw.sum(0).min()
        assert regret_vs_best_expert(ledger) == pytest.approx(brute, rel=1e-12, abs=1e-12)

    def test_cumulative_nondecreasing(self, rng):
        preds, ys = rng.random((50, 2)), rng.random(50)
        ledger, _ = run_fixed(preds, ys, 0.3)
        cum = np.cumsum(ledger.history["loss_agg"])
        assert np.all(np.diff(cum) >= 0)

    def test_regret_trivial(self):
        ledger = RiskLedger(uniform(2), loss_spec=SQ)
        with pytest.raises(EmptyLedger):
            regret_vs_best_expert(ledger)
        ledger.cum_loss_agg = np.float64(2.0)
        ledger.cum_loss_experts = np.array([0.0, 3.0])
        ledger.n = 2
        assert regret_vs_best_expert(ledger) == 2.0

    def test_regret_zero_when_tracking_best(self):
        preds = np.tile([0.5, 0.5], (10, 1))
        ledger, _ = run_fixed(preds, np.full(10, 0.2), 0.3)
        assert regret_vs_best_expert(ledger) == 0.0


class TestFixedBound:
    def test_single_round_hand_value(self):
        preds = np.array([[0.0, 1.0]])
        ys = np.array([1.0])
        ledger, _ = run_fixed(preds, ys, 0.1, spec=AB)
        b = bound_fixed_ms(ledger, 0.1)
        assert b.rhs == pytest.approx(0.025 + np.log(2) / 0.1, rel=1e-12)
        assert b.rhs == pytest.approx(6.9564, abs=1e-4)
        assert b.lhs == pytest.approx(0.5)
        assert b.holds

    def test_zero_losses(self):
        preds = np.tile([0.3, 0.3, 0.3], (20, 1))
        ledger, _ = run_fixed(preds, np.full(20, 0.3), 0.2)
        b = bound_fixed_ms(ledger, 0.2)
        assert b.lhs == 0.0 and b.rhs == pytest.approx(np.log(3) / 0.2)

    def test_flagged(self):
        preds = np.array([[0.0, 1.0]] * 3)
        ledger, _ = run_fixed(preds, np.ones(3), 2.0, spec=AB, strict=False)
        with pytest.raises(FlaggedRun):
            bound_fixed_ms(ledger, 2.0)
        assert bound_fixed_ms(ledger, 2.0, allow_flagged=True).rhs > 0

    @pytest.mark.parametrize("mode", list(ExcessLossMode))
    def test_holds_on_random_streams(self, mode, rng):
        preds, ys = rng.random((40, 1000, 4)), rng.random((40, 1000))
        ledger, _ = run_fixed(preds, ys, 0.2, mode=mode)
        assert np.all(bound_fixed_ms(ledger, 0.2).holds)

    def test_multi_bound_and_reduction(self, rng):
        preds, ys = rng.random((300, 3)), rng.random(300)
        ledger, _ = run_fixed(preds, ys, 0.25)
        a = bound_fixed_ms(ledger, 0.25)
        b = bound_multi(ledger, np.full(3, 0.25))
        assert b.rhs == pytest.approx(a.rhs, rel=1e-14)
        etas = np.array([0.1, 0.2, 0.3])
        state = init_state("boa-multi", uniform(3))
        led = RiskLedger(uniform(3), "centered", loss_spec=SQ)
        for t in range(300):
            w = state.weights
            raw = np.asarray(eval_loss(SQ, ys[t], preds[t]))
            ell = excess_losses("centered", w, preds[t], ys[t], SQ)
            state = boa_step_multi(state, ell, etas)
            led.record(w, preds[t], ys[t], raw, ell, etas, etas, state.weights, state.last_violation)
        assert bound_multi(led, etas).holds


def _run_adaptive(preds, ys, sched, mode="linearized"):
    M = preds.shape[-1]
    batch = preds.shape[:-2]
    state = init_state("boa-adaptive", uniform(M), batch_shape=batch, schedule=sched)
    ledger = RiskLedger(uniform(M), mode, batch, loss_spec=SQ)
    for t in range(preds.shape[-2]):
        p, y = preds[..., t, :], ys[..., t]
        w = state.weights
        raw = np.asarray(eval_loss(SQ, y[..., None], p))
        ell = excess_losses(mode, w, p, y, SQ)
        eta_prev = state.eta
        state = boa_step_adaptive(state, ell, sched)
        ledger.record(w, p, y, raw, ell, eta_prev, state.eta, state.weights,
                      violation=state.last_violation, doubled=state.last_doubling)
    return ledger, state


class TestAdaptiveBound:
    def test_b_constants(self):
        assert b_known(1) == 0.0
        assert b_unknown(1, 1.0, 30) == pytest.approx(np.log(1 + 30 * np.log(2)))

    def test_vanishing_variance(self):
        ledger = RiskLedger(uniform(2), "linearized", loss_spec=SQ)
        ledger.n = 10
        info = RangeInfo(E=np.array([1.0, 1.0]), cap=1.0)
        b = bound_adaptive(ledger, None, info, 10, known_range=True)
        L, B = np.log(2), b_known(10)
        assert b.rhs == pytest.approx(2 * L + 2 * B + 1)

    def test_known_range_holds(self, rng):
        preds, ys = rng.random((50, 500, 4)), rng.random((50, 500))
        sched = RateSchedule.known_range(np.full(4, 2.0))
        ledger, _ = _run_adaptive(preds, ys, sched)
        b = bound_adaptive(ledger, None, RangeInfo(E=np.full(4, 2.0), cap=2.0), 500, True)
        assert np.all(b.holds)
        assert np.all(bound_time_varying(ledger).holds)

    def test_unknown_range_holds(self, rng):
        preds, ys = rng.random((50, 500, 4)), rng.random((50, 500))
        ledger, _ = _run_adaptive(preds, ys, RateSchedule.unknown_range(30))
        b = bound_adaptive(ledger, None, realized_ranges(ledger, 30), 500, False)
        assert np.all(b.holds)


class TestRiskBounds:
    def setup_method(self):
        self.env = EnvironmentConfig(EnvKind.IID_UNIFORM, (0.2, 0.5, 0.9))
        self.risks = expert_risks(self.env, SQ)

    def _stream(self, rng, R, n):
        ys = rng.random((R, n))
        preds = np.broadcast_to(np.array([0.2, 0.5, 0.9]), (R, n, 3))
        return preds, ys

    def test_requires_risks(self, rng):
        preds, ys = self._stream(rng, 1, 10)
        ledger, _ = run_fixed(preds[0], ys[0], 0.1)
        with pytest.raises(NoAnalyticRisk):
            risk_bound_stochastic(ledger, 0.1, None, 1.0)
        with pytest.raises(NoAnalyticRisk):
            conversion_bound(ledger, 1.0)

    def test_identical_experts_gap(self):
        env = EnvironmentConfig(EnvKind.IID_UNIFORM, (0.5, 0.5, 0.5))
        risks = expert_risks(env, SQ)
        preds = np.full((30, 3), 0.5)
        ys = np.linspace(0, 1, 30)
        ledger, _ = run_fixed(preds, ys, 0.2, risks=risks, env=env)
        x = 1.3
        b = risk_bound_stochastic(ledger, 0.2, None, x)
        assert b.rhs - b.lhs == pytest.approx((np.log(3) + x) / 0.2, rel=1e-12)

    def test_rare_violations(self, rng):
        preds, ys = self._stream(rng, 200, 300)
        ledger, _ = run_fixed(preds, ys, 0.1, risks=self.risks, env=self.env)
        b = risk_bound_stochastic(ledger, 0.1, None, np.log(20))
        assert np.mean(~b.holds) <= 0.05
        conv = conversion_bound(ledger, np.log(20))
        assert np.mean(~conv.holds) <= 0.05

    def test_fast_rate_bound_formula(self):
        assert fast_rate_bound([0.1, 0.2], 0.5, 11, 1.0) == pytest.approx(0.1 + (np.log(2) + 2) / 5.5)


class TestOracle:
    def test_symmetric(self):
        preds = np.tile([0.0, 1.0], (20, 1))
        r = best_convex_oracle(preds, np.full(20, 0.5), SQ)
        np.testing.assert_allclose(r.weights, [0.5, 0.5], atol=1e-9)
        assert r.value == pytest.approx(0.0, abs=1e-15)

    def test_single_expert(self):
        preds = np.full((5, 1), 0.2)
        ys = np.linspace(0, 1, 5)
        r = best_convex_oracle(preds, ys, SQ)
        assert r.weights.tolist() == [1.0]
        assert r.value == pytest.approx(((ys - 0.2) ** 2).sum())

    def test_golden_section_interpolation(self):
        preds = np.tile([0.0, 1.0], (40, 1))
        r = best_convex_oracle(preds, np.full(40, 0.25), SQ)
        np.testing.assert_allclose(r.weights, [0.75, 0.25], atol=1e-9)
        assert r.value / 40 <= 1e-15

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([SQ, AB]), st.integers(2, 5))
    def test_beats_vertices(self, seed, spec, M):
        rng = np.random.default_rng(seed)
        preds, ys = rng.random((60, M)), rng.random(60)
        r = best_convex_oracle(preds, ys, spec, iterations=300)
        vertex_best = np.asarray(eval_loss(spec, ys[:, None], preds)).sum(0).min()
        assert r.value <= vertex_best + 1e-12

    def test_batched_matches_single(self, rng):
        preds, ys = rng.random((3, 80, 3)), rng.random((3, 80))
        batch = best_convex_oracle(preds, ys, SQ, iterations=400)
        for i in range(3):
            one = best_convex_oracle(preds[i], ys[i], SQ, iterations=400)
            assert one.value == pytest.approx(batch.value[i], rel=1e-12)

    def test_square_optimum_against_least_squares(self, rng):
        # interior optimum: compare with the equality-constrained normal equations
        t = np.linspace(0, 1, 200)
        preds = np.stack([0.2 + 0.0 * t, 0.8 + 0.0 * t, t], axis=1)
        ys = 0.4 + 0.1 * t
        r = best_convex_oracle(preds, ys, SQ)
        G = preds.T @ preds
        A = np.block([[2 * G, np.ones((3, 1))], [np.ones((1, 3)), np.zeros((1, 1))]])
        sol = np.linalg.solve(A, np.r_[2 * preds.T @ ys, 1.0])[:3]
        assert np.all(sol > 0)
        best = ((ys - preds @ sol) ** 2).sum()
        assert r.value == pytest.approx(best, abs=1e-8)

    def test_convergence_flag(self, rng):
        preds, ys = rng.random((50, 4)), rng.random(50)
        assert not best_convex_oracle(preds, ys, SQ, iterations=1).converged
        preds = np.tile([0.0, 1.0], (20, 1))
        assert best_convex_oracle(preds, np.full(20, 0.5), SQ).converged


class TestBatchAverage:
    def test_examples(self):
        np.testing.assert_allclose(batch_average([[1, 0], [0, 1]]), [0.5, 0.5])
        np.testing.assert_allclose(batch_average([[0.2, 0.8]] * 4), [0.2, 0.8])
        with pytest.raises(EmptyHistory):
            batch_average([])

    def test_resummation(self, rng):
        pts = rng.dirichlet(np.ones(5), size=100)
        acc = np.zeros(5)
        for p in pts:
            acc += p
        assert np.abs(batch_average(list(pts)) - acc / 100).max() <= 1e-14

    def test_ledger_batch_weights(self, rng):
        preds, ys = rng.random((30, 3)), rng.random(30)
        ledger, _ = run_fixed(preds, ys, 0.3)
        np.testing.assert_allclose(ledger.batch_weights(), batch_average(ledger.history["weights"]),
                                   rtol=1e-13)

    def test_jensen_on_held_out_draws(self, rng):
        # the averaged predictor's loss is at most the average loss of the weights' predictors
        env = EnvironmentConfig(EnvKind.IID_GAUSSIAN_SHIFT, (0.3, 0.5, 0.7), theta=0.45, sigma=0.1)
        c = np.array([0.3, 0.5, 0.7])
        preds = np.tile(c, (200, 1))
        ys = np.clip(0.45 + 0.1 * rng.standard_normal(200), 0, 1)
        ledger, _ = run_fixed(preds, ys, 0.3)
        W = np.array(ledger.history["weights"])
        fbar = (ledger.batch_weights() * c).sum()
        held = np.clip(0.45 + 0.1 * rng.standard_normal(20000), 0, 1)
        per_t = ((held[:, None] - (W @ c)[None, :]) ** 2).mean(axis=1)
        gap = per_t - (held - fbar) ** 2
        se = gap.std(ddof=1) / np.sqrt(gap.size)
        assert gap.mean() >= -3 * se


class TestQuantile:
    def test_examples(self):
        assert excess_risk_quantile([1, 2, 3, 4, 5], 0.5) == 3
        assert excess_risk_quantile([2.5] * 7, 0.13) == 2.5
        with pytest.raises(EmptySample):
            excess_risk_quantile([], 0.5)
        with pytest.raises(ValueError):
            excess_risk_quantile([1.0], 1.0)

    def test_uniform(self, rng):
        assert abs(excess_risk_quantile(rng.random(10_000), 0.95) - 0.95) <= 0.02

    def test_type7_against_hand_interpolation(self):
        s = [1.0, 4.0, 2.0, 8.0]
        # h = (n - 1) q = 1.5, halfway between the 2nd and 3rd order statistics
        assert excess_risk_quantile(s, 0.5) == pytest.approx(3.0)

    @given(arrays(float, 20, elements=st.floats(-100, 100)), st.floats(0.01, 0.98), st.floats(0.0, 0.01))
    def test_monotone_in_q(self, s, q, dq):
        assert excess_risk_quantile(s, q) <= excess_risk_quantile(s, q + dq) + 1e-9

    @given(arrays(float, 20, elements=st.floats(-100, 100)), st.floats(0.01, 0.99),
           st.floats(0.1, 10), st.floats(-10, 10))
    def test_affine_equivariance(self, s, q, a, b):
        assert excess_risk_quantile(a * s + b, q) == pytest.approx(a * excess_risk_quantile(s, q) + b,
                                                                    abs=1e-8)
