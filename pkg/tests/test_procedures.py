import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onlinefdr import oracle
from onlinefdr.core import ConfigurationError, InvariantError, ProcedureState, ScheduleError, ScheduleSpec, advance
from onlinefdr.estimators import fdp_hat_0_path, fdp_hat_lambda_path
from onlinefdr.procedures import (
    PROCEDURES,
    AffineCap,
    ProcedureConfig,
    StoppingRule,
    alpha_investing_threshold,
    apply_stopping,
    family,
    lord_threshold,
    planned_lord_threshold,
    planned_saffron_threshold,
    run_reference,
    run_streams,
    saffron_threshold,
)

CFG = ProcedureConfig(level=0.05, spend_fraction=0.1, lam=0.5)
EMPTY = ProcedureState(level=0.05)


def _state(*steps):
    s = EMPTY
    for p, a in steps:
        s = advance(s, p, a)
    return s


class TestLord:
    def test_first_threshold(self):
        assert lord_threshold(EMPTY, CFG) == pytest.approx(0.005, abs=1e-15)

    def test_after_rejection(self):
        assert lord_threshold(_state((0.001, 0.005)), CFG) == pytest.approx(0.0045, abs=1e-15)

    def test_after_non_rejection_is_the_same(self):
        assert lord_threshold(_state((0.5, 0.005)), CFG) == pytest.approx(0.0045, abs=1e-15)

    def test_third_step(self):
        s = _state((0.001, 0.005), (0.9, 0.0045))
        assert lord_threshold(s, CFG) == pytest.approx(0.00405, abs=1e-15)


class TestSaffron:
    def test_first_threshold(self):
        ab, a = saffron_threshold(EMPTY, CFG)
        assert ab == pytest.approx(0.0025, abs=1e-15) and a == ab

    def test_penalty_above_lambda(self):
        s = advance(EMPTY, 0.6, 0.0025, lam=0.5, alpha_bar=0.0025)
        ab, _ = saffron_threshold(s, CFG)
        assert ab == pytest.approx(0.045 * 0.5 * 0.1, abs=1e-15)

    def test_clamped_at_lambda(self):
        cfg = ProcedureConfig(level=1.0, spend_fraction=1.0, lam=0.3)
        ab, a = saffron_threshold(ProcedureState(level=1.0), cfg)
        assert ab == pytest.approx(0.7) and a == 0.3


class TestAlphaInvesting:
    def test_fixed_point(self):
        ab, a = alpha_investing_threshold(EMPTY, CFG)
        assert a == pytest.approx(0.005 / 1.005, rel=1e-14)
        assert a == pytest.approx(0.05 * (1 - a) * 0.1, rel=1e-14)

    @pytest.mark.parametrize("p1", [0.001, 0.9])
    def test_estimate_controlled_on_both_branches(self, p1):
        _, a = alpha_investing_threshold(EMPTY, CFG)
        s = advance(EMPTY, p1, a, lam=a, alpha_bar=a)
        assert s.lambda_spent_sum / max(1, s.rejection_count) <= 0.05 + 1e-15

    def test_zero_spending(self):
        cfg = ProcedureConfig(spend_fraction=0.0)
        state = run_reference("alpha-investing", np.full(5, 0.0), cfg)
        assert all(r.alpha == 0.0 for r in state.records)

    def test_rejection_branch_has_larger_next_threshold(self):
        _, a = alpha_investing_threshold(EMPTY, CFG)
        rej = advance(EMPTY, a / 2, a, lam=a, alpha_bar=a)
        non = advance(EMPTY, 0.9, a, lam=a, alpha_bar=a)
        assert alpha_investing_threshold(rej, CFG)[1] > alpha_investing_threshold(non, CFG)[1]


class TestPlanned:
    def test_online_schedule_matches_lord(self, rng):
        p = rng.random((200, 60)) ** 3
        cfg = ProcedureConfig(schedule=ScheduleSpec.online(60))
        planned = run_streams("planned-lord", p, cfg).alpha
        base = run_streams("lord", p, CFG).alpha
        assert np.max(np.abs(planned - base)) <= 1e-12

    def test_online_schedule_matches_saffron_charging_alpha(self, rng):
        p = rng.random((200, 60)) ** 3
        cfg = ProcedureConfig(schedule=ScheduleSpec.online(60))
        planned = run_streams("planned-saffron", p, cfg).alpha
        base = run_streams("saffron", p, ProcedureConfig(penalize_alpha=True)).alpha
        assert np.max(np.abs(planned - base)) <= 1e-12

    def test_alpha_spending(self, rng):
        n = 40
        cfg = ProcedureConfig(schedule=ScheduleSpec.alpha_spending(n))
        a = run_streams("planned-lord", rng.random(n), cfg).alpha
        assert np.all(a == 0.05 * 0.1 / n)
        assert math.fsum(a) <= 0.05 * 0.1 + 1e-15

    def test_two_batches_lord(self):
        sched = ScheduleSpec.from_batches([1, 1, 2, 2])
        cfg = ProcedureConfig(schedule=sched)
        state = run_reference("planned-lord", [0.001, 0.9, 0.5, 0.5], cfg)
        a = [r.alpha for r in state.records]
        assert a[0] == a[1] == pytest.approx(0.0025)
        # batch 2 sees |R_2| = 1, wealth 0.05 - 0.005
        assert a[2] == a[3] == pytest.approx((0.05 - 0.005) * 0.1 / 2)

    def test_two_planned_at_zero_saffron(self):
        sched = ScheduleSpec((0, 0))
        cfg = ProcedureConfig(spend_fraction=1.0, schedule=sched)
        ab, a = planned_saffron_threshold(EMPTY, sched, cfg, 1, {})
        assert ab == pytest.approx(0.0125) and a == ab

    def test_batch_two_drops_penalty_of_small_p(self):
        sched = ScheduleSpec((0, 1))
        cfg = ProcedureConfig(spend_fraction=1.0, schedule=sched)
        _, a1 = planned_saffron_threshold(EMPTY, sched, cfg, 1, {})
        s1 = advance(EMPTY, 0.001, a1, lam=0.5, alpha_bar=a1, specified_at=0)
        assert s1.rejection_count == 1
        ab2, _ = planned_saffron_threshold(s1, sched, cfg, 2, {1: a1})
        assert ab2 == pytest.approx(0.05 * 0.5)
        s1b = advance(EMPTY, 0.7, a1, lam=0.5, alpha_bar=a1, specified_at=0)
        ab2b, _ = planned_saffron_threshold(s1b, sched, cfg, 2, {1: a1})
        assert ab2b == pytest.approx((0.05 - a1 / 0.5) * 0.5)

    def test_schedule_errors(self):
        sched = ScheduleSpec((0, 1, 0))
        with pytest.raises(ScheduleError):
            planned_lord_threshold(_state((0.5, 0.0)), sched, CFG, 3, {})
        with pytest.raises(ScheduleError):
            planned_lord_threshold(_state((0.5, 0.0)), sched, CFG, 2, {})
        with pytest.raises(ScheduleError):
            run_streams("planned-lord", np.full(4, 0.5), ProcedureConfig(schedule=sched))

    def test_missing_lambda(self):
        cfg = ProcedureConfig(lambda_sequence=(0.5, 0.5))
        with pytest.raises(ConfigurationError):
            run_reference("planned-saffron", np.full(3, 0.5), cfg)

    def test_per_time_spend_fraction(self):
        sched = ScheduleSpec((0, 1, 0))
        cfg = ProcedureConfig(spend_fraction={0: 0.2, 1: 0.3}, schedule=sched)
        p = np.array([0.001, 0.5, 0.5])
        ref = [r.alpha for r in run_reference("planned-lord", p, cfg).records]
        direct = oracle.direct_planned_lord(p, sched.spec_time, 0.05, [0.2, 0.3, 0.0])
        np.testing.assert_allclose(ref, direct, atol=1e-15)
        np.testing.assert_allclose(run_streams("planned-lord", p, cfg).alpha, direct, atol=1e-15)


class TestStopping:
    def test_rejection_cap_reached(self):
        rule = StoppingRule(max_rejections=1)
        assert apply_stopping(rule, _state((0.0, 0.01)), 0.3, 2) == 0.0

    def test_identity_below_caps(self):
        rule = StoppingRule(max_rejections=3, max_stage=10)
        assert apply_stopping(rule, _state((0.0, 0.01)), 0.3, 2) == 0.3

    def test_stage_cap(self):
        rule = StoppingRule(max_stage=1)
        assert apply_stopping(rule, _state((0.5, 0.01)), 0.3, 2) == 0.0

    def test_affine_cap(self):
        cap = AffineCap(10, 5)
        assert cap(_state((0.0, 0.01), (0.0, 0.01))) == 20

    def test_halt_is_latched(self, rng):
        # horizon 2 + 10 R: a late rejection cannot reopen testing
        rule = StoppingRule(adaptive_max_stage=AffineCap(2, 10))
        cfg = ProcedureConfig(stopping=rule)
        state = run_reference("lord", [0.9, 0.9, 0.9, 0.0, 0.0], cfg)
        assert [r.alpha > 0 for r in state.records] == [True, True, False, False, False]

    def test_invalid_caps(self):
        with pytest.raises(ValueError):
            StoppingRule(max_rejections=0)

    @pytest.mark.parametrize("procedure", PROCEDURES)
    @pytest.mark.parametrize("rule", [
        StoppingRule(max_rejections=3),
        StoppingRule(max_stage=17),
        StoppingRule(adaptive_max_rejections=AffineCap(2, 0.5)),
        StoppingRule(adaptive_max_stage=AffineCap(5, 3)),
    ])
    def test_reference_matches_kernels(self, procedure, rule, rng):
        n = 40
        cfg = ProcedureConfig(stopping=rule, schedule=ScheduleSpec.from_batches(np.arange(n) // 4))
        for _ in range(20):
            p = np.where(rng.random(n) < 0.4, rng.random(n) * 1e-3, rng.random(n))
            fast = run_streams(procedure, p, cfg)
            ref = run_reference(procedure, p, cfg)
            np.testing.assert_allclose(fast.alpha, [r.alpha for r in ref.records], atol=1e-15)
            np.testing.assert_array_equal(fast.extras["halted"], [r.stopped for r in ref.records])

    def test_callable_caps_need_reference(self):
        cfg = ProcedureConfig(stopping=StoppingRule(adaptive_max_stage=lambda s: 3))
        with pytest.raises(ConfigurationError):
            run_streams("lord", np.full(5, 0.5), cfg)
        assert run_reference("lord", np.full(5, 0.5), cfg).records[3].alpha == 0.0


def test_family_and_unknown_procedure():
    assert family("planned-lord") == "lord"
    assert family("alpha-investing") == "saffron"
    with pytest.raises(ConfigurationError):
        family("bonferroni")


def test_stream_validation():
    with pytest.raises(ValueError):
        run_streams("lord", [0.1, 1.2], CFG)
    with pytest.raises(ValueError):
        run_reference("lord", [0.1, math.nan], CFG)


def test_config_validation():
    for bad in ({"level": 0.0}, {"lam": 1.0}, {"spend_fraction": 1.5}, {"lambda_sequence": (0.5, 1.0)}):
        with pytest.raises(ValueError):
            ProcedureConfig(**bad)


def test_to_state_roundtrip(rng):
    p = rng.random(30) ** 2
    res = run_streams("saffron", p, CFG)
    state = res.to_state()
    assert state == run_reference("saffron", p, CFG)


# -- properties ---------------------------------------------------------------

p_streams = st.lists(
    st.one_of(st.floats(0.0, 1.0), st.floats(0.0, 1e-3), st.sampled_from([0.0, 0.5, 1.0])),
    min_size=1, max_size=60,
)
configs = st.builds(
    ProcedureConfig,
    level=st.floats(0.01, 0.5),
    spend_fraction=st.floats(0.0, 1.0),
    lam=st.floats(0.05, 0.95),
    penalize_alpha=st.booleans(),
)


def _schedule(data, n):
    return ScheduleSpec(tuple(data.draw(st.integers(0, i - 1)) for i in range(1, n + 1)))


@given(p=p_streams, cfg=configs, procedure=st.sampled_from(PROCEDURES), data=st.data())
def test_estimate_never_exceeds_level(p, cfg, procedure, data):
    from dataclasses import replace
    cfg = replace(cfg, schedule=_schedule(data, len(p)))
    res = run_streams(procedure, np.array(p), cfg)
    assert np.all(res.wealth >= -1e-12)
    if family(procedure) == "lord":
        est = fdp_hat_0_path(res.alpha, res.rejected)
    else:
        est = fdp_hat_lambda_path(res.p, res.alpha, res.lam if res.lam is not None else cfg.lam,
                                  res.rejected)
    assert np.all(est <= cfg.level + 1e-12)


@given(p=p_streams, cfg=configs, procedure=st.sampled_from(PROCEDURES), data=st.data())
def test_reference_and_kernels_agree(p, cfg, procedure, data):
    from dataclasses import replace
    cfg = replace(cfg, schedule=_schedule(data, len(p)))
    fast = run_streams(procedure, np.array(p), cfg)
    ref = run_reference(procedure, np.array(p), cfg)
    np.testing.assert_allclose(fast.alpha, [r.alpha for r in ref.records], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(fast.rejected, [r.rejected for r in ref.records])


@given(p=p_streams, cfg=configs, data=st.data())
def test_lowering_a_pvalue_never_lowers_lord_thresholds(p, cfg, data):
    p = np.array(p)
    k = data.draw(st.integers(0, len(p) - 1))
    q = p.copy()
    q[k] = q[k] * data.draw(st.floats(0.0, 1.0))
    a = run_streams("lord", p, cfg).alpha
    b = run_streams("lord", q, cfg).alpha
    assert np.all(b >= a - 1e-15)


@given(p=p_streams, cfg=configs, data=st.data())
def test_thresholds_depend_only_on_the_planned_past(p, cfg, data):
    from dataclasses import replace
    n = len(p)
    sched = _schedule(data, n)
    cfg = replace(cfg, schedule=sched)
    t = data.draw(st.integers(1, n))
    s = sched.s(t)
    q = np.array(p)
    q[s:] = data.draw(st.floats(0.0, 1.0))
    for procedure in ("planned-lord", "planned-saffron"):
        a = run_streams(procedure, np.array(p), cfg).alpha[t - 1]
        b = run_streams(procedure, q, cfg).alpha[t - 1]
        assert a == b


def test_negative_wealth_is_an_invariant_error():
    # a hand-built history that overspent: wealth 0.05 - 0.2 < 0
    s = _state((0.9, 0.2))
    with pytest.raises(InvariantError):
        lord_threshold(s, CFG)
