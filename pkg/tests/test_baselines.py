import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfleet.baselines import (
    BangBang,
    Greedy,
    Mpc,
    MpcProblem,
    bbc_action,
    greedy_actions,
    lockout_inequality_holds,
    mpc_actions,
    solve_branch_and_bound,
    solve_enumerate,
)
from acfleet.bench.metrics import run_episode
from acfleet.env import EnvConfig
from acfleet.hvac import AcParams
from acfleet.thermal import ThermalParams

from helpers import random_mpc_problem

PA = 6000.0


class TestBangBang:
    def test_rule(self):
        assert bbc_action(21.0, 20.0) is True
        assert bbc_action(19.0, 20.0) is False
        assert bbc_action(20.0, 20.0) is False

    def test_controller_uses_strict_inequality(self):
        class Env:
            def observations(self):
                return np.array([[21.0, 0, 20.0], [20.0, 0, 20.0], [19.0, 0, 20.0]])

        assert BangBang().act(Env()).tolist() == [True, False, False]


def brute_force_greedy(Th, TT, s):
    """Among subsets reaching s, the one whose members come first in priority order with fewest units."""
    N = len(Th)
    order = sorted(range(N), key=lambda i: (-(Th[i] - TT), i))
    for k in range(N + 1):
        chosen = set(order[:k])
        if k * PA >= s:
            return chosen
    return set(range(N))


class TestGreedy:
    def test_zero_signal_all_off(self):
        assert not greedy_actions([25, 24, 23], 20.0, PA, [0, 0, 0], 0.0).any()

    def test_three_agent_example(self):
        a = greedy_actions([22.0, 21.0, 23.0], 20.0, PA, [0, 0, 0], 1.5 * PA)
        assert a.tolist() == [True, False, True]
        subsets = [set(c) for k in range(4) for c in itertools.combinations(range(3), k) if k * PA >= 1.5 * PA]
        min_overshoot = min(len(c) * PA - 1.5 * PA for c in subsets)
        assert a.sum() * PA - 1.5 * PA == min_overshoot

    def test_all_locked_out_all_off(self):
        for count_locked in (True, False):
            a = greedy_actions([25, 24, 23], 20.0, PA, [8, 8, 8], 2 * PA, count_locked)
            assert not a.any()

    def test_ties_break_by_index(self):
        a = greedy_actions([21.0, 21.0, 21.0], 20.0, PA, [0, 0, 0], PA)
        assert a.tolist() == [True, False, False]

    def test_locked_units_count_toward_signal_by_default(self):
        # hottest unit is locked: default variant still counts it and turns on only one other
        Th, lock = [25.0, 23.0, 22.0], [8.0, 0.0, 0.0]
        assert greedy_actions(Th, 20.0, PA, lock, 2 * PA).tolist() == [False, True, False]
        assert greedy_actions(Th, 20.0, PA, lock, 2 * PA, count_locked=False).tolist() == [False, True, True]

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(15, 30), min_size=1, max_size=12), st.floats(0, 80000))
    def test_matches_brute_force(self, Th, s):
        a = greedy_actions(Th, 20.0, PA, np.zeros(len(Th)), s)
        assert set(np.flatnonzero(a)) == brute_force_greedy(Th, 20.0, s)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.floats(15, 30), min_size=1, max_size=20), st.floats(0, 150000),
           st.lists(st.booleans(), min_size=20, max_size=20))
    def test_overshoot_bounded_by_one_unit(self, Th, s, locked):
        lock = np.where(np.array(locked[:len(Th)]), 8.0, 0.0)
        a = greedy_actions(Th, 20.0, PA, lock, s, count_locked=False)
        P = a.sum() * PA
        assert P - s <= PA
        if (lock <= 0).sum() * PA >= s:
            assert P >= s

    def test_heterogeneous_power_priority(self):
        a = greedy_actions([21.0, 21.0], 20.0, np.array([4000.0, 8000.0]), [0, 0], 1000.0)
        assert a.tolist() == [True, False]


class TestMpcProblem:
    def test_single_house_at_target_zero_signal_stays_off(self):
        prob = MpcProblem(Th0=[20.0], Tm0=[20.0], on0=[False], lockout0=[0.0], power=[PA], heat=[-15000 / 1.35],
                          params=ThermalParams(), To=20.0, target=20.0, s0=0.0, horizon=1)
        for solver in ("enumerate", "branch_and_bound"):
            assert not mpc_actions(prob, solver).actions[0]

    def test_quadratic_form_matches_simulation(self):
        rng = np.random.default_rng(0)
        prob = random_mpc_problem(rng, 2, 3)
        Q, q, c = prob.quadratic_form()
        res = solve_enumerate(prob)
        x = res.plan.reshape(-1).astype(float)
        assert x @ Q @ x + q @ x + c == pytest.approx(res.objective, rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("seed", range(25))
    def test_branch_and_bound_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(1, 5))
        H = int(rng.integers(1, 16 // N + 1))
        prob = random_mpc_problem(rng, N, H)
        ref = solve_enumerate(prob)
        got = solve_branch_and_bound(prob, gap=0.0, time_budget=None)
        assert got.optimal and not got.timed_out
        assert got.objective == pytest.approx(ref.objective, rel=1e-9, abs=1e-9)
        assert prob.plan_feasible(got.plan)

    @pytest.mark.parametrize("seed", range(10))
    def test_plans_respect_lockout(self, seed):
        rng = np.random.default_rng(100 + seed)
        prob = random_mpc_problem(rng, 2, 4)
        for solver in ("enumerate", "branch_and_bound"):
            plan = mpc_actions(prob, solver).plan
            assert lockout_inequality_holds(prob, plan)
            blocked = prob.blocked_steps()
            for i in range(2):
                assert not plan[i, :blocked[i]].any()

    def test_enumeration_refuses_large_instances(self):
        prob = random_mpc_problem(np.random.default_rng(0), 5, 5)
        with pytest.raises(ValueError):
            solve_enumerate(prob)


class TestControllersInEnv:
    def test_greedy_no_lockout_tracks_signal(self):
        cfg = EnvConfig(N=20, Nc=2, ac=AcParams(lmax=0.0), init_sigma=0.5)
        _, m = run_episode(Greedy(), cfg, seed=1, horizon=1500, warmup=500)
        assert m["signal_rmse"] < 200.0

    def test_bbc_holds_temperature(self):
        cfg = EnvConfig(N=10, Nc=2, ac=AcParams(lmax=0.0), init_sigma=0.5)
        _, m = run_episode(BangBang(), cfg, seed=1, horizon=1500, warmup=500)
        assert m["temp_rmse"] < 0.05

    def test_mpc_runs_and_respects_lockout(self):
        cfg = EnvConfig(N=2, Nc=1, init_sigma=0.05)
        ctrl = Mpc(horizon=3)
        records, m = run_episode(ctrl, cfg, seed=0, horizon=60, warmup=0)
        assert np.isfinite(m["signal_rmse"])
        assert len(ctrl.plans) == 20
        assert all(p["optimal"] for p in ctrl.plans)
