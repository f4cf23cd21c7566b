"""Classical controllers: bang-bang, greedy myopic knapsack, and small-scale MPC.

Every controller exposes ``act(env) -> bool array`` (one action per house).
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .thermal import ThermalCoefficients, ThermalParams, affine_dynamics


def bbc_action(Th: float, TT: float) -> bool:
    """ON iff the air is strictly warmer than target."""
    return bool(Th > TT)


class BangBang:
    name = "bbc"
    decentralized = True

    def reset(self, env):
        pass

    def act(self, env) -> np.ndarray:
        obs = env.observations()
        return obs[:, 0] > obs[:, 2]


def greedy_actions(Th, TT, power, lockout, s, count_locked: bool = True) -> np.ndarray:
    """Knapsack-style priority allocation.

    Units are ranked by (Th - TT) / Pa, ties broken by lower index, and picked
    in that order until their total power reaches ``s``. Only picked units that
    are not locked out come back ON; everything else is OFF.

    With ``count_locked`` (default) the ranking is myopic about lockout: locked
    units are ranked and counted toward ``s`` as if their ON command would be
    honoured, which the AC's backup controller then drops. With
    ``count_locked=False`` only available units are ranked.
    """
    Th = np.asarray(Th, dtype=float)
    power = np.broadcast_to(np.asarray(power, dtype=float), Th.shape)
    TT = np.broadcast_to(np.asarray(TT, dtype=float), Th.shape)
    free = np.asarray(lockout) <= 0
    candidates = np.arange(Th.size) if count_locked else np.flatnonzero(free)
    actions = np.zeros(Th.shape, dtype=bool)
    if s <= 0 or candidates.size == 0:
        return actions
    priority = (Th[candidates] - TT[candidates]) / power[candidates]
    order = candidates[np.lexsort((candidates, -priority))]
    before = np.cumsum(power[order]) - power[order]
    actions[order[before < s]] = True
    return actions & free


@dataclass
class Greedy:
    count_locked: bool = True
    name = "greedy"
    decentralized = False

    def reset(self, env):
        pass

    def act(self, env) -> np.ndarray:
        st = env.state
        return greedy_actions(st.Th, env.config.target, env.power, st.lockout, st.s, self.count_locked)


# --------------------------------------------------------------------------- MPC


class TimeBudgetExceeded(RuntimeWarning):
    pass


@dataclass
class MpcProblem:
    """Binary plan optimisation over ``horizon`` steps of length ``dt``.

    Dynamics are the exact per-house affine step matrices ``x' = A x + B Qa + e``
    (constant over the horizon because To and dt are held fixed).
    """

    Th0: np.ndarray
    Tm0: np.ndarray
    on0: np.ndarray
    lockout0: np.ndarray  # seconds
    power: np.ndarray
    heat: np.ndarray
    params: list
    To: float
    target: float
    s0: float
    horizon: int
    dt: float = 12.0
    lmax: float = 40.0
    alpha_temp: float = 1.0
    alpha_sig: float = 3e-7

    def __post_init__(self):
        self.Th0, self.Tm0, self.lockout0, self.power, self.heat = (
            np.asarray(v, dtype=float).reshape(-1) for v in (self.Th0, self.Tm0, self.lockout0, self.power, self.heat))
        self.on0 = np.asarray(self.on0, dtype=bool).reshape(-1)
        if isinstance(self.params, ThermalParams):
            self.params = [self.params] * len(self.Th0)

    @property
    def n_agents(self) -> int:
        return len(self.Th0)

    @property
    def lockout_steps(self) -> int:
        # lockout rounded up to whole planning steps (conservative when dt does not divide lmax)
        return int(math.ceil(self.lmax / self.dt - 1e-9))

    def blocked_steps(self) -> np.ndarray:
        """Leading plan steps during which each agent is still locked out."""
        return np.ceil(self.lockout0 / self.dt - 1e-9).astype(int)

    def dynamics(self):
        return [affine_dynamics(p, self.To, self.dt) for p in self.params]

    def quadratic_form(self):
        """Objective as ``a^T Q a + q^T a + const`` over the flattened (agent, step) plan."""
        N, H = self.n_agents, self.horizon
        n = N * H
        Q = np.zeros((n, n))
        q = np.zeros(n)
        const = 0.0
        for i, (A, B, e) in enumerate(self.dynamics()):
            # Th_t = c_t + sum_{tau < t} G[t, tau] a_tau, for t = 1..H
            c = np.empty(H)
            G = np.zeros((H, H))
            x = np.array([self.Th0[i], self.Tm0[i]])
            resp = []  # response of x after k steps to a unit action at step 0
            r = B * self.heat[i]
            for t in range(H):
                x = A @ x + e
                c[t] = x[0]
                resp.append(r.copy())
                r = A @ r
            for t in range(H):
                for tau in range(t + 1):
                    G[t, tau] = resp[t - tau][0]
            sl = slice(i * H, (i + 1) * H)
            dev = c - self.target
            Q[sl, sl] += self.alpha_temp * G.T @ G
            q[sl] += 2 * self.alpha_temp * G.T @ dev
            const += self.alpha_temp * float(dev @ dev)
        # signal term: sum_t (sum_i P_i a_{i,t} - s0)^2
        for t in range(H):
            idx = np.arange(N) * H + t
            Q[np.ix_(idx, idx)] += self.alpha_sig * np.outer(self.power, self.power)
            q[idx] += -2 * self.alpha_sig * self.s0 * self.power
            const += self.alpha_sig * self.s0**2
        return Q, q, const

    def plan_feasible(self, plan: np.ndarray) -> bool:
        plan = np.asarray(plan, dtype=bool).reshape(self.n_agents, self.horizon)
        blocked = self.blocked_steps()
        L = self.lockout_steps
        for i in range(self.n_agents):
            if plan[i, :blocked[i]].any():
                return False
            if _has_short_off_run(plan[i], bool(self.on0[i]), L):
                return False
        return True


def _has_short_off_run(row, on_before: bool, L: int) -> bool:
    """True if an OFF run between two ON steps is shorter than L steps."""
    last_on = -1 if on_before else None
    for t, a in enumerate(row):
        if a:
            if last_on is not None and 0 < t - last_on - 1 < L:
                return True
            last_on = t
    return False


def lockout_inequality_holds(problem: MpcProblem, plan) -> bool:
    """Direct check of  lmax (a_t - w_{t-1}) - sum_{k=0}^{lmax} (1 - w_{t-k}) <= 0  in plan steps.

    Status before the horizon is reconstructed from the initial state: an
    agent with remaining lockout has been OFF for ``L - blocked`` steps.
    """
    plan = np.asarray(plan, dtype=int).reshape(problem.n_agents, problem.horizon)
    L = problem.lockout_steps
    blocked = problem.blocked_steps()
    for i in range(problem.n_agents):
        if problem.on0[i]:
            history = [1] * (L + 1)
        elif blocked[i] > 0:
            off = max(L - blocked[i], 0)
            history = [1] * (L + 1 - off) + [0] * off
        else:
            history = [0] * (L + 1)
        w = history + list(plan[i])
        for t in range(len(history), len(w)):
            lhs = L * (w[t] - w[t - 1]) - sum(1 - w[t - k] for k in range(L + 1))
            if lhs > 0:
                return False
    return True


@dataclass
class MpcResult:
    plan: np.ndarray
    objective: float
    optimal: bool
    timed_out: bool = False
    nodes: int = 0

    @property
    def actions(self) -> np.ndarray:
        return self.plan[:, 0].astype(bool)


def simulate_plan_cost(problem: MpcProblem, plans_per_agent) -> tuple:
    """Direct simulation of candidate plans with the thermal closed form.

    ``plans_per_agent[i]`` is a (K_i, H) 0/1 array; returns per-agent
    temperature costs (K_i,) and power profiles (K_i, H).
    """
    temps, powers = [], []
    for i, plans in enumerate(plans_per_agent):
        prm = problem.params[i]
        coeffs = ThermalCoefficients.from_params(prm, problem.dt)
        Th = np.full(len(plans), problem.Th0[i])
        Tm = np.full(len(plans), problem.Tm0[i])
        cost = np.zeros(len(plans))
        for t in range(problem.horizon):
            Qa = plans[:, t] * problem.heat[i]
            Th, Tm = coeffs.advance(Th, Tm, problem.To, Qa)
            cost += problem.alpha_temp * (Th - problem.target) ** 2
        temps.append(cost)
        powers.append(plans * problem.power[i])
    return temps, powers


def _feasible_agent_plans(problem: MpcProblem, i: int) -> np.ndarray:
    H = problem.horizon
    allp = np.array(list(itertools.product((0, 1), repeat=H)), dtype=float).reshape(-1, H)
    blocked = problem.blocked_steps()[i]
    keep = [p for p in allp if not p[:blocked].any()
            and not _has_short_off_run(p.astype(bool), bool(problem.on0[i]), problem.lockout_steps)]
    return np.array(keep).reshape(-1, H)


def solve_enumerate(problem: MpcProblem) -> MpcResult:
    """Exhaustive search over all feasible binary plans (N*H <= 24)."""
    N, H = problem.n_agents, problem.horizon
    if N * H > 24:
        raise ValueError("enumeration limited to N*H <= 24; use branch_and_bound")
    plans = [_feasible_agent_plans(problem, i) for i in range(N)]
    temps, powers = simulate_plan_cost(problem, plans)
    # fold all agents but the last into (temperature cost, power profile) over joint choices
    cost = np.zeros(1)
    prof = np.zeros((1, H))
    for i in range(N - 1):
        cost = (cost[:, None] + temps[i][None, :]).reshape(-1)
        prof = (prof[:, None, :] + powers[i][None, :, :]).reshape(-1, H)
    best_total, best_flat = np.inf, -1
    last = N - 1
    for k in range(len(plans[last])):
        total = cost + temps[last][k] + problem.alpha_sig * ((prof + powers[last][k] - problem.s0) ** 2).sum(axis=1)
        j = int(np.argmin(total))
        if total[j] < best_total:
            best_total, best_flat = float(total[j]), j * len(plans[last]) + k
    sizes = [len(p) for p in plans]
    choice = np.unravel_index(best_flat, sizes)
    plan = np.array([plans[i][choice[i]] for i in range(N)])
    return MpcResult(plan.astype(int), best_total, optimal=True, nodes=int(np.prod(sizes)))


def _box_qp(Q, q, fixed_mask, fixed_vals, x0, L, iters=400):
    """Projected gradient on min x^T Q x + q^T x over [0,1]^n with some coordinates fixed.

    Returns (x, lower_bound) where the bound follows from convexity:
    f(y) >= f(x) + g.(y - x), minimised over the box.
    """
    x = np.where(fixed_mask, fixed_vals, np.clip(x0, 0, 1))
    free = ~fixed_mask
    step = 1.0 / L
    for _ in range(iters):
        g = 2 * Q @ x + q
        x_new = x.copy()
        x_new[free] = np.clip(x[free] - step * g[free], 0.0, 1.0)
        if np.max(np.abs(x_new - x)) < 1e-12:
            x = x_new
            break
        x = x_new
    g = 2 * Q @ x + q
    f = x @ Q @ x + q @ x
    lin = np.minimum(g[free] * (0.0 - x[free]), g[free] * (1.0 - x[free]))
    return x, f + lin.sum()


def _partial_infeasible(assign, on0, blocked, L, N, H) -> bool:
    """Pattern ON..OFF..ON (all fixed) closer than L+1 steps apart cannot be completed."""
    for i in range(N):
        row = assign[i]
        if (row[:blocked[i]] == 1).any():
            return True
        ones = [-1] if on0[i] else []
        ones += [t for t in range(H) if row[t] == 1]
        for a_idx in range(len(ones) - 1):
            t1, t2 = ones[a_idx], ones[a_idx + 1]
            if 0 < t2 - t1 - 1 < L and any(row[t] == 0 for t in range(t1 + 1, t2)):
                return True
    return False


def solve_branch_and_bound(problem: MpcProblem, gap: float = 0.0, time_budget: float | None = 10.0) -> MpcResult:
    """Depth-first branch and bound with box-relaxation bounds.

    Lockout switching constraints are dropped from the relaxation (the bound
    stays valid) and enforced by pruning partially fixed assignments.
    """
    N, H = problem.n_agents, problem.horizon
    n = N * H
    Q, q, const = problem.quadratic_form()
    Lip = 2 * max(np.linalg.eigvalsh(Q).max(), 1e-12)
    blocked = problem.blocked_steps()
    Lsteps = problem.lockout_steps
    start = time.perf_counter()

    def objective(x):
        return float(x @ Q @ x + q @ x + const)

    # incumbent: all off is always feasible
    best_x = np.zeros(n)
    best_f = objective(best_x)
    assign0 = -np.ones((N, H), dtype=int)
    for i in range(N):
        assign0[i, :blocked[i]] = 0
    stack = [assign0]
    nodes = 0
    timed_out = False
    while stack:
        if time_budget is not None and time.perf_counter() - start > time_budget:
            timed_out = True
            break
        assign = stack.pop()
        nodes += 1
        if _partial_infeasible(assign, problem.on0, blocked, Lsteps, N, H):
            continue
        flat = assign.reshape(-1)
        fixed = flat >= 0
        if fixed.all():
            f = objective(flat.astype(float))
            if f < best_f:
                best_f, best_x = f, flat.astype(float)
            continue
        x, bound = _box_qp(Q, q, fixed, np.maximum(flat, 0).astype(float), np.full(n, 0.5), Lip)
        bound += const
        if bound >= best_f - gap * abs(best_f) - 1e-12 * max(1.0, abs(best_f)):
            continue
        # cheap incumbent: round the relaxation and repair with the lockout check
        rounded = np.where(fixed, flat, np.round(x)).astype(int)
        if not _partial_infeasible(rounded.reshape(N, H), problem.on0, blocked, Lsteps, N, H):
            f = objective(rounded.astype(float))
            if f < best_f:
                best_f, best_x = f, rounded.astype(float)
        free_idx = np.flatnonzero(~fixed)
        j = free_idx[np.argmax(-np.abs(x[free_idx] - 0.5))]  # most fractional
        first = 1 if x[j] >= 0.5 else 0
        for v in (1 - first, first):  # explore the rounding side first (pushed last)
            child = assign.copy()
            child.reshape(-1)[j] = v
            stack.append(child)
    plan = best_x.reshape(N, H).astype(int)
    return MpcResult(plan, best_f, optimal=not timed_out and gap == 0, timed_out=timed_out, nodes=nodes)


def mpc_actions(problem: MpcProblem, solver: str = "branch_and_bound", **kwargs) -> MpcResult:
    if solver == "enumerate":
        return solve_enumerate(problem)
    if solver == "branch_and_bound":
        return solve_branch_and_bound(problem, **kwargs)
    raise ValueError(f"unknown solver {solver!r}")


@dataclass
class Mpc:
    """Receding-horizon controller re-planning every ``dt`` seconds (held between re-plans)."""

    horizon: int = 4
    dt: float = 12.0
    solver: str = "branch_and_bound"
    time_budget: float = 10.0
    gap: float = 0.0
    name: str = "mpc"
    decentralized: bool = False
    plans: list = field(default_factory=list)

    def reset(self, env):
        self._hold = 0
        self._current = np.zeros(env.config.N, dtype=bool)
        self.plans = []

    def problem_from_env(self, env) -> MpcProblem:
        st, cfg = env.state, env.config
        params = [ThermalParams(*row) for row in env.thermal]
        return MpcProblem(
            Th0=st.Th, Tm0=st.Tm, on0=st.on, lockout0=st.lockout, power=env.power, heat=env.heat,
            params=params, To=env.outdoor_temperature(st.time), target=cfg.target, s0=st.s,
            horizon=self.horizon, dt=self.dt, lmax=float(np.max(env.lmax)),
            alpha_temp=cfg.alpha_temp, alpha_sig=cfg.alpha_sig,
        )

    def act(self, env) -> np.ndarray:
        if self._hold == 0:
            kwargs = {} if self.solver == "enumerate" else {"gap": self.gap, "time_budget": self.time_budget}
            result = mpc_actions(self.problem_from_env(env), self.solver, **kwargs)
            self._current = result.actions
            self.plans.append({"time": env.state.time, "objective": result.objective,
                               "optimal": result.optimal, "timed_out": result.timed_out,
                               "plan": result.plan.tolist()})
            self._hold = max(1, int(round(self.dt / env.config.dt)))
        self._hold -= 1
        return self._current.copy()
