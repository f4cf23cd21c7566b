"""Fleet-size scaling: per-agent RMSE vs N and the independent-groups 1/sqrt(k) law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..env import EnvConfig
from .metrics import evaluate

DEFAULT_SIZES = (10, 50, 250, 1000)


@dataclass
class GroupRatio:
    k: int
    ratio: float  # per-agent RMSE of k groups / per-agent RMSE of one group
    predicted: float  # 1 / sqrt(k)
    applicable: bool  # False when the group errors are detectably biased

    @property
    def relative_error(self) -> float:
        return abs(self.ratio - self.predicted) / self.predicted


def per_agent_rmse(errors: np.ndarray, n_agents: int) -> float:
    return float(np.sqrt(np.mean(errors**2)) / n_agents)


def group_errors_biased(errors: np.ndarray, z: float = 4.0) -> bool:
    """True when the sample mean of per-group errors is ``z`` standard errors away from 0."""
    e = np.asarray(errors, dtype=float).ravel()
    se = e.std(ddof=1) / np.sqrt(e.size)
    return bool(abs(e.mean()) > z * se) if se > 0 else bool(e.mean() != 0)


def group_ratio(k: int, group_size: int = 10, sigma: float = 1000.0, bias: float = 0.0,
                steps: int = 20000, rng=None) -> GroupRatio:
    """Monte-Carlo of k independent groups with Gaussian tracking errors.

    Each group of ``group_size`` agents tracks s/k with error N(bias, sigma^2),
    uncorrelated across groups. The aggregate error is the sum over groups, so
    with ``bias == 0`` its per-agent RMSE is about 1/sqrt(k) that of one group.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    groups = bias + sigma * rng.standard_normal((steps, k))
    single = per_agent_rmse(groups[:, 0], group_size)
    combined = per_agent_rmse(groups.sum(axis=1), k * group_size)
    return GroupRatio(k, combined / single, float(1.0 / np.sqrt(k)), not group_errors_biased(groups))


def group_ratio_table(ks=(1, 4, 16), seed: int = 0, **kw) -> list[GroupRatio]:
    rng = np.random.default_rng(seed)
    return [group_ratio(k, rng=rng, **kw) for k in ks]


def scaling_study(controller_factory, base_config: EnvConfig, sizes=DEFAULT_SIZES, seeds=(1,),
                  horizon: int = 43200, warmup: int = 5000, jobs: int = 1, table=None) -> list[dict]:
    """Evaluate one controller at several fleet sizes.

    Each row carries the measured per-agent signal RMSE and the RMSE that the
    independent-groups law predicts from the smallest size.
    """
    rows = []
    base = None
    for N in sizes:
        cfg = base_config.with_(N=N, Nc=min(base_config.Nc, N - 1))
        rep = evaluate(controller_factory, cfg, seeds, horizon, warmup, jobs, table=table)
        summary = rep.summary()
        if base is None:
            base = (N, summary["signal_rmse_mean"])
        summary["N"] = N
        summary["group_law_prediction"] = base[1] / np.sqrt(N / base[0])
        rows.append(summary)
    return rows
