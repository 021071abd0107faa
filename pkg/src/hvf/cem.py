"""Cross-entropy method over real vectors with a diagonal Gaussian.

``cem_minimize_many`` runs P independent problems in lockstep so that the
action planner can evaluate thousands of segment problems with one vectorized
rollout per iteration. ``cem_optimize`` is the single-problem front end.

Samples are ranked by ``(cost, sample index)`` which makes the result
independent of evaluation order. The running best-ever sample is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["CemConfig", "GaussianSampler", "CemResult", "cem_optimize", "cem_minimize_many"]


@dataclass(frozen=True)
class CemConfig:
    num_samples: int = 200
    num_elites: int = 40
    max_iters: int = 5
    std_threshold: float = 1e-3
    std_floor: float = 1e-6
    init_std: float = 1.0

    def __post_init__(self):
        if not 0 < self.num_elites <= self.num_samples:
            raise ValueError(f"need 0 < num_elites <= num_samples, got "
                             f"{self.num_elites}/{self.num_samples}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.std_threshold <= 0:
            raise ValueError("std_threshold must be positive")
        if self.std_floor < 0:
            raise ValueError("std_floor must be >= 0")


@dataclass
class GaussianSampler:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same shape")
        if not np.all(np.isfinite(self.std)) or np.any(self.std < 0):
            raise ValueError("std must be finite and non-negative")

    @classmethod
    def standard(cls, dim: int, std: float = 1.0) -> "GaussianSampler":
        return cls(np.zeros(dim), np.full(dim, float(std)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal((n, self.mean.size))

    @staticmethod
    def fit(elites: np.ndarray, std_floor: float = 0.0) -> "GaussianSampler":
        """Elementwise mean and (population) std of the elite set."""
        elites = np.asarray(elites, dtype=float)
        return GaussianSampler(elites.mean(0), np.maximum(elites.std(0), std_floor))


@dataclass
class CemResult:
    best_vector: np.ndarray
    best_cost: float
    elite_cost_history: list[float] = field(default_factory=list)
    best_cost_history: list[float] = field(default_factory=list)
    iterations: int = 0
    sampler: GaussianSampler | None = None


@dataclass
class ManyResult:
    best_vectors: np.ndarray  # (P, dim)
    best_costs: np.ndarray  # (P,)
    iterations: np.ndarray  # (P,)
    elite_cost_history: np.ndarray  # (P, iters), nan after convergence
    best_cost_history: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def cem_minimize_many(objective: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      num_problems: int, dim: int, config: CemConfig,
                      rng: np.random.Generator, *, init_mean=None, init_std=None,
                      forced=None, shared_noise: bool = True) -> ManyResult:
    """Minimize P independent objectives with CEM in lockstep.

    Parameters
    ----------
    objective : callable
        ``objective(samples, problems)`` with ``samples`` of shape
        ``(len(problems), N, dim)`` returns costs of shape ``(len(problems), N)``.
        ``problems`` holds the indices of the still-active problems.
    num_problems, dim : int
        Problem count P and search dimension.
    config : CemConfig
    rng : numpy Generator
    init_mean, init_std : array_like, optional
        Broadcastable to ``(P, dim)``; default ``0`` and ``config.init_std``.
    forced : array_like, optional
        ``(F, dim)`` or ``(P, F, dim)`` vectors that replace the last F samples
        of the first batch.
    shared_noise : bool
        Draw one ``(N, dim)`` noise block per iteration and reuse it for every
        problem. A problem then sees the same draws whatever batch it is
        solved in, so batched and single solves agree bitwise.
    """
    P, N, E = num_problems, config.num_samples, config.num_elites
    mean = np.broadcast_to(0.0 if init_mean is None else np.asarray(init_mean, float), (P, dim)).copy()
    std = np.broadcast_to(config.init_std if init_std is None else np.asarray(init_std, float),
                          (P, dim)).copy()
    best_x = np.zeros((P, dim))
    best_c = np.full(P, np.inf)
    iters = np.zeros(P, dtype=np.int64)
    elite_hist = np.full((P, config.max_iters), np.nan)
    best_hist = np.full((P, config.max_iters), np.nan)
    active = np.ones(P, dtype=bool)
    if forced is not None:
        forced = np.asarray(forced, dtype=float)
        if forced.ndim == 2:
            forced = np.broadcast_to(forced, (P,) + forced.shape)
        if forced.shape[1] > N or forced.shape[2] != dim:
            raise ValueError(f"forced samples shape {forced.shape} incompatible with N={N}, dim={dim}")

    for it in range(config.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        if shared_noise:
            noise = rng.standard_normal((N, dim))[None]
        else:
            noise = rng.standard_normal((P, N, dim))[idx]
        x = mean[idx, None, :] + std[idx, None, :] * noise
        if it == 0 and forced is not None and forced.shape[1]:
            x[:, N - forced.shape[1]:] = forced[idx]
        costs = np.asarray(objective(x, idx), dtype=float)
        if costs.shape != (idx.size, N):
            raise ValueError(f"objective returned shape {costs.shape}, expected {(idx.size, N)}")
        if not np.all(np.isfinite(costs)):
            bad = np.argwhere(~np.isfinite(costs))[0]
            raise FloatingPointError(
                f"non-finite cost {costs[tuple(bad)]} at iteration {it}, problem {idx[bad[0]]}, "
                f"sample {bad[1]}: {x[tuple(bad)]}")

        order = np.argsort(costs, axis=1, kind="stable")
        elites = np.take_along_axis(x, order[:, :E, None], axis=1)
        elite_costs = np.take_along_axis(costs, order[:, :E], axis=1)
        mean[idx] = elites.mean(axis=1)
        std[idx] = np.maximum(elites.std(axis=1), config.std_floor)

        top = order[:, 0]
        top_c = costs[np.arange(idx.size), top]
        better = top_c < best_c[idx]
        upd = idx[better]
        best_c[upd] = top_c[better]
        best_x[upd] = x[np.flatnonzero(better), top[better]]
        iters[idx] += 1
        elite_hist[idx, it] = elite_costs.mean(axis=1)
        best_hist[idx, it] = best_c[idx]
        active[idx] = std[idx].max(axis=1) >= config.std_threshold

    return ManyResult(best_x, best_c, iters, elite_hist, best_hist, mean, std)


def cem_optimize(objective: Callable[[np.ndarray], float], dim: int, config: CemConfig,
                 rng: np.random.Generator, *, vectorized: bool = False, init_mean=None,
                 init_std=None, forced=None, map_fn: Callable = map) -> CemResult:
    """Minimize ``objective`` over R^dim.

    With ``vectorized=True`` the objective maps an ``(N, dim)`` batch to ``N``
    costs; otherwise it is called once per sample through ``map_fn`` (pass an
    executor's ``map`` to evaluate concurrently; ranking does not depend on
    completion order).
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")

    def batched(x, _idx):
        if vectorized:
            return np.asarray(objective(x[0]), dtype=float)[None]
        return np.fromiter(map_fn(objective, list(x[0])), dtype=float, count=x.shape[1])[None]

    res = cem_minimize_many(batched, 1, dim, config, rng, init_mean=init_mean,
                            init_std=init_std, forced=forced)
    n = int(res.iterations[0])
    return CemResult(
        best_vector=res.best_vectors[0],
        best_cost=float(res.best_costs[0]),
        elite_cost_history=[float(c) for c in res.elite_cost_history[0, :n]],
        best_cost_history=[float(c) for c in res.best_cost_history[0, :n]],
        iterations=n,
        sampler=GaussianSampler(res.mean[0], res.std[0]),
    )
