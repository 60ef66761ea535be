"""Quenched path simulation and annealed Monte Carlo estimates.

Annealed estimates draw one fresh environment per walk, matching the
product structure of the averaged law exactly.  Environments are sampled
lazily along the path, so laterally unbounded regions need no truncation.
Point-mass laws (where the environment is deterministic) get a vectorized
batch walker; everything else runs the generic lazy walker.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng
from .env_model import EnvironmentLaw, EnvironmentRealization, PointMassLaw, directions, sample_environment
from .lattice import ExitClass, Region
from .runtime import deterministic_map

DEFAULT_STEP_BUDGET = 10 ** 9


class StepBudgetError(RuntimeError):
    """A walk exceeded its step budget before its stop rule fired."""


class FunctionalEvaluationError(RuntimeError):
    """Exact functional failed for one environment; carries the replay seed."""

    def __init__(self, message: str, env_seed: int):
        super().__init__(f"{message} (replay environment seed: {env_seed})")
        self.env_seed = env_seed


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass
class MCEstimate:
    """Monte Carlo mean with standard error; merging shards is exact."""

    mean: float
    se: float
    n: int
    seed: int
    sum_x: float = 0.0
    sum_x2: float = 0.0

    @classmethod
    def from_samples(cls, samples, seed: int) -> "MCEstimate":
        x = np.asarray(samples, dtype=np.float64)
        n = x.shape[0]
        sum_x = float(x.sum())
        sum_x2 = float((x * x).sum())
        return cls.from_sums(sum_x, sum_x2, n, seed)

    @classmethod
    def from_sums(cls, sum_x: float, sum_x2: float, n: int, seed: int) -> "MCEstimate":
        mean = sum_x / n if n else math.nan
        if n > 1:
            var = max(0.0, (sum_x2 - n * mean * mean) / (n - 1))
            se = math.sqrt(var / n)
        else:
            se = math.nan
        return cls(mean=mean, se=se, n=n, seed=seed, sum_x=sum_x, sum_x2=sum_x2)

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        return MCEstimate.from_sums(
            self.sum_x + other.sum_x,
            self.sum_x2 + other.sum_x2,
            self.n + other.n,
            self.seed,
        )

    def ci(self, z: float = 3.0) -> tuple[float, float]:
        return self.mean - z * self.se, self.mean + z * self.se

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n, "seed": self.seed}


# ---------------------------------------------------------------------------
# Stop rules and outcomes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExitRegion:
    region: Region


@dataclass(frozen=True)
class HitSiteOrExit:
    site: tuple
    region: Region


@dataclass(frozen=True)
class FixedSteps:
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("FixedSteps needs n >= 0")


StopRule = ExitRegion | HitSiteOrExit | FixedSteps


@dataclass
class WalkOutcome:
    final: tuple
    steps: int
    exit_class: ExitClass | None = None
    hit_target: bool | None = None
    visits: dict | None = None


def _exit_class_of(region: Region, site) -> ExitClass | None:
    if not region.has_frontal:
        return None
    return ExitClass.FRONTAL if region.is_frontal_site(site) else ExitClass.OTHER


def run_quenched_walk(env: EnvironmentRealization, start, stop_rule: StopRule,
                      rng_stream: np.random.Generator | int,
                      step_budget: int = DEFAULT_STEP_BUDGET,
                      track_visits: bool = False) -> WalkOutcome:
    """Simulate one walk in a fixed environment until its stop rule fires."""
    gen = rng_stream if isinstance(rng_stream, np.random.Generator) \
        else rng.stream_generator(int(rng_stream))
    d = env.d
    dirs = [tuple(int(c) for c in v) for v in directions(d)]
    buf = rng.UniformBuffer(gen)
    cum_cache: dict[tuple, tuple] = {}
    pos = tuple(int(c) for c in start)
    visits: dict | None = {} if track_visits else None

    if isinstance(stop_rule, FixedSteps):
        budget = stop_rule.n
        region = None
        target = None
    elif isinstance(stop_rule, ExitRegion):
        region = stop_rule.region
        target = None
        budget = step_budget
        if not region.contains(pos):
            raise ValueError(f"start {pos} is outside the stop region")
    else:
        region = stop_rule.region
        target = tuple(int(c) for c in stop_rule.site)
        budget = step_budget
        if not region.contains(pos):
            raise ValueError(f"start {pos} is outside the stop region")

    steps = 0
    while True:
        if visits is not None:
            visits[pos] = visits.get(pos, 0) + 1
        if isinstance(stop_rule, FixedSteps):
            if steps >= budget:
                return WalkOutcome(pos, steps, None, None, visits)
        else:
            if target is not None and pos == target:
                return WalkOutcome(pos, steps, None, True, visits)
            if not region.contains(pos):
                return WalkOutcome(pos, steps, _exit_class_of(region, pos),
                                   False if target is not None else None, visits)
            if steps >= step_budget:
                raise StepBudgetError(
                    f"walk exceeded step budget {step_budget} before stopping")
        cum = cum_cache.get(pos)
        if cum is None:
            cum = tuple(np.cumsum(env.weights(pos)))
            cum_cache[pos] = cum
        k = bisect.bisect_right(cum, buf.next())
        if k >= len(dirs):
            k = len(dirs) - 1
        step = dirs[k]
        pos = tuple(p + s for p, s in zip(pos, step))
        steps += 1


# ---------------------------------------------------------------------------
# Vectorized walker for deterministic (point-mass) environments
# ---------------------------------------------------------------------------


def _pointmass_exit_batch(law: PointMassLaw, region: Region, start, n: int,
                          seed: int, step_budget: int) -> np.ndarray:
    """Frontal-exit indicator per walk for a point-mass law; vectorized."""
    d = law.d
    dirs = directions(d)
    cum = np.cumsum(law.weights)
    gen = rng.stream_generator(seed)
    pos = np.tile(np.asarray(start, dtype=np.int64), (n, 1))
    frontal = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    total_steps = 0
    while np.any(alive):
        if total_steps > step_budget:
            raise StepBudgetError(f"batch walk exceeded step budget {step_budget}")
        idx = np.nonzero(alive)[0]
        u = gen.random(idx.shape[0])
        choice = np.searchsorted(cum, u, side="right")
        np.clip(choice, 0, 2 * d - 1, out=choice)
        pos[idx] += dirs[choice]
        inside = region.contains_block(pos[idx])
        exited = idx[~inside]
        if exited.size:
            frontal[exited] = pos[exited, 0] >= region.frontal_min
            alive[exited] = False
        total_steps += 1
    return frontal


# ---------------------------------------------------------------------------
# Annealed estimates
# ---------------------------------------------------------------------------

EVENT_EXIT_FRONTAL = "exit-frontal"
EVENT_EXIT_NOT_FRONTAL = "exit-not-frontal"


def annealed_event_probability(law: EnvironmentLaw, region: Region, start, event,
                               n: int, seed: int,
                               step_budget: int = DEFAULT_STEP_BUDGET) -> MCEstimate:
    """Estimate the averaged-law probability of an exit event from `start`.

    One fresh environment per walk.  `event` is either one of the named
    exit events ("exit-frontal" / "exit-not-frontal") or a predicate on the
    WalkOutcome.
    """
    named = event in (EVENT_EXIT_FRONTAL, EVENT_EXIT_NOT_FRONTAL)
    if named and not region.has_frontal:
        raise ValueError("named exit events need a region with a frontal side")
    if named and isinstance(law, PointMassLaw):
        frontal = _pointmass_exit_batch(law, region, start, n,
                                        rng.child_seed(seed, 0), step_budget)
        hits = frontal if event == EVENT_EXIT_FRONTAL else ~frontal
        return MCEstimate.from_samples(hits.astype(np.float64), seed)

    if named:
        want_frontal = event == EVENT_EXIT_FRONTAL
        predicate = lambda out: (out.exit_class is ExitClass.FRONTAL) == want_frontal
    else:
        predicate = event

    def one(i: int) -> float:
        env = sample_environment(law, seed=rng.child_seed(seed, i, 1))
        gen = rng.stream_generator(rng.child_seed(seed, i, 2))
        out = run_quenched_walk(env, start, ExitRegion(region), gen, step_budget)
        return 1.0 if predicate(out) else 0.0

    samples = deterministic_map(one, range(n))
    return MCEstimate.from_samples(samples, seed)


def estimate_velocity(law: EnvironmentLaw, n_steps: int, n_walks: int,
                      seed: int) -> MCEstimate:
    """Annealed estimate of the n-step average displacement along e1."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if isinstance(law, PointMassLaw):
        d = law.d
        dirs = directions(d)
        cum = np.cumsum(law.weights)
        gen = rng.stream_generator(rng.child_seed(seed, 0))
        steps_e1 = dirs[:, 0]
        vals = np.empty(n_walks)
        for w in range(n_walks):
            u = gen.random(n_steps)
            choice = np.searchsorted(cum, u, side="right")
            np.clip(choice, 0, 2 * d - 1, out=choice)
            vals[w] = steps_e1[choice].sum() / n_steps
        return MCEstimate.from_samples(vals, seed)

    def one(w: int) -> float:
        env = sample_environment(law, seed=rng.child_seed(seed, w, 1))
        gen = rng.stream_generator(rng.child_seed(seed, w, 2))
        out = run_quenched_walk(env, (0,) * law.d, FixedSteps(n_steps), gen)
        return out.final[0] / n_steps

    samples = deterministic_map(one, range(n_walks))
    return MCEstimate.from_samples(samples, seed)


# ---------------------------------------------------------------------------
# Empirical distributions of exact per-environment functionals
# ---------------------------------------------------------------------------


@dataclass
class EmpiricalDistribution:
    """Exact functional values across independent environments (no inner MC noise)."""

    samples: np.ndarray
    seeds: list[int]
    master_seed: int
    control_variate_applied: bool = False

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def variance(self) -> float:
        return float(self.samples.var(ddof=1)) if self.n > 1 else 0.0

    @property
    def se(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        return {q: float(np.quantile(self.samples, q)) for q in qs}

    def estimate(self) -> MCEstimate:
        return MCEstimate.from_samples(self.samples, self.master_seed)

    def to_csv(self, path) -> None:
        from .reporting import write_csv
        write_csv(path, ["env_seed", "value"],
                  [[s, float(v)] for s, v in zip(self.seeds, self.samples)])


def sample_statistic_over_environments(law: EnvironmentLaw, region: Region,
                                       functional: Callable, n_env: int, seed: int,
                                       control_variate: Callable | None = None
                                       ) -> EmpiricalDistribution:
    """Evaluate an exact per-environment functional across n_env environments.

    functional(env, region) must be deterministic given the environment;
    solver failures are re-raised with the environment seed for replay.  An
    optional mean-zero control variate (same signature) is subtracted from
    every sample.
    """
    env_seeds = [rng.child_seed(seed, i) for i in range(n_env)]

    def one(env_seed: int) -> float:
        env = sample_environment(law, region, seed=env_seed)
        try:
            val = float(functional(env, region))
            if control_variate is not None:
                val -= float(control_variate(env, region))
            return val
        except Exception as exc:  # noqa: BLE001 - annotate with replay seed
            raise FunctionalEvaluationError(str(exc), env_seed) from exc

    samples = np.asarray(deterministic_map(one, env_seeds), dtype=np.float64)
    return EmpiricalDistribution(
        samples=samples, seeds=env_seeds, master_seed=seed,
        control_variate_applied=control_variate is not None,
    )
