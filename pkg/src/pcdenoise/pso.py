"""Particle swarm search for the KDE bandwidth.

The swarm minimizes ``cost = -L(h)`` where ``L`` is the leave-one-out
log-likelihood. Cognitive and social rates follow the linear schedule
``Cc = 2.5 - 2t/T``, ``Cs = 0.5 + 2t/T``; the inertia weight is a fresh
``U[0, 1]`` draw for every particle at every iteration. A population
manager grows the swarm while the global best stagnates and shrinks it
while the global best keeps improving.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import BandwidthDiag, PointCloud, bbox_diagonal, scott_seed_bandwidth
from .kde import DEFAULT_TRUNCATION, loocv_log_likelihood
from .spatial import SpatialIndex

Objective = Callable[[np.ndarray], float]

MAX_POPULATION = 45
SOLO_SPREAD = 0.5


@dataclass(eq=False)
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_cost: float


@dataclass
class Swarm:
    particles: list[Particle]
    global_best: np.ndarray
    global_best_cost: float
    lower: np.ndarray
    upper: np.ndarray
    max_iterations: int
    rng: np.random.Generator
    stagnation_k: int = 5
    max_population: int = MAX_POPULATION
    t: int = 0
    # global-best improvements smaller than this fraction of max(1, |cost|)
    # count as stagnation for the population manager
    improve_tol: float = 1e-3
    # one flag per iteration of the current manager window
    window: list[bool] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.particles)

    @property
    def rates(self) -> tuple[float, float]:
        return learning_rates(self.t, self.max_iterations)


def learning_rates(t: int, T: int) -> tuple[float, float]:
    """Cognitive and social rates ``(Cc, Cs)`` at iteration ``t`` of ``T``."""
    frac = t / T
    return 2.5 - 2.0 * frac, 0.5 + 2.0 * frac


def log_uniform(rng: np.random.Generator, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.exp(rng.uniform(np.log(lower), np.log(upper)))


def init_swarm(
    objective: Objective,
    lower,
    upper,
    max_iterations: int,
    seed=None,
    initial_positions=None,
    population: int = 1,
    stagnation_k: int = 5,
    max_population: int = MAX_POPULATION,
    improve_tol: float = 1e-3,
) -> Swarm:
    """Create and evaluate a swarm.

    ``initial_positions`` (if given) fill the first slots; the rest of the
    ``population`` is drawn inside the bounds, log-uniformly when the box is
    strictly positive and uniformly otherwise.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape or not np.all(lower < upper):
        raise ValueError("invalid bounds: need lower < upper")
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    if not 1 <= population <= max_population:
        raise ValueError("population out of range")
    rng = np.random.default_rng(seed)

    seeds = [] if initial_positions is None else [np.clip(np.asarray(p, float), lower, upper)
                                                  for p in initial_positions]
    positions = seeds[:population]
    # scale parameters (strictly positive boxes) are drawn log-uniformly
    draw = log_uniform if np.all(lower > 0) else (lambda g, lo, hi: g.uniform(lo, hi))
    while len(positions) < population:
        positions.append(draw(rng, lower, upper))

    particles = []
    for pos in positions:
        c = float(objective(pos))
        particles.append(Particle(pos.copy(), np.zeros_like(pos), pos.copy(), c))
    best = _best_particle(particles)
    return Swarm(particles, best.best_position.copy(), best.best_cost, lower, upper,
                 max_iterations, rng, stagnation_k, max_population, improve_tol=improve_tol)


def _best_particle(particles: list[Particle]) -> Particle:
    # min() keeps the first of equal costs: lowest index wins ties
    return min(particles, key=lambda p: p.best_cost)


def _worst_index(particles: list[Particle]) -> int:
    costs = np.array([p.best_cost for p in particles])
    return int(np.flatnonzero(costs == costs.max())[-1])


def step_swarm(swarm: Swarm, objective: Objective) -> Swarm:
    """Advance every particle by one velocity/position update.

    Returns the same (mutated) swarm. Sets ``swarm.window`` with whether
    the global best improved.
    """
    cc, cs = swarm.rates
    dim = len(swarm.global_best)
    start_cost = swarm.global_best_cost
    for p in swarm.particles:
        omega = swarm.rng.uniform()
        r1 = swarm.rng.uniform(size=dim)
        r2 = swarm.rng.uniform(size=dim)
        p.velocity = (omega * p.velocity
                      + cc * r1 * (p.best_position - p.position)
                      + cs * r2 * (swarm.global_best - p.position))
        p.position = p.position + p.velocity
        clamped = (p.position < swarm.lower) | (p.position > swarm.upper)
        p.position = np.clip(p.position, swarm.lower, swarm.upper)
        p.velocity[clamped] = 0.0

        cost = float(objective(p.position))
        if cost < p.best_cost:
            p.best_cost = cost
            p.best_position = p.position.copy()
        if p.best_cost < swarm.global_best_cost:
            swarm.global_best_cost = p.best_cost
            swarm.global_best = p.best_position.copy()
    swarm.t += 1
    swarm.window.append(_significant(start_cost, swarm.global_best_cost, swarm.improve_tol))
    return swarm


def _significant(before: float, after: float, tol: float) -> bool:
    if not np.isfinite(before):
        return after < before
    return before - after > tol * max(1.0, abs(before))


def _offspring(swarm: Swarm) -> np.ndarray:
    if swarm.size < 2:
        # no second particle to combine with: jitter the lone personal best
        best = swarm.particles[0].best_position
        step = swarm.rng.normal(0.0, SOLO_SPREAD, size=best.shape)
        if np.all(swarm.lower > 0):
            moved = best * np.exp(step)  # relative move for scale parameters
        else:
            moved = best + step * 0.5 * (swarm.upper - swarm.lower)
        return np.clip(moved, swarm.lower, swarm.upper)
    i, j = swarm.rng.choice(swarm.size, size=2, replace=False)
    lam = swarm.rng.uniform()
    a, b = swarm.particles[i].best_position, swarm.particles[j].best_position
    return np.clip(lam * a + (1.0 - lam) * b, swarm.lower, swarm.upper)


def manage_population(swarm: Swarm, objective: Objective) -> Swarm:
    """Grow, replace or shrink the swarm once every ``k`` iterations.

    Over the last window of ``k`` iterations:

    * no global-best update: add one particle (at the size cap, replace the
      worst one). The newcomer sits at a random convex combination of two
      particles' personal bests.
    * two or more updates: drop the worst particle, never going below one.
    * exactly one update: leave the swarm alone.
    """
    k = swarm.stagnation_k
    if len(swarm.window) < k:
        return swarm
    updates = sum(swarm.window)
    swarm.window.clear()
    if updates == 0:
        if swarm.size >= swarm.max_population:
            del swarm.particles[_worst_index(swarm.particles)]
        pos = _offspring(swarm)
        cost = float(objective(pos))
        swarm.particles.append(Particle(pos.copy(), np.zeros_like(pos), pos.copy(), cost))
        if cost < swarm.global_best_cost:
            swarm.global_best_cost = cost
            swarm.global_best = pos.copy()
    elif updates > 1 and swarm.size > 1:
        del swarm.particles[_worst_index(swarm.particles)]
    return swarm


@dataclass
class SearchResult:
    best_position: np.ndarray
    best_cost: float
    cost_history: np.ndarray
    population_history: np.ndarray
    evaluations: int

    def write_csv(self, path) -> None:
        """Trace as ``iteration,best_cost,population_size`` rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_cost", "population_size"])
            for t, (c, s) in enumerate(zip(self.cost_history, self.population_history)):
                w.writerow([t, repr(float(c)), int(s)])


def minimize(
    objective: Objective,
    lower,
    upper,
    iterations: int = 50,
    seed=None,
    initial_positions=None,
    population: int = 1,
    stagnation_k: int = 5,
    max_population: int = MAX_POPULATION,
    manage: bool = True,
    improve_tol: float = 1e-3,
    callback: Optional[Callable[[Swarm], None]] = None,
) -> SearchResult:
    """Run the swarm for a fixed number of iterations.

    The returned histories have ``iterations + 1`` entries; entry 0 is the
    initial swarm.
    """
    evals = 0

    def counted(x):
        nonlocal evals
        evals += 1
        return objective(x)

    swarm = init_swarm(counted, lower, upper, iterations, seed, initial_positions,
                       population, stagnation_k, max_population, improve_tol)
    costs = [swarm.global_best_cost]
    sizes = [swarm.size]
    for _ in range(iterations):
        step_swarm(swarm, counted)
        if manage:
            manage_population(swarm, counted)
        if callback is not None:
            callback(swarm)
        costs.append(swarm.global_best_cost)
        sizes.append(swarm.size)
    return SearchResult(swarm.global_best.copy(), swarm.global_best_cost,
                        np.array(costs), np.array(sizes), evals)


@dataclass
class PSOConfig:
    iterations: int = 50
    stagnation_k: int = 5
    h_bounds: Optional[tuple[float, float]] = None
    seed: Optional[int] = 0
    initial_population: int = 1
    max_population: int = MAX_POPULATION
    improve_tol: float = 1e-3
    truncate: Optional[float] = DEFAULT_TRUNCATION
    # LOOCV mean over at most this many points (all when None)
    eval_points: Optional[int] = None


@dataclass
class BandwidthSearch:
    bandwidth: BandwidthDiag
    result: SearchResult

    @property
    def cost_history(self) -> np.ndarray:
        return self.result.cost_history

    def __iter__(self):
        yield self.bandwidth
        yield self.cost_history


def default_bounds(cloud: PointCloud) -> tuple[float, float]:
    diag = bbox_diagonal(cloud)
    return 1e-3 * diag, diag


def bandwidth_objective(cloud: PointCloud, index: Optional[SpatialIndex] = None,
                        truncate: Optional[float] = DEFAULT_TRUNCATION,
                        eval_index: Optional[np.ndarray] = None) -> Objective:
    """``h -> -L(h)`` over the cloud.

    Values are cached per exact ``h``: a particle sitting on both of its
    attractors does not move, and would otherwise pay for the same sum again.
    """
    if index is None and truncate is not None:
        index = SpatialIndex(cloud)

    @functools.lru_cache(maxsize=None)
    def cached(h):
        return -loocv_log_likelihood(cloud, BandwidthDiag.from_array(h), index, truncate, eval_index)

    def cost(h):
        return cached(tuple(float(x) for x in h))
    return cost


def optimize_bandwidth(cloud: PointCloud, config: Optional[PSOConfig] = None,
                       index: Optional[SpatialIndex] = None) -> BandwidthSearch:
    """Search the diagonal bandwidth maximizing the LOOCV log-likelihood.

    One particle always starts at the rule-of-thumb bandwidth, so the result
    is never worse than that seed.
    """
    config = config or PSOConfig()
    if cloud.n < 2:
        raise ValueError("bandwidth search needs at least two points")
    seed_bw = scott_seed_bandwidth(cloud)
    lo, hi = config.h_bounds if config.h_bounds is not None else default_bounds(cloud)
    if not 0 < lo < hi:
        raise ValueError("invalid bounds: need 0 < h_min < h_max")

    eval_index = None
    if config.eval_points is not None and config.eval_points < cloud.n:
        rng = np.random.default_rng(config.seed)
        eval_index = np.sort(rng.choice(cloud.n, size=config.eval_points, replace=False))
    cost = bandwidth_objective(cloud, index, config.truncate, eval_index)

    result = minimize(
        cost, np.full(3, lo), np.full(3, hi), config.iterations, config.seed,
        initial_positions=[seed_bw.as_array()], population=config.initial_population,
        stagnation_k=config.stagnation_k, max_population=config.max_population,
        improve_tol=config.improve_tol,
    )
    return BandwidthSearch(BandwidthDiag.from_array(result.best_position), result)
