import numpy as np
import pytest

from oracles import grid_loocv
from pcdenoise.geometry import PointCloud, scott_seed_bandwidth
from pcdenoise.kde import loocv_log_likelihood
from pcdenoise.pso import (
    MAX_POPULATION,
    PSOConfig,
    default_bounds,
    init_swarm,
    learning_rates,
    manage_population,
    minimize,
    optimize_bandwidth,
    step_swarm,
)

CENTRE = np.array([0.3, -1.2, 2.0])
WEIGHTS = np.array([1.0, 3.0, 0.5])


def quadratic(x):
    return float(np.sum(WEIGHTS * (x - CENTRE) ** 2))


LO, HI = np.full(3, -5.0), np.full(3, 5.0)


def test_learning_rate_schedule():
    assert learning_rates(0, 50) == (2.5, 0.5)
    assert learning_rates(50, 50) == (0.5, 2.5)
    cc, cs = learning_rates(25, 50)
    assert cc == pytest.approx(1.5) and cs == pytest.approx(1.5)


def test_single_particle_one_iteration_stays():
    start = np.array([1.0, 1.0, 1.0])
    r = minimize(quadratic, LO, HI, iterations=1, seed=0, initial_positions=[start])
    np.testing.assert_array_equal(r.best_position, start)


def test_single_particle_quadratic():
    r = minimize(quadratic, LO, HI, iterations=200, seed=0)
    assert r.best_cost < 1e-3


def test_single_particle_quadratic_success_rate():
    # a lone particle only explores through the population manager; most runs converge
    costs = [minimize(quadratic, LO, HI, iterations=200, seed=s).best_cost for s in range(50)]
    assert np.mean(np.array(costs) < 1e-3) >= 0.75


def test_fixed_swarm_health():
    hits = 0
    for s in range(100):
        r = minimize(quadratic, LO, HI, iterations=500, seed=s, population=30, manage=False)
        hits += r.best_cost < 1e-6
    assert hits >= 95


def test_best_cost_monotone_and_population_bounds():
    sizes = []

    def watch(swarm):
        sizes.append(swarm.size)
        assert 1 <= swarm.size <= MAX_POPULATION

    r = minimize(quadratic, LO, HI, iterations=300, seed=3, callback=watch)
    assert np.all(np.diff(r.cost_history) <= 0)
    assert len(r.cost_history) == 301 and len(sizes) == 300


def test_deterministic():
    a = minimize(quadratic, LO, HI, iterations=60, seed=11)
    b = minimize(quadratic, LO, HI, iterations=60, seed=11)
    np.testing.assert_array_equal(a.cost_history, b.cost_history)
    np.testing.assert_array_equal(a.best_position, b.best_position)
    np.testing.assert_array_equal(a.population_history, b.population_history)


def test_positions_respect_bounds():
    def check(swarm):
        for p in swarm.particles:
            assert np.all(p.position >= swarm.lower) and np.all(p.position <= swarm.upper)

    # optimum outside the box pushes particles onto the bounds
    minimize(lambda x: float(np.sum((x - 20.0) ** 2)), LO, HI, iterations=50, seed=2, population=5,
             callback=check)


def flat(_x):
    return 1.0


def test_stagnation_grows_by_one_per_window():
    k = 5
    s = init_swarm(flat, LO, HI, max_iterations=1000, seed=0, stagnation_k=k)
    sizes = []
    for _ in range(k * 50):
        step_swarm(s, flat)
        manage_population(s, flat)
        sizes.append(s.size)
    sizes = np.array(sizes)
    # +1 at the end of every k-iteration window until the cap
    expected = np.minimum(1 + (np.arange(1, len(sizes) + 1) // k), MAX_POPULATION)
    np.testing.assert_array_equal(sizes, expected)


def test_full_swarm_replaces_worst():
    def decreasing_then_flat(x):
        return 5.0

    s = init_swarm(flat, LO, HI, max_iterations=100, seed=1, population=MAX_POPULATION)
    for i, p in enumerate(s.particles):
        p.best_cost = float(i)  # the last particle is the worst
    worst = s.particles[-1]
    s.window = [False] * s.stagnation_k
    manage_population(s, decreasing_then_flat)
    assert s.size == MAX_POPULATION
    assert worst not in s.particles
    assert s.particles[-1].best_cost == 5.0
    np.testing.assert_array_equal(s.particles[-1].velocity, 0.0)


def test_newcomer_is_convex_combination():
    s = init_swarm(flat, LO, HI, max_iterations=100, seed=4, population=2)
    a, b = s.particles[0].best_position, s.particles[1].best_position
    s.window = [False] * s.stagnation_k
    manage_population(s, flat)
    new = s.particles[-1].position
    lam = (new - b) / (a - b)
    assert np.allclose(lam, lam[0]) and 0 <= lam[0] <= 1


def test_improving_window_never_drops_below_one():
    s = init_swarm(quadratic, LO, HI, max_iterations=100, seed=0)
    s.window = [True] * s.stagnation_k
    manage_population(s, quadratic)
    assert s.size == 1


def test_improving_window_shrinks():
    s = init_swarm(quadratic, LO, HI, max_iterations=100, seed=0, population=4)
    worst = max(s.particles, key=lambda p: p.best_cost)
    s.window = [True, True, False, False, False]
    manage_population(s, quadratic)
    assert s.size == 3 and worst not in s.particles


def test_single_improvement_leaves_swarm():
    s = init_swarm(quadratic, LO, HI, max_iterations=100, seed=0, population=4)
    s.window = [True, False, False, False, False]
    manage_population(s, quadratic)
    assert s.size == 4


def test_global_best_survives_removal():
    s = init_swarm(quadratic, LO, HI, max_iterations=100, seed=0, population=3)
    best = s.global_best.copy()
    s.particles.sort(key=lambda p: -p.best_cost)  # best particle last
    s.particles[-1].best_cost = 1e9  # and make it the "worst"
    s.window = [True] * s.stagnation_k
    manage_population(s, quadratic)
    np.testing.assert_array_equal(s.global_best, best)


def test_cost_history_csv(tmp_path):
    r = minimize(quadratic, LO, HI, iterations=5, seed=0)
    path = tmp_path / "trace.csv"
    r.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,best_cost,population_size"
    assert len(lines) == 7


def gaussian_cloud(seed=0, n=300):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, 3)) * [1.0, 0.5, 2.0])


def test_bandwidth_never_worse_than_seed():
    c = gaussian_cloud()
    bw, trace = optimize_bandwidth(c, PSOConfig(iterations=15, seed=0))
    assert loocv_log_likelihood(c, bw) >= loocv_log_likelihood(c, scott_seed_bandwidth(c))
    assert trace[0] == pytest.approx(-loocv_log_likelihood(c, scott_seed_bandwidth(c)))


def test_bandwidth_deterministic():
    c = gaussian_cloud(1)
    a = optimize_bandwidth(c, PSOConfig(iterations=10, seed=5))
    b = optimize_bandwidth(c, PSOConfig(iterations=10, seed=5))
    assert a.bandwidth == b.bandwidth
    np.testing.assert_array_equal(a.cost_history, b.cost_history)


def test_bandwidth_follows_axis_scale():
    bw, _ = optimize_bandwidth(gaussian_cloud(2, 500), PSOConfig(iterations=30, seed=0))
    assert bw.h2 < bw.h1 < bw.h3


def test_bad_bounds():
    with pytest.raises(ValueError, match="invalid bounds"):
        optimize_bandwidth(gaussian_cloud(), PSOConfig(h_bounds=(1.0, 0.5)))


def test_eval_subset_is_seeded():
    c = gaussian_cloud(3, 400)
    cfg = PSOConfig(iterations=5, seed=9, eval_points=100)
    a, b = optimize_bandwidth(c, cfg), optimize_bandwidth(c, cfg)
    assert a.bandwidth == b.bandwidth


def test_particle_at_both_bests_stays():
    s = init_swarm(quadratic, LO, HI, max_iterations=10, seed=0, initial_positions=[CENTRE])
    p = s.particles[0]
    step_swarm(s, quadratic)
    np.testing.assert_array_equal(p.position, CENTRE)


def test_two_cluster_bandwidth_near_grid_optimum():
    rng = np.random.default_rng(12)
    pts = np.vstack([rng.normal(scale=0.05, size=(100, 3)), rng.normal(scale=0.05, size=(100, 3)) + [1, 0, 0]])
    c = PointCloud(pts)
    lo, hi = default_bounds(c)
    grid = np.geomspace(lo, hi, 64)
    L = grid_loocv(pts, grid)
    best = grid[list(np.unravel_index(np.argmax(L), L.shape))]
    bw, _ = optimize_bandwidth(c, PSOConfig(seed=0))
    assert bw.as_array().mean() == pytest.approx(best.mean(), rel=0.25)
