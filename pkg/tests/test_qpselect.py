import csv
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from lidarpcc.errors import ConfigurationError, InvalidInputError
from lidarpcc.highrate import QpVector
from lidarpcc.qpselect import (
    INFEASIBLE,
    LOG_HEADER,
    LOWER,
    RATE_POINTS,
    UPPER,
    DeConfig,
    FitnessEvaluator,
    Individual,
    crossover,
    default_qp,
    evaluate,
    genes_of,
    initialize_population,
    mutate,
    random_genes,
    run_de,
    select,
)


def _ring(n, seed):
    rng = np.random.default_rng(seed)
    phi = np.radians(np.sort(rng.uniform(-170, 170, n)))
    r = rng.uniform(5, 30, n)
    z = r * np.tan(np.radians(rng.uniform(-3, 3, n)))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


@pytest.fixture(scope="module")
def toy():
    return FitnessEvaluator([_ring(20, 0)], phi_ar=1.0)


def test_table_defaults():
    assert RATE_POINTS == ("r01", "r02", "r03", "r04", "r05", "r06", "r07")
    p = default_qp("r03")
    assert (p.qp.q_phi, p.qp.q_theta, p.qp.q_r, p.mode) == (2, 2, 12, "high")
    p = default_qp("r07")
    assert (p.qp.q_phi, p.qp.q_theta, p.qp.q_r, p.mode) == (8, 21, 130, "high")
    p = default_qp("r01")
    assert (p.qp.q_phi, p.qp.q_theta, p.qp.q_r, p.mode) == (1, 1, None, "low")
    assert all(default_qp(k).qp.q_delta == 1 for k in RATE_POINTS)
    with pytest.raises(InvalidInputError):
        default_qp("r08")


def test_finest_vector_dominates_on_two_points():
    # coarser grids whose steps divide into the finest ones are nested in them
    rng = np.random.default_rng(0)
    for seed in range(10):
        ev = FitnessEvaluator([_ring(2, seed)], phi_ar=1.0)
        finest, _ = ev.measure(QpVector(256, 16, 256, 256))
        for _ in range(20):
            e = rng.integers(0, [9, 5, 9, 9])
            fit, _ = ev.measure(QpVector(*(int(2**k) for k in e)))
            assert finest <= fit + 1e-15


def test_zero_target_is_infeasible(toy):
    old = toy.target_rate
    toy.target_rate = 0.0
    try:
        fit, rate, feasible = evaluate(QpVector(1, 1, 1, 1), toy)
        assert fit == INFEASIBLE and not feasible and rate > 0
    finally:
        toy.target_rate = old


def test_cache_is_stable(toy):
    a = toy.evaluate(QpVector(3, 4, 5, 6))
    b = toy.evaluate(QpVector(3, 4, 5, 6))
    assert a == b
    fresh = FitnessEvaluator([_ring(20, 0)], phi_ar=1.0)
    assert fresh.evaluate(QpVector(3, 4, 5, 6)) == a


def test_evaluator_checks():
    with pytest.raises(ConfigurationError):
        FitnessEvaluator([_ring(5, 0)], mode="medium", phi_ar=1.0)
    with pytest.raises(ConfigurationError):
        FitnessEvaluator([_ring(5, 0)])
    with pytest.raises(InvalidInputError):
        FitnessEvaluator([], phi_ar=1.0)


def test_low_mode_evaluator():
    ev = FitnessEvaluator([_ring(50, 2)], mode="low", phi_ar=1.0)
    coarse, _ = ev.measure(QpVector(1, 1, 1, 1))
    fine, _ = ev.measure(QpVector(1, 16, 256, 256))
    assert fine < coarse


def test_initial_population_bounds_and_seed():
    g = random_genes(np.random.default_rng(0), 10_000)
    assert np.all((g >= LOWER) & (g <= UPPER))
    a = initialize_population(DeConfig(seed=4), np.random.default_rng(4))
    b = initialize_population(DeConfig(seed=4), np.random.default_rng(4))
    assert all(np.array_equal(x.genes, y.genes) for x, y in zip(a, b))


def test_initial_genes_uniform():
    g = random_genes(np.random.default_rng(1), 100_000)
    for j in range(4):
        counts = np.bincount(g[:, j], minlength=UPPER[j] + 1)[1:]
        assert chisquare(counts).pvalue > 0.01


def test_mutation_examples():
    pop = [Individual(np.array(v)) for v in ([5, 5, 5, 5], [9, 9, 9, 9], [9, 9, 9, 9], [9, 9, 9, 9])]
    assert mutate(pop, 0, np.random.default_rng(0), 0.4).tolist() == [5, 5, 5, 5]
    pop = [np.array([1, 12, 1, 1]), np.array([1, 80, 1, 1]), np.array([1, 10, 1, 1]), np.array([1, 10, 1, 1])]
    for seed in range(20):
        v = mutate(pop, 0, np.random.default_rng(seed), 0.4)
        assert v[1] <= 16


def test_mutation_scale():
    rng = np.random.default_rng(2)
    pop = [Individual(g) for g in random_genes(rng, 10)]
    disp = {}
    for mu in (0.2, 0.4, 0.8):
        r = np.random.default_rng(3)
        d = []
        for _ in range(10_000):
            j = int(r.integers(10))
            v = mutate(pop, j, r, mu)
            assert np.all((v >= LOWER) & (v <= UPPER))
            d.append(np.abs(v - pop[j].genes).sum())
        disp[mu] = np.mean(d)
    assert disp[0.4] / disp[0.2] == pytest.approx(2.0, rel=0.15)
    assert disp[0.8] / disp[0.4] == pytest.approx(2.0, rel=0.15)


def test_crossover_examples():
    rng = np.random.default_rng(0)
    t, m = np.array([1, 2, 3, 4]), np.array([9, 9, 9, 9])
    assert crossover(t, m, 1.0, rng).tolist() == [9, 9, 9, 9]
    assert crossover(t, t.copy(), 0.5, rng).tolist() == [1, 2, 3, 4]
    for _ in range(10_000):
        assert int((crossover(t, m, 0.0, rng) != t).sum()) == 1


def test_selection_rules():
    target = Individual(np.ones(4, int), 1.0, 2.0, True)
    assert select(target, Individual(np.ones(4, int), INFEASIBLE, 9.0, False)) is target
    assert select(target, Individual(np.ones(4, int), 0.1, 9.0, False)) is target
    better = Individual(np.ones(4, int), 0.5, 1.0, True)
    assert select(target, better) is better
    worse = Individual(np.ones(4, int), 1.5, 1.0, True)
    assert select(target, worse) is target
    dead = Individual(np.ones(4, int), INFEASIBLE, 9.0, False)
    assert select(dead, better) is better


def test_config_checks():
    for kw in ({"population": 3}, {"scale": 3.0}, {"crossover_rate": 0.0}, {"iterations": 0}):
        with pytest.raises(ConfigurationError):
            DeConfig(**kw)


def test_run_de_reaches_the_fine_corner(toy, tmp_path):
    res = run_de(toy, DeConfig(iterations=50, seed=1))
    corner, _ = toy.measure(QpVector(256, 16, 256, 256))
    assert res.feasible
    assert res.best.fitness <= corner * 1.05
    fits = [row[1] for row in res.log]
    assert len(res.log) == 51
    assert all(a >= b for a, b in zip(fits, fits[1:]))
    path = tmp_path / "log.csv"
    res.write_log(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == LOG_HEADER and len(rows) == 52


def test_run_de_reproducible(toy):
    cfg = DeConfig(iterations=5, seed=7, target_rate=30.0)
    a, b = run_de(toy, cfg), run_de(toy, cfg)
    assert a.log == b.log
    c = run_de(toy, cfg, workers=3)
    assert c.log == a.log


def test_run_de_infeasible(toy):
    res = run_de(toy, DeConfig(iterations=2, target_rate=0.0))
    assert not res.feasible
    assert all(math.isinf(row[1]) for row in res.log)
    assert toy.target_rate == math.inf


def test_genes_round_trip():
    qp = QpVector(3, 4, 5, 6)
    assert Individual(genes_of(qp)).qp == qp
