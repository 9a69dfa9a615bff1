"""Quantization-parameter selection.

A rate-constrained differential evolution over integer QP vectors
(q_delta, q_phi, q_theta, q_r), plus the shipped per-rate-point defaults.
"""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .container import Bitstream
from .errors import ConfigurationError, InvalidInputError
from .geometry import pointwise_mse
from .highrate import QP_LIMITS, QpVector, decode_cloud_high, encode_trees_high, round_half_away
from .lowrate import RdConfig, decode_cloud_low, encode_trees_low
from .predtree import TreeSet, build_trees_threshold, tree_cartesian

GENES = ("q_delta", "q_phi", "q_theta", "q_r")
UPPER = np.array([QP_LIMITS[g] for g in GENES], dtype=np.int64)
LOWER = np.ones(len(GENES), dtype=np.int64)
INFEASIBLE = math.inf
LOG_HEADER = ("generation", "best_fitness", "best_rate", "qdelta", "qphi", "qtheta", "qr")

# rate point -> (q_phi, q_theta, q_r or None, mode, lambda for low mode)
TABLE = {
    "r01": (1, 1, None, "low", 0.6),
    "r02": (1, 2, None, "low", 2.2),
    "r03": (2, 2, 12, "high", None),
    "r04": (2, 4, 28, "high", None),
    "r05": (3, 6, 40, "high", None),
    "r06": (4, 12, 81, "high", None),
    "r07": (8, 21, 130, "high", None),
}
RATE_POINTS = tuple(TABLE)


@dataclass(frozen=True)
class RatePoint:
    qp: QpVector
    mode: str
    rd: RdConfig = None


def default_qp(rate_point):
    """Shipped QPs for ``r01`` .. ``r07``; q_delta is always 1."""
    try:
        q_phi, q_theta, q_r, mode, lam = TABLE[rate_point]
    except KeyError:
        raise InvalidInputError(f"unknown rate point {rate_point!r}; expected one of {', '.join(RATE_POINTS)}") from None
    return RatePoint(QpVector(1, q_phi, q_theta, q_r), mode, RdConfig(lam) if lam else None)


@dataclass
class DeConfig:
    population: int = 10
    scale: float = 0.4
    crossover_rate: float = 0.9
    iterations: int = 50
    seed: int = 0
    target_rate: float = math.inf

    def __post_init__(self):
        if self.population < 4:
            raise ConfigurationError("population size must be at least 4")
        if not 0.0 <= self.scale <= 2.0:
            raise ConfigurationError("scale factor must lie in [0, 2]")
        if not 0.0 < self.crossover_rate <= 1.0:
            raise ConfigurationError("crossover rate must lie in (0, 1]")
        if self.iterations < 1:
            raise ConfigurationError("need at least one iteration")


@dataclass
class Individual:
    genes: np.ndarray
    fitness: float = INFEASIBLE
    rate: float = math.nan
    feasible: bool = False

    @property
    def qp(self):
        return QpVector(*(int(g) for g in self.genes))


def genes_of(qp):
    return np.array([qp.q_delta, qp.q_phi, qp.q_theta, qp.q_r], dtype=np.int64)


class FitnessEvaluator:
    """Sum of per-cloud MSE and mean bits per input point for a QP vector.

    In low mode the q_r gene maps to a radius step of 1/q_r metres.
    Results are cached by gene tuple.
    """

    def __init__(self, clouds, mode="high", predictor=None, phi_ar=None, target_rate=math.inf,
                 skip_bias=False, verify_decode=True):
        if mode not in ("high", "low"):
            raise ConfigurationError(f"unknown mode {mode!r}")
        if phi_ar is None or not phi_ar > 0:
            raise ConfigurationError("fitness evaluation needs a positive phi_ar")
        self.trees = [c if isinstance(c, TreeSet) else build_trees_threshold(c) for c in clouds]
        if not self.trees:
            raise InvalidInputError("calibration set is empty")
        self.refs = [np.concatenate([tree_cartesian(t, ts.calib) for t in ts.trees]) for ts in self.trees]
        self.mode = mode
        self.predictor = predictor
        self.phi_ar = float(phi_ar)
        self.target_rate = float(target_rate)
        self.skip_bias = skip_bias
        self.verify_decode = verify_decode
        self._cache = {}

    def _encode(self, ts, qp):
        if self.mode == "high":
            bs, rec = encode_trees_high(ts, qp, self.predictor, self.phi_ar, self.skip_bias)
            decode = lambda b: decode_cloud_high(b, self.predictor)  # noqa: E731
        else:
            low_qp = QpVector(qp.q_delta, qp.q_phi, qp.q_theta, None)
            bs, rec = encode_trees_low(ts, low_qp, self.phi_ar, RdConfig(step=1.0 / qp.q_r), self.skip_bias)
            decode = decode_cloud_low
        data = bs.to_bytes()
        cloud = decode(Bitstream.from_bytes(data)) if self.verify_decode else rec.cartesian(ts.calib)
        return len(data) * 8, cloud

    def measure(self, qp):
        """(fitness, mean rate) ignoring the rate constraint."""
        key = tuple(int(g) for g in genes_of(qp))
        if key not in self._cache:
            fit, rates = 0.0, []
            for ts, ref in zip(self.trees, self.refs):
                bits, cloud = self._encode(ts, qp)
                fit += pointwise_mse(ref, cloud) if ref.shape[0] else 0.0
                rates.append(bits / max(ts.n_points, 1))
            self._cache[key] = (fit, float(np.mean(rates)))
        return self._cache[key]

    def evaluate(self, qp):
        """(fitness, rate, feasible); infeasible vectors get infinite fitness."""
        fit, rate = self.measure(qp)
        if rate <= self.target_rate:
            return fit, rate, True
        return INFEASIBLE, rate, False


def evaluate(ind, ev):
    qp = ind.qp if isinstance(ind, Individual) else ind
    return ev.evaluate(qp)


def _score(ind, ev):
    ind.fitness, ind.rate, ind.feasible = ev.evaluate(ind.qp)
    return ind


def random_genes(rng, n):
    return rng.integers(LOWER, UPPER + 1, size=(n, len(GENES)))


def initialize_population(cfg, rng):
    return [Individual(g) for g in random_genes(rng, cfg.population)]


def clamp(genes):
    return np.clip(genes, LOWER, UPPER)


def mutate(population, j, rng, scale):
    """``q_j + scale * (q_k - q_l)`` with distinct random k, l != j, rounded then clamped."""
    n = len(population)
    if n < 4:
        raise ConfigurationError("mutation needs at least 4 individuals")
    others = [i for i in range(n) if i != j]
    k, l = rng.choice(others, size=2, replace=False)
    g = [p.genes if isinstance(p, Individual) else np.asarray(p) for p in (population[j], population[k], population[l])]
    v = g[0] + scale * (g[1] - g[2]).astype(np.float64)
    return clamp(round_half_away(v))


def crossover(target, mutant, rate, rng):
    """Binomial crossover with one gene forced from the mutant."""
    target = np.asarray(target)
    mutant = np.asarray(mutant)
    take = rng.random(target.shape[0]) < rate
    take[rng.integers(target.shape[0])] = True
    return np.where(take, mutant, target)


def select(target, trial):
    if trial.feasible and trial.fitness < target.fitness:
        return trial
    return target


@dataclass
class DeResult:
    best: Individual = None
    log: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.best is not None

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            w.writerows(self.log)


def _better(a, b):
    if a is None:
        return b.feasible
    return b.feasible and b.fitness < a.fitness


def run_de(ev, cfg, workers=1):
    """Differential evolution; returns the best feasible individual ever seen.

    ``workers`` > 1 scores each generation's trials concurrently; all random
    draws happen before scoring, so results do not depend on it.
    """
    rng = np.random.default_rng(cfg.seed)
    saved_target = ev.target_rate
    ev.target_rate = cfg.target_rate
    try:
        pop = _score_all(initialize_population(cfg, rng), ev, workers)
        best = None
        result = DeResult()
        for gen in range(cfg.iterations + 1):
            if gen:
                trials = [
                    Individual(crossover(pop[j].genes, mutate(pop, j, rng, cfg.scale), cfg.crossover_rate, rng))
                    for j in range(len(pop))
                ]
                trials = _score_all(trials, ev, workers)
                pop = [select(t, u) for t, u in zip(pop, trials)]
            for ind in pop:
                if _better(best, ind):
                    best = Individual(ind.genes.copy(), ind.fitness, ind.rate, ind.feasible)
            row = [gen, best.fitness if best else INFEASIBLE, best.rate if best else math.nan]
            row += [int(g) for g in best.genes] if best else [0, 0, 0, 0]
            result.log.append(row)
        result.best = best
        return result
    finally:
        ev.target_rate = saved_target


def _score_all(individuals, ev, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: _score(i, ev), individuals))
    return [_score(i, ev) for i in individuals]
