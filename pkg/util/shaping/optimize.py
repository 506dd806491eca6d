#!/usr/bin/env python3

## Box-constrained genetic algorithm and the two design problems it solves:
## where to put the added masses, and which piecewise-linear spring best
## matches the ideal characteristic.

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from lib import ConfigError, InfeasibleProblem, ZdshapeError
from shaping.dynamics import MassParams
from shaping.spring import SpringParams, SpringBounds, eval_spring


@dataclass(frozen=True)
class GAConfig:
    """Genetic algorithm settings.

    Attributes:
        population (int): individuals per generation
        generations (int): generations per restart
        tournament (int): contestants per parent selection
        crossover_rate (float): probability of a blend crossover
        blend (float): BLX extension beyond the parents on each side
        mutation_rate (float): per-gene mutation probability
        mutation_scale (float): Gaussian sigma as a fraction of the box width
        anneal (float): mutation scale left at the last generation, as a
            fraction of the initial one
        elites (int): best individuals copied unchanged
        penalty (float): constraint penalty, in units of the problem scale
        seed (int): root seed
        restarts (int): independent runs, best one kept
        workers (int): threads evaluating the fitness
    """
    population: int = 200
    generations: int = 300
    tournament: int = 4
    crossover_rate: float = 0.9
    blend: float = 0.5
    mutation_rate: float = 0.1
    mutation_scale: float = 0.05
    anneal: float = 0.1
    elites: int = 2
    penalty: float = 1e3
    seed: int = 0
    restarts: int = 4
    workers: int = 1

    def __post_init__(self):
        for name in ('population', 'generations', 'tournament', 'restarts', 'workers'):
            if getattr(self, name) < 1:
                raise ConfigError(f"ga.{name}: must be positive, got {getattr(self, name)}")
        for name in ('crossover_rate', 'mutation_rate', 'anneal'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"ga.{name}: must be in [0, 1], got {getattr(self, name)}")
        if not 0 <= self.elites < self.population:
            raise ConfigError(f"ga.elites: must be in [0, population), got {self.elites}")

    @classmethod
    def from_dict(cls, block, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = set(block) - known
        if unknown:
            raise ConfigError(f"ga: unknown keys {sorted(unknown)}")
        values = {**block, **{k: v for k, v in overrides.items() if v is not None}}
        return cls(**values)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class GAResult:
    best: np.ndarray
    value: float
    telemetry: pd.DataFrame


def rms(values):
    """Root mean square of a sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("rms of an empty sample")
    return float(np.sqrt(np.mean(values ** 2)))


def _evaluate(fitness, population, executor):
    if executor is None:
        values = [fitness(x) for x in population]
    else:
        values = list(executor.map(fitness, population))
    values = np.asarray(values, dtype=float)
    values[~np.isfinite(values)] = np.inf
    return values


def _tournament(values, size, rng):
    contestants = rng.integers(0, len(values), size=size)
    return contestants[np.argmin(values[contestants])]


def _run(fitness, lower, upper, cfg, rng, injected, executor, restart):
    width = upper - lower
    dim = len(lower)
    population = lower + rng.random((cfg.population, dim)) * width
    for i, point in enumerate(injected[:cfg.population]):
        population[i] = np.clip(point, lower, upper)
    values = _evaluate(fitness, population, executor)

    rows = []
    best_index = int(np.argmin(values))
    best, best_value = population[best_index].copy(), values[best_index]
    for generation in range(cfg.generations):
        finite = values[np.isfinite(values)]
        rows.append({'restart': restart, 'generation': generation, 'best': best_value,
                     'mean': float(np.mean(finite)) if finite.size else np.inf})
        logging.debug(f"GA restart {restart} generation {generation}: best {best_value:.6g}")
        if generation == cfg.generations - 1:
            break

        progress = generation / max(cfg.generations - 2, 1)
        sigma = cfg.mutation_scale * width * (1 - (1 - cfg.anneal) * progress)
        order = np.argsort(values, kind='stable')
        children = [population[i].copy() for i in order[:cfg.elites]]
        child_values = [values[i] for i in order[:cfg.elites]]
        while len(children) < cfg.population:
            first = population[_tournament(values, cfg.tournament, rng)]
            second = population[_tournament(values, cfg.tournament, rng)]
            if rng.random() < cfg.crossover_rate:
                u = rng.uniform(-cfg.blend, 1 + cfg.blend, size=dim)
                child = first + u * (second - first)
            else:
                child = first.copy()
            mutate = rng.random(dim) < cfg.mutation_rate
            child = child + mutate * rng.normal(0.0, 1.0, size=dim) * sigma
            children.append(np.clip(child, lower, upper))
            child_values.append(None)

        population = np.array(children)
        fresh = [i for i, v in enumerate(child_values) if v is None]
        new_values = _evaluate(fitness, population[fresh], executor)
        values = np.array([v if v is not None else 0.0 for v in child_values])
        values[fresh] = new_values

        index = int(np.argmin(values))
        if values[index] < best_value:
            best, best_value = population[index].copy(), values[index]
    return best, float(best_value), rows


def ga_minimize(fitness, lower, upper, cfg, injected=()):
    """Minimize `fitness` over the box [lower, upper].

    Runs cfg.restarts independent populations, each seeded from a child of
    SeedSequence(cfg.seed), and keeps the best point. Random numbers are only
    drawn on the calling thread, so results do not depend on cfg.workers.

    Args:
        fitness (callable): vector -> float, pure; non-finite counts as +inf
        lower, upper (array): box bounds
        cfg (GAConfig): settings
        injected (list): points placed in every initial population

    Return:
        GAResult with the telemetry frame (restart, generation, best, mean);
        'best' is the best value found so far in that restart
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper < lower):
        raise ValueError(f"empty box: lower {lower.tolist()} upper {upper.tolist()}")
    injected = [np.asarray(p, dtype=float) for p in injected]
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)

    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        best, best_value, telemetry = None, np.inf, []
        for restart, stream in enumerate(streams):
            point, value, rows = _run(fitness, lower, upper, cfg, np.random.default_rng(stream),
                                      injected, executor, restart)
            telemetry.extend(rows)
            logging.info(f"GA restart {restart}: best {value:.6g}")
            if best is None or value < best_value:
                best, best_value = point, value
    finally:
        if executor is not None:
            executor.shutdown()
    return GAResult(best, best_value, pd.DataFrame(telemetry, columns=['restart', 'generation', 'best', 'mean']))


@dataclass
class MassOptResult:
    p_m: MassParams
    rms: float
    baseline_rms: float
    sigma_star: object
    center: object
    telemetry: pd.DataFrame
    evaluation: object

    @property
    def reduction(self):
        """Relative RMS reduction against the design without added masses."""
        return 1 - self.rms / self.baseline_rms if self.baseline_rms else 0.0


def mass_fitness(reference_slice, penalty):
    """Fitness of a flat (m_a3, m_a4, delta3, delta4) vector: RMS of the
    linearizing torque, plus `penalty` when the ideal zero dynamics has no
    center and twice that when the design cannot be evaluated."""
    def fitness(x):
        try:
            evaluation = reference_slice.evaluate(MassParams.from_array(x))
        except ZdshapeError:
            return 2 * penalty
        value = rms(evaluation.nu)
        if not evaluation.feasible:
            value += penalty
        return value
    return fitness


def optimize_mass(reference_slice, lower, upper, cfg):
    """Search the added-mass box for the lowest RMS torque with a center.

    The design without added masses is evaluated first; its RMS sets the
    penalty scale and it is injected into every initial population.

    Raises:
        InfeasibleProblem: no candidate with a centered equilibrium found
    """
    baseline = reference_slice.evaluate(MassParams())
    baseline_rms = rms(baseline.nu)
    penalty = cfg.penalty * (baseline_rms if baseline_rms > 0 else 1.0)
    logging.info(f"Baseline RMS torque {baseline_rms:.6g} N m (center: {baseline.feasible})")

    result = ga_minimize(mass_fitness(reference_slice, penalty), lower, upper, cfg,
                         injected=[np.zeros(4)])
    if result.value >= penalty:
        raise InfeasibleProblem(f"no added-mass design with a centered equilibrium "
                                f"in [{lower.tolist()}, {upper.tolist()}]")
    p_m = MassParams.from_array(result.best)
    evaluation = reference_slice.evaluate(p_m)
    optimized = rms(evaluation.nu)
    logging.info(f"Optimized RMS torque {optimized:.6g} N m with {p_m}")
    return MassOptResult(p_m, optimized, baseline_rms, evaluation.sigma_table(), evaluation.center,
                         result.telemetry, evaluation)


@dataclass
class SpringFitResult:
    p_s: SpringParams
    mismatch: float
    residuals: pd.DataFrame
    telemetry: pd.DataFrame

    @property
    def n(self):
        return self.p_s.n


def fit_linear_spring(theta, torque, bounds):
    """Closed-form least-squares fit of k0 (theta - theta0), projected on the
    search box."""
    theta = np.asarray(theta, dtype=float)
    torque = np.asarray(torque, dtype=float)
    if theta.size > 1 and np.ptp(theta) > 0:
        slope, intercept = np.polyfit(theta, torque, 1)
    else:
        slope, intercept = 0.0, float(np.mean(torque))
    slope = float(np.clip(slope, 0.0, bounds.k_max))
    t0_lo, t0_hi = bounds.theta0_range
    if slope == 0:
        return SpringParams(0.0, 0.5 * (bounds.theta_min + bounds.theta_max))
    theta0 = float(np.mean(theta - torque / slope))
    return SpringParams(slope, float(np.clip(theta0, t0_lo, t0_hi)))


def spring_residuals(p_s, table):
    fitted = eval_spring(p_s, table.theta)
    return pd.DataFrame({'theta': table.theta, 'sigma_star': table.torque,
                         'fitted': fitted, 'residual': fitted - table.torque})


def polish_spring(x, theta, target, lower, upper):
    """Bounded least-squares refinement of a GA spring vector. The GA point
    is returned when the refinement does not lower the mismatch."""
    def residual(y):
        return eval_spring(SpringParams.from_array(y), theta) - target

    start = np.clip(x, lower, upper)
    refined = least_squares(residual, start, bounds=(lower, upper))
    if np.mean(refined.fun ** 2) < np.mean(residual(start) ** 2):
        return refined.x
    return start


def optimize_spring(table, n, cfg, k_max=10.0, warm_start=None):
    """Fit an n-pair spring to a tabulated ideal characteristic.

    The objective is the mean square torque mismatch at the table knots.
    n = 0 is solved in closed form. A lower-order warm start is embedded
    with zero extra slopes and injected into every initial population, and
    the GA result is refined by bounded least squares.
    """
    if len(table) == 0:
        raise ValueError("empty spring table")
    theta, target = table.theta, table.torque
    bounds = SpringBounds(k_max, float(theta[0]), float(theta[-1]))

    if n == 0:
        p_s = fit_linear_spring(theta, target, bounds)
        telemetry = pd.DataFrame(columns=['restart', 'generation', 'best', 'mean'])
    else:
        def fitness(x):
            residual = eval_spring(SpringParams.from_array(x), theta) - target
            return float(np.mean(residual ** 2))

        lower, upper = bounds.box(n)
        injected = []
        if warm_start is not None:
            middle = 0.5 * (bounds.theta_min + bounds.theta_max)
            injected.append(warm_start.nested(n, threshold=middle).as_array())
        result = ga_minimize(fitness, lower, upper, cfg, injected=injected)
        p_s = SpringParams.from_array(polish_spring(result.best, theta, target, lower, upper))
        telemetry = result.telemetry

    residuals = spring_residuals(p_s, table)
    mismatch = float(np.mean(residuals['residual'] ** 2))
    logging.info(f"Spring fit n={n}: mean square mismatch {mismatch:.6g} (N m)^2")
    return SpringFitResult(p_s, mismatch, residuals, telemetry)


def fit_spring_orders(table, orders, cfg, k_max=10.0):
    """Fit every order in increasing n, each warm-started from the previous."""
    results = {}
    previous = None
    for n in sorted(orders):
        result = optimize_spring(table, n, cfg, k_max, warm_start=previous)
        results[n] = result
        previous = result.p_s
    return results
