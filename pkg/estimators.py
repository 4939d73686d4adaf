"""
estimators.py - Monte Carlo experiments over independent environment replications

Each replication draws one environment from a seed derived from
(master_seed, rep), runs exact per-environment computations, and the
replications are aggregated in rep order so results do not depend on the
number of worker threads.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic.alias_generators import to_camel
from scipy.stats import linregress

from analytic import AnnealedParams, log_expected_n, phi, phi_root
from errors import DomainError, ValidationError
from exact_counting import (
    DEFAULT_MEMORY_BUDGET,
    build_count_layers,
    build_max_layers,
    count_n,
    interchange_family,
    max_weight_path,
    max_weight_profile,
    threshold,
    weight_threshold,
)
from lattice_core import Environment, derive_seed, straight_path
from shared_config import CODE_VERSION

logger = logging.getLogger(__name__)

Z_95 = 1.96
SCALING_MAX_RELATIVE_HALF_WIDTH = 0.10
ZERO_MARGIN_FRACTION = 0.05
MARKOV_EXCESS_FRACTION = 0.05
CSV_HEADER = ["n", "alpha", "statistic", "mean", "stdev", "stderr", "ciLow", "ciHigh", "zeroFraction", "reps"]

EnvFactory = Callable[[int], Environment]
T = TypeVar("T")


class CamelModel(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True)


class ExperimentConfig(CamelModel):
    params: AnnealedParams
    n: Optional[int] = Field(default=None, ge=0)
    n_grid: Optional[List[int]] = None
    alpha: Optional[float] = None
    alpha_grid: Optional[List[float]] = None
    reps: int = Field(default=1, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    backend: str = "log"
    memory_budget: int = Field(default=DEFAULT_MEMORY_BUDGET, gt=0)
    threads: int = Field(default=1, ge=1)
    b: float = Field(default=1.0, gt=0.0)

    def lengths(self) -> List[int]:
        lengths = list(self.n_grid) if self.n_grid else ([self.n] if self.n is not None else [])
        if not lengths:
            raise ValidationError("No path length given: set n or n_grid")
        if any(n < 1 for n in lengths):
            raise ValidationError(f"Path lengths must be positive, got {lengths}")
        if len(set(lengths)) != len(lengths):
            raise ValidationError(f"Duplicate path lengths in grid {lengths}")
        return lengths

    def alphas(self) -> List[float]:
        alphas = list(self.alpha_grid) if self.alpha_grid else ([self.alpha] if self.alpha is not None else [])
        if not alphas:
            raise ValidationError("No threshold given: set alpha or alpha_grid")
        return alphas

    def environment(self, rep: int) -> Environment:
        return Environment(
            seed=derive_seed(self.master_seed, rep),
            p=self.params.p,
            mode=self.params.graph,
            b=self.b,
            n_max=max(self.lengths()),
        )


class Aggregates(CamelModel):
    mean: float
    stdev: float
    stderr: float
    ci_low: float
    ci_high: float
    count: int

    @classmethod
    def from_values(cls, values: Sequence[Optional[float]]) -> "Aggregates":
        """Mean, sample standard deviation and a normal 95% interval over the finite values"""
        data = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=float)
        if not data.size:
            return cls(mean=math.nan, stdev=math.nan, stderr=math.nan, ci_low=math.nan, ci_high=math.nan, count=0)
        mean = float(data.mean())
        stdev = float(data.std(ddof=1)) if data.size > 1 else 0.0
        return cls.from_estimate(mean, stdev / math.sqrt(data.size), int(data.size), stdev)

    @classmethod
    def from_estimate(cls, mean: float, stderr: float, count: int, stdev: Optional[float] = None) -> "Aggregates":
        half = Z_95 * stderr
        return cls(
            mean=mean,
            stdev=stderr * math.sqrt(count) if stdev is None else stdev,
            stderr=stderr,
            ci_low=mean - half,
            ci_high=mean + half,
            count=count,
        )

    @property
    def half_width(self) -> float:
        return self.ci_high - self.mean


class ResultRow(CamelModel):
    n: int
    alpha: Optional[float] = None
    statistic: str
    aggregates: Aggregates
    zero_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    reps: int
    per_rep: List[Optional[float]] = Field(default_factory=list)

    def csv_row(self) -> List[Any]:
        a = self.aggregates
        return [self.n, "" if self.alpha is None else self.alpha, self.statistic, a.mean, a.stdev, a.stderr, a.ci_low, a.ci_high, self.zero_fraction, self.reps]


class ExperimentResult(CamelModel):
    experiment: str
    config: ExperimentConfig
    per_rep: List[Dict[str, Any]]
    rows: List[ResultRow]
    aggregates: Aggregates
    zero_fraction: float = 0.0
    extras: Dict[str, Any] = Field(default_factory=dict)
    wall_clock: float = 0.0
    code_version: str = CODE_VERSION

    def row(self, statistic: str, n: Optional[int] = None, alpha: Optional[float] = None) -> ResultRow:
        for row in self.rows:
            if row.statistic == statistic and (n is None or row.n == n) and (alpha is None or row.alpha == alpha):
                return row
        raise KeyError(f"No row {statistic} at n={n}, alpha={alpha}")

    def csv_rows(self) -> List[List[Any]]:
        return [row.csv_row() for row in self.rows]


class ScalingFit(CamelModel):
    p_grid: List[float]
    m_hat: List[float]
    ci_half_width: List[float]
    used: List[bool]
    gamma: float
    gamma_stderr: float
    gamma_ci_low: float
    gamma_ci_high: float
    intercept: float
    residuals: List[float]
    expected_gamma: Optional[float] = None


def run_replications(config: ExperimentConfig, task: Callable[[int, Environment], T], env_factory: Optional[EnvFactory] = None) -> List[T]:
    """
    Run task(rep, env) for every replication, results ordered by rep

    Args:
        config: Experiment configuration (reps, threads)
        task: Per-replication computation
        env_factory: Environment of replication rep; defaults to config.environment

    Returns:
        List: One task result per replication
    """
    factory = env_factory or config.environment

    def job(rep: int) -> T:
        result = task(rep, factory(rep))
        logger.debug(f"Replication {rep + 1}/{config.reps} done")
        return result

    if config.threads == 1:
        return [job(rep) for rep in range(config.reps)]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        return list(pool.map(job, range(config.reps)))


def _row(n: int, alpha: Optional[float], statistic: str, values: Sequence[Optional[float]], zero_fraction: float = 0.0) -> ResultRow:
    return ResultRow(
        n=n,
        alpha=alpha,
        statistic=statistic,
        aggregates=Aggregates.from_values(values),
        zero_fraction=zero_fraction,
        reps=len(values),
        per_rep=[None if v is None or not math.isfinite(v) else float(v) for v in values],
    )


def _finish(name: str, config: ExperimentConfig, per_rep: List[Dict[str, Any]], rows: List[ResultRow], started: float, extras: Optional[Dict[str, Any]] = None) -> ExperimentResult:
    headline = rows[0]
    result = ExperimentResult(
        experiment=name,
        config=config,
        per_rep=per_rep,
        rows=rows,
        aggregates=headline.aggregates,
        zero_fraction=headline.zero_fraction,
        extras=extras or {},
        wall_clock=time.perf_counter() - started,
    )
    logger.info(
        f"{name}: {config.reps} replications in {result.wall_clock:.2f}s, "
        f"{headline.statistic} mean {headline.aggregates.mean:.6g}, zero fraction {headline.zero_fraction:.3f}"
    )
    return result


def _rep_record(rep: int, env: Environment, **values) -> Dict[str, Any]:
    return {"rep": rep, "seed": env.seed, **values}


def estimate_m(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> ExperimentResult:
    """
    max_weight(n)/n per replication, with the straight-path weight/n as a baseline

    Rows are reported for every n of the grid so that the sequence of means can
    be read for convergence; the headline is the largest n.
    """
    started = time.perf_counter()
    lengths = config.lengths()
    n_max = max(lengths)
    line = straight_path(n_max, config.params.graph).spatial_array(config.params.graph)[1:]

    def task(rep: int, env: Environment) -> Dict[str, Any]:
        profile = max_weight_profile(env, n_max, config.memory_budget)
        straight = np.concatenate([[0], np.cumsum(env.good_bits(np.arange(1, n_max + 1), line))])
        return _rep_record(
            rep,
            env,
            m_over_n=[int(profile[n]) / n for n in lengths],
            straight_over_n=[int(straight[n]) / n for n in lengths],
        )

    per_rep = run_replications(config, task, env_factory)
    order = sorted(range(len(lengths)), key=lambda i: -lengths[i])
    rows = [_row(lengths[i], None, "M_n/n", [r["m_over_n"][i] for r in per_rep]) for i in order]
    rows += [_row(lengths[i], None, "straight/n", [r["straight_over_n"][i] for r in per_rep]) for i in order]
    by_n = sorted(lengths)
    means = [next(row for row in rows if row.n == n and row.statistic == "M_n/n").aggregates.mean for n in by_n]
    baseline = [next(row for row in rows if row.n == n and row.statistic == "straight/n").aggregates.mean for n in by_n]
    extras = {
        "nSequence": by_n,
        "meanSequence": means,
        "dominatesStraightPath": all(m >= s for m, s in zip(means, baseline)),
    }
    return _finish("estimate_m", config, per_rep, rows, started, extras)


def _saturation(lengths: Sequence[int], alphas: Sequence[float]) -> int:
    return max(weight_threshold(alpha, n) for n in lengths for alpha in alphas if alpha <= 1.0)


def collect_log_counts(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> Tuple[List[Dict[str, Any]], np.ndarray]:
    """
    log N_n(alpha) for every replication, n and alpha from one DP per replication

    Returns:
        Tuple[List[Dict], np.ndarray]: Per-rep seed records and an array of shape
            (reps, len(lengths), len(alphas)) holding -inf where N_n(alpha) = 0
    """
    lengths = config.lengths()
    alphas = config.alphas()
    for alpha in alphas:
        threshold(alpha, 1)
    n_max = max(lengths)
    cap = _saturation(lengths, alphas)

    def task(rep: int, env: Environment) -> Tuple[Dict[str, Any], np.ndarray]:
        layers = build_count_layers(env, n_max, backend=config.backend, keep_levels=lengths, saturate_at=cap, memory_budget=config.memory_budget)
        logs = np.array([[count_n(layers, n, alpha).log_value for alpha in alphas] for n in lengths])
        return _rep_record(rep, env), logs

    results = run_replications(config, task, env_factory)
    return [record for record, _ in results], np.stack([logs for _, logs in results])


def estimate_lambda(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> ExperimentResult:
    """
    N_n(alpha)^(1/n) per replication (0 when N_n = 0) and (1/n) log N_n over the nonzero replications

    Both statistics are kept because near M(p) zero events are not yet rare at
    finite n; zeroFraction is reported next to them.
    """
    started = time.perf_counter()
    lengths = config.lengths()
    alphas = config.alphas()
    per_rep, logs = collect_log_counts(config, env_factory)
    rows = []
    for i, n in sorted(enumerate(lengths), key=lambda item: -item[1]):
        for j, alpha in enumerate(alphas):
            column = logs[:, i, j]
            zero = float(np.mean(column == -np.inf))
            rows.append(_row(n, alpha, "lambda", [math.exp(v / n) if v > -np.inf else 0.0 for v in column], zero))
            rows.append(_row(n, alpha, "log_rate_nonzero", [v / n if v > -np.inf else None for v in column], zero))
    for record, rep_logs in zip(per_rep, logs):
        record["log_counts"] = [[None if v == -np.inf else float(v) for v in by_alpha] for by_alpha in rep_logs]
    return _finish("estimate_lambda", config, per_rep, rows, started)


def lambda_profile(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> ExperimentResult:
    """
    Quenched curve alpha -> N_n(alpha)^(1/n) over an alpha grid, next to the annealed phi

    Also checks that counts never increase with alpha and reports how often the
    quenched value exceeds phi(alpha) + 0.05 outDegree.
    """
    result = estimate_lambda(config, env_factory)
    lengths = config.lengths()
    alphas = config.alphas()
    n = max(lengths)
    i = lengths.index(n)
    degree = config.params.out_degree
    logs = np.array([[-np.inf if v is None else v for v in r["log_counts"][i]] for r in result.per_rep], dtype=float)
    order = np.argsort(alphas)
    monotone = bool(np.all(np.diff(logs[:, order], axis=1) <= 1e-9))
    exceedance = {}
    for j, alpha in enumerate(alphas):
        roots = np.where(logs[:, j] > -np.inf, np.exp(logs[:, j] / n), 0.0)
        exceedance[str(alpha)] = float(np.mean(roots > phi(alpha, config.params) + MARKOV_EXCESS_FRACTION * degree))
    result.experiment = "lambda_profile"
    result.extras = {
        "n": n,
        "alphas": alphas,
        "phi": [phi(alpha, config.params) for alpha in alphas],
        "lambdaMean": [result.row("lambda", n, alpha).aggregates.mean for alpha in alphas],
        "monotoneInAlpha": monotone,
        "markovExceedance": exceedance,
        "treeRoot": phi_root(config.params).alpha,
    }
    return result


def prob_n_zero(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None, margin_fraction: float = ZERO_MARGIN_FRACTION) -> ExperimentResult:
    """
    Empirical P{N_t(alpha) = 0} over a grid of t, with a log-linear decay fit

    N_t(alpha) = 0 exactly when max_weight(t) < ceil(alpha t), so one max-weight
    sweep per replication answers every t. alpha may exceed 1 here.
    """
    started = time.perf_counter()
    lengths = config.lengths()
    alpha = config.alphas()[0]
    if alpha < 0:
        raise DomainError(f"alpha must be non-negative, got {alpha}")
    t_max = max(lengths)

    def task(rep: int, env: Environment) -> Dict[str, Any]:
        profile = max_weight_profile(env, t_max, config.memory_budget)
        return _rep_record(
            rep,
            env,
            zero=[bool(profile[t] < weight_threshold(alpha, t)) for t in lengths],
            m_over_n=int(profile[t_max]) / t_max,
        )

    per_rep = run_replications(config, task, env_factory)
    reps = len(per_rep)
    rows = []
    frequencies = []
    for i, t in enumerate(lengths):
        hits = [1.0 if r["zero"][i] else 0.0 for r in per_rep]
        freq = sum(hits) / reps
        frequencies.append(freq)
        stderr = math.sqrt(freq * (1.0 - freq) / reps)
        rows.append(ResultRow(
            n=t, alpha=alpha, statistic="P(N=0)",
            aggregates=Aggregates.from_estimate(freq, stderr, reps),
            zero_fraction=freq, reps=reps, per_rep=hits,
        ))

    m_hat = float(np.mean([r["m_over_n"] for r in per_rep]))
    below_margin = alpha < m_hat - margin_fraction * m_hat
    points = [(t, f) for t, f in zip(lengths, frequencies) if f > 0]
    slope = slope_stderr = None
    if len(points) >= 2 and len({t for t, _ in points}) >= 2:
        fit = linregress([t for t, _ in points], [math.log(f) for _, f in points])
        slope, slope_stderr = float(fit.slope), float(fit.stderr)
    ordered = [f for _, f in sorted(zip(lengths, frequencies))]
    extras = {
        "frequencies": frequencies,
        "slope": slope,
        "slopeStderr": slope_stderr,
        "mHat": m_hat,
        "belowMargin": below_margin,
        "strictlyDecreasing": all(a > b for a, b in zip(ordered, ordered[1:])),
        "decayConfirmed": bool(below_margin and slope is not None and slope < 0),
    }
    if below_margin and slope is not None and slope >= 0:
        logger.warning(f"alpha={alpha} is below M-hat={m_hat:.4f} minus margin but the fitted slope {slope:.4g} is not negative")
    return _finish("prob_n_zero", config, per_rep, rows, started, extras)


def ratio_of_moments(log_counts: np.ndarray) -> Tuple[float, float]:
    """
    E N^2 / (E N)^2 and its delta-method standard error from log counts

    Counts are rescaled by their maximum first, which leaves the ratio unchanged
    and keeps every number in [0, 1].
    """
    log_counts = np.asarray(log_counts, dtype=float)
    reps = log_counts.size
    if not np.isfinite(log_counts).any():
        return math.nan, math.nan
    y = np.exp(log_counts - log_counts[np.isfinite(log_counts)].max())
    m1 = float(y.mean())
    m2 = float((y * y).mean())
    ratio = m2 / (m1 * m1)
    if reps < 2:
        return ratio, math.nan
    cov = np.cov(np.vstack([y, y * y]), ddof=1)
    var_x, cov_x_x2, var_x2 = cov[0, 0], cov[0, 1], cov[1, 1]
    gradient = np.array([-2.0 * m2 / m1 ** 3, 1.0 / m1 ** 2])
    variance = gradient @ np.array([[var_x, cov_x_x2], [cov_x_x2, var_x2]]) @ gradient / reps
    return ratio, math.sqrt(max(float(variance), 0.0))


def second_moment_ratio(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> ExperimentResult:
    """Empirical E N_n^2 / (E N_n)^2 for every n and alpha, both moments from the same replications"""
    started = time.perf_counter()
    lengths = config.lengths()
    alphas = config.alphas()
    if any(alpha < config.params.p for alpha in alphas):
        logger.warning(f"second_moment_ratio is meant for alpha >= p={config.params.p}; got {alphas}")
    per_rep, logs = collect_log_counts(config, env_factory)
    reps = len(per_rep)
    rows = []
    for i, n in sorted(enumerate(lengths), key=lambda item: -item[1]):
        for j, alpha in enumerate(alphas):
            ratio, stderr = ratio_of_moments(logs[:, i, j])
            rows.append(ResultRow(
                n=n, alpha=alpha, statistic="second_moment_ratio",
                aggregates=Aggregates.from_estimate(ratio, stderr, reps),
                zero_fraction=float(np.mean(logs[:, i, j] == -np.inf)), reps=reps,
            ))
    for record, rep_logs in zip(per_rep, logs):
        record["log_counts"] = [[None if v == -np.inf else float(v) for v in by_alpha] for by_alpha in rep_logs]
    return _finish("second_moment_ratio", config, per_rep, rows, started)


def annealed_mean_check(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None) -> ExperimentResult:
    """Mean of N_n(alpha) / E N_n(alpha) across replications; its z-score against 1"""
    started = time.perf_counter()
    lengths = config.lengths()
    alphas = config.alphas()
    per_rep, logs = collect_log_counts(config, env_factory)
    rows = []
    z_scores = {}
    for i, n in sorted(enumerate(lengths), key=lambda item: -item[1]):
        for j, alpha in enumerate(alphas):
            expected = log_expected_n(n, alpha, config.params)
            column = logs[:, i, j]
            values = [math.exp(v - expected) if v > -np.inf else 0.0 for v in column]
            row = _row(n, alpha, "N/EN", values, float(np.mean(column == -np.inf)))
            rows.append(row)
            stderr = row.aggregates.stderr
            z_scores[f"n={n},alpha={alpha}"] = (row.aggregates.mean - 1.0) / stderr if stderr > 0 else 0.0
    return _finish("annealed_mean_check", config, per_rep, rows, started, {"zScores": z_scores})


def markov_check(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None, factors: Sequence[float] = (10.0, 100.0)) -> ExperimentResult:
    """Fraction of replications with N_n > K E N_n, compared with Markov's bound 1/K"""
    started = time.perf_counter()
    lengths = config.lengths()
    alphas = config.alphas()
    per_rep, logs = collect_log_counts(config, env_factory)
    reps = len(per_rep)
    rows = []
    checks = {}
    for i, n in sorted(enumerate(lengths), key=lambda item: -item[1]):
        for j, alpha in enumerate(alphas):
            expected = log_expected_n(n, alpha, config.params)
            for factor in factors:
                hits = [1.0 if v > expected + math.log(factor) else 0.0 for v in logs[:, i, j]]
                fraction = sum(hits) / reps
                bound = 1.0 / factor
                rows.append(_row(n, alpha, f"P(N>{factor:g}EN)", hits))
                checks[f"n={n},alpha={alpha},K={factor:g}"] = fraction <= bound + 3.0 * math.sqrt(bound * (1.0 - bound) / reps)
    return _finish("markov_check", config, per_rep, rows, started, {"withinMarkovBound": checks})


def fit_scaling(p_grid: Sequence[float], m_hat: Sequence[float], half_widths: Sequence[float], expected_gamma: Optional[float] = None) -> ScalingFit:
    """
    Least-squares fit log M-hat = gamma log p + c over points with CI half-width below 10% of M-hat

    Args:
        p_grid: Values of p
        m_hat: Estimated M(p)
        half_widths: 95% CI half-widths of m_hat
        expected_gamma: Reference exponent stored with the fit

    Returns:
        ScalingFit: Fitted exponent with its CI and residuals of the used points
    """
    used = [m > 0 and h < SCALING_MAX_RELATIVE_HALF_WIDTH * m for m, h in zip(m_hat, half_widths)]
    xs = [math.log(p) for p, keep in zip(p_grid, used) if keep]
    ys = [math.log(m) for m, keep in zip(m_hat, used) if keep]
    if len(set(xs)) < 2:
        raise ValidationError(f"Scaling fit needs at least two usable p values, got {sum(used)}")
    fit = linregress(xs, ys)
    gamma_stderr = float(fit.stderr) if len(xs) > 2 else 0.0
    residuals = [y - (fit.slope * x + fit.intercept) for x, y in zip(xs, ys)]
    return ScalingFit(
        p_grid=list(p_grid),
        m_hat=list(m_hat),
        ci_half_width=list(half_widths),
        used=used,
        gamma=float(fit.slope),
        gamma_stderr=gamma_stderr,
        gamma_ci_low=float(fit.slope) - Z_95 * gamma_stderr,
        gamma_ci_high=float(fit.slope) + Z_95 * gamma_stderr,
        intercept=float(fit.intercept),
        residuals=residuals,
        expected_gamma=expected_gamma,
    )


def scaling_fit(p_grid: Sequence[float], template: ExperimentConfig) -> Tuple[ScalingFit, List[ExperimentResult]]:
    """Run estimate_m for every p of the grid and fit M(p) ~ p^gamma"""
    results = []
    for p in p_grid:
        if p > 0.2:
            logger.warning(f"p={p} is outside the small-p regime (0, 0.2]")
        params = AnnealedParams.of(p, template.params.d, template.params.mode)
        results.append(estimate_m(template.model_copy(update={"params": params})))
    m_hat = [r.aggregates.mean for r in results]
    half_widths = [r.aggregates.half_width for r in results]
    fit = fit_scaling(p_grid, m_hat, half_widths, expected_gamma=1.0 / (template.params.d + 1))
    logger.info(f"Scaling fit over {sum(fit.used)} of {len(p_grid)} points: gamma = {fit.gamma:.4f} +/- {Z_95 * fit.gamma_stderr:.4f}")
    return fit, results


def lambda_above_one_probe(config: ExperimentConfig, env_factory: Optional[EnvFactory] = None, sample_size: int = 64) -> ExperimentResult:
    """
    Interchange lower bound versus exact counts

    Per replication: the maximal-weight path, its interchange family of
    2^|selected| paths of weight >= W - |selected|, and the exact count at that
    reduced threshold, which must be at least the family size. Reports the
    fraction of replications with N_n(alpha)^(1/n) > 1.
    """
    started = time.perf_counter()
    n = max(config.lengths())
    alpha = config.alphas()[0]
    threshold(alpha, n)

    def task(rep: int, env: Environment) -> Dict[str, Any]:
        history = build_max_layers(env, n, memory_budget=config.memory_budget)
        path = max_weight_path(env, history)
        report, _ = interchange_family(env, path, sample_size, seed=env.seed)
        layer = build_count_layers(env, n, backend=config.backend, keep_levels=[n], memory_budget=config.memory_budget)[-1]
        count = count_n([layer], n, alpha)
        reduced = layer.count_at_least(max(report.weight_floor, 0))
        selected = len(report.selected_positions)
        return _rep_record(
            rep,
            env,
            max_weight=report.base_weight,
            selected=selected,
            bound_holds=reduced.at_least_power_of_two(selected),
            degenerate=report.degenerate,
            lambda_n=count.root(n),
            violations=report.violations,
        )

    per_rep = run_replications(config, task, env_factory)
    rows = [
        _row(n, alpha, "lambda", [r["lambda_n"] for r in per_rep], float(np.mean([r["lambda_n"] == 0.0 for r in per_rep]))),
        _row(n, alpha, "above_one", [1.0 if r["lambda_n"] > 1.0 else 0.0 for r in per_rep]),
        _row(n, alpha, "selected", [float(r["selected"]) for r in per_rep]),
    ]
    extras = {
        "fractionAboveOne": rows[1].aggregates.mean,
        "allBoundsHold": all(r["bound_holds"] for r in per_rep),
        "degenerateReps": sum(1 for r in per_rep if r["degenerate"]),
        "violations": [v for r in per_rep for v in r["violations"]],
    }
    return _finish("lambda_above_one_probe", config, per_rep, rows, started, extras)
