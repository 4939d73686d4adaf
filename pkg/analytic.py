"""
analytic.py - Annealed growth rates, binomial tails and the collision probability

Everything that is averaged over environments rather than computed per
environment lives here. Probability arithmetic is done in natural-log space.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError
from pydantic.alias_generators import to_camel
from scipy.optimize import bisect
from scipy.special import logsumexp
from scipy.stats import binom

from errors import DomainError, ResourceLimitError, ValidationError
from exact_counting import DEFAULT_MEMORY_BUDGET, THRESHOLD_TOLERANCE, threshold
from lattice_core import GraphKind, GraphMode

logger = logging.getLogger(__name__)

PHI_ROOT_XTOL = 1e-12
MC_CHUNK = 10_000
DEFAULT_HORIZON = 1000
DEFAULT_RHO_T = 100


class AnnealedParams(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True, frozen=True)

    p: float = Field(gt=0.0, lt=1.0)
    d: int = Field(ge=1)
    mode: GraphKind = GraphKind.SEMI

    @classmethod
    def of(cls, p: float, d: int, mode: str = "semi") -> "AnnealedParams":
        """Build params, reporting bad values as DomainError"""
        try:
            return cls(p=p, d=d, mode=GraphKind(mode))
        except (PydanticValidationError, ValueError) as e:
            raise DomainError(f"Invalid annealed parameters p={p}, d={d}, mode={mode}: {e}") from e

    @property
    def graph(self) -> GraphMode:
        return GraphMode(GraphKind(self.mode), self.d)

    @property
    def out_degree(self) -> int:
        return self.graph.out_degree


class RhoEstimate(BaseModel):
    """Collision probability of two independent walks: exact-by-T bound plus a Monte Carlo estimate"""

    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True)

    lower_bound: float
    point_estimate: float
    t: int = Field(alias="T")
    mc_samples: int
    mc_horizon: int
    mc_late_meetings: int = 0
    mc_stderr: float = 0.0
    lower_bound_curve: List[float] = Field(default_factory=list)


class PhiRoot(BaseModel):
    model_config = ConfigDict(alias_generator=to_camel, populate_by_name=True)

    alpha: float
    phi_at_root: float
    boundary: Optional[str] = None


def phi(alpha: float, params: AnnealedParams) -> float:
    """
    Annealed growth rate lim (E N_n(alpha))^(1/n)

    Args:
        alpha: Threshold density in [0, 1]
        params: Annealed parameters

    Returns:
        float: outDegree for alpha <= p, outDegree * p at alpha = 1, the large-deviation
            rate outDegree (p/alpha)^alpha ((1-p)/(1-alpha))^(1-alpha) in between
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    degree = params.out_degree
    p = params.p
    if alpha <= p:
        return float(degree)
    if alpha == 1.0:
        return degree * p
    log_value = (
        math.log(degree)
        + alpha * (math.log(p) - math.log(alpha))
        + (1.0 - alpha) * (math.log1p(-p) - math.log1p(-alpha))
    )
    return math.exp(log_value)


def log_binomial_tail(n: int, kmin: int, p: float) -> float:
    """log P{Bin(n, p) >= kmin}; 0 for kmin <= 0 and -inf for kmin > n"""
    if n < 0:
        raise ValidationError(f"n must be non-negative, got {n}")
    if kmin <= 0:
        return 0.0
    if kmin > n:
        return -math.inf
    ks = np.arange(kmin, n + 1)
    return min(0.0, float(logsumexp(binom.logpmf(ks, n, p))))


def log_expected_n(n: int, alpha: float, params: AnnealedParams) -> float:
    """log E N_n(alpha) = n log(outDegree) + log P{Bin(n, p) >= ceil(alpha n)}"""
    if n < 0:
        raise ValidationError(f"n must be non-negative, got {n}")
    return n * math.log(params.out_degree) + log_binomial_tail(n, threshold(alpha, n), params.p)


def alpha_one(params: AnnealedParams) -> float:
    """Small-p heuristic log(outDegree) / log(1/p) for the density where N_n stops growing"""
    if params.p >= 1.0 or params.p <= 0.0:
        raise DomainError(f"alpha_one needs 0 < p < 1, got {params.p}")
    return math.log(params.out_degree) / math.log(1.0 / params.p)


def phi_root(params: AnnealedParams) -> PhiRoot:
    """
    The alpha in [p, 1] with phi(alpha) = 1, i.e. M on the regular tree of the same degree

    phi is continuous and strictly decreasing on [p, 1] with phi(p) = outDegree > 1,
    so bisection converges whenever phi(1) < 1. Otherwise alpha = 1 is returned
    with a boundary flag.
    """
    end_value = phi(1.0, params)
    if end_value >= 1.0:
        return PhiRoot(alpha=1.0, phi_at_root=end_value, boundary="phi(1) >= 1: no crossing below alpha = 1")
    root = bisect(lambda a: phi(a, params) - 1.0, params.p, 1.0, xtol=PHI_ROOT_XTOL)
    return PhiRoot(alpha=float(root), phi_at_root=phi(float(root), params))


def phi_curve_rows(alphas: Sequence[float], params: AnnealedParams, n_values: Sequence[int] = ()) -> List[List[float]]:
    """Rows alpha, phi, then (E N_n)^(1/n) for each requested n"""
    rows = []
    for alpha in alphas:
        row = [float(alpha), phi(alpha, params)]
        for n in n_values:
            row.append(math.exp(log_expected_n(n, alpha, params) / n) if n > 0 else 1.0)
        rows.append(row)
    return rows


def difference_steps(mode: GraphMode) -> Tuple[np.ndarray, np.ndarray]:
    """Distribution of the difference of two independent uniform steps"""
    displacements = mode.displacements()
    deltas = (displacements[:, None, :] - displacements[None, :, :]).reshape(-1, mode.d)
    unique, counts = np.unique(deltas, axis=0, return_counts=True)
    return unique, counts / len(deltas)


def _axis_slices(shift: int, size: int) -> Tuple[slice, slice]:
    if shift >= 0:
        return slice(shift, size), slice(0, size - shift)
    return slice(0, size + shift), slice(-shift, size)


def meeting_table_bytes(d: int, T: int) -> int:
    """Bytes of the two difference-walk arrays on the box [-T, T]^d"""
    return 2 * 8 * (2 * T + 1) ** d


def largest_exact_t(d: int, memory_budget: int = DEFAULT_MEMORY_BUDGET, cap: int = DEFAULT_RHO_T) -> int:
    """
    Largest truncation level T <= cap whose exact meeting curve fits the budget

    Returns:
        int: T >= 1; raises ResourceLimitError when even T = 1 does not fit
    """
    if meeting_table_bytes(d, 1) > memory_budget:
        raise ResourceLimitError(
            f"Difference-walk distribution in d={d} does not fit the budget of {memory_budget} bytes even at T=1",
            level=1,
            required_bytes=meeting_table_bytes(d, 1),
            budget_bytes=memory_budget,
        )
    low, high = 1, max(cap, 1)
    while low < high:
        mid = (low + high + 1) // 2
        if meeting_table_bytes(d, mid) <= memory_budget:
            low = mid
        else:
            high = mid - 1
    return low


def meeting_curve(params: AnnealedParams, T: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """
    P{the two walks meet at some time 1..t} for t = 1..T, exactly

    The difference walk is propagated on the box [-T, T]^d with mass at 0 removed
    after every step; mass leaving the box cannot come back to 0 by time T.
    """
    if T < 1:
        raise ValidationError(f"T must be at least 1, got {T}")
    mode = params.graph
    size = 2 * T + 1
    required = meeting_table_bytes(mode.d, T)
    if required > memory_budget:
        logger.error(f"Difference-walk table for T={T}, d={mode.d} needs {required} bytes")
        raise ResourceLimitError(
            f"Difference-walk distribution at T={T} needs {required} bytes, above the budget of {memory_budget}",
            level=T,
            required_bytes=required,
            budget_bytes=memory_budget,
        )

    deltas, probs = difference_steps(mode)
    moves = []
    for delta, prob in zip(deltas, probs):
        pairs = [_axis_slices(int(s), size) for s in delta]
        moves.append((tuple(dst for dst, _ in pairs), tuple(src for _, src in pairs), float(prob)))

    center = (T,) * mode.d
    dist = np.zeros((size,) * mode.d)
    dist[center] = 1.0
    curve = np.empty(T)
    met = 0.0
    for t in range(1, T + 1):
        nxt = np.zeros_like(dist)
        for dst, src, prob in moves:
            nxt[dst] += prob * dist[src]
        met += nxt[center]
        nxt[center] = 0.0
        curve[t - 1] = met
        dist = nxt
    return np.minimum(curve, 1.0)


def _first_meetings(deltas: np.ndarray, probs: np.ndarray, samples: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """First time 1..horizon the difference walk hits 0, or 0 if it does not"""
    times = np.zeros(samples, dtype=np.int64)
    alive = np.arange(samples)
    position = np.zeros((samples, deltas.shape[1]), dtype=np.int64)
    for t in range(1, horizon + 1):
        if not alive.size:
            break
        position += deltas[rng.choice(len(probs), size=alive.size, p=probs)]
        met = ~position.any(axis=1)
        times[alive[met]] = t
        alive = alive[~met]
        position = position[~met]
    return times


def collision_rho(
    params: AnnealedParams,
    T: int,
    mc_samples: int,
    horizon: int = DEFAULT_HORIZON,
    seed: int = 0,
    threads: int = 1,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> RhoEstimate:
    """
    Probability that two independent oriented walks from the origin ever share a vertex

    Args:
        params: Annealed parameters (only d and the mode matter)
        T: Truncation level of the exact computation
        mc_samples: Monte Carlo walk pairs used for meetings after time T
        horizon: Last time the Monte Carlo walks are followed
        seed: Seed of the Monte Carlo streams
        threads: Worker threads; the result does not depend on it
        memory_budget: Bytes allowed for the exact table

    Returns:
        RhoEstimate: lower_bound exact up to T, point_estimate adds the late meetings seen by Monte Carlo
    """
    curve = meeting_curve(params, T, memory_budget)
    lower = float(curve[-1])
    if mc_samples <= 0 or horizon <= T:
        return RhoEstimate(lower_bound=lower, point_estimate=lower, T=T, mc_samples=0, mc_horizon=T, lower_bound_curve=curve.tolist())

    deltas, probs = difference_steps(params.graph)
    sizes = [min(MC_CHUNK, mc_samples - start) for start in range(0, mc_samples, MC_CHUNK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run_chunk(job: Tuple[int, np.random.SeedSequence]) -> np.ndarray:
        size, stream = job
        return _first_meetings(deltas, probs, size, horizon, np.random.Generator(np.random.Philox(stream)))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        times = np.concatenate(list(pool.map(run_chunk, zip(sizes, streams))))

    late = int(np.count_nonzero(times > T))
    fraction = late / mc_samples
    stderr = math.sqrt(fraction * (1.0 - fraction) / mc_samples)
    logger.debug(f"rho: exact part {lower:.6f} up to T={T}, {late}/{mc_samples} late meetings up to {horizon}")
    return RhoEstimate(
        lower_bound=lower,
        point_estimate=min(1.0, lower + fraction),
        T=T,
        mc_samples=mc_samples,
        mc_horizon=horizon,
        mc_late_meetings=late,
        mc_stderr=stderr,
        lower_bound_curve=curve.tolist(),
    )


def second_moment_sum(n: int, alpha: float, beta: float, rho: float, params: AnnealedParams) -> float:
    """
    sum_{1 <= k <= beta n} rho^k P{Bin(n-k, p) >= alpha n - k} / P{Bin(n, p) >= alpha n}

    Args:
        n: Path length
        alpha: Threshold density in [0, 1]
        beta: Fraction of n covered by the sum, in (0, 1]
        rho: Collision probability in [0, 1)
        params: Annealed parameters

    Returns:
        float: The truncated sum
    """
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    kmin = threshold(alpha, n)
    if rho == 0.0:
        return 0.0
    base = log_binomial_tail(n, kmin, params.p)
    last = math.floor(beta * n + THRESHOLD_TOLERANCE)
    terms = [
        k * math.log(rho) + log_binomial_tail(n - k, max(0, kmin - k), params.p) - base
        for k in range(1, last + 1)
    ]
    if not terms:
        return 0.0
    return float(np.exp(logsumexp(terms)))
