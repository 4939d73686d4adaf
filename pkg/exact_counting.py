"""
exact_counting.py - Exact per-environment path counting by transfer matrix

Layers are sparse: one row per reachable endpoint (int64 keys sorted in
lexicographic order of the spatial coordinates) and a dense vector over the
weight k. Each level is built by pulling from the in-neighbors of every
endpoint, then shifting the k-axis by one at good sites. A brute-force
enumeration oracle and the step-interchange construction live here as well.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import CoordinateBoundsError, DomainError, OracleCapError, ResourceLimitError, ValidationError
from lattice_core import Environment, GraphMode, PathRecord, Step, Vertex, derive_seed, path_weight

logger = logging.getLogger(__name__)

EXACT_BIT_BUDGET = 4096
INT64_BIT_BUDGET = 62
DEFAULT_MEMORY_BUDGET = 2 * 1024 ** 3
DEFAULT_ORACLE_CAP = 10 ** 7
THRESHOLD_TOLERANCE = 1e-9
ORACLE_CHUNK = 1 << 16


class CountBackend(str, Enum):
    EXACT = "exact"
    LOG = "log"


def resolve_backend(requested: str, n: int, out_degree: int) -> CountBackend:
    """
    Pick the count backend for paths of length n

    Args:
        requested: 'exact', 'log' or 'auto'
        n: Path length
        out_degree: Out-degree of the lattice

    Returns:
        CountBackend: EXACT within the per-entry bit budget, LOG beyond it for 'auto'
    """
    bits = n * math.log2(out_degree)
    if requested == "auto":
        return CountBackend.EXACT if bits <= EXACT_BIT_BUDGET else CountBackend.LOG
    try:
        backend = CountBackend(requested)
    except ValueError:
        raise ValidationError(f"Unknown backend {requested!r}; expected exact, log or auto")
    if backend == CountBackend.EXACT and bits > EXACT_BIT_BUDGET:
        raise ResourceLimitError(
            f"Exact counts at n={n} need {bits:.0f} bits per entry, above the {EXACT_BIT_BUDGET}-bit budget; use --backend log",
            level=n,
        )
    return backend


def weight_threshold(alpha: float, n: int) -> int:
    """Smallest integer k with k >= alpha*n (inclusive when alpha*n is integral)"""
    return max(0, math.ceil(alpha * n - THRESHOLD_TOLERANCE))


def threshold(alpha: float, n: int) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    return weight_threshold(alpha, n)


def _exact_dtype(n: int, out_degree: int):
    return np.int64 if n * math.log2(out_degree) <= INT64_BIT_BUDGET else object


def entry_bytes(backend: CountBackend, n: int, out_degree: int) -> int:
    """Approximate storage of one table entry"""
    if backend == CountBackend.LOG:
        return 8
    bits = n * math.log2(out_degree)
    if bits <= INT64_BIT_BUDGET:
        return 8
    # pointer plus a CPython int of ceil(bits/30) digits
    return 8 + 28 + 4 * math.ceil(bits / 30)


def estimate_peak_bytes(mode: GraphMode, n: int, backend: CountBackend, saturate_at: Optional[int] = None) -> int:
    """Peak bytes of two consecutive count layers at the widest level"""
    columns = n + 1 if saturate_at is None else min(n, saturate_at) + 1
    per_row = columns * entry_bytes(backend, n, mode.out_degree) + 8
    return per_row * (mode.reachable_count(n) + mode.reachable_count(max(n - 1, 0)))


@dataclass(frozen=True)
class PathCount:
    """A path count, exact when available, always with its natural log"""

    log_value: float
    exact: Optional[int] = None

    @classmethod
    def from_exact(cls, value: int) -> "PathCount":
        value = int(value)
        return cls(math.log(value) if value > 0 else -math.inf, value)

    @classmethod
    def from_log(cls, log_value: float) -> "PathCount":
        return cls(float(log_value), None)

    @property
    def is_zero(self) -> bool:
        return self.exact == 0 if self.exact is not None else self.log_value == -math.inf

    @property
    def log10(self) -> float:
        return self.log_value / math.log(10)

    def root(self, n: int) -> float:
        """N^(1/n), 0 when N = 0"""
        if self.is_zero:
            return 0.0
        if n == 0:
            return math.exp(self.log_value)
        return math.exp(self.log_value / n)

    def at_least_power_of_two(self, m: int) -> bool:
        """Whether N >= 2^m"""
        if self.exact is not None:
            return self.exact >= 2 ** m
        return self.log_value >= m * math.log(2) - 1e-9 * max(1, m)

    def __int__(self) -> int:
        if self.exact is None:
            raise TypeError("Log-space counts have no exact integer value")
        return self.exact


@dataclass(frozen=True)
class EndpointCodec:
    """Packs spatial coordinates in [-radius, radius]^d into int64 keys ordered lexicographically"""

    d: int
    radius: int

    def __post_init__(self):
        if self.base ** self.d >= 2 ** 62:
            raise CoordinateBoundsError(f"Cannot key {self.d}-dimensional endpoints of radius {self.radius} in 64 bits")

    @property
    def base(self) -> int:
        return 2 * self.radius + 1

    def encode(self, spatial: np.ndarray) -> np.ndarray:
        spatial = np.asarray(spatial, dtype=np.int64).reshape(-1, self.d)
        keys = np.zeros(spatial.shape[0], dtype=np.int64)
        for axis in range(self.d):
            keys = keys * self.base + (spatial[:, axis] + self.radius)
        return keys

    def decode(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64).copy()
        spatial = np.empty((keys.shape[0], self.d), dtype=np.int64)
        for axis in reversed(range(self.d)):
            spatial[:, axis] = keys % self.base - self.radius
            keys //= self.base
        return spatial

    def key_shift(self, displacement: Sequence[int]) -> int:
        shift = 0
        for delta in displacement:
            shift = shift * self.base + int(delta)
        return shift


@dataclass
class CountLayer:
    level: int
    mode: GraphMode
    codec: EndpointCodec
    keys: np.ndarray
    table: np.ndarray
    backend: CountBackend
    saturate_at: Optional[int] = None

    @property
    def columns(self) -> int:
        return self.table.shape[1]

    @property
    def zero(self):
        return 0 if self.backend == CountBackend.EXACT else -math.inf

    def freeze(self) -> "CountLayer":
        self.keys.setflags(write=False)
        self.table.setflags(write=False)
        return self

    def endpoints(self) -> np.ndarray:
        return self.codec.decode(self.keys)

    def row_of(self, vertex: Vertex) -> Optional[int]:
        if vertex.level != self.level or len(vertex.spatial) != self.mode.d:
            return None
        if any(abs(x) > self.codec.radius for x in vertex.spatial):
            return None
        key = self.codec.encode(np.array([vertex.spatial]))[0]
        row = int(np.searchsorted(self.keys, key))
        if row < len(self.keys) and self.keys[row] == key:
            return row
        return None

    def column(self, vertex: Vertex) -> List:
        """Counts by weight k for one endpoint (all zero when unreachable)"""
        row = self.row_of(vertex)
        if row is None:
            return [self.zero] * self.columns
        return [_scalar(value) for value in self.table[row]]

    def entries(self) -> Dict[Vertex, List]:
        """Sparse view: endpoint -> counts by weight k, nonzero endpoints only"""
        nonzero = self._nonzero_rows()
        spatial = self.endpoints()
        return {
            Vertex(tuple(spatial[row]), self.level): [_scalar(value) for value in self.table[row]]
            for row in np.flatnonzero(nonzero)
        }

    def _nonzero_rows(self) -> np.ndarray:
        if self.backend == CountBackend.EXACT:
            return np.asarray(self.table != 0).any(axis=1)
        return np.isfinite(self.table).any(axis=1)

    def nonzero_endpoint_count(self) -> int:
        return int(self._nonzero_rows().sum())

    def count_at_least(self, k: int, rows: Optional[np.ndarray] = None) -> PathCount:
        """Number of paths ending at this level with weight >= k"""
        if self.saturate_at is not None and k > self.saturate_at:
            raise ValidationError(f"Layer saturates at weight {self.saturate_at}; cannot count weight >= {k}")
        table = self.table if rows is None else self.table[rows]
        if k >= self.columns:
            return PathCount.from_exact(0) if self.backend == CountBackend.EXACT else PathCount.from_log(-math.inf)
        tail = table[:, max(k, 0):]
        if self.backend == CountBackend.EXACT:
            return PathCount.from_exact(int(tail.sum()) if tail.size else 0)
        if not tail.size or not np.isfinite(tail).any():
            return PathCount.from_log(-math.inf)
        return PathCount.from_log(float(logsumexp(tail[np.isfinite(tail)])))

    def total(self) -> PathCount:
        return self.count_at_least(0)

    def is_conserved(self) -> bool:
        """Total equals outDegree^level; log tables within a relative error of level * 2^-45"""
        expected_log = self.level * math.log(self.mode.out_degree)
        total = self.total()
        if total.exact is not None:
            return total.exact == self.mode.out_degree ** self.level
        return abs(total.log_value - expected_log) <= self.level * 2.0 ** -45


@dataclass
class MaxWeightLayer:
    level: int
    mode: GraphMode
    codec: EndpointCodec
    keys: np.ndarray
    values: np.ndarray

    def freeze(self) -> "MaxWeightLayer":
        self.keys.setflags(write=False)
        self.values.setflags(write=False)
        return self

    @property
    def max_weight(self) -> int:
        return int(self.values.max())

    def endpoints(self) -> np.ndarray:
        return self.codec.decode(self.keys)

    def entries(self) -> Dict[Vertex, int]:
        spatial = self.endpoints()
        return {Vertex(tuple(spatial[row]), self.level): int(self.values[row]) for row in range(len(self.keys))}

    def value_at(self, vertex: Vertex) -> Optional[int]:
        if vertex.level != self.level or any(abs(x) > self.codec.radius for x in vertex.spatial):
            return None
        key = self.codec.encode(np.array([vertex.spatial]))[0]
        row = int(np.searchsorted(self.keys, key))
        if row < len(self.keys) and self.keys[row] == key:
            return int(self.values[row])
        return None


def _scalar(value):
    return int(value) if isinstance(value, (int, np.integer)) else float(value)


@dataclass
class _LevelStep:
    """Key bookkeeping for one transition level-1 -> level"""

    level: int
    keys: np.ndarray
    pulls: List[Tuple[np.ndarray, np.ndarray]]
    good: np.ndarray


class TransferMatrix:
    """
    Level-by-level sweep over the reachable endpoints of one environment

    The endpoint sets and good-site masks do not depend on what is being
    propagated, so count and max-weight builders share one sweep.
    """

    def __init__(self, env: Environment, n: int, memory_budget: int = DEFAULT_MEMORY_BUDGET):
        if n < 0:
            raise ValidationError(f"Path length must be non-negative, got {n}")
        if n > env.n_max:
            raise CoordinateBoundsError(f"Path length {n} exceeds the declared coordinate bound n_max={env.n_max}")
        self.env = env
        self.mode = env.mode
        self.n = n
        self.memory_budget = memory_budget
        self.codec = EndpointCodec(self.mode.d, max(n, 1))
        self.shifts = np.array([self.codec.key_shift(delta) for delta in self.mode.displacements()], dtype=np.int64)
        self.origin_keys = self.codec.encode(np.zeros((1, self.mode.d), dtype=np.int64))

    def sweep(self) -> Iterator[_LevelStep]:
        prev_keys = self.origin_keys
        for level in range(1, self.n + 1):
            keys = np.unique((prev_keys[:, None] + self.shifts[None, :]).ravel())
            pulls = []
            for shift in self.shifts:
                source = keys - shift
                index = np.minimum(np.searchsorted(prev_keys, source), len(prev_keys) - 1)
                found = prev_keys[index] == source
                pulls.append((found, index[found]))
            good = self.env.good_bits(level, self.codec.decode(keys))
            yield _LevelStep(level, keys, pulls, good)
            prev_keys = keys

    def check_budget(self, level: int, required: int) -> None:
        if required > self.memory_budget:
            logger.error(f"Memory budget exceeded at level {level}: {required} > {self.memory_budget} bytes")
            raise ResourceLimitError(
                f"Layer at level {level} needs about {required} bytes, above the memory budget of {self.memory_budget} bytes",
                level=level,
                required_bytes=required,
                budget_bytes=self.memory_budget,
            )


def _kept(keep_levels: Optional[Iterable[int]], n: int) -> Optional[set]:
    if keep_levels is None:
        return None
    kept = {int(level) for level in keep_levels}
    kept.add(n)
    return kept


def build_count_layers(
    env: Environment,
    n: int,
    backend: str = "auto",
    keep_levels: Optional[Iterable[int]] = None,
    saturate_at: Optional[int] = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> List[CountLayer]:
    """
    Joint table (endpoint, weight) -> number of paths from the origin, level by level

    Args:
        env: The environment
        n: Final level
        backend: 'exact', 'log' or 'auto'
        keep_levels: Levels to return; None keeps the full history 0..n (level n is always kept)
        saturate_at: Lump all weights >= this value into one column
        memory_budget: Bytes allowed for the layers held at once

    Returns:
        List[CountLayer]: Frozen layers in increasing level order
    """
    engine = TransferMatrix(env, n, memory_budget)
    resolved = resolve_backend(backend, n, env.mode.out_degree)
    if saturate_at is not None and saturate_at < 0:
        raise ValidationError(f"saturate_at must be non-negative, got {saturate_at}")
    kept = _kept(keep_levels, n)
    dtype = _exact_dtype(n, env.mode.out_degree) if resolved == CountBackend.EXACT else np.float64
    size = entry_bytes(resolved, n, env.mode.out_degree)

    if resolved == CountBackend.EXACT:
        table = np.ones((1, 1), dtype=dtype)
    else:
        table = np.zeros((1, 1), dtype=np.float64)
    current = CountLayer(0, env.mode, engine.codec, engine.origin_keys, table, resolved, saturate_at).freeze()
    layers = [current] if kept is None or 0 in kept else []
    held = sum(layer.table.size * size + layer.keys.size * 8 for layer in layers)

    for step in engine.sweep():
        columns = step.level + 1 if saturate_at is None else min(step.level, saturate_at) + 1
        required = held + current.table.size * size + len(step.keys) * (columns * size + 8)
        engine.check_budget(step.level, required)

        if resolved == CountBackend.EXACT:
            table = np.zeros((len(step.keys), columns), dtype=dtype)
        else:
            table = np.full((len(step.keys), columns), -np.inf)
        width = current.columns
        for found, index in step.pulls:
            if resolved == CountBackend.EXACT:
                table[found, :width] += current.table[index]
            else:
                table[found, :width] = np.logaddexp(table[found, :width], current.table[index])

        if step.good.any():
            rows = table[step.good]
            moved = np.zeros_like(rows) if resolved == CountBackend.EXACT else np.full_like(rows, -np.inf)
            moved[:, 1:] = rows[:, :-1]
            if saturate_at is not None and columns == saturate_at + 1:
                if resolved == CountBackend.EXACT:
                    moved[:, -1] += rows[:, -1]
                else:
                    moved[:, -1] = np.logaddexp(moved[:, -1], rows[:, -1])
            table[step.good] = moved

        current = CountLayer(step.level, env.mode, engine.codec, step.keys, table, resolved, saturate_at).freeze()
        if kept is None or step.level in kept:
            layers.append(current)
            held += table.size * size + step.keys.size * 8
        if step.level % 50 == 0:
            logger.debug(f"Count layer {step.level}/{n}: {len(step.keys)} endpoints x {columns} weights")

    return layers


def _layer_at(layers: Sequence, n: int):
    for layer in layers:
        if layer.level == n:
            return layer
    raise ValidationError(f"Layers were not built (or not kept) to level {n}")


def count_n(layers: Sequence[CountLayer], n: int, alpha: float) -> PathCount:
    """
    N_n(alpha): number of length-n paths from the origin with W >= alpha*n

    Args:
        layers: Output of build_count_layers containing level n
        n: Path length
        alpha: Threshold density in [0, 1]

    Returns:
        PathCount: Exact (ExactBigInt backend) or log-space count
    """
    k = threshold(alpha, n)
    return _layer_at(layers, n).count_at_least(k)


def count_n_xy(layers: Sequence[CountLayer], n: int, alpha: float, y: Vertex) -> PathCount:
    """N_n(0, y; alpha): as count_n but restricted to paths ending at y; 0 when y is unreachable"""
    k = threshold(alpha, n)
    layer = _layer_at(layers, n)
    row = layer.row_of(y)
    if row is None:
        return PathCount.from_exact(0) if layer.backend == CountBackend.EXACT else PathCount.from_log(-math.inf)
    return layer.count_at_least(k, rows=np.array([row]))


def count_table_rows(layers: Sequence[CountLayer]) -> Iterator[List]:
    """CSV rows level, endpoint, k, count, backend (log counts are written as log10)"""
    for layer in layers:
        for vertex, counts in sorted(layer.entries().items()):
            endpoint = f"({','.join(str(x) for x in vertex.spatial)})"
            for k, value in enumerate(counts):
                if layer.backend == CountBackend.EXACT:
                    if value:
                        yield [layer.level, endpoint, k, str(value), layer.backend.value]
                elif value != -math.inf:
                    yield [layer.level, endpoint, k, f"{value / math.log(10):.12g}", layer.backend.value]


def build_max_layers(
    env: Environment,
    n: int,
    keep_levels: Optional[Iterable[int]] = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> List[MaxWeightLayer]:
    """
    M_t(0, y): maximal weight of a length-t path from the origin ending at y

    Args:
        env: The environment
        n: Final level
        keep_levels: Levels to return; None keeps the full history
        memory_budget: Bytes allowed for the layers held at once

    Returns:
        List[MaxWeightLayer]: Frozen layers in increasing level order
    """
    engine = TransferMatrix(env, n, memory_budget)
    kept = _kept(keep_levels, n)
    current = MaxWeightLayer(0, env.mode, engine.codec, engine.origin_keys, np.zeros(1, dtype=np.int32)).freeze()
    layers = [current] if kept is None or 0 in kept else []
    held = 12

    for step in engine.sweep():
        engine.check_budget(step.level, held + 12 * (len(step.keys) + len(current.keys)))
        values = np.full(len(step.keys), -1, dtype=np.int32)
        for found, index in step.pulls:
            values[found] = np.maximum(values[found], current.values[index])
        values += step.good.astype(np.int32)
        current = MaxWeightLayer(step.level, env.mode, engine.codec, step.keys, values).freeze()
        if kept is None or step.level in kept:
            layers.append(current)
            held += 12 * len(step.keys)
    return layers


def max_weight(layers: Sequence[MaxWeightLayer], n: int) -> int:
    """max over all length-n paths from the origin of W(pi)"""
    return _layer_at(layers, n).max_weight


def max_weight_profile(env: Environment, n: int, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> np.ndarray:
    """max_weight(t) for t = 0..n from one sweep, without keeping layers"""
    engine = TransferMatrix(env, n, memory_budget)
    profile = np.zeros(n + 1, dtype=np.int64)
    values = np.zeros(1, dtype=np.int32)
    for step in engine.sweep():
        engine.check_budget(step.level, 12 * (len(step.keys) + len(values)))
        nxt = np.full(len(step.keys), -1, dtype=np.int32)
        for found, index in step.pulls:
            nxt[found] = np.maximum(nxt[found], values[index])
        values = nxt + step.good.astype(np.int32)
        profile[step.level] = int(values.max())
    return profile


def argmax_endpoint_lex(layer: MaxWeightLayer) -> Vertex:
    """Lexicographically least endpoint y with M_t(0, y) = M_t(0, *)"""
    if not len(layer.keys):
        raise ValidationError("Empty layer has no maximizer")
    row = int(np.flatnonzero(layer.values == layer.values.max())[0])
    return Vertex(tuple(layer.codec.decode(layer.keys[row:row + 1])[0]), layer.level)


def max_weight_path(env: Environment, layers: Sequence[MaxWeightLayer], endpoint: Optional[Vertex] = None) -> PathRecord:
    """
    A maximal-weight path, reconstructed by backtracking

    Ties are broken by the lexicographically least in-neighbor, so the path is
    deterministic. `layers` must hold the full history 0..n.

    Args:
        env: The environment the layers were built from
        layers: Full history from build_max_layers
        endpoint: Endpoint to reach; defaults to argmax_endpoint_lex of the last layer

    Returns:
        PathRecord: Path from the origin with weight M_n(0, endpoint)
    """
    by_level = {layer.level: layer for layer in layers}
    n = max(by_level)
    if set(by_level) != set(range(n + 1)):
        raise ValidationError("max_weight_path needs the full layer history 0..n")
    mode = env.mode
    current = endpoint or argmax_endpoint_lex(by_level[n])
    value = by_level[n].value_at(current)
    if value is None:
        raise ValidationError(f"Endpoint {current} is not reachable at level {n}")

    steps: List[Step] = []
    for level in range(n, 0, -1):
        target = value - env.good_bit(current)
        candidates = []
        for step in mode.steps():
            delta = step.displacement(mode)
            previous = Vertex(tuple(x - dx for x, dx in zip(current.spatial, delta)), level - 1)
            if by_level[level - 1].value_at(previous) == target:
                candidates.append((previous.spatial, previous, step))
        _, current, step = min(candidates, key=lambda item: item[0])
        steps.append(step)
        value = target
    return PathRecord(Vertex.origin(mode.d), tuple(reversed(steps)))


@dataclass
class OracleResult:
    """Statistics gathered by visiting every length-n path explicitly"""

    n: int
    mode: GraphMode
    paths_visited: int
    table: Dict[Tuple[Tuple[int, ...], int], int]
    weight_histogram: np.ndarray
    selected: int

    @property
    def max_weight(self) -> int:
        return int(np.flatnonzero(self.weight_histogram)[-1])

    def count_at_least(self, k: int) -> int:
        return int(self.weight_histogram[max(k, 0):].sum())

    def count_xy(self, y: Vertex, k: int) -> int:
        return sum(count for (endpoint, weight), count in self.table.items() if endpoint == y.spatial and weight >= k)

    def entries(self) -> Dict[Vertex, List[int]]:
        """Same shape as CountLayer.entries()"""
        result: Dict[Vertex, List[int]] = {}
        for (endpoint, weight), count in self.table.items():
            column = result.setdefault(Vertex(endpoint, self.n), [0] * (self.n + 1))
            column[weight] += count
        return result


def enumerate_paths_oracle(
    env: Environment,
    n: int,
    predicate: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
    cap: int = DEFAULT_ORACLE_CAP,
) -> OracleResult:
    """
    Visit every length-n path from the origin and tabulate (endpoint, weight)

    Args:
        env: The environment
        n: Path length
        predicate: Optional vectorised filter receiving (weights, endpoints, step choices)
            for a chunk of paths and returning a boolean mask; `selected` counts the matches
        cap: Maximum number of paths

    Returns:
        OracleResult: Exact statistics over all (outDegree)^n paths
    """
    mode = env.mode
    degree = mode.out_degree
    total = degree ** n
    if total > cap:
        raise OracleCapError(f"Enumeration of {degree}^{n} = {total} paths exceeds the oracle cap of {cap}")

    displacements = mode.displacements()
    powers = degree ** np.arange(n - 1, -1, -1, dtype=np.int64)
    levels = np.arange(1, n + 1, dtype=np.int64)
    table: Dict[Tuple[Tuple[int, ...], int], int] = {}
    histogram = np.zeros(n + 1, dtype=np.int64)
    selected = 0

    for start in range(0, total, ORACLE_CHUNK):
        index = np.arange(start, min(start + ORACLE_CHUNK, total), dtype=np.int64)
        choices = (index[:, None] // powers[None, :]) % degree if n else np.zeros((len(index), 0), dtype=np.int64)
        positions = np.cumsum(displacements[choices], axis=1) if n else np.zeros((len(index), 0, mode.d), dtype=np.int64)
        if n:
            bits = env.good_bits(np.tile(levels, len(index)), positions.reshape(-1, mode.d)).reshape(len(index), n)
            weights = bits.sum(axis=1)
            endpoints = positions[:, -1, :]
        else:
            weights = np.zeros(len(index), dtype=np.int64)
            endpoints = np.zeros((len(index), mode.d), dtype=np.int64)

        histogram += np.bincount(weights, minlength=n + 1)
        rows, counts = np.unique(np.column_stack([endpoints, weights]), axis=0, return_counts=True)
        for row, count in zip(rows, counts):
            key = (tuple(int(x) for x in row[:-1]), int(row[-1]))
            table[key] = table.get(key, 0) + int(count)
        if predicate is not None:
            selected += int(np.count_nonzero(predicate(weights, endpoints, choices)))

    return OracleResult(n, mode, total, table, histogram, selected)


def validate_against_oracle(
    d: int,
    n_max: int,
    seeds: int,
    p: float = 0.5,
    master_seed: int = 0,
    mode: str = "semi",
    cap: int = DEFAULT_ORACLE_CAP,
) -> List[Dict]:
    """
    Compare DP count tables with exhaustive enumeration for n = 0..n_max

    Returns:
        List[Dict]: One record per (seed, n) that disagrees; empty when all agree
    """
    graph = GraphMode.from_name(mode, d)
    mismatches = []
    for index in range(seeds):
        env = Environment(seed=derive_seed(master_seed, index), p=p, mode=graph)
        layers = build_count_layers(env, n_max, backend="exact")
        for layer in layers:
            oracle = enumerate_paths_oracle(env, layer.level, cap=cap)
            expected = oracle.entries()
            actual = layer.entries()
            if actual != expected:
                mismatches.append({"seed": env.seed, "n": layer.level, "dp_endpoints": len(actual), "oracle_endpoints": len(expected)})
        logger.debug(f"Oracle check seed {index + 1}/{seeds} done")
    return mismatches


def direction_changes(path: PathRecord) -> Tuple[int, List[int]]:
    """Positions k (0-based) where step k+1 differs from step k, and their number"""
    positions = [k for k in range(path.length - 1) if path.steps[k + 1] != path.steps[k]]
    return len(positions), positions


def select_non_interfering(positions: Sequence[int]) -> List[int]:
    """Greedy left-to-right choice of positions pairwise at distance >= 2"""
    chosen: List[int] = []
    for k in positions:
        if not chosen or k - chosen[-1] >= 2:
            chosen.append(k)
    return chosen


def apply_interchanges(path: PathRecord, positions: Iterable[int]) -> PathRecord:
    """Swap steps k and k+1 for every k in positions"""
    steps = list(path.steps)
    for k in positions:
        steps[k], steps[k + 1] = steps[k + 1], steps[k]
    return PathRecord(path.start, tuple(steps))


@dataclass
class InterchangeReport:
    base_path: PathRecord
    base_weight: int
    qualifying_positions: List[int]
    selected_positions: List[int]
    family_size: int
    weight_floor: int
    sample_weights: List[int] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return not self.selected_positions

    def to_dict(self) -> Dict:
        return {
            "base_path": str(self.base_path),
            "base_weight": self.base_weight,
            "qualifying_positions": self.qualifying_positions,
            "selected_positions": self.selected_positions,
            "family_size": self.family_size,
            "weight_floor": self.weight_floor,
            "sample_size": len(self.sample_weights),
            "min_sample_weight": min(self.sample_weights) if self.sample_weights else None,
            "violations": self.violations,
        }


def interchange_family(env: Environment, path: PathRecord, sample_size: int, seed: int = 0) -> Tuple[InterchangeReport, List[PathRecord]]:
    """
    Family of paths obtained by swapping non-interfering pairs of unequal consecutive steps

    Each swap changes exactly one visited vertex, so it costs at most one unit
    of weight; the family of all subsets of the selected positions has
    2^|selected| distinct members of weight >= W(path) - |selected|.

    Args:
        env: The environment
        path: Base path (usually a maximal-weight path)
        sample_size: Number of family members to generate and check
        seed: Seed of the subset sampler

    Returns:
        Tuple[InterchangeReport, List[PathRecord]]: The report and the generated members
    """
    path.validate(env.mode)
    _, qualifying = direction_changes(path)
    chosen = select_non_interfering(qualifying)
    base_weight = path_weight(path, env)
    report = InterchangeReport(
        base_path=path,
        base_weight=base_weight,
        qualifying_positions=qualifying,
        selected_positions=chosen,
        family_size=2 ** len(chosen),
        weight_floor=base_weight - len(chosen),
    )

    if report.family_size <= sample_size:
        subsets = [tuple(bits) for bits in itertools.product((0, 1), repeat=len(chosen))]
    else:
        rng = np.random.Generator(np.random.Philox(key=seed))
        unique_subsets = set()
        subsets = []
        while len(subsets) < sample_size:
            bits = tuple(int(b) for b in rng.integers(0, 2, size=len(chosen)))
            if bits not in unique_subsets:
                unique_subsets.add(bits)
                subsets.append(bits)

    members: List[PathRecord] = []
    seen = set()
    for bits in subsets:
        applied = [k for k, bit in zip(chosen, bits) if bit]
        member = apply_interchanges(path, applied)
        try:
            member.validate(env.mode)
        except ValidationError as e:
            report.violations.append(f"invalid member {member}: {e}")
            continue
        if member.steps in seen:
            report.violations.append(f"duplicate member {member}")
        seen.add(member.steps)
        weight = path_weight(member, env)
        if weight < base_weight - len(applied):
            report.violations.append(f"member {member} has weight {weight} < {base_weight - len(applied)}")
        report.sample_weights.append(weight)
        members.append(member)
    return report, members
