"""
lattice_core.py - Oriented lattice, paths and the seeded random environment

The semi-oriented lattice is Z^d x Z_+ with edges v -> v +/- e_i + e_{d+1};
the fully oriented lattice is Z_+^{d+1} with edges v -> v + e_i. In both modes
a vertex is stored as (spatial, level) where level is the path length from the
origin, so a path's level increases by exactly one per step. In the fully
oriented mode the last coordinate is level - sum(spatial).

Site weights are Bernoulli(p) bits obtained from a keyed splitmix64 hash of
(seed, level, zigzag(x_1), ..., zigzag(x_d)); no field is ever stored.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import CoordinateBoundsError, DomainError, PathValidationError, ValidationError

logger = logging.getLogger(__name__)

SM_CONST = np.uint64(0x9E3779B97F4A7C15)
SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
SM_M2 = np.uint64(0x94D049BB133111EB)
UNIT_53 = 1.0 / float(1 << 53)
U64_MAX = (1 << 64) - 1


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (arithmetic wraps mod 2^64)"""
    z = x + SM_CONST
    z = (z ^ (z >> np.uint64(30))) * SM_M1
    z = (z ^ (z >> np.uint64(27))) * SM_M2
    return z ^ (z >> np.uint64(31))


def zigzag(values: np.ndarray) -> np.ndarray:
    """Map signed integers onto unsigned ones: 0, -1, 1, -2, ... -> 0, 1, 2, 3, ..."""
    values = np.asarray(values, dtype=np.int64)
    return np.where(values >= 0, 2 * values, -2 * values - 1).astype(np.uint64)


def hash_chain(seed: int, columns: Sequence[np.ndarray]) -> np.ndarray:
    """Keyed hash of rows given column-wise as uint64 arrays of equal length"""
    size = len(columns[0]) if columns else 1
    h = mix64(np.full(size, seed, dtype=np.uint64))
    for column in columns:
        h = mix64(h ^ np.asarray(column, dtype=np.uint64))
    return h


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of replication `index`, a pure function of (master_seed, index)"""
    _check_u64(master_seed, "master seed")
    h = hash_chain(master_seed, [np.array([index], dtype=np.uint64)])
    return int(h[0])


def _check_u64(value: int, name: str) -> None:
    if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= U64_MAX:
        raise ValidationError(f"{name} must be an unsigned 64-bit integer, got {value!r}")


def _l1_sphere_size(r: int, d: int) -> int:
    """Number of points of Z^d with l1-norm exactly r"""
    if r == 0:
        return 1
    return sum(2 ** k * math.comb(d, k) * math.comb(r - 1, k - 1) for k in range(1, min(d, r) + 1))


class GraphKind(str, Enum):
    SEMI = "semi"
    FULL = "full"


@dataclass(frozen=True)
class Step:
    """One oriented edge: axis is 1-based, sign is +1 or -1 (always +1 when fully oriented)"""

    axis: int
    sign: int = 1

    def validate(self, mode: "GraphMode") -> None:
        if mode.kind == GraphKind.SEMI:
            if not 1 <= self.axis <= mode.d or self.sign not in (1, -1):
                raise PathValidationError(f"Step {self} is not an edge of {mode}")
        elif not 1 <= self.axis <= mode.d + 1 or self.sign != 1:
            raise PathValidationError(f"Step {self} is not an edge of {mode}")

    def displacement(self, mode: "GraphMode") -> Tuple[int, ...]:
        """Spatial displacement; the step along e_{d+1} of the fully oriented lattice has none"""
        self.validate(mode)
        delta = [0] * mode.d
        if self.axis <= mode.d:
            delta[self.axis - 1] = self.sign
        return tuple(delta)

    def apply(self, vertex: "Vertex", mode: "GraphMode") -> "Vertex":
        delta = self.displacement(mode)
        return Vertex(tuple(x + dx for x, dx in zip(vertex.spatial, delta)), vertex.level + 1)

    def __str__(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis}"


@dataclass(frozen=True)
class GraphMode:
    kind: GraphKind
    d: int

    def __post_init__(self):
        object.__setattr__(self, "kind", GraphKind(self.kind))
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise DomainError(f"Dimension d must be a positive integer, got {self.d!r}")

    @classmethod
    def semi(cls, d: int) -> "GraphMode":
        return cls(GraphKind.SEMI, d)

    @classmethod
    def full(cls, d: int) -> "GraphMode":
        return cls(GraphKind.FULL, d)

    @classmethod
    def from_name(cls, name: str, d: int) -> "GraphMode":
        try:
            kind = GraphKind(name)
        except ValueError:
            raise ValidationError(f"Unknown graph mode {name!r}; expected 'semi' or 'full'")
        return cls(kind, d)

    @property
    def out_degree(self) -> int:
        return 2 * self.d if self.kind == GraphKind.SEMI else self.d + 1

    def steps(self) -> Tuple[Step, ...]:
        if self.kind == GraphKind.SEMI:
            return tuple(Step(axis, sign) for axis in range(1, self.d + 1) for sign in (1, -1))
        return tuple(Step(axis, 1) for axis in range(1, self.d + 2))

    def displacements(self) -> np.ndarray:
        """Spatial displacement of every step, shape (out_degree, d), in steps() order"""
        return np.array([step.displacement(self) for step in self.steps()], dtype=np.int64).reshape(-1, self.d)

    def is_reachable(self, vertex: "Vertex") -> bool:
        """Whether some path from the origin ends at `vertex`"""
        if len(vertex.spatial) != self.d:
            return False
        if self.kind == GraphKind.SEMI:
            norm = sum(abs(x) for x in vertex.spatial)
            return norm <= vertex.level and (vertex.level - norm) % 2 == 0
        return all(x >= 0 for x in vertex.spatial) and sum(vertex.spatial) <= vertex.level

    def reachable_count(self, level: int) -> int:
        """Number of distinct endpoints of length-`level` paths from the origin"""
        if self.kind == GraphKind.SEMI:
            # l1 spheres of radius r = level, level-2, ...; equals (level+1)^d for d <= 2
            return sum(_l1_sphere_size(r, self.d) for r in range(level % 2, level + 1, 2))
        return math.comb(level + self.d, self.d)

    def __str__(self) -> str:
        return f"{self.kind.value}(d={self.d})"


@dataclass(frozen=True, order=True)
class Vertex:
    """A spatial point of Z^d paired with its level; ordering is lexicographic in the spatial part"""

    spatial: Tuple[int, ...]
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "spatial", tuple(int(x) for x in self.spatial))
        object.__setattr__(self, "level", int(self.level))
        if self.level < 0:
            raise ValidationError(f"Vertex level must be non-negative, got {self.level}")

    @classmethod
    def origin(cls, d: int) -> "Vertex":
        return cls((0,) * d, 0)

    @classmethod
    def parse(cls, text: str) -> "Vertex":
        """Parse the text form 'level:(c1,c2,...,cd)'"""
        try:
            level_text, coords_text = text.strip().split(":", 1)
            coords_text = coords_text.strip()
            if not (coords_text.startswith("(") and coords_text.endswith(")")):
                raise ValueError("coordinates must be parenthesised")
            inner = coords_text[1:-1].strip()
            coords = tuple(int(c) for c in inner.split(",")) if inner else ()
            return cls(coords, int(level_text))
        except ValueError as e:
            raise ValidationError(f"Cannot parse vertex {text!r}: {e}") from e

    def __str__(self) -> str:
        return f"{self.level}:({','.join(str(x) for x in self.spatial)})"


def out_neighbors(vertex: Vertex, mode: GraphMode) -> List[Vertex]:
    """
    Out-neighbors of a vertex, one level up

    Args:
        vertex: The vertex to expand
        mode: Active graph mode

    Returns:
        List[Vertex]: 2d vertices (semi-oriented) or d+1 vertices (fully oriented)
    """
    if len(vertex.spatial) != mode.d:
        raise ValidationError(f"Vertex {vertex} does not have dimension {mode.d}")
    return [step.apply(vertex, mode) for step in mode.steps()]


@dataclass(frozen=True)
class PathRecord:
    start: Vertex
    steps: Tuple[Step, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def length(self) -> int:
        return len(self.steps)

    @classmethod
    def from_vertices(cls, vertices: Sequence[Vertex], mode: GraphMode) -> "PathRecord":
        """Recover the step sequence of a vertex sequence; raises if two vertices are not joined by an edge"""
        if not vertices:
            raise PathValidationError("A path needs at least its start vertex")
        by_delta = {step.displacement(mode): step for step in mode.steps()}
        steps = []
        for a, b in zip(vertices, vertices[1:]):
            delta = tuple(y - x for x, y in zip(a.spatial, b.spatial))
            step = by_delta.get(delta)
            if step is None or b.level != a.level + 1 or len(b.spatial) != mode.d:
                raise PathValidationError(f"No oriented edge from {a} to {b} in {mode}")
            steps.append(step)
        return cls(vertices[0], tuple(steps))

    def validate(self, mode: GraphMode) -> None:
        if len(self.start.spatial) != mode.d:
            raise PathValidationError(f"Start vertex {self.start} does not have dimension {mode.d}")
        for index, step in enumerate(self.steps):
            try:
                step.validate(mode)
            except PathValidationError as e:
                raise PathValidationError(f"Invalid step {index}: {e}") from e

    def vertices(self, mode: GraphMode) -> List[Vertex]:
        self.validate(mode)
        current = self.start
        visited = [current]
        for step in self.steps:
            current = step.apply(current, mode)
            visited.append(current)
        return visited

    def endpoint(self, mode: GraphMode) -> Vertex:
        return self.vertices(mode)[-1]

    def spatial_array(self, mode: GraphMode) -> np.ndarray:
        """Spatial coordinates of pi_0..pi_n as an (n+1, d) array"""
        self.validate(mode)
        deltas = np.array([step.displacement(mode) for step in self.steps], dtype=np.int64).reshape(-1, mode.d)
        start = np.array(self.start.spatial, dtype=np.int64).reshape(1, mode.d)
        return np.vstack([start, start + np.cumsum(deltas, axis=0)])

    def __str__(self) -> str:
        return f"{self.start}[{' '.join(str(step) for step in self.steps)}]"


def straight_path(n: int, mode: GraphMode) -> PathRecord:
    """The path moving n steps along the first coordinate axis from the origin"""
    return PathRecord(Vertex.origin(mode.d), (Step(1, 1),) * n)


@dataclass(frozen=True)
class Environment:
    """
    Deterministic Bernoulli(p) field of good sites

    A site is good when its hashed uniform is below p, so environments that
    differ only in p are coupled monotonically. `offset` shifts every query
    (X(v + offset)), `overrides` force individual bits (given in this
    environment's own coordinates) and `fixed_bit` makes the whole field
    constant for deterministic fixtures.
    """

    seed: int
    p: float
    mode: GraphMode
    b: float = 1.0
    n_max: int = 1_000_000
    offset: Optional[Vertex] = None
    overrides: Tuple[Tuple[Vertex, int], ...] = ()
    fixed_bit: Optional[int] = None

    def __post_init__(self):
        _check_u64(self.seed, "seed")
        object.__setattr__(self, "seed", int(self.seed))
        if self.fixed_bit is None:
            if not 0.0 < self.p < 1.0:
                raise DomainError(f"p must lie in (0, 1), got {self.p}")
        elif self.fixed_bit not in (0, 1):
            raise ValidationError(f"fixed_bit must be 0 or 1, got {self.fixed_bit}")
        if not self.b > 0:
            raise DomainError(f"b must be positive, got {self.b}")
        if self.n_max < 1:
            raise ValidationError(f"n_max must be positive, got {self.n_max}")
        if self.offset is not None and len(self.offset.spatial) != self.mode.d:
            raise ValidationError(f"Offset {self.offset} does not have dimension {self.mode.d}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any], n_max: int = 1_000_000) -> "Environment":
        """Build from the config keys seed, p, b, mode ('semi'|'full') and d"""
        try:
            mode = GraphMode.from_name(str(config.get("mode", "semi")), int(config["d"]))
            return cls(seed=int(config["seed"]), p=float(config["p"]), b=float(config.get("b", 1.0)), mode=mode, n_max=n_max)
        except KeyError as e:
            raise ValidationError(f"Missing environment config key: {e.args[0]}") from e

    @classmethod
    def constant(cls, mode: GraphMode, bit: int = 1, n_max: int = 1_000_000) -> "Environment":
        """Every site good (bit=1) or every site bad (bit=0)"""
        return cls(seed=0, p=float(bit), mode=mode, n_max=n_max, fixed_bit=bit)

    def with_overrides(self, bits: Mapping[Vertex, int]) -> "Environment":
        extra = tuple((vertex, int(bool(bit))) for vertex, bit in bits.items())
        return replace(self, overrides=self.overrides + extra)

    def shifted(self, origin: Vertex) -> "Environment":
        """The environment seen from `origin`: queries at v read the bit of v + origin"""
        if len(origin.spatial) != self.mode.d:
            raise ValidationError(f"Origin {origin} does not have dimension {self.mode.d}")
        base = self.offset or Vertex.origin(self.mode.d)
        offset = Vertex(tuple(a + b for a, b in zip(base.spatial, origin.spatial)), base.level + origin.level)
        moved = []
        for vertex, bit in self.overrides:
            if vertex.level >= origin.level:
                local = Vertex(tuple(a - b for a, b in zip(vertex.spatial, origin.spatial)), vertex.level - origin.level)
                moved.append((local, bit))
        return replace(self, offset=offset, overrides=tuple(moved))

    def uniforms(self, levels: Union[int, np.ndarray], spatial: np.ndarray) -> np.ndarray:
        """
        Per-vertex uniforms in [0, 1) for rows of `spatial` at the given level(s)

        Args:
            levels: One level for every row, or an array with one level per row
            spatial: Integer array of shape (m, d)

        Returns:
            np.ndarray: Float64 array of shape (m,)
        """
        levels, spatial = self._locate(levels, spatial)
        columns = [levels.astype(np.uint64)] + [zigzag(spatial[:, axis]) for axis in range(self.mode.d)]
        h = hash_chain(self.seed, columns)
        return (h >> np.uint64(11)).astype(np.float64) * UNIT_53

    def _locate(self, levels: Union[int, np.ndarray], spatial: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Apply the offset and enforce the coordinate bound"""
        spatial = np.asarray(spatial, dtype=np.int64).reshape(-1, self.mode.d)
        levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), (spatial.shape[0],))
        if self.offset is not None:
            spatial = spatial + np.array(self.offset.spatial, dtype=np.int64)
            levels = levels + self.offset.level
        if spatial.size and int(np.abs(spatial).max()) > self.n_max:
            raise CoordinateBoundsError(
                f"Spatial coordinate {int(np.abs(spatial).max())} exceeds the declared bound n_max={self.n_max}"
            )
        return levels, spatial

    def good_bits(self, levels: Union[int, np.ndarray], spatial: np.ndarray) -> np.ndarray:
        """Boolean good-site indicators for rows of `spatial` at the given level(s)"""
        spatial = np.asarray(spatial, dtype=np.int64).reshape(-1, self.mode.d)
        if self.fixed_bit is None:
            bits = self.uniforms(levels, spatial) < self.p
        else:
            self._locate(levels, spatial)
            bits = np.full(spatial.shape[0], bool(self.fixed_bit))
        if self.overrides:
            row_levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), (spatial.shape[0],))
            for vertex, bit in self.overrides:
                hit = (row_levels == vertex.level) & np.all(spatial == np.array(vertex.spatial, dtype=np.int64), axis=1)
                bits[hit] = bool(bit)
        return bits

    def good_bit(self, vertex: Vertex) -> int:
        if len(vertex.spatial) != self.mode.d:
            raise ValidationError(f"Vertex {vertex} does not have dimension {self.mode.d}")
        return int(self.good_bits(vertex.level, np.array([vertex.spatial], dtype=np.int64))[0])

    def describe(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "p": self.p,
            "b": self.b,
            "mode": self.mode.kind.value,
            "d": self.mode.d,
            "n_max": self.n_max,
        }


def good_bit(env: Environment, vertex: Vertex) -> int:
    """Stateless random access to the bit of one vertex"""
    return env.good_bit(vertex)


def path_weight(path: PathRecord, env: Environment) -> int:
    """
    W(pi): number of good vertices pi_1..pi_n (the start vertex does not count)

    Args:
        path: A path valid under env.mode
        env: The environment

    Returns:
        int: Weight between 0 and path.length
    """
    if path.length == 0:
        path.validate(env.mode)
        return 0
    spatial = path.spatial_array(env.mode)[1:]
    levels = path.start.level + np.arange(1, path.length + 1, dtype=np.int64)
    return int(env.good_bits(levels, spatial).sum())
