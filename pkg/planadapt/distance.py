from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial.distance import cdist

from planadapt.env import MazeWorld, Point, PreconditionError, euclidean, is_free
from planadapt.logger import get_logger

logger = get_logger(__name__)

UNREACHABLE = math.inf
DEFAULT_RESOLUTION = 4
# sources per bounded multi-source sweep, keeps the dense field block small
_SWEEP_BLOCK = 128


class EstimatorKind(str, Enum):
    ORACLE = "oracle"
    WALL_PIERCING = "wall_piercing"
    SCALED = "scaled"
    NOISY = "noisy"
    COMPOSITE = "composite"


class Lattice:
    """8-connected graph over the map subdivided ``resolution`` times per cell.

    A node inherits the occupancy of its cell. Diagonal moves are only allowed
    when both orthogonal neighbours are free, so paths never cut wall corners.
    """

    def __init__(self, world: MazeWorld, resolution: int):
        self.resolution = resolution
        self.step = world.cell_size / resolution
        free = ~np.repeat(np.repeat(world.grid, resolution, 0), resolution, 1)
        self.shape = free.shape
        self.index = np.full(free.shape, -1, dtype=np.int64)
        self.index[free] = np.arange(int(free.sum()))
        self.size = int(free.sum())

        rows, cols = [], []
        weights = []
        h, w = free.shape
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            r0 = slice(0, h - dr)
            r1 = slice(dr, h)
            c0 = slice(max(0, -dc), w - max(0, dc))
            c1 = slice(max(0, dc), w - max(0, -dc))
            ok = free[r0, c0] & free[r1, c1]
            if dr and dc:
                ok &= free[r0, c1] & free[r1, c0]
            rows.append(self.index[r0, c0][ok])
            cols.append(self.index[r1, c1][ok])
            length = self.step * (math.sqrt(2.0) if dr and dc else 1.0)
            weights.append(np.full(int(ok.sum()), length))
        rows_arr = np.concatenate(rows)
        cols_arr = np.concatenate(cols)
        weights_arr = np.concatenate(weights)
        self.graph = sparse.csr_matrix(
            (
                np.concatenate([weights_arr, weights_arr]),
                (
                    np.concatenate([rows_arr, cols_arr]),
                    np.concatenate([cols_arr, rows_arr]),
                ),
            ),
            shape=(self.size, self.size),
        )
        _, self.components = csgraph.connected_components(self.graph, directed=False)

    def node_of(self, p: Point) -> int:
        r = min(max(math.floor(p[1] / self.step), 0), self.shape[0] - 1)
        c = min(max(math.floor(p[0] / self.step), 0), self.shape[1] - 1)
        return int(self.index[r, c])

    def nodes_of(self, points: np.ndarray) -> np.ndarray:
        r = np.floor(points[:, 1] / self.step).astype(np.int64)
        c = np.floor(points[:, 0] / self.step).astype(np.int64)
        r = np.clip(r, 0, self.shape[0] - 1)
        c = np.clip(c, 0, self.shape[1] - 1)
        return self.index[r, c]

    def sweep(self, sources: np.ndarray, limit: float = math.inf) -> np.ndarray:
        """Dense (len(sources), size) geodesic distances, +inf past ``limit``."""
        return csgraph.dijkstra(
            self.graph, directed=False, indices=sources, limit=limit
        )


def lattice(world: MazeWorld, resolution: int = DEFAULT_RESOLUTION) -> Lattice:
    cached = world._lattices.get(resolution)
    if cached is None:
        cached = Lattice(world, resolution)
        world._lattices[resolution] = cached
        logger.debug(
            f"Built distance lattice at resolution {resolution}: "
            f"{cached.size} nodes"
        )
    return cached


def _as_array(points: Sequence[Point] | np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 2)


def _require_free(world: MazeWorld, *points: Point) -> None:
    for p in points:
        if not is_free(world, p):
            raise PreconditionError(f"point {tuple(p)} is not in a free cell")


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Oracle distances from ``source`` to every lattice node."""

    source: Point
    values: np.ndarray
    resolution: int
    step: float

    def at(self, world: MazeWorld, p: Point) -> float:
        node = lattice(world, self.resolution).node_of(p)
        raw = float(self.values.flat[node]) if node >= 0 else UNREACHABLE
        if not math.isfinite(raw):
            return UNREACHABLE
        return max(raw, euclidean(self.source, p))

    def grid(self, world: MazeWorld) -> np.ndarray:
        """Values laid out on the subdivided grid, +inf on walls."""
        lat = lattice(world, self.resolution)
        out = np.full(lat.shape, np.inf)
        free = lat.index >= 0
        out[free] = self.values[lat.index[free]]
        return out


def distance_field(
    world: MazeWorld, source: Point, resolution: int = DEFAULT_RESOLUTION
) -> DistanceField:
    _require_free(world, source)
    lat = lattice(world, resolution)
    values = lat.sweep(np.array([lat.node_of(source)]))[0]
    return DistanceField(
        source=Point(*source), values=values, resolution=resolution, step=lat.step
    )


def oracle_distance(
    world: MazeWorld, a: Point, b: Point, resolution: int = DEFAULT_RESOLUTION
) -> float:
    """Geodesic distance between two free points, UNREACHABLE if disconnected.

    Never below the straight-line distance. The sweep always starts from the
    canonically smaller endpoint so d(a, b) and d(b, a) are bit-identical.
    """
    _require_free(world, a, b)
    if tuple(a) == tuple(b):
        return 0.0
    lat = lattice(world, resolution)
    na, nb = lat.node_of(a), lat.node_of(b)
    source, target = (a, b) if (na, tuple(a)) <= (nb, tuple(b)) else (b, a)
    return distance_field(world, source, resolution).at(world, target)


def connected(
    world: MazeWorld, a: Point, b: Point, resolution: int = DEFAULT_RESOLUTION
) -> bool:
    lat = lattice(world, resolution)
    na, nb = lat.node_of(a), lat.node_of(b)
    if na < 0 or nb < 0:
        return False
    return bool(lat.components[na] == lat.components[nb])


def oracle_pairwise(
    world: MazeWorld,
    sources: Sequence[Point] | np.ndarray,
    targets: Sequence[Point] | np.ndarray,
    resolution: int = DEFAULT_RESOLUTION,
    limit: float = math.inf,
) -> np.ndarray:
    """Oracle matrix between point sets; values beyond ``limit`` are UNREACHABLE.

    When ``targets`` is ``sources`` the result is exactly symmetric.
    """
    src = _as_array(sources)
    same = targets is sources
    dst = src if same else _as_array(targets)
    lat = lattice(world, resolution)
    src_nodes = lat.nodes_of(src)
    dst_nodes = lat.nodes_of(dst)
    if (src_nodes < 0).any() or (dst_nodes < 0).any():
        raise PreconditionError("pairwise query contains a point in a wall cell")

    out = np.empty((len(src), len(dst)))
    for start in range(0, len(src), _SWEEP_BLOCK):
        block = src_nodes[start : start + _SWEEP_BLOCK]
        fields = lat.sweep(block, limit=limit)
        out[start : start + len(block)] = fields[:, dst_nodes]
    if same:
        out = np.minimum(out, out.T)
    out = np.maximum(out, cdist(src, dst))
    out[out > limit] = UNREACHABLE
    return out


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _point_keys(points: np.ndarray, salt: int) -> np.ndarray:
    q = np.round(points * float(1 << 20)).astype(np.int64).view(np.uint64)
    h = _splitmix64(q[:, 0] ^ np.uint64(salt & 0xFFFFFFFFFFFFFFFF))
    return _splitmix64(h ^ q[:, 1])


def pair_uniform(
    a: Sequence[Point] | np.ndarray,
    b: Sequence[Point] | np.ndarray,
    salt: int = 0,
) -> np.ndarray:
    """Uniform [0, 1) value per unordered point pair, stable across calls."""
    ka = _point_keys(_as_array(a), salt)[:, None]
    kb = _point_keys(_as_array(b), salt)[None, :]
    lo, hi = np.minimum(ka, kb), np.maximum(ka, kb)
    mixed = _splitmix64(lo ^ _splitmix64(hi))
    return (mixed >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class DistanceEstimator:
    """Stand-in for the learned distance: the oracle, optionally corrupted.

    Corruption stages are applied in the order WallPiercing, Noisy, Scaled;
    ``kind`` selects which stages are active (COMPOSITE enables all three).
    """

    kind: EstimatorKind = EstimatorKind.ORACLE
    resolution: int = DEFAULT_RESOLUTION
    scale: float = 1.0
    noise_rel_std: float = 0.0
    pierce_fraction: float = 0.0
    pierce_cap: float = 10.0
    pierce_salt: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if self.resolution < 1:
            raise ValueError(f"resolution must be >= 1, got {self.resolution}")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.noise_rel_std < 0:
            raise ValueError(f"noise_rel_std must be >= 0, got {self.noise_rel_std}")
        if not 0 <= self.pierce_fraction <= 1:
            raise ValueError(
                f"pierce_fraction must be in [0, 1], got {self.pierce_fraction}"
            )
        if self.pierce_cap <= 0:
            raise ValueError(f"pierce_cap must be > 0, got {self.pierce_cap}")

    @property
    def pierces(self) -> bool:
        return (
            self.kind in (EstimatorKind.WALL_PIERCING, EstimatorKind.COMPOSITE)
            and self.pierce_fraction > 0
        )

    @property
    def noisy(self) -> bool:
        return (
            self.kind in (EstimatorKind.NOISY, EstimatorKind.COMPOSITE)
            and self.noise_rel_std > 0
        )

    @property
    def scaled(self) -> bool:
        return self.kind in (EstimatorKind.SCALED, EstimatorKind.COMPOSITE)

    def reach(self, e: float) -> float:
        """Oracle radius past which no estimate can fall below ``e``."""
        if self.noisy:
            return math.inf
        bound = e / self.scale if self.scaled else e
        if self.pierces:
            bound *= max(1.0, self.pierce_cap)
        return bound

    def _noise(self, rng: np.random.Generator | None, shape) -> np.ndarray | None:
        if not self.noisy:
            return None
        if rng is None:
            raise ValueError("a noisy estimator needs an rng")
        return rng.normal(0.0, self.noise_rel_std, shape)

    def _corrupt(
        self,
        oracle: np.ndarray,
        straight: np.ndarray,
        pair_u: np.ndarray | None,
        noise: np.ndarray | None,
    ) -> np.ndarray:
        out = oracle
        if self.pierces and pair_u is not None:
            pierced = (pair_u < self.pierce_fraction) & (
                oracle <= self.pierce_cap * straight
            )
            out = np.where(pierced, np.minimum(oracle, straight), out)
        if noise is not None:
            finite = np.isfinite(out)
            with np.errstate(invalid="ignore"):
                jittered = np.maximum(out * (1.0 + noise), 0.0)
            out = np.where(finite, jittered, UNREACHABLE)
        if self.scaled:
            out = self.scale * out
        return out

    def pairwise(
        self,
        world: MazeWorld,
        sources: Sequence[Point] | np.ndarray,
        targets: Sequence[Point] | np.ndarray,
        rng: np.random.Generator | None = None,
        limit: float = math.inf,
    ) -> np.ndarray:
        """Directed estimates est(sources[i], targets[j])."""
        src = _as_array(sources)
        same = targets is sources
        dst = src if same else _as_array(targets)
        oracle = oracle_pairwise(
            world, src, src if same else dst, self.resolution, limit
        )
        straight = cdist(src, dst)
        pair_u = pair_uniform(src, dst, self.pierce_salt) if self.pierces else None
        return self._corrupt(oracle, straight, pair_u, self._noise(rng, oracle.shape))

    def symmetric(
        self,
        world: MazeWorld,
        sources: Sequence[Point] | np.ndarray,
        targets: Sequence[Point] | np.ndarray,
        rng: np.random.Generator | None = None,
        limit: float = math.inf,
    ) -> np.ndarray:
        """Elementwise max(est(a, b), est(b, a)) for a in sources, b in targets."""
        src = _as_array(sources)
        same = targets is sources
        dst = src if same else _as_array(targets)
        oracle = oracle_pairwise(
            world, src, src if same else dst, self.resolution, limit
        )
        straight = cdist(src, dst)
        pair_u = pair_uniform(src, dst, self.pierce_salt) if self.pierces else None
        forward = self._corrupt(
            oracle, straight, pair_u, self._noise(rng, oracle.shape)
        )
        if not self.noisy:
            # every other stage is symmetric in the pair
            return forward
        if same:
            return np.maximum(forward, forward.T)
        backward = self._corrupt(
            oracle, straight, pair_u, self._noise(rng, oracle.shape)
        )
        return np.maximum(forward, backward)

    def estimate(
        self,
        world: MazeWorld,
        a: Point,
        b: Point,
        rng: np.random.Generator | None = None,
    ) -> float:
        oracle = np.array([[oracle_distance(world, a, b, self.resolution)]])
        straight = np.array([[euclidean(a, b)]])
        pair_u = pair_uniform([a], [b], self.pierce_salt) if self.pierces else None
        noise = self._noise(rng, (1, 1))
        return float(self._corrupt(oracle, straight, pair_u, noise)[0, 0])

    def estimate_sym(
        self,
        world: MazeWorld,
        a: Point,
        b: Point,
        rng: np.random.Generator | None = None,
        limit: float = math.inf,
    ) -> float:
        return float(self.symmetric(world, [a], [b], rng, limit)[0, 0])


def estimate(
    est: DistanceEstimator,
    world: MazeWorld,
    a: Point,
    b: Point,
    rng: np.random.Generator | None = None,
) -> float:
    return est.estimate(world, a, b, rng)
