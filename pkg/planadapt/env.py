from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from planadapt.logger import get_logger

logger = get_logger(__name__)

DEFAULTS_DIR = Path(__file__).parent / "defaults"
SHIPPED_MAPS = {
    "default": DEFAULTS_DIR / "maze_default.txt",
    "two_rooms": DEFAULTS_DIR / "maze_two_rooms.txt",
}

WALL_EPSILON = 1e-3
MAX_REJECTIONS = 10_000


class MalformedMapError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class Point(NamedTuple):
    """A position (or a displacement) in length units.

    x runs along map columns, y along map rows (row 0 is the first text line).
    """

    x: float
    y: float

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


def euclidean(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True, eq=False)
class MazeWorld:
    """Occupancy grid plus the motion noise model of the task environment.

    ``grid[r, c]`` is True for wall cells. Immutable after construction; the
    ``_lattices`` slot only memoises derived distance lattices.
    """

    grid: np.ndarray
    cell_size: float = 1.0
    noise_std: float = 0.3
    max_step: float = 1.0
    goal_radius: float = 1.0
    clearance: float = 0.0
    _lattices: dict[int, Any] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2 or grid.size == 0:
            raise MalformedMapError("grid must be a non-empty 2D array")
        if grid.all():
            raise MalformedMapError("map has no free cell")
        border = np.concatenate([grid[0], grid[-1], grid[:, 0], grid[:, -1]])
        if not border.all():
            raise MalformedMapError("outer boundary cells must all be walls")
        if self.cell_size <= 0:
            raise MalformedMapError(f"cell_size must be > 0, got {self.cell_size}")
        if self.noise_std < 0:
            raise MalformedMapError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.max_step <= 0:
            raise MalformedMapError(f"max_step must be > 0, got {self.max_step}")
        if self.goal_radius <= 0:
            raise MalformedMapError(
                f"goal_radius must be > 0, got {self.goal_radius}"
            )
        if self.clearance < 0:
            raise MalformedMapError(f"clearance must be >= 0, got {self.clearance}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def height(self) -> float:
        return self.rows * self.cell_size

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def free_cell_count(self) -> int:
        return int((~self.grid).sum())

    def cell_of(self, p: Point) -> tuple[int, int]:
        return (
            math.floor(p[1] / self.cell_size),
            math.floor(p[0] / self.cell_size),
        )

    def is_wall_cell(self, row: int, col: int) -> bool:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            return True
        return bool(self.grid[row, col])

    def cell_center(self, row: int, col: int) -> Point:
        return Point((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)


def load_maze(
    text: str,
    cell_size: float = 1.0,
    noise_std: float = 0.3,
    max_step: float = 1.0,
    goal_radius: float = 1.0,
    clearance: float = 0.0,
) -> MazeWorld:
    """Parse an ASCII map: '#' is a wall cell, '.' a free cell.

    Lines must be rectangular and the border must be all walls.

    Test cases:
    - ragged lines, characters outside {'#', '.'}, an open border
    """
    lines = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    if not lines or not lines[0]:
        raise MalformedMapError("map text is empty")
    width = len(lines[0])
    for number, line in enumerate(lines):
        if len(line) != width:
            raise MalformedMapError(
                f"ragged map: line {number} has {len(line)} characters, "
                f"expected {width}"
            )
        illegal = set(line) - {"#", "."}
        if illegal:
            raise MalformedMapError(
                f"illegal characters {sorted(illegal)} on line {number}"
            )
    grid = np.array([[ch == "#" for ch in line] for line in lines], dtype=bool)
    world = MazeWorld(
        grid=grid,
        cell_size=cell_size,
        noise_std=noise_std,
        max_step=max_step,
        goal_radius=goal_radius,
        clearance=clearance,
    )
    logger.debug(
        f"Loaded {world.rows}x{world.cols} maze with {world.free_cell_count} "
        "free cells"
    )
    return world


def load_maze_file(path: str | Path, **params) -> MazeWorld:
    """Load a map by file path or by the name of a shipped map."""
    resolved = SHIPPED_MAPS.get(str(path), Path(path))
    if not resolved.is_file():
        raise MalformedMapError(f"map file {path} does not exist")
    return load_maze(resolved.read_text(), **params)


def is_free(world: MazeWorld, p: Point) -> bool:
    if not (math.isfinite(p[0]) and math.isfinite(p[1])):
        return False
    return not world.is_wall_cell(*world.cell_of(p))


def _first_wall_hit(world: MazeWorld, s: Point, q: Point) -> float | None:
    """Segment parameter t in [0, 1] where s->q first enters a wall cell.

    Grid traversal one cell at a time. A segment passing exactly through a
    cell corner is blocked if any of the cells meeting at that corner is a
    wall.
    """
    cs = world.cell_size
    x0, y0 = s
    dx, dy = q[0] - x0, q[1] - y0
    row, col = world.cell_of(s)

    if dx > 0:
        step_c, t_max_c, t_delta_c = 1, ((col + 1) * cs - x0) / dx, cs / dx
    elif dx < 0:
        step_c, t_max_c, t_delta_c = -1, (col * cs - x0) / dx, -cs / dx
    else:
        step_c, t_max_c, t_delta_c = 0, math.inf, math.inf
    if dy > 0:
        step_r, t_max_r, t_delta_r = 1, ((row + 1) * cs - y0) / dy, cs / dy
    elif dy < 0:
        step_r, t_max_r, t_delta_r = -1, (row * cs - y0) / dy, -cs / dy
    else:
        step_r, t_max_r, t_delta_r = 0, math.inf, math.inf

    while True:
        t = min(t_max_c, t_max_r)
        if t > 1.0:
            return None
        if t_max_c < t_max_r:
            col += step_c
            t_max_c += t_delta_c
            if world.is_wall_cell(row, col):
                return t
        elif t_max_r < t_max_c:
            row += step_r
            t_max_r += t_delta_r
            if world.is_wall_cell(row, col):
                return t
        else:
            if (
                world.is_wall_cell(row, col + step_c)
                or world.is_wall_cell(row + step_r, col)
                or world.is_wall_cell(row + step_r, col + step_c)
            ):
                return t
            col += step_c
            row += step_r
            t_max_c += t_delta_c
            t_max_r += t_delta_r


def segment_blocked(world: MazeWorld, p: Point, q: Point) -> bool:
    """True iff the straight segment p->q crosses a wall cell."""
    if not is_free(world, p):
        return True
    return _first_wall_hit(world, p, q) is not None


def _truncate(world: MazeWorld, s: Point, candidate: Point) -> Point:
    t = _first_wall_hit(world, s, candidate)
    if t is None:
        return candidate
    length = euclidean(s, candidate)
    if length == 0.0:
        return s
    travel = max(0.0, t * length - WALL_EPSILON)
    frac = travel / length
    stopped = Point(
        s[0] + frac * (candidate[0] - s[0]), s[1] + frac * (candidate[1] - s[1])
    )
    if not is_free(world, stopped):
        return s
    return stopped


def step(world: MazeWorld, s: Point, a: Point, rng: np.random.Generator) -> Point:
    """Apply displacement ``a`` plus Gaussian motion noise from state ``s``.

    Motion stops just short of the first wall crossed; there is no sliding.
    """
    if math.hypot(a[0], a[1]) > world.max_step + 1e-9:
        raise PreconditionError(
            f"action magnitude {math.hypot(a[0], a[1]):.6f} exceeds max_step "
            f"{world.max_step}"
        )
    if not is_free(world, s):
        raise PreconditionError(f"state {s} is not in a free cell")
    noise = rng.normal(0.0, world.noise_std, 2)
    candidate = Point(s[0] + a[0] + float(noise[0]), s[1] + a[1] + float(noise[1]))
    return _truncate(world, Point(*s), candidate)


@dataclass(frozen=True)
class ReactionModel:
    """Greedy stand-in for the learned goal-conditioned policy.

    Weaker agents get a smaller ``step_scale``, more ``extra_noise_std`` and a
    smaller ``budget_factor``.
    """

    step_scale: float = 1.0
    extra_noise_std: float = 0.0
    budget_factor: float = 3.0
    budget_floor: int = 5

    def __post_init__(self):
        if not 0 < self.step_scale <= 1:
            raise ValueError(f"step_scale must be in (0, 1], got {self.step_scale}")
        if self.extra_noise_std < 0:
            raise ValueError(
                f"extra_noise_std must be >= 0, got {self.extra_noise_std}"
            )
        if self.budget_factor < 1:
            raise ValueError(
                f"budget_factor must be >= 1, got {self.budget_factor}"
            )
        if self.budget_floor < 1:
            raise ValueError(f"budget_floor must be >= 1, got {self.budget_floor}")

    def budget(self, estimated_distance: float) -> int:
        """Steps allowed for one subgoal."""
        if not math.isfinite(estimated_distance):
            return self.budget_floor
        return max(
            self.budget_floor, math.ceil(self.budget_factor * estimated_distance)
        )


def react(
    model: ReactionModel,
    world: MazeWorld,
    s: Point,
    subgoal: Point,
    rng: np.random.Generator,
) -> Point:
    """Head straight for the subgoal; walls are never routed around."""
    dx, dy = subgoal[0] - s[0], subgoal[1] - s[1]
    dist = math.hypot(dx, dy)
    magnitude = min(model.step_scale * world.max_step, dist)
    if dist > 0:
        ax, ay = dx / dist * magnitude, dy / dist * magnitude
    else:
        ax, ay = 0.0, 0.0
    if model.extra_noise_std > 0:
        jitter = rng.normal(0.0, model.extra_noise_std, 2)
        ax, ay = ax + float(jitter[0]), ay + float(jitter[1])
    norm = math.hypot(ax, ay)
    if norm > world.max_step:
        ax, ay = ax / norm * world.max_step, ay / norm * world.max_step
    return Point(ax, ay)


def has_clearance(world: MazeWorld, p: Point, radius: float) -> bool:
    """True iff ``p`` is free and no wall cell comes closer than ``radius``."""
    if not is_free(world, p):
        return False
    if radius <= 0:
        return True
    cs = world.cell_size
    rows = np.arange(
        max(math.floor((p[1] - radius) / cs), 0),
        min(math.floor((p[1] + radius) / cs), world.rows - 1) + 1,
    )
    cols = np.arange(
        max(math.floor((p[0] - radius) / cs), 0),
        min(math.floor((p[0] + radius) / cs), world.cols - 1) + 1,
    )
    # distance from p to each cell rectangle, 0 inside
    dx = np.maximum(np.maximum(cols * cs - p[0], p[0] - (cols + 1) * cs), 0.0)
    dy = np.maximum(np.maximum(rows * cs - p[1], p[1] - (rows + 1) * cs), 0.0)
    near = np.hypot(dy[:, None], dx[None, :]) < radius
    return not bool(np.any(world.grid[np.ix_(rows, cols)] & near))


def sample_free(
    world: MazeWorld, rng: np.random.Generator, clearance: float | None = None
) -> Point:
    """Uniform sample over the free area by rejection.

    Points closer than ``clearance`` (default ``world.clearance``) to a wall
    are rejected too.
    """
    radius = world.clearance if clearance is None else clearance
    for _ in range(MAX_REJECTIONS):
        xy = rng.uniform((0.0, 0.0), (world.width, world.height))
        p = Point(float(xy[0]), float(xy[1]))
        if has_clearance(world, p, radius):
            return p
    raise SamplingError(
        f"no free point with clearance {radius} found after {MAX_REJECTIONS} "
        "rejections; map is degenerate"
    )
