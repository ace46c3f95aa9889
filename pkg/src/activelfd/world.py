"""2D reaching world: rectangular obstacles, scripted teacher, evaluation.

The scripted teacher stands in for a human: it plans a shortest path on the
visibility graph of inflated obstacle corners, follows it at constant speed
on the control dt grid, and perturbs the velocity commands with zero-sum
Gaussian noise so the endpoint and the finite-difference consistency between
states and commands are preserved.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = [
    "Rect",
    "World2D",
    "Demonstration",
    "TeacherOracle",
    "collides",
    "collides_batch",
    "scripted_demo",
    "evaluate_rollout",
    "resample_polyline",
    "truncate_polyline",
    "nearest_free_point",
    "uniform_free_point",
    "load_world",
    "default_world",
]

WORLD_SCHEMA_VERSION = 1


@dataclass
class Rect:
    """Axis-aligned rectangle given by min and max corners (closed set)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ValueError("rectangle must have positive extent")

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def contains_batch(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all(pts >= self.lo, axis=-1) & np.all(pts <= self.hi, axis=-1)

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.lo - margin, self.hi + margin)

    def corners(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Rect":
        return cls(np.asarray(d["min"]), np.asarray(d["max"]))


@dataclass
class World2D:
    """Bounded planar world with rectangular obstacles and a goal."""

    bounds: Rect
    obstacles: list[Rect]
    goal: np.ndarray
    goal_eps: float

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        if self.goal_eps <= 0:
            raise ValueError("goal_eps must be positive")
        if not self.bounds.contains(self.goal):
            raise ValueError("goal lies outside the world bounds")
        for i, obs in enumerate(self.obstacles):
            if not (self.bounds.contains(obs.lo) and self.bounds.contains(obs.hi)):
                raise ValueError(f"obstacle {i} is not inside the bounds")
        if collides(self, self.goal):
            raise ValueError("goal collides with an obstacle")

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds.hi - self.bounds.lo))

    def to_dict(self) -> dict:
        return {
            "schema_version": WORLD_SCHEMA_VERSION,
            "bounds": self.bounds.to_dict(),
            "obstacles": [o.to_dict() for o in self.obstacles],
            "goal": self.goal.tolist(),
            "goal_eps": self.goal_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World2D":
        return cls(
            bounds=Rect.from_dict(d["bounds"]),
            obstacles=[Rect.from_dict(o) for o in d["obstacles"]],
            goal=np.asarray(d["goal"]),
            goal_eps=float(d["goal_eps"]),
        )


def load_world(path) -> World2D:
    with open(path) as fh:
        return World2D.from_dict(json.load(fh))


def default_world() -> World2D:
    """The canonical reaching-in-clutter fixture shipped with the package."""
    text = resources.files("activelfd").joinpath("fixtures/reaching_world.json").read_text()
    return World2D.from_dict(json.loads(text))


def collides(world: World2D, p: np.ndarray, clearance: float = 0.0) -> bool:
    """True iff ``p`` is inside any obstacle (closed sets) or out of bounds.

    ``clearance`` expands every obstacle before testing (used for inflated
    safety checks); the bounds test is unaffected by it.
    """
    p = np.asarray(p, dtype=float)
    if not world.bounds.contains(p):
        return True
    for obs in world.obstacles:
        rect = obs.expanded(clearance) if clearance > 0.0 else obs
        if rect.contains(p):
            return True
    return False


def collides_batch(world: World2D, pts: np.ndarray, clearance: float = 0.0) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    hit = ~world.bounds.contains_batch(pts)
    for obs in world.obstacles:
        rect = obs.expanded(clearance) if clearance > 0.0 else obs
        hit |= rect.contains_batch(pts)
    return hit


@dataclass
class Demonstration:
    """State/velocity trajectory on the control dt grid.

    states and commands have equal length; commands[t] equals the forward
    difference (states[t+1] - states[t]) / dt for t < T-1 and the last
    command repeats the final segment velocity.
    """

    states: np.ndarray
    commands: np.ndarray
    dt: float
    source: str = "scripted"
    query: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.commands = np.asarray(self.commands, dtype=float)
        if self.states.shape != self.commands.shape:
            raise ValueError("states and commands must have matching shapes")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.commands))):
            raise ValueError("demonstration contains non-finite values")
        if self.source not in ("scripted", "human"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.states.shape[0] >= 2:
            fd = np.diff(self.states, axis=0) / self.dt
            err = np.max(np.abs(fd - self.commands[:-1]))
            if err > 1e-6:
                raise ValueError(
                    f"commands inconsistent with state finite differences ({err:.2e})"
                )
        if self.query is not None:
            self.query = np.asarray(self.query, dtype=float)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def joint_points(self) -> np.ndarray:
        """Rows [x, u] for fitting the joint state-action model."""
        return np.hstack([self.states, self.commands])


@dataclass
class TeacherOracle:
    """Scripted stand-in for the human teacher.

    ``max_length`` truncates the taught path after that arc length, yielding
    a partial demonstration that starts at the query point and heads toward
    the goal without reaching it; None teaches the full path.
    """

    world: World2D
    speed: float = 1.0
    noise_std: float = 0.05
    inflation: float = 0.3
    dt: float = 0.05
    max_noise_retries: int = 20
    max_length: float | None = None

    def __post_init__(self):
        if self.inflation <= 0:
            raise ValueError("inflation must be positive so paths keep clearance")
        if self.speed <= 0 or self.noise_std < 0:
            raise ValueError("speed must be positive and noise_std non-negative")
        if self.max_length is not None and self.max_length <= 0:
            raise ValueError("max_length must be positive when given")


# ---------------------------------------------------------------------------
# Visibility-graph planning
# ---------------------------------------------------------------------------


def _segment_hits_rect(p: np.ndarray, q: np.ndarray, rect: Rect, shrink: float = 1e-9) -> bool:
    """True iff segment p-q passes through the rectangle's open interior."""
    lo = rect.lo + shrink
    hi = rect.hi - shrink
    d = q - p
    t0, t1 = 0.0, 1.0
    for axis in range(2):
        if abs(d[axis]) < 1e-15:
            if p[axis] <= lo[axis] or p[axis] >= hi[axis]:
                return False
        else:
            ta = (lo[axis] - p[axis]) / d[axis]
            tb = (hi[axis] - p[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                return False
    return t0 < t1


def _visible(p: np.ndarray, q: np.ndarray, rects: list[Rect]) -> bool:
    return not any(_segment_hits_rect(p, q, r) for r in rects)


def plan_path(world: World2D, start: np.ndarray, inflation: float) -> np.ndarray:
    """Shortest waypoint path start -> goal over inflated obstacle corners.

    Raises:
        RuntimeError: when no collision-free path exists (enclosed start).
    """
    start = np.asarray(start, dtype=float)
    goal = world.goal
    inflated = [o.expanded(inflation) for o in world.obstacles]

    nodes = [start, goal]
    for rect in inflated:
        for corner in rect.corners():
            inside_other = any(
                r.expanded(-1e-9).contains(corner) for r in inflated
            )
            if world.bounds.contains(corner) and not inside_other:
                nodes.append(corner)
    n = len(nodes)
    if _visible(start, goal, inflated):
        return np.stack([start, goal])

    adjacency: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if _visible(nodes[i], nodes[j], inflated):
                w = float(np.linalg.norm(nodes[i] - nodes[j]))
                adjacency[i].append((j, w))
                adjacency[j].append((i, w))

    dist = np.full(n, np.inf)
    prev = np.full(n, -1, dtype=int)
    dist[0] = 0.0
    heap = [(0.0, 0)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == 1:
            break
        for v, w in adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if not np.isfinite(dist[1]):
        raise RuntimeError(f"no collision-free path from {start.tolist()} to the goal")
    path = [1]
    while path[-1] != 0:
        path.append(int(prev[path[-1]]))
    return np.stack([nodes[i] for i in reversed(path)])


def truncate_polyline(points: np.ndarray, max_length: float) -> np.ndarray:
    """Prefix of the polyline with arc length at most ``max_length``."""
    points = np.asarray(points, dtype=float)
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.cumsum(seg_len)
    if cum[-1] <= max_length:
        return points
    j = int(np.searchsorted(cum, max_length, side="right"))
    used = max_length - (cum[j - 1] if j > 0 else 0.0)
    frac = used / seg_len[j] if seg_len[j] > 0 else 0.0
    cut = points[j] + frac * seg[j]
    return np.vstack([points[: j + 1], cut])


def resample_polyline(points: np.ndarray, speed: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Arc-length resampling at (approximately) constant speed on the dt grid.

    The segment count is rounded so the final state lands exactly on the last
    waypoint; the effective speed is total_length / (n_segments * dt).

    Returns:
        (states, commands), both (N+1, 2); the last command repeats the final
        segment velocity so the arrays stay the same length.
    """
    points = np.asarray(points, dtype=float)
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    if total <= 0.0:
        raise ValueError("polyline has zero length")
    n_steps = max(1, int(round(total / (speed * dt))))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    targets = np.linspace(0.0, total, n_steps + 1)
    states = np.empty((n_steps + 1, 2))
    states[0] = points[0]
    states[-1] = points[-1]
    for i, s in enumerate(targets[1:-1], start=1):
        j = int(np.searchsorted(cum, s, side="right") - 1)
        j = min(j, len(seg_len) - 1)
        frac = (s - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        states[i] = points[j] + frac * seg[j]
    commands = np.empty_like(states)
    commands[:-1] = np.diff(states, axis=0) / dt
    commands[-1] = commands[-2] if n_steps >= 1 else 0.0
    return states, commands


def scripted_demo(teacher: TeacherOracle, x0: np.ndarray, rng_seed=0) -> Demonstration:
    """Plan, follow, and perturb a teaching trajectory from ``x0`` to the goal.

    Velocity noise is drawn zero-sum so the endpoint stays on the goal; the
    perturbed trajectory is re-checked collision-free at inflation/2
    clearance, redrawing up to ``max_noise_retries`` times and finally
    falling back to the noiseless path.

    Raises:
        ValueError: if ``x0`` collides.
        RuntimeError: if no collision-free path exists.
    """
    x0 = np.asarray(x0, dtype=float)
    if collides(teacher.world, x0):
        raise ValueError(f"start {x0.tolist()} collides")
    waypoints = plan_path(teacher.world, x0, teacher.inflation)
    if teacher.max_length is not None:
        waypoints = truncate_polyline(waypoints, teacher.max_length)
    states, commands = resample_polyline(waypoints, teacher.speed, teacher.dt)
    if teacher.noise_std <= 0.0:
        return Demonstration(states, commands, teacher.dt, source="scripted", query=x0)

    rng = np.random.default_rng(rng_seed)
    n_steps = states.shape[0] - 1
    clearance = teacher.inflation / 2.0
    for _ in range(teacher.max_noise_retries):
        noise = teacher.noise_std * rng.standard_normal((n_steps, 2))
        noise -= noise.mean(axis=0)
        noisy_cmd = commands.copy()
        noisy_cmd[:-1] += noise
        noisy_states = np.empty_like(states)
        noisy_states[0] = states[0]
        noisy_states[1:] = states[0] + np.cumsum(noisy_cmd[:-1] * teacher.dt, axis=0)
        noisy_states[-1] = states[-1]  # zero-sum noise lands exactly; pin fp drift
        noisy_cmd[-1] = noisy_cmd[-2]
        if not np.any(collides_batch(teacher.world, noisy_states, clearance)):
            fd = np.diff(noisy_states, axis=0) / teacher.dt
            noisy_cmd[:-1] = fd  # re-derive to keep the consistency exact after pinning
            noisy_cmd[-1] = noisy_cmd[-2]
            return Demonstration(noisy_states, noisy_cmd, teacher.dt,
                                 source="scripted", query=x0)
    return Demonstration(states, commands, teacher.dt, source="scripted", query=x0)


@dataclass
class RolloutEval:
    success: bool
    collided: bool
    path_length: float


def evaluate_rollout(world: World2D, r) -> RolloutEval:
    """Success iff the rollout reached the goal without any collision.

    Collision is checked at every recorded state plus 10 linear interpolation
    points per step, so thin obstacles straddled between steps are caught.
    """
    states = np.asarray(r.states, dtype=float)
    collided = bool(np.any(collides_batch(world, states)))
    if not collided and states.shape[0] >= 2:
        fractions = np.arange(1, 11) / 11.0
        a = states[:-1]
        b = states[1:]
        interp = a[:, None, :] + fractions[None, :, None] * (b - a)[:, None, :]
        collided = bool(np.any(collides_batch(world, interp.reshape(-1, 2))))
    path_length = float(np.linalg.norm(np.diff(states, axis=0), axis=1).sum())
    success = (r.termination == "goal_reached") and not collided
    return RolloutEval(success=success, collided=collided, path_length=path_length)


def nearest_free_point(
    world: World2D, p: np.ndarray, clearance: float = 0.0, resolution: int = 200
) -> np.ndarray:
    """Closest collision-free grid point to ``p`` (exhaustive grid argmin).

    Ties break toward the first point in row-major grid order.
    """
    p = np.asarray(p, dtype=float)
    if not collides(world, p, clearance):
        return p
    xs = np.linspace(world.bounds.lo[0], world.bounds.hi[0], resolution)
    ys = np.linspace(world.bounds.lo[1], world.bounds.hi[1], resolution)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    free = ~collides_batch(world, pts, clearance)
    if not np.any(free):
        raise RuntimeError("no free point found on the projection grid")
    candidates = pts[free]
    idx = int(np.argmin(np.linalg.norm(candidates - p, axis=1)))
    return candidates[idx]


def uniform_free_point(world: World2D, rng: np.random.Generator,
                       clearance: float = 0.0, max_tries: int = 10_000) -> np.ndarray:
    """Uniform rejection sample over the collision-free space."""
    for _ in range(max_tries):
        p = world.bounds.lo + rng.random(2) * (world.bounds.hi - world.bounds.lo)
        if not collides(world, p, clearance):
            return p
    raise RuntimeError("failed to sample a free point")
