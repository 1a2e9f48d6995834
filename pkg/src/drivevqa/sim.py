"""Vehicle kinematics, A* waypoint routing, ego-frame transforms and reward.

The vehicle is a kinematic bicycle (wheelbase 2.5 m) driven by a 2-D action
(steer, throttle), both clamped to [-1, 1].  The lane-relative driving
vector (v, d, phi) is recomputed against the planned route's centerline
every step, and the per-step reward is

    |v cos(phi)| - |v sin(phi)| - |v| |d|        while driving in lane,
    -200                                         on lane departure / collision,
    +100                                         on reaching the goal.

Everything here is deterministic: same track, route, state and action
sequence give bit-identical trajectories.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .track import (GO_STRAIGHT, Edge, Pose, TrackSpec, normalize_angle)

EVENT_NONE = "none"
EVENT_LANE_DEPARTURE = "lane_departure"
EVENT_COLLISION = "collision"
EVENT_GOAL = "goal_reached"
EVENTS = (EVENT_NONE, EVENT_LANE_DEPARTURE, EVENT_COLLISION, EVENT_GOAL)

CENTERLINE_SPACING = 0.25  # m between dense centerline samples

REWARD_CRASH = -200.0
REWARD_GOAL = 100.0


class InvalidNode(ValueError):
    """Route endpoint is unknown, or start == goal."""


class NoPath(ValueError):
    """The segment graph has no directed path from start to goal."""


class InvalidDt(ValueError):
    """Timestep outside (0, 0.1]."""


@dataclass(frozen=True)
class Action:
    steer: float
    throttle: float

    def clamped(self) -> "Action":
        return Action(min(1.0, max(-1.0, self.steer)),
                      min(1.0, max(-1.0, self.throttle)))


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    v: float
    d: float
    phi: float
    route_progress: int


@dataclass(frozen=True)
class StepOutcome:
    next_state: EgoState
    reward: float
    done: bool
    event: str


@dataclass(frozen=True)
class SimParams:
    wheelbase: float = 2.5
    max_steer: float = math.radians(35.0)
    max_accel: float = 3.0
    v_max: float = 10.0
    dt: float = 0.05
    goal_radius: float = 2.0
    footprint_length: float = 3.0
    footprint_width: float = 1.6
    max_steps: int = 2000


# ---------------------------------------------------------------------------
# rigid transforms

def ego_transform(pose: Pose) -> np.ndarray:
    """World-from-ego homogeneous transform for a planar pose."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return np.array([
        [c, -s, 0.0, pose.x],
        [s, c, 0.0, pose.y],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def transform_waypoints(pose: Pose, points) -> np.ndarray:
    """Map global (x, y) points into the ego frame of ``pose``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    dx = pts[:, 0] - pose.x
    dy = pts[:, 1] - pose.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


# ---------------------------------------------------------------------------
# reward

def reward(v: float, d: float, phi: float, event: str = EVENT_NONE) -> float:
    if event in (EVENT_LANE_DEPARTURE, EVENT_COLLISION):
        return REWARD_CRASH
    if event == EVENT_GOAL:
        return REWARD_GOAL
    return abs(v * math.cos(phi)) - abs(v * math.sin(phi)) - abs(v) * abs(d)


# ---------------------------------------------------------------------------
# routing

@dataclass(frozen=True)
class Route:
    """A planned path: n waypoints on the lane centerline plus the dense
    centerline itself (positions, cumulative arc length, headings and the
    action-category tag active over each arc-length span)."""

    waypoints: np.ndarray           # (n, 2)
    waypoint_tags: tuple[str, ...]  # category at each waypoint
    goal: tuple[float, float]
    edge_keys: tuple[str, ...]      # traversed segment[:branch] ids, in order
    centerline: np.ndarray          # (m, 2)
    centerline_s: np.ndarray        # (m,)
    centerline_yaw: np.ndarray      # (m,)
    spans: tuple[tuple[float, float, str], ...]
    span_keys: tuple[str, ...]      # edge key per span, aligned with spans
    length: float

    @cached_property
    def waypoint_s(self) -> np.ndarray:
        return np.linspace(0.0, self.length, len(self.waypoints))

    def category_at(self, s: float) -> str:
        s = min(max(s, 0.0), self.length)
        for _, s1, tag in self.spans:
            if s < s1:
                return tag
        return self.spans[-1][2]

    def edge_key_at(self, s: float) -> str:
        s = min(max(s, 0.0), self.length)
        for (_, s1, _), key in zip(self.spans, self.span_keys):
            if s < s1:
                return key
        return self.span_keys[-1]

    def point_at(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.centerline_s, s, side="right")) - 1
        i = min(max(i, 0), len(self.centerline) - 2)
        span = self.centerline_s[i + 1] - self.centerline_s[i]
        t = 0.0 if span <= 0 else (s - self.centerline_s[i]) / span
        p = self.centerline[i] * (1.0 - t) + self.centerline[i + 1] * t
        return float(p[0]), float(p[1])


def _astar(track: TrackSpec, start: str, goal: str) -> list[Edge]:
    """Minimum arc-length path over directed lane edges; Euclidean heuristic."""
    goal_pos = track.node_poses[goal]

    def h(node):
        p = track.node_poses[node]
        return math.hypot(p.x - goal_pos.x, p.y - goal_pos.y)

    counter = 0
    frontier = [(h(start), counter, start, 0.0, [])]
    best_g = {start: 0.0}
    while frontier:
        _, _, node, g, path = heapq.heappop(frontier)
        if node == goal:
            return path
        if g > best_g.get(node, math.inf):
            continue
        for edge in track.outgoing(node):
            g2 = g + edge.geom.length
            if g2 < best_g.get(edge.dst, math.inf):
                best_g[edge.dst] = g2
                counter += 1
                heapq.heappush(frontier, (g2 + h(edge.dst), counter, edge.dst,
                                          g2, path + [edge]))
    raise NoPath(f"no path from {start!r} to {goal!r} in track {track.name!r}")


def _sample_edges(edges: list[Edge]):
    points, yaws, tags = [], [], []
    spans = []
    s_origin = 0.0
    for edge in edges:
        geom = edge.geom
        steps = max(int(math.ceil(geom.length / CENTERLINE_SPACING)), 1)
        offsets = np.linspace(0.0, geom.length, steps + 1)
        if points:
            offsets = offsets[1:]  # joint point already emitted by previous edge
        for off in offsets:
            points.append(geom.point_at(off))
            yaws.append(geom.heading_at(off))
            tags.append(edge.category)
        spans.append((s_origin, s_origin + geom.length, edge.category))
        s_origin += geom.length
    pts = np.asarray(points)
    deltas = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(deltas)])
    # use exact per-edge lengths for the span table but the polyline's own
    # cumulative chord length for projection, so the two stay consistent
    return pts, s, np.asarray(yaws), spans, s_origin


def plan_route(track: TrackSpec, start: str, goal: str, n: int = 15) -> Route:
    """A* over the segment graph, then n waypoints uniform in arc length."""
    for node in (start, goal):
        if node not in track.node_poses:
            raise InvalidNode(f"unknown node {node!r} in track {track.name!r}")
    if start == goal:
        raise InvalidNode("start and goal must differ (zero-length route)")
    if n < 2:
        raise ValueError("a route needs at least 2 waypoints")
    edges = _astar(track, start, goal)
    pts, s, yaws, spans, length = _sample_edges(edges)
    scale = s[-1] / length if length > 0 else 1.0
    wp_s = np.linspace(0.0, s[-1], n)
    wp_x = np.interp(wp_s, s, pts[:, 0])
    wp_y = np.interp(wp_s, s, pts[:, 1])
    waypoints = np.stack([wp_x, wp_y], axis=1)
    spans_scaled = tuple((s0 * scale, s1 * scale, tag) for s0, s1, tag in spans)
    route = Route(
        waypoints=waypoints,
        waypoint_tags=tuple(_tag_at(spans_scaled, float(v), s[-1]) for v in wp_s),
        goal=(float(waypoints[-1, 0]), float(waypoints[-1, 1])),
        edge_keys=tuple(e.key for e in edges),
        centerline=pts,
        centerline_s=s,
        centerline_yaw=yaws,
        spans=spans_scaled,
        span_keys=tuple(e.key for e in edges),
        length=float(s[-1]),
    )
    return route


def _tag_at(spans, s, total):
    for s0, s1, tag in spans:
        if s < s1:
            return tag
    return spans[-1][2]


# ---------------------------------------------------------------------------
# lane projection

def project_to_route(route: Route, x: float, y: float, progress: int):
    """Arc length, signed lateral offset and lane heading near a waypoint index.

    The search is windowed two waypoints either side of ``progress`` so
    overlapping lanes elsewhere on the track cannot capture the projection.
    """
    wp_s = route.waypoint_s
    lo_s = wp_s[max(progress - 2, 0)]
    hi_s = wp_s[min(progress + 2, len(wp_s) - 1)]
    i0 = int(np.searchsorted(route.centerline_s, lo_s)) - 1
    i1 = int(np.searchsorted(route.centerline_s, hi_s)) + 1
    i0 = max(i0, 0)
    i1 = min(i1, len(route.centerline) - 1)
    pts = route.centerline[i0:i1 + 1]
    d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
    k = i0 + int(np.argmin(d2))

    best = None
    for a in (k - 1, k):
        if a < 0 or a + 1 >= len(route.centerline):
            continue
        p0 = route.centerline[a]
        p1 = route.centerline[a + 1]
        seg = p1 - p0
        seg_len2 = float(seg @ seg)
        if seg_len2 <= 0:
            continue
        t = float(np.clip(((x - p0[0]) * seg[0] + (y - p0[1]) * seg[1]) / seg_len2, 0.0, 1.0))
        px, py = p0[0] + t * seg[0], p0[1] + t * seg[1]
        dist2 = (x - px) ** 2 + (y - py) ** 2
        if best is None or dist2 < best[0]:
            s_here = float(route.centerline_s[a]) + t * math.sqrt(seg_len2)
            yaw0 = route.centerline_yaw[a]
            yaw1 = route.centerline_yaw[a + 1]
            yaw = normalize_angle(yaw0 + t * normalize_angle(yaw1 - yaw0))
            best = (dist2, s_here, px, py, yaw)
    _, s_here, px, py, lane_yaw = best
    # positive d = left of the lane direction
    cross = math.cos(lane_yaw) * (y - py) - math.sin(lane_yaw) * (x - px)
    d = math.copysign(math.sqrt((x - px) ** 2 + (y - py) ** 2), cross) if cross != 0 else 0.0
    return s_here, d, lane_yaw


def action_category(route: Route, progress: int, state: EgoState) -> str:
    """Category of the route span under the vehicle."""
    if not 0 <= progress < len(route.waypoints):
        raise IndexError(f"progress {progress} outside route of {len(route.waypoints)}")
    s, _, _ = project_to_route(route, state.pose.x, state.pose.y, progress)
    return route.category_at(s)


# ---------------------------------------------------------------------------
# collision test

def _footprint_corners(pose: Pose, params: SimParams):
    hl, hw = params.footprint_length / 2.0, params.footprint_width / 2.0
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return [(pose.x + c * dx - s * dy, pose.y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw))]


def _rect_overlap(corners, rect):
    """Separating-axis test: oriented footprint vs axis-aligned obstacle."""
    xmin, ymin, xmax, ymax = rect
    xs = [p[0] for p in corners]
    ys = [p[1] for p in corners]
    if max(xs) < xmin or min(xs) > xmax or max(ys) < ymin or min(ys) > ymax:
        return False
    # axes of the oriented rectangle
    for (ax, ay) in ((corners[0][0] - corners[2][0], corners[0][1] - corners[2][1]),
                     (corners[0][0] - corners[1][0], corners[0][1] - corners[1][1])):
        proj_fp = [ax * px + ay * py for px, py in corners]
        proj_ob = [ax * px + ay * py for px, py in
                   ((xmin, ymin), (xmin, ymax), (xmax, ymin), (xmax, ymax))]
        if max(proj_fp) < min(proj_ob) or min(proj_fp) > max(proj_ob):
            return False
    return True


def collides(track: TrackSpec, pose: Pose, params: SimParams) -> bool:
    if not track.obstacles:
        return False
    corners = _footprint_corners(pose, params)
    return any(_rect_overlap(corners, rect) for rect in track.obstacles)


# ---------------------------------------------------------------------------
# stepping

def step(state: EgoState, action: Action, dt: float, *,
         track: TrackSpec, route: Route, params: SimParams) -> StepOutcome:
    """Advance the kinematic bicycle one tick and classify the outcome."""
    if not 0.0 < dt <= 0.1:
        raise InvalidDt(f"dt must be in (0, 0.1], got {dt}")
    act = action.clamped()
    delta = act.steer * params.max_steer
    accel = act.throttle * params.max_accel
    v = min(max(state.v + accel * dt, 0.0), params.v_max)
    pose = state.pose
    x = pose.x + v * math.cos(pose.yaw) * dt
    y = pose.y + v * math.sin(pose.yaw) * dt
    yaw = normalize_angle(pose.yaw + v / params.wheelbase * math.tan(delta) * dt)
    new_pose = Pose(x, y, yaw)

    s_here, d, lane_yaw = project_to_route(route, x, y, state.route_progress)
    phi = normalize_angle(yaw - lane_yaw)
    wp_s = route.waypoint_s
    progress = state.route_progress
    while progress < len(wp_s) - 1 and wp_s[progress] <= s_here:
        progress += 1

    gx, gy = route.goal
    if math.hypot(x - gx, y - gy) <= params.goal_radius:
        event = EVENT_GOAL
    elif collides(track, new_pose, params):
        event = EVENT_COLLISION
    elif abs(d) > track.lane_width / 2.0:
        event = EVENT_LANE_DEPARTURE
    else:
        event = EVENT_NONE

    next_state = EgoState(pose=new_pose, v=v, d=d, phi=phi, route_progress=progress)
    return StepOutcome(next_state=next_state,
                       reward=reward(v, d, phi, event),
                       done=event != EVENT_NONE,
                       event=event)


class Environment:
    """Episode wrapper: reset to the route start, step until done or the
    step cap; the cap truncates without a terminal event.

    ``start_offset`` shifts the spawn laterally (positive = left of the
    centerline), which makes otherwise-identical greedy rollouts trace
    distinct trajectories over the same route."""

    def __init__(self, track: TrackSpec, route: Route, params: SimParams | None = None,
                 start_offset: float = 0.0):
        self.track = track
        self.route = route
        self.params = params or SimParams()
        self.start_offset = start_offset
        self.state: EgoState | None = None
        self.steps = 0

    @property
    def sim_time(self) -> float:
        return self.steps * self.params.dt

    def reset(self) -> EgoState:
        x, y = self.route.centerline[0]
        yaw = float(self.route.centerline_yaw[0])
        x = float(x) - math.sin(yaw) * self.start_offset
        y = float(y) + math.cos(yaw) * self.start_offset
        self.state = EgoState(pose=Pose(x, y, yaw),
                              v=0.0, d=self.start_offset, phi=0.0, route_progress=1)
        self.steps = 0
        return self.state

    def step(self, action: Action) -> tuple[StepOutcome, bool]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        outcome = step(self.state, action, self.params.dt,
                       track=self.track, route=self.route, params=self.params)
        self.state = outcome.next_state
        self.steps += 1
        truncated = (not outcome.done) and self.steps >= self.params.max_steps
        return outcome, truncated


def make_env(track: TrackSpec, route_name: str, params: SimParams | None = None,
             n_waypoints: int = 15, start_offset: float = 0.0) -> Environment:
    if route_name not in track.routes:
        raise InvalidNode(f"track {track.name!r} has no route {route_name!r}")
    start, goal = track.routes[route_name]
    return Environment(track, plan_route(track, start, goal, n_waypoints), params,
                       start_offset=start_offset)


# ---------------------------------------------------------------------------
# rollouts and trajectory export

class Autopilot:
    """Pure-pursuit steering plus a curvature-aware speed target.

    A scripted reference driver: deterministic, keeps the lane on any track
    built from the standard segment vocabulary.
    """

    def __init__(self, lookahead: float = 6.0, v_straight: float = 6.0,
                 v_curve: float = 4.0):
        self.lookahead = lookahead
        self.v_straight = v_straight
        self.v_curve = v_curve

    def act(self, env: Environment, state: EgoState) -> Action:
        route, params = env.route, env.params
        s_here, _, _ = project_to_route(route, state.pose.x, state.pose.y,
                                        state.route_progress)
        target = route.point_at(s_here + self.lookahead)
        local = transform_waypoints(state.pose, [target])[0]
        dist2 = float(local @ local)
        curvature = 0.0 if dist2 < 1e-9 else 2.0 * float(local[1]) / dist2
        delta = math.atan(curvature * params.wheelbase)
        steer = min(max(delta / params.max_steer, -1.0), 1.0)

        ahead = route.category_at(min(s_here + self.lookahead, route.length))
        here = route.category_at(s_here)
        v_target = self.v_straight if (here == GO_STRAIGHT and ahead == GO_STRAIGHT) \
            else self.v_curve
        throttle = min(max(0.8 * (v_target - state.v), -1.0), 1.0)
        return Action(steer, throttle)


def rollout(env: Environment, driver, max_steps: int | None = None):
    """Run one episode; returns (records, final event).

    Each record carries the post-step state, the action taken and the
    reward, i.e. the fields of the trajectory export schema.
    """
    state = env.reset()
    records = []
    limit = max_steps or env.params.max_steps
    event = EVENT_NONE
    for _ in range(limit):
        action = driver.act(env, state)
        outcome, truncated = env.step(action)
        state = outcome.next_state
        records.append({
            "t": round(env.sim_time, 9),
            "x": state.pose.x, "y": state.pose.y, "yaw": state.pose.yaw,
            "v": state.v, "d": state.d, "phi": state.phi,
            "action": [action.clamped().steer, action.clamped().throttle],
            "reward": outcome.reward,
            "event": outcome.event,
        })
        if outcome.done or truncated:
            event = outcome.event
            break
    return records, event


def export_trajectory(records, path):
    """Line-delimited trajectory records {t, x, y, yaw, v, d, phi, action,
    reward, event}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
