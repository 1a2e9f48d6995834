"""Track world: segment graph, geometry, and the declarative track file format.

A track is a directed graph of road segments.  Segment kinds are
``straight``, ``arc-left``, ``arc-right`` and ``t-junction``; a t-junction
carries exactly two outgoing branches (left and right), each a quarter-turn
arc to its own exit node.  Node poses are propagated from the origin node,
so shared endpoints and tangents are continuous by construction; nodes
reachable along more than one chain are cross-checked to 1e-9.

Track file format (one statement per line, ``#`` comments)::

    track <name>
    lane_width <meters>
    origin <node> <x> <y> <yaw-rad>
    segment <id> straight <from> <to> length=<m>
    segment <id> arc-left|arc-right <from> <to> radius=<m> [sweep=<rad>]
    segment <id> t-junction <from> left=<node> right=<node> radius=<m>
    obstacle <xmin> <ymin> <xmax> <ymax>
    route <name> <start-node> <goal-node>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

GEOM_TOL = 1e-9
HALF_PI = math.pi / 2.0

SEGMENT_KINDS = ("straight", "arc-left", "arc-right", "t-junction")

# action categories, keyed by what the road does under the ego vehicle
GO_STRAIGHT = "go_straight"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"
TURN_LEFT_T = "turn_left_t"
TURN_RIGHT_T = "turn_right_t"
CATEGORIES = (GO_STRAIGHT, TURN_LEFT, TURN_RIGHT, TURN_LEFT_T, TURN_RIGHT_T)


class InvalidTrack(ValueError):
    """Track description violates the format or the geometric invariants."""


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))


@dataclass(frozen=True)
class EdgeGeom:
    """Centerline of one traversable lane piece.

    kind "straight" runs from ``start`` for ``length`` meters; kind "arc"
    bends with ``turn`` = +1 (left) or -1 (right) at ``radius`` through
    ``length`` / ``radius`` radians.
    """

    kind: str
    start: Pose
    length: float
    radius: float = 0.0
    turn: int = 0

    def point_at(self, s: float) -> tuple[float, float]:
        p = self.start
        if self.kind == "straight":
            return p.x + s * math.cos(p.yaw), p.y + s * math.sin(p.yaw)
        # arc center sits on the turn side: pos + r * (left normal) * turn
        u = self.turn * s / self.radius
        cx = p.x + self.turn * self.radius * -math.sin(p.yaw)
        cy = p.y + self.turn * self.radius * math.cos(p.yaw)
        dx, dy = p.x - cx, p.y - cy
        cos_u, sin_u = math.cos(u), math.sin(u)
        return cx + dx * cos_u - dy * sin_u, cy + dx * sin_u + dy * cos_u

    def heading_at(self, s: float) -> float:
        if self.kind == "straight":
            return self.start.yaw
        return normalize_angle(self.start.yaw + self.turn * s / self.radius)

    def end_pose(self) -> Pose:
        x, y = self.point_at(self.length)
        return Pose(x, y, self.heading_at(self.length))

    def center(self) -> tuple[float, float]:
        if self.kind != "arc":
            raise ValueError("straight edges have no arc center")
        p = self.start
        return (p.x + self.turn * self.radius * -math.sin(p.yaw),
                p.y + self.turn * self.radius * math.cos(p.yaw))


@dataclass(frozen=True)
class Segment:
    seg_id: str
    kind: str
    start: str
    end: str | None = None                 # straight / arc
    left: str | None = None                # t-junction exits
    right: str | None = None
    length: float = 0.0
    radius: float = 0.0
    sweep: float = HALF_PI


@dataclass(frozen=True)
class Edge:
    """One directed traversable lane: a segment, or one branch of a junction."""

    seg_id: str
    branch: str | None
    src: str
    dst: str
    category: str
    geom: EdgeGeom

    @property
    def key(self) -> str:
        return self.seg_id if self.branch is None else f"{self.seg_id}:{self.branch}"


@dataclass
class TrackSpec:
    name: str
    lane_width: float
    segments: list[Segment]
    obstacles: list[tuple[float, float, float, float]] = field(default_factory=list)
    routes: dict[str, tuple[str, str]] = field(default_factory=dict)
    origin_node: str = ""
    origin_pose: Pose = Pose(0.0, 0.0, 0.0)
    node_poses: dict[str, Pose] = field(default_factory=dict)
    edges: list[Edge] = field(default_factory=list)

    def __post_init__(self):
        self._solve_geometry()
        self._validate()

    def _edge_templates(self):
        for seg in self.segments:
            if seg.kind == "straight":
                yield seg, None, seg.end, GO_STRAIGHT
            elif seg.kind == "arc-left":
                yield seg, None, seg.end, TURN_LEFT
            elif seg.kind == "arc-right":
                yield seg, None, seg.end, TURN_RIGHT
            else:
                yield seg, "left", seg.left, TURN_LEFT_T
                yield seg, "right", seg.right, TURN_RIGHT_T

    def _solve_geometry(self):
        """Propagate node poses from the origin and build directed edges."""
        poses: dict[str, Pose] = {self.origin_node: self.origin_pose}
        pending = list(self._edge_templates())
        edges: list[Edge] = []
        progressed = True
        while pending and progressed:
            progressed = False
            remaining = []
            for seg, branch, dst, category in pending:
                start_pose = poses.get(seg.start)
                if start_pose is None:
                    remaining.append((seg, branch, dst, category))
                    continue
                progressed = True
                if seg.kind == "straight":
                    geom = EdgeGeom("straight", start_pose, seg.length)
                else:
                    turn = 1 if (seg.kind == "arc-left" or branch == "left") else -1
                    geom = EdgeGeom("arc", start_pose, seg.radius * seg.sweep,
                                    seg.radius, turn)
                end_pose = geom.end_pose()
                known = poses.get(dst)
                if known is None:
                    poses[dst] = end_pose
                elif (abs(known.x - end_pose.x) > GEOM_TOL
                      or abs(known.y - end_pose.y) > GEOM_TOL
                      or abs(normalize_angle(known.yaw - end_pose.yaw)) > GEOM_TOL):
                    raise InvalidTrack(
                        f"node {dst!r} reached with inconsistent poses: "
                        f"{known} vs {end_pose}")
                edges.append(Edge(seg.seg_id, branch, seg.start, dst, category, geom))
            pending = remaining
        if pending:
            missing = sorted({seg.start for seg, *_ in pending})
            raise InvalidTrack(f"segments unreachable from origin, via nodes {missing}")
        self.node_poses = poses
        self.edges = edges

    def _validate(self):
        if self.lane_width <= 0:
            raise InvalidTrack("lane_width must be positive")
        seen = set()
        for seg in self.segments:
            if seg.seg_id in seen:
                raise InvalidTrack(f"duplicate segment id {seg.seg_id!r}")
            seen.add(seg.seg_id)
            if seg.kind not in SEGMENT_KINDS:
                raise InvalidTrack(f"{seg.seg_id}: unknown kind {seg.kind!r}")
            if seg.kind == "straight":
                if seg.length <= 0:
                    raise InvalidTrack(f"{seg.seg_id}: length must be positive")
            else:
                if seg.radius <= self.lane_width / 2.0:
                    raise InvalidTrack(
                        f"{seg.seg_id}: radius {seg.radius} must exceed half the "
                        f"lane width {self.lane_width / 2.0}")
                if seg.sweep <= 0:
                    raise InvalidTrack(f"{seg.seg_id}: sweep must be positive")
            if seg.kind == "t-junction" and (not seg.left or not seg.right):
                raise InvalidTrack(f"{seg.seg_id}: t-junction needs left and right exits")
        for rect in self.obstacles:
            if rect[0] >= rect[2] or rect[1] >= rect[3]:
                raise InvalidTrack(f"degenerate obstacle rect {rect}")
        for name, (a, b) in self.routes.items():
            for node in (a, b):
                if node not in self.node_poses:
                    raise InvalidTrack(f"route {name!r} references unknown node {node!r}")

    def outgoing(self, node: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node]


# ---------------------------------------------------------------------------
# parsing

def _parse_kv(parts, allowed, where):
    out = {}
    for part in parts:
        if "=" not in part:
            raise InvalidTrack(f"{where}: expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        if key not in allowed:
            raise InvalidTrack(f"{where}: unknown key {key!r}")
        out[key] = value
    return out


def parse_track(text: str, name_hint: str = "track") -> TrackSpec:
    name = name_hint
    lane_width = None
    origin_node = None
    origin_pose = None
    segments: list[Segment] = []
    obstacles = []
    routes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "track":
                name = args[0]
            elif kind == "lane_width":
                lane_width = float(args[0])
            elif kind == "origin":
                origin_node = args[0]
                origin_pose = Pose(float(args[1]), float(args[2]), float(args[3]))
            elif kind == "segment":
                seg_id, seg_kind = args[0], args[1]
                if seg_kind == "t-junction":
                    kv = _parse_kv(args[3:], {"left", "right", "radius", "sweep"}, where)
                    segments.append(Segment(
                        seg_id, seg_kind, start=args[2],
                        left=kv.get("left"), right=kv.get("right"),
                        radius=float(kv.get("radius", 0.0)),
                        sweep=float(kv.get("sweep", HALF_PI))))
                elif seg_kind == "straight":
                    kv = _parse_kv(args[4:], {"length"}, where)
                    segments.append(Segment(
                        seg_id, seg_kind, start=args[2], end=args[3],
                        length=float(kv["length"])))
                elif seg_kind in ("arc-left", "arc-right"):
                    kv = _parse_kv(args[4:], {"radius", "sweep"}, where)
                    segments.append(Segment(
                        seg_id, seg_kind, start=args[2], end=args[3],
                        radius=float(kv["radius"]),
                        sweep=float(kv.get("sweep", HALF_PI))))
                else:
                    raise InvalidTrack(f"{where}: unknown segment kind {seg_kind!r}")
            elif kind == "obstacle":
                obstacles.append(tuple(float(v) for v in args[:4]))
            elif kind == "route":
                routes[args[0]] = (args[1], args[2])
            else:
                raise InvalidTrack(f"{where}: unknown statement {kind!r}")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, InvalidTrack):
                raise
            raise InvalidTrack(f"{where}: malformed statement {line!r} ({exc})") from exc
    if lane_width is None:
        raise InvalidTrack("missing lane_width")
    if origin_node is None:
        raise InvalidTrack("missing origin")
    return TrackSpec(name=name, lane_width=lane_width, segments=segments,
                     obstacles=obstacles, routes=routes,
                     origin_node=origin_node, origin_pose=origin_pose)


BUILTIN_TRACKS = ("track-a", "track-b", "mini-straight")


def load_track(name_or_path) -> TrackSpec:
    """Load a built-in track by name, or any track file by path."""
    text_name = str(name_or_path)
    if text_name in BUILTIN_TRACKS:
        fname = text_name.replace("-", "_") + ".txt"
        text = (resources.files("drivevqa.data") / "tracks" / fname).read_text()
        return parse_track(text, name_hint=text_name)
    with open(name_or_path, "r", encoding="utf-8") as fh:
        return parse_track(fh.read(), name_hint=text_name)
