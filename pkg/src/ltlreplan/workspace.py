"""2D workspace model: labeled regions, obstacles, sensing, beliefs.

The ground-truth workspace is immutable by contract; the robot's
KnowledgeBase holds a believed copy whose region labels and obstacle
positions are overwritten as knowledge arrives.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Disc,
    Point,
    Rect,
    seg_disc_distance,
    seg_rect_chord,
    seg_rect_distance,
)

EDGE_SAMPLE_EPS = 0.05  # m, segment label sampling resolution
DEFAULT_CLEARANCE = 0.1  # m, point-robot clearance around obstacles
DEFAULT_OBS_THRESHOLD = 0.25  # m, obstacle displacement that triggers replanning


class WorkspaceError(Exception):
    pass


@dataclass
class Region:
    id: str
    rect: Rect
    labels: frozenset[str]


@dataclass
class ObstacleScript:
    """Piecewise-linear waypoint trajectory at constant speed."""

    waypoints: list[Point]
    speed: float
    mode: str = "once"  # once | pingpong

    def position_at(self, t: float) -> Point:
        pts = self.waypoints
        if len(pts) == 1 or self.speed <= 0.0 or t <= 0.0:
            return pts[0]
        seg_len = [
            math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:])
        ]
        total = sum(seg_len)
        if total == 0.0:
            return pts[0]
        s = t * self.speed
        if self.mode == "pingpong":
            s = s % (2 * total)
            if s > total:
                s = 2 * total - s
        else:
            s = min(s, total)
        for (a, b), ln in zip(zip(pts, pts[1:]), seg_len):
            if s <= ln or ln == 0.0:
                if ln == 0.0:
                    continue
                u = s / ln
                return (a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]))
            s -= ln
        return pts[-1]


@dataclass
class Obstacle:
    id: str
    shape: str  # rect | disc
    size: tuple[float, float] | float  # (w, h) for rect, radius for disc
    pos: Point  # footprint center
    kind: str = "static"  # static | dynamic
    script: ObstacleScript | None = None

    def footprint(self, pos: Point | None = None) -> Rect | Disc:
        cx, cy = pos if pos is not None else self.pos
        if self.shape == "rect":
            w, h = self.size  # type: ignore[misc]
            return Rect(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        return Disc(cx, cy, float(self.size))  # type: ignore[arg-type]

    def position_at(self, t: float) -> Point:
        if self.script is not None:
            return self.script.position_at(t)
        return self.pos


@dataclass
class Workspace:
    bounds: Rect
    regions: list[Region] = field(default_factory=list)
    obstacles: list[Obstacle] = field(default_factory=list)

    def validate(self) -> None:
        for r in self.regions:
            if not (
                self.bounds.x0 <= r.rect.x0
                and r.rect.x1 <= self.bounds.x1
                and self.bounds.y0 <= r.rect.y0
                and r.rect.y1 <= self.bounds.y1
            ):
                raise WorkspaceError(f"region {r.id} outside workspace bounds")
        for i, a in enumerate(self.regions):
            for b in self.regions[i + 1 :]:
                if a.rect.intersects(b.rect):
                    raise WorkspaceError(f"regions {a.id} and {b.id} overlap")
        ids = [r.id for r in self.regions] + [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise WorkspaceError("duplicate region/obstacle ids")
        if not self._has_free_space():
            raise WorkspaceError("workspace has no free space")

    def _has_free_space(self, grid: int = 16) -> bool:
        for i in range(grid):
            for j in range(grid):
                x = self.bounds.x0 + (i + 0.5) / grid * self.bounds.width
                y = self.bounds.y0 + (j + 0.5) / grid * self.bounds.height
                if is_free(self, (x, y), DEFAULT_CLEARANCE):
                    return True
        return False

    def region_by_id(self, rid: str) -> Region:
        for r in self.regions:
            if r.id == rid:
                return r
        raise WorkspaceError(f"unknown region {rid!r}")

    def obstacle_by_id(self, oid: str) -> Obstacle:
        for o in self.obstacles:
            if o.id == oid:
                return o
        raise WorkspaceError(f"unknown obstacle {oid!r}")


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def label_of(ws: Workspace, x: Point) -> frozenset[str]:
    """Labels of the unique closed region containing x (empty outside)."""
    if not ws.bounds.contains(x):
        raise WorkspaceError(f"point {x} outside workspace bounds")
    for r in ws.regions:
        if r.rect.contains(x):
            return r.labels
    return frozenset()


def is_free(ws: Workspace, x: Point, clearance: float = DEFAULT_CLEARANCE) -> bool:
    """Closed free set: at least `clearance` from every obstacle footprint."""
    if not ws.bounds.contains(x):
        return False
    for o in ws.obstacles:
        if o.footprint().distance_to_point(x) < clearance:
            return False
    return True


def segment_free(
    ws: Workspace, a: Point, b: Point, clearance: float = DEFAULT_CLEARANCE
) -> bool:
    for o in ws.obstacles:
        fp = o.footprint()
        if isinstance(fp, Rect):
            if seg_rect_distance(a, b, fp) < clearance:
                return False
        else:
            if seg_disc_distance(a, b, fp) < clearance:
                return False
    return True


def edge_trace(
    ws: Workspace, x1: Point, x2: Point, eps: float = EDGE_SAMPLE_EPS
) -> list[frozenset[str]]:
    """Event-driven label sequence along a segment (duplicates collapsed)."""
    out: list[frozenset[str]] = []
    for rid in region_id_trace(ws, x1, x2, eps):
        labels = ws.regions[rid].labels if rid >= 0 else frozenset()
        if not out or out[-1] != labels:
            out.append(labels)
    return out


def region_id_trace(
    ws: Workspace, x1: Point, x2: Point, eps: float = EDGE_SAMPLE_EPS
) -> tuple[int, ...]:
    """Region-index sequence along a segment, -1 for unlabeled space.

    Purely geometric (independent of current label beliefs), so results
    are cacheable for the lifetime of a node pair. Sampled at spacing
    <= eps including both endpoints; consecutive duplicates collapsed.
    """
    b = ws.bounds
    if not (b.contains(x1) and b.contains(x2)):
        raise WorkspaceError("segment endpoint outside workspace bounds")
    ax, ay = x1
    dx = x2[0] - ax
    dy = x2[1] - ay
    n = max(1, int(math.ceil(math.hypot(dx, dy) / eps)))
    rects = [(r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1) for r in ws.regions]
    out: list[int] = []
    last = -2
    inv = 1.0 / n
    for i in range(n + 1):
        t = i * inv
        px = ax + t * dx
        py = ay + t * dy
        rid = -1
        for j, (rx0, ry0, rx1, ry1) in enumerate(rects):
            if rx0 <= px <= rx1 and ry0 <= py <= ry1:
                rid = j
                break
        if rid != last:
            out.append(rid)
            last = rid
    return tuple(out)


# ---------------------------------------------------------------------------
# Knowledge and beliefs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Knowledge:
    """A sensed fact: region labels or an obstacle position."""

    kind: str  # reg | obs
    subject: str
    labels: frozenset[str] | None = None
    pos: Point | None = None

    @staticmethod
    def region(rid: str, labels) -> "Knowledge":
        return Knowledge(kind="reg", subject=rid, labels=frozenset(labels))

    @staticmethod
    def obstacle(oid: str, pos: Point) -> "Knowledge":
        return Knowledge(kind="obs", subject=oid, pos=pos)


def sense(
    truth: Workspace, pose: Point, footprint_wh: tuple[float, float], t: float = 0.0
) -> list[Knowledge]:
    """True facts for everything intersecting the sensing footprint."""
    if not truth.bounds.contains(pose):
        raise WorkspaceError(f"pose {pose} outside workspace bounds")
    w, h = footprint_wh
    fov = Rect(pose[0] - w / 2, pose[1] - h / 2, pose[0] + w / 2, pose[1] + h / 2)
    out: list[Knowledge] = []
    for r in truth.regions:
        if fov.intersects(r.rect):
            out.append(Knowledge.region(r.id, r.labels))
    for o in truth.obstacles:
        p = o.position_at(t)
        fp = o.footprint(p)
        hit = fov.intersects(fp) if isinstance(fp, Rect) else (
            fp.distance_to_point(_clamp_to_rect(fp.center, fov)) == 0.0
        )
        if hit:
            out.append(Knowledge.obstacle(o.id, p))
    return out


def _clamp_to_rect(p: Point, rect: Rect) -> Point:
    return (
        min(max(p[0], rect.x0), rect.x1),
        min(max(p[1], rect.y0), rect.y1),
    )


class KnowledgeBase:
    """Believed workspace, updated in place by accepted knowledge."""

    def __init__(
        self,
        prior: Workspace,
        obs_threshold: float = DEFAULT_OBS_THRESHOLD,
    ):
        self.believed = copy.deepcopy(prior)
        self.obs_threshold = obs_threshold
        # last accepted position per known obstacle (static ones included,
        # so re-sensing them at their prior position is a no-op)
        self.obs_positions: dict[str, Point] = {
            o.id: o.pos for o in self.believed.obstacles
        }

    def apply(self, k: Knowledge) -> bool:
        """Returns True when the belief actually changed."""
        if k.kind == "reg":
            region = self.believed.region_by_id(k.subject)
            assert k.labels is not None
            if region.labels == k.labels:
                return False
            region.labels = k.labels
            return True
        assert k.pos is not None
        last = self.obs_positions.get(k.subject)
        if last is None:
            # Previously unknown obstacle: adopt it from the observation.
            try:
                o = self.believed.obstacle_by_id(k.subject)
                o.pos = k.pos
            except WorkspaceError:
                self.believed.obstacles.append(
                    Obstacle(id=k.subject, shape="disc", size=0.2, pos=k.pos,
                             kind="dynamic")
                )
            self.obs_positions[k.subject] = k.pos
            return True
        moved = math.hypot(k.pos[0] - last[0], k.pos[1] - last[1])
        if moved <= self.obs_threshold:
            return False
        self.obs_positions[k.subject] = k.pos
        try:
            self.believed.obstacle_by_id(k.subject).pos = k.pos
        except WorkspaceError:
            pass
        return True

    def adopt_obstacle(self, template: Obstacle, pos: Point) -> None:
        """Register a newly discovered obstacle with known geometry."""
        ob = Obstacle(
            id=template.id,
            shape=template.shape,
            size=template.size,
            pos=pos,
            kind="dynamic",
        )
        self.believed.obstacles.append(ob)
        self.obs_positions[template.id] = pos


class WorkspaceIndex:
    """Vectorized query cache over a believed workspace snapshot.

    Rebuilt whenever region labels or obstacle positions change; the
    underlying region geometry never changes, so region-index traces
    cached elsewhere stay valid across rebuilds.
    """

    def __init__(self, ws: Workspace, atoms: tuple[str, ...],
                 clearance: float = DEFAULT_CLEARANCE):
        self.ws = ws
        self.atoms = atoms
        self.clearance = clearance
        n = len(ws.regions)
        self.rects = [r.rect.as_tuple() for r in ws.regions]
        masks = [0] * (n + 1)  # last slot: free space
        for i, r in enumerate(ws.regions):
            m = 0
            for a in r.labels:
                if a in atoms:
                    m |= 1 << atoms.index(a)
            masks[i] = m
        self.label_masks = masks
        # obstacle footprints with inflated bounding boxes for fast rejects
        self._footprints: list[tuple[Rect | Disc, float, float, float, float]] = []
        for o in ws.obstacles:
            fp = o.footprint()
            if isinstance(fp, Rect):
                bb = fp.inflate(clearance)
            else:
                bb = Rect(fp.cx - fp.r, fp.cy - fp.r,
                          fp.cx + fp.r, fp.cy + fp.r).inflate(clearance)
            self._footprints.append((fp, bb.x0, bb.y0, bb.x1, bb.y1))

    def mask_at(self, p: Point) -> int:
        px, py = p
        for i, (x0, y0, x1, y1) in enumerate(self.rects):
            if x0 <= px <= x1 and y0 <= py <= y1:
                return self.label_masks[i]
        return 0

    def region_index_at(self, p: Point) -> int:
        px, py = p
        for i, (x0, y0, x1, y1) in enumerate(self.rects):
            if x0 <= px <= x1 and y0 <= py <= y1:
                return i
        return -1

    def masks_for_trace(self, rid_trace: tuple[int, ...]) -> tuple[int, ...]:
        """Map a region-index trace to collapsed label-mask events."""
        out: list[int] = []
        lm = self.label_masks
        for rid in rid_trace:
            m = lm[rid] if rid >= 0 else 0
            if not out or out[-1] != m:
                out.append(m)
        return tuple(out)

    def point_free(self, p: Point) -> bool:
        b = self.ws.bounds
        px, py = p
        if not (b.x0 <= px <= b.x1 and b.y0 <= py <= b.y1):
            return False
        for fp, bx0, by0, bx1, by1 in self._footprints:
            if bx0 <= px <= bx1 and by0 <= py <= by1:
                if fp.distance_to_point(p) < self.clearance:
                    return False
        return True

    def segment_clear(self, a: Point, b: Point) -> bool:
        sx0, sx1 = (a[0], b[0]) if a[0] <= b[0] else (b[0], a[0])
        sy0, sy1 = (a[1], b[1]) if a[1] <= b[1] else (b[1], a[1])
        for fp, bx0, by0, bx1, by1 in self._footprints:
            if sx1 < bx0 or bx1 < sx0 or sy1 < by0 or by1 < sy0:
                continue
            if isinstance(fp, Rect):
                if seg_rect_distance(a, b, fp) < self.clearance:
                    return False
            else:
                if seg_disc_distance(a, b, fp) < self.clearance:
                    return False
        return True

    def segment_stable(self, a: Point, b: Point,
                       eps: float = EDGE_SAMPLE_EPS) -> bool:
        """Whether the segment's label trace is robust to sampling phase.

        A region chord that neither touches an endpoint nor spans at
        least 1.5 sampling steps may appear or vanish depending on where
        the samples land, so edges relying on such grazes are refused.
        The same holds for slivers of free space between two chords.
        """
        seg_len = math.hypot(b[0] - a[0], b[1] - a[1])
        if seg_len == 0.0:
            return True
        min_len = 1.5 * eps / seg_len
        chords: list[tuple[float, float]] = []
        for r in self.ws.regions:
            c = seg_rect_chord(a, b, r.rect)
            if c is None:
                continue
            t0, t1 = c
            if t0 > 0.0 and t1 < 1.0 and (t1 - t0) < min_len:
                return False
            chords.append(c)
        chords.sort()
        for (_, prev_end), (nxt_start, _) in zip(chords, chords[1:]):
            if 0.0 < nxt_start - prev_end < min_len:
                return False
        return True
