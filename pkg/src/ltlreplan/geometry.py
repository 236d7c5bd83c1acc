"""Planar geometry primitives: axis-aligned rectangles, discs, segment tests.

All distances are Euclidean, all sets are closed (boundary points belong
to the shape), which keeps point/segment queries deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Point = tuple[float, float]


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate rect {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def contains(self, p: Point) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def intersects(self, other: "Rect") -> bool:
        return not (
            other.x1 < self.x0
            or self.x1 < other.x0
            or other.y1 < self.y0
            or self.y1 < other.y0
        )

    def inflate(self, d: float) -> "Rect":
        return Rect(self.x0 - d, self.y0 - d, self.x1 + d, self.y1 + d)

    def distance_to_point(self, p: Point) -> float:
        dx = max(self.x0 - p[0], 0.0, p[0] - self.x1)
        dy = max(self.y0 - p[1], 0.0, p[1] - self.y1)
        return math.hypot(dx, dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class Disc:
    """Closed disc of radius r centered at (cx, cy)."""

    cx: float
    cy: float
    r: float

    @property
    def center(self) -> Point:
        return (self.cx, self.cy)

    def contains(self, p: Point) -> bool:
        return math.hypot(p[0] - self.cx, p[1] - self.cy) <= self.r

    def distance_to_point(self, p: Point) -> float:
        return max(0.0, math.hypot(p[0] - self.cx, p[1] - self.cy) - self.r)


def dist(a: Point, b: Point) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def seg_point_distance(a: Point, b: Point, p: Point) -> float:
    """Distance from point p to the closed segment a-b."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    if ll == 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / ll
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def _seg_seg_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, p3):
        return True
    if o2 == 0 and on_seg(p1, p2, p4):
        return True
    if o3 == 0 and on_seg(p3, p4, p1):
        return True
    if o4 == 0 and on_seg(p3, p4, p2):
        return True
    return False


def seg_seg_distance(p1: Point, p2: Point, p3: Point, p4: Point) -> float:
    if _seg_seg_intersect(p1, p2, p3, p4):
        return 0.0
    return min(
        seg_point_distance(p1, p2, p3),
        seg_point_distance(p1, p2, p4),
        seg_point_distance(p3, p4, p1),
        seg_point_distance(p3, p4, p2),
    )


def seg_rect_distance(a: Point, b: Point, rect: Rect) -> float:
    """Distance from segment a-b to a closed rectangle (0 if they touch)."""
    if rect.contains(a) or rect.contains(b):
        return 0.0
    c0 = (rect.x0, rect.y0)
    c1 = (rect.x1, rect.y0)
    c2 = (rect.x1, rect.y1)
    c3 = (rect.x0, rect.y1)
    best = math.inf
    for e0, e1 in ((c0, c1), (c1, c2), (c2, c3), (c3, c0)):
        d = seg_seg_distance(a, b, e0, e1)
        if d == 0.0:
            return 0.0
        best = min(best, d)
    return best


def seg_disc_distance(a: Point, b: Point, disc: Disc) -> float:
    return max(0.0, seg_point_distance(a, b, disc.center) - disc.r)


def seg_rect_chord(a: Point, b: Point, rect: Rect) -> tuple[float, float] | None:
    """Parameter interval [t0, t1] of segment a-b inside a closed rect.

    Liang-Barsky clipping; None when the segment misses the rectangle.
    """
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, a[0] - rect.x0),
        (dx, rect.x1 - a[0]),
        (-dy, a[1] - rect.y0),
        (dy, rect.y1 - a[1]),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return None
            if r < t1:
                t1 = r
    return (t0, t1)
