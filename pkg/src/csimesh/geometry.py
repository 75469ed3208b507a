"""Room, node, and link geometry with Fresnel-zone sensitivity estimates.

Zone membership uses the exact ellipsoid inequality (path-length excess over
the direct path at most n*wavelength/2).  The familiar cross-section radius
formula is exposed separately as ``fresnel_radius``; it is a first-order
approximation of the same surface and the two agree to within a percent of
the wavelength for room-scale links.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .rng import stream

DEFAULT_WAVELENGTH_M = 0.125  # 2.4 GHz

BUILTIN_SCENARIOS = ("table1_livingroom",)


class NodeRole(Enum):
    ENTRANCE = "entrance"
    MID_ROOM = "mid_room"
    CEILING = "ceiling"
    CORNER = "corner"


@dataclass(frozen=True)
class Point3:
    """A position in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"non-finite coordinate in {(self.x, self.y, self.z)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def distance_to(self, other: "Point3") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class NodePlacement:
    node_id: int
    position: Point3
    role: NodeRole
    label: str = ""

    def __post_init__(self) -> None:
        if self.node_id < 0:
            raise ValueError("node_id must be non-negative")


class ActivityRegion:
    """Bounded region occupant positions are drawn from.

    Two shapes are supported: an axis-aligned box and a polyline corridor
    with a radius.  Both expose uniform-ish sampling driven by external
    unit draws so the caller controls the random stream.
    """

    label: str
    unit_dims: int

    def sample_unit(self, u: np.ndarray) -> np.ndarray:
        """Map unit-cube draws (shape (..., unit_dims)) to points (..., 3)."""
        raise NotImplementedError

    def contains(self, p: np.ndarray) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class BoxRegion(ActivityRegion):
    label: str
    lo: Point3
    hi: Point3
    unit_dims: int = field(default=3, init=False)

    def __post_init__(self) -> None:
        if not (self.lo.x < self.hi.x and self.lo.y < self.hi.y and self.lo.z < self.hi.z):
            raise ValueError(f"box region {self.label!r} has empty extent")

    def sample_unit(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        lo = self.lo.as_array()
        size = self.hi.as_array() - lo
        return lo + u * size

    def contains(self, p: np.ndarray) -> bool:
        lo, hi = self.lo.as_array(), self.hi.as_array()
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= lo) and np.all(p <= hi))


class CorridorRegion(ActivityRegion):
    """A polyline with a radius: the union of balls swept along the path.

    Samples are drawn by picking an arc-length position uniformly and adding
    a uniform disk offset in the plane perpendicular to the local segment,
    which is uniform enough for traversal-path modelling.
    """

    unit_dims = 3

    def __init__(self, label: str, waypoints: list[Point3] | tuple[Point3, ...], radius: float):
        if len(waypoints) < 2:
            raise ValueError(f"corridor {label!r} needs at least 2 waypoints")
        if radius <= 0:
            raise ValueError(f"corridor {label!r} radius must be > 0")
        self.label = label
        self.waypoints = tuple(waypoints)
        self.radius = float(radius)
        pts = np.array([w.as_array() for w in self.waypoints])
        seg = np.diff(pts, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len <= 0):
            raise ValueError(f"corridor {label!r} has a zero-length segment")
        self._pts = pts
        self._seg = seg
        self._seg_len = seg_len
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.length = float(self._cum[-1])

    def point_at(self, s: float | np.ndarray) -> np.ndarray:
        """Centerline point(s) at arc length s, clamped to [0, length]."""
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self._cum, self._pts[:, 0])
        y = np.interp(s, self._cum, self._pts[:, 1])
        z = np.interp(s, self._cum, self._pts[:, 2])
        return np.stack([x, y, z], axis=-1)

    def _frames(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Perpendicular basis vectors for the segment each s falls on."""
        idx = np.clip(np.searchsorted(self._cum, s, side="right") - 1, 0, len(self._seg) - 1)
        d = self._seg[idx] / self._seg_len[idx, None]
        # any vector not parallel to d
        helper = np.where(np.abs(d[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
        e1 = np.cross(d, helper)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(d, e1)
        return e1, e2

    def sample_unit(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        s = u[:, 0] * self.length
        base = self.point_at(s)
        e1, e2 = self._frames(s)
        ang = 2.0 * np.pi * u[:, 1]
        r = self.radius * np.sqrt(u[:, 2])
        pts = base + r[:, None] * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
        return pts if pts.shape[0] > 1 else pts[0]

    def contains(self, p: np.ndarray) -> bool:
        return self.distance_to_path(p) <= self.radius

    def distance_to_path(self, p: np.ndarray) -> float:
        p = np.asarray(p, dtype=np.float64)
        best = math.inf
        for i in range(len(self._seg)):
            a = self._pts[i]
            d = self._seg[i]
            t = float(np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0))
            best = min(best, float(np.linalg.norm(p - (a + t * d))))
        return best


@dataclass
class RoomModel:
    """Room extents in meters plus the named activity regions inside it."""

    width: float = 5.0
    depth: float = 4.0
    height: float = 2.5
    regions: list[ActivityRegion] = field(default_factory=list)

    def __post_init__(self) -> None:
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("room dimensions must be > 0")

    def contains(self, p: Point3, margin: float = 0.0) -> bool:
        return (
            -margin <= p.x <= self.width + margin
            and -margin <= p.y <= self.depth + margin
            and -margin <= p.z <= self.height + margin
        )

    def region(self, label: str) -> ActivityRegion:
        for r in self.regions:
            if r.label == label:
                return r
        raise KeyError(f"no activity region named {label!r}")


@dataclass(frozen=True)
class LinkGeometry:
    """One directed sensing link and its Fresnel ellipsoid."""

    tx: int
    rx: int
    tx_pos: Point3
    rx_pos: Point3
    wavelength: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self) -> None:
        if self.tx == self.rx:
            raise ValueError("link endpoints must differ")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        if self.length <= 0:
            raise ValueError("link length must be > 0")

    @property
    def length(self) -> float:
        return self.tx_pos.distance_to(self.rx_pos)

    @property
    def key(self) -> tuple[int, int]:
        return (self.tx, self.rx)

    def midpoint(self) -> Point3:
        a, b = self.tx_pos, self.rx_pos
        return Point3((a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2)


def fresnel_radius(n: int, wavelength: float, d1: float, d2: float) -> float:
    """Cross-section radius of Fresnel zone n at distances d1, d2 from the ends.

    Returns sqrt(n * wavelength * d1 * d2 / (d1 + d2)); symmetric in (d1, d2)
    and zero at either endpoint.
    """
    if n < 1 or int(n) != n:
        raise ValueError("zone index n must be a positive integer")
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    if d1 < 0 or d2 < 0:
        raise ValueError("distances must be non-negative")
    if d1 + d2 <= 0:
        raise ValueError("d1 + d2 must be > 0")
    return math.sqrt(n * wavelength * d1 * d2 / (d1 + d2))


def in_fresnel_zone(p: Point3 | np.ndarray, link: LinkGeometry, n: int = 1) -> bool:
    """Exact ellipsoid membership: dist(p,tx) + dist(p,rx) <= D + n*wavelength/2."""
    if n < 1 or int(n) != n:
        raise ValueError("zone index n must be a positive integer")
    q = p.as_array() if isinstance(p, Point3) else np.asarray(p, dtype=np.float64)
    d1 = float(np.linalg.norm(q - link.tx_pos.as_array()))
    d2 = float(np.linalg.norm(q - link.rx_pos.as_array()))
    return d1 + d2 <= link.length + n * link.wavelength / 2.0


def points_in_zone(points: np.ndarray, link: LinkGeometry, n: int = 1) -> np.ndarray:
    """Vectorized ellipsoid membership for an (M, 3) array; NaN rows are False."""
    pts = np.asarray(points, dtype=np.float64)
    d1 = np.linalg.norm(pts - link.tx_pos.as_array(), axis=-1)
    d2 = np.linalg.norm(pts - link.rx_pos.as_array(), axis=-1)
    with np.errstate(invalid="ignore"):
        return (d1 + d2) <= link.length + n * link.wavelength / 2.0


def enumerate_links(
    nodes: list[NodePlacement], wavelength: float = DEFAULT_WAVELENGTH_M
) -> list[LinkGeometry]:
    """All ordered node pairs as directed links; N nodes give N*(N-1) links."""
    if len(nodes) < 2:
        raise ValueError("need at least 2 nodes")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node_id in mesh")
    links = []
    for a in nodes:
        for b in nodes:
            if a.node_id == b.node_id:
                continue
            links.append(
                LinkGeometry(
                    tx=a.node_id,
                    rx=b.node_id,
                    tx_pos=a.position,
                    rx_pos=b.position,
                    wavelength=wavelength,
                )
            )
    return links


@dataclass(frozen=True)
class InfoBoundEstimate:
    """Monte-Carlo intersection probability, the information-bound proxy."""

    tx: int
    rx: int
    p_intersect: float
    sample_count: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_intersect <= 1.0:
            raise ValueError("p_intersect must lie in [0, 1]")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


def intersection_probability(
    link: LinkGeometry,
    region: ActivityRegion,
    n: int = 1,
    samples: int = 10_000,
    seed: int = 0,
) -> InfoBoundEstimate:
    """Fraction of region samples falling inside zone n of the link.

    Deterministic for a fixed seed: draws come from a counter-based stream
    keyed by (seed, link), so estimates are reproducible regardless of how
    many links are evaluated in parallel.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = stream(seed, "isect", link.tx, link.rx)
    u = rng.random((samples, region.unit_dims))
    pts = np.atleast_2d(region.sample_unit(u))
    frac = float(np.mean(points_in_zone(pts, link, n)))
    return InfoBoundEstimate(tx=link.tx, rx=link.rx, p_intersect=frac, sample_count=samples)


# --- Scenario files ----------------------------------------------------------


@dataclass
class Scenario:
    """A named deployment: room, node table, wavelength, activity regions."""

    name: str
    room: RoomModel
    nodes: list[NodePlacement]
    wavelength: float = DEFAULT_WAVELENGTH_M

    def __post_init__(self) -> None:
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node_id in scenario")
        for n in self.nodes:
            if not self.room.contains(n.position):
                raise ValueError(f"node {n.label or n.node_id} lies outside the room")
        self.nodes = sorted(self.nodes, key=lambda n: n.node_id)

    @property
    def node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes]

    def node(self, node_id: int) -> NodePlacement:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(f"no node {node_id}")

    def links(self) -> list[LinkGeometry]:
        return enumerate_links(self.nodes, self.wavelength)


def _region_from_dict(d: dict) -> ActivityRegion:
    shape = d.get("shape")
    if shape == "box":
        return BoxRegion(
            label=d["label"],
            lo=Point3(*[float(v) for v in d["lo"]]),
            hi=Point3(*[float(v) for v in d["hi"]]),
        )
    if shape == "corridor":
        return CorridorRegion(
            label=d["label"],
            waypoints=[Point3(*[float(v) for v in w]) for w in d["waypoints"]],
            radius=float(d["radius"]),
        )
    raise ValueError(f"unknown region shape {shape!r}")


def scenario_from_dict(doc: dict) -> Scenario:
    room_doc = doc.get("room", {})
    regions = [_region_from_dict(r) for r in doc.get("regions", [])]
    room = RoomModel(
        width=float(room_doc.get("width_m", 5.0)),
        depth=float(room_doc.get("depth_m", 4.0)),
        height=float(room_doc.get("height_m", 2.5)),
        regions=regions,
    )
    nodes = [
        NodePlacement(
            node_id=int(n["id"]),
            position=Point3(float(n["x_m"]), float(n["y_m"]), float(n["z_m"])),
            role=NodeRole(n["role"]),
            label=str(n.get("label", "")),
        )
        for n in doc["nodes"]
    ]
    return Scenario(
        name=str(doc.get("name", "unnamed")),
        room=room,
        nodes=nodes,
        wavelength=float(doc.get("wavelength_m", DEFAULT_WAVELENGTH_M)),
    )


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario by built-in name or from a JSON file path."""
    name = str(source)
    if name in BUILTIN_SCENARIOS:
        text = resources.files("csimesh.scenarios").joinpath(f"{name}.json").read_text()
    else:
        text = Path(source).read_text()
    return scenario_from_dict(json.loads(text))
