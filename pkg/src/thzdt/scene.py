"""Static propagation environment: hall geometry, materials, antennas, nodes.

Geometry is deliberately minimal. The hall is one axis-aligned box of air,
obstacles (server racks, glass panels) are axis-aligned boxes inside it, and
every reflective surface is a rectangular box face. Lengths are meters,
angles degrees, powers dBm. Azimuth counts counterclockwise from +x in
[0, 360); elevation counts up from horizontal in [-90, 90].
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class SceneError(ValueError):
    """Raised for schema violations; the message names the offending entity."""


# --------------------------------------------------------------------------
# types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Material:
    name: str
    reflection_loss_db: float  # per-bounce loss, >= 0

    def __post_init__(self):
        if not self.name:
            raise SceneError("material with empty name")
        if not (self.reflection_loss_db >= 0.0):
            raise SceneError(
                "material %r: reflection_loss_db must be >= 0, got %r"
                % (self.name, self.reflection_loss_db)
            )


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, min strictly below max on every axis."""

    min: tuple  # (x, y, z) m
    max: tuple
    material: Material

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise SceneError("box corners must be 3-vectors")
        if not np.all(lo < hi):
            raise SceneError(
                "box min %s must be strictly below max %s on every axis"
                % (tuple(lo), tuple(hi))
            )
        object.__setattr__(self, "min", tuple(float(v) for v in lo))
        object.__setattr__(self, "max", tuple(float(v) for v in hi))

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(
            np.all(p >= np.array(self.min) - tol)
            and np.all(p <= np.array(self.max) + tol)
        )


@dataclass(frozen=True)
class AntennaPattern:
    """Gaussian main lobe over separable az/el offsets with a sidelobe floor.

    gain(da, de) = g0 - 12((da/hpbw_az)^2 + (de/hpbw_el)^2), clamped from
    below at g0 + sidelobe_floor_db. The quadratic rolloff hits exactly
    -3 dB at half the half-power beamwidth on either axis.
    """

    boresight_gain_dbi: float
    hpbw_az_deg: float
    hpbw_el_deg: float
    sidelobe_floor_db: float = -40.0

    def __post_init__(self):
        for label, h in (("hpbw_az_deg", self.hpbw_az_deg), ("hpbw_el_deg", self.hpbw_el_deg)):
            if not (0.0 < h < 180.0):
                raise SceneError("antenna %s must lie in (0, 180), got %r" % (label, h))
        if not (self.sidelobe_floor_db < 0.0):
            raise SceneError(
                "antenna sidelobe_floor_db must be negative, got %r" % self.sidelobe_floor_db
            )


@dataclass(frozen=True)
class Node:
    """A transmitter or receiver location with orientation and optional horn."""

    name: str
    position: tuple  # (x, y, z) m
    boresight: tuple  # unit vector
    pattern: Optional[AntennaPattern] = None  # None -> isotropic 0 dBi
    tx_power_dbm: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        b = np.asarray(self.boresight, dtype=float)
        if p.shape != (3,) or b.shape != (3,):
            raise SceneError("node %r: position and boresight must be 3-vectors" % self.name)
        n = float(np.linalg.norm(b))
        if abs(n - 1.0) > 1e-9:
            raise SceneError(
                "node %r: boresight must be unit length within 1e-9, |b| = %.12g"
                % (self.name, n)
            )
        object.__setattr__(self, "position", tuple(float(v) for v in p))
        object.__setattr__(self, "boresight", tuple(float(v) for v in b))


@dataclass(frozen=True)
class Surface:
    """One rectangular reflective face of a box, axis-aligned.

    axis is the normal axis (0, 1, 2); the face sits at coord on that axis.
    sign is +1 when the reflective side faces +axis. (u, v) are the two
    transverse axes in cyclic order ((axis+1)%3, (axis+2)%3) with closed
    bounds [u_lo, u_hi] x [v_lo, v_hi].
    """

    axis: int
    coord: float
    sign: float
    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float
    loss_db: float
    owner: str  # "room" or obstacle label, for diagnostics

    @property
    def u_axis(self) -> int:
        return (self.axis + 1) % 3

    @property
    def v_axis(self) -> int:
        return (self.axis + 2) % 3


@dataclass
class Scene:
    room: Box
    obstacles: list = field(default_factory=list)
    nodes: dict = field(default_factory=dict)
    materials: dict = field(default_factory=dict)

    def __post_init__(self):
        rlo, rhi = np.array(self.room.min), np.array(self.room.max)
        for i, ob in enumerate(self.obstacles):
            if not (np.all(np.array(ob.min) >= rlo) and np.all(np.array(ob.max) <= rhi)):
                raise SceneError("obstacle %d %s is not contained in the room" % (i, ob.min))

    @property
    def surfaces(self) -> list:
        """6 inward-facing room faces plus all outward-facing obstacle faces."""
        out = []
        lo, hi = self.room.min, self.room.max
        loss = self.room.material.reflection_loss_db
        for ax in range(3):
            u, v = (ax + 1) % 3, (ax + 2) % 3
            out.append(Surface(ax, lo[ax], +1.0, lo[u], hi[u], lo[v], hi[v], loss, "room"))
            out.append(Surface(ax, hi[ax], -1.0, lo[u], hi[u], lo[v], hi[v], loss, "room"))
        for i, ob in enumerate(self.obstacles):
            blo, bhi = ob.min, ob.max
            bloss = ob.material.reflection_loss_db
            name = "obstacle%d" % i
            for ax in range(3):
                u, v = (ax + 1) % 3, (ax + 2) % 3
                out.append(Surface(ax, blo[ax], -1.0, blo[u], bhi[u], blo[v], bhi[v], bloss, name))
                out.append(Surface(ax, bhi[ax], +1.0, blo[u], bhi[u], blo[v], bhi[v], bloss, name))
        return out


# --------------------------------------------------------------------------
# antenna math
# --------------------------------------------------------------------------


def antenna_gain(pattern: Optional[AntennaPattern], d_az_deg, d_el_deg):
    """Directive gain in dBi at an angular offset from boresight.

    Accepts scalars or arrays; None means an isotropic 0 dBi probe.
    """
    da = np.asarray(d_az_deg, dtype=float)
    de = np.asarray(d_el_deg, dtype=float)
    if pattern is None:
        out = np.zeros(np.broadcast(da, de).shape)
        return 0.0 if out.ndim == 0 else out
    g = pattern.boresight_gain_dbi - 12.0 * (
        (da / pattern.hpbw_az_deg) ** 2 + (de / pattern.hpbw_el_deg) ** 2
    )
    floor = pattern.boresight_gain_dbi + pattern.sidelobe_floor_db
    out = np.maximum(g, floor)
    return float(out) if out.ndim == 0 else out


def wrap_az(az_deg):
    """Wrap azimuth to [0, 360)."""
    return np.mod(az_deg, 360.0)


def wrap_delta_deg(d):
    """Wrap an angular difference to [-180, 180)."""
    return (np.asarray(d, dtype=float) + 180.0) % 360.0 - 180.0


def direction_to_angles(vec):
    """Unit-free direction vector -> (azimuth deg in [0,360), elevation deg)."""
    v = np.asarray(vec, dtype=float)
    r = np.linalg.norm(v)
    if r == 0.0:
        raise ValueError("zero direction vector has no angles")
    az = math.degrees(math.atan2(v[1], v[0])) % 360.0
    el = math.degrees(math.asin(max(-1.0, min(1.0, v[2] / r))))
    return az, el


def angles_to_direction(az_deg: float, el_deg: float):
    az = math.radians(az_deg)
    el = math.radians(el_deg)
    return np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )


def gain_toward(node: Node, direction) -> float:
    """Node's pattern gain (dBi) toward a propagation direction vector."""
    if node.pattern is None:
        return 0.0
    az_b, el_b = direction_to_angles(node.boresight)
    az_d, el_d = direction_to_angles(direction)
    return float(antenna_gain(node.pattern, wrap_delta_deg(az_d - az_b), el_d - el_b))


def aim(node: Node, target) -> Node:
    """Copy of node with boresight pointed at target."""
    d = np.asarray(target, dtype=float) - np.asarray(node.position, dtype=float)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("cannot aim node %r at its own position" % node.name)
    return replace(node, boresight=tuple(d / n))


def probe_node(position, name: str = "probe") -> Node:
    """Isotropic 0 dBi measurement probe at a position."""
    return Node(name=name, position=tuple(position), boresight=(1.0, 0.0, 0.0), pattern=None)


# --------------------------------------------------------------------------
# JSON schema
# --------------------------------------------------------------------------


def _pattern_to_dict(p: Optional[AntennaPattern]):
    if p is None:
        return None
    return {
        "boresight_gain_dbi": p.boresight_gain_dbi,
        "hpbw_az_deg": p.hpbw_az_deg,
        "hpbw_el_deg": p.hpbw_el_deg,
        "sidelobe_floor_db": p.sidelobe_floor_db,
    }


def save_scene(scene: Scene, path: str) -> None:
    """Write the scene schema atomically (temp file + rename).

    Floats go through json's shortest-roundtrip repr so load(save(s)) == s.
    """
    doc = {
        "room": {
            "min": list(scene.room.min),
            "max": list(scene.room.max),
            "material": scene.room.material.name,
        },
        "materials": [
            {"name": m.name, "reflection_loss_db": m.reflection_loss_db}
            for m in scene.materials.values()
        ],
        "racks": [
            {"min": list(b.min), "max": list(b.max), "material": b.material.name}
            for b in scene.obstacles
        ],
        "nodes": {
            n.name: {
                "position": list(n.position),
                "boresight": list(n.boresight),
                "pattern": _pattern_to_dict(n.pattern),
                "tx_power_dbm": n.tx_power_dbm,
            }
            for n in scene.nodes.values()
        },
    }
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scene(path: str) -> Scene:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise SceneError("scene file %s is not valid JSON: %s" % (path, e)) from e
    return scene_from_dict(doc)


def scene_from_dict(doc: dict) -> Scene:
    for key in ("room", "materials", "racks", "nodes"):
        if key not in doc:
            raise SceneError("scene schema missing %r section" % key)
    materials = {}
    for md in doc["materials"]:
        m = Material(md["name"], float(md["reflection_loss_db"]))
        if m.name in materials:
            raise SceneError("duplicate material %r" % m.name)
        materials[m.name] = m

    def mat(name, owner):
        if name not in materials:
            raise SceneError("%s references unknown material %r" % (owner, name))
        return materials[name]

    rd = doc["room"]
    room = Box(tuple(rd["min"]), tuple(rd["max"]), mat(rd["material"], "room"))
    obstacles = []
    for i, bd in enumerate(doc["racks"]):
        obstacles.append(Box(tuple(bd["min"]), tuple(bd["max"]), mat(bd["material"], "rack %d" % i)))
    nodes = {}
    for name, nd in doc["nodes"].items():
        pd = nd.get("pattern")
        pattern = None
        if pd is not None:
            pattern = AntennaPattern(
                float(pd["boresight_gain_dbi"]),
                float(pd["hpbw_az_deg"]),
                float(pd["hpbw_el_deg"]),
                float(pd.get("sidelobe_floor_db", -40.0)),
            )
        nodes[name] = Node(
            name=name,
            position=tuple(nd["position"]),
            boresight=tuple(nd["boresight"]),
            pattern=pattern,
            tx_power_dbm=nd.get("tx_power_dbm"),
        )
    return Scene(room=room, obstacles=obstacles, nodes=nodes, materials=materials)


def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# canonical hall
# --------------------------------------------------------------------------

# Defaults for per-bounce reflection loss, dB.
DEFAULT_MATERIALS = {
    "metal": 2.0,
    "glass": 6.0,
    "concrete": 10.0,
}

HORN = AntennaPattern(
    boresight_gain_dbi=26.0, hpbw_az_deg=8.0, hpbw_el_deg=6.0, sidelobe_floor_db=-40.0
)

TX_POWER_DBM = 10.0

# Heights, m: rack-top links, ceiling access point, hand-held receiver plane.
RACK_LINK_Z = 2.4
AP_Z = 2.7
NLOS_RX_Z = 1.7


def canonical_scene() -> Scene:
    """The reference data hall: 10 x 8 x 3.2 m, two split rack rows, glass wall.

    Node inventory follows the measurement campaign layout: tx1 beside the
    racks at 2.4 m, tx2 in front of the rack row, tx3 as a ceiling access
    point at 2.7 m, and 29 receivers split per transmitter case into
    line-of-sight and blocked groups (12 + 5 + 12).
    """
    mats = {name: Material(name, loss) for name, loss in DEFAULT_MATERIALS.items()}
    room = Box((0.0, 0.0, 0.0), (10.0, 8.0, 3.2), mats["metal"])
    racks = [
        # Row A, split by a 0.4 m service slot at x in [5.2, 5.6].
        Box((1.6, 2.6, 0.0), (5.2, 3.2, 2.2), mats["metal"]),
        Box((5.6, 2.6, 0.0), (9.2, 3.2, 2.2), mats["metal"]),
        # Row B, same split.
        Box((1.6, 4.8, 0.0), (5.2, 5.4, 2.2), mats["metal"]),
        Box((5.6, 4.8, 0.0), (9.2, 5.4, 2.2), mats["metal"]),
        # Full-height glass partition screening the north corridor.
        Box((1.5, 7.4, 0.0), (8.5, 7.45, 3.0), mats["glass"]),
    ]

    def node(name, pos, bore, tx=None):
        b = np.asarray(bore, dtype=float)
        b = b / np.linalg.norm(b)
        return Node(name=name, position=pos, boresight=tuple(b), pattern=HORN, tx_power_dbm=tx)

    nodes = {}
    nodes["tx1"] = node("tx1", (1.2, 4.0, RACK_LINK_Z), (1, 0, 0), TX_POWER_DBM)
    nodes["tx2"] = node("tx2", (9.5, 4.0, RACK_LINK_Z), (-1, 0, 0), TX_POWER_DBM)
    nodes["tx3"] = node("tx3", (5.0, 4.0, AP_Z), (0, 0, -1), TX_POWER_DBM)

    rx_specs = []
    # tx1 case: 9 rack-top LoS receivers down the aisle, 3 shadowed at 1.7 m.
    for i, x in enumerate((2.0, 2.8, 3.6, 4.4, 5.2, 6.0, 6.8, 7.6, 8.4)):
        rx_specs.append(("rx%02d" % (i + 1), (x, 4.0, RACK_LINK_Z)))
    for i, x in enumerate((3.0, 5.0, 7.0)):
        rx_specs.append(("rx%02d" % (i + 10), (x, 1.5, NLOS_RX_Z)))
    # tx2 case: 5 receivers alongside the rack row.
    for i, x in enumerate((7.5, 6.5, 5.5, 4.5, 3.5)):
        rx_specs.append(("rx%02d" % (i + 13), (x, 4.0, RACK_LINK_Z)))
    # tx3 case: 9 LoS receivers on the 1.7 m plane, 3 behind the glass wall.
    ap_los = [
        (3.0, 4.0), (5.0, 4.0), (7.0, 4.0),
        (2.5, 1.0), (5.0, 1.0), (7.5, 1.0),
        (2.5, 7.0), (5.0, 7.0), (7.5, 7.0),
    ]
    for i, (x, y) in enumerate(ap_los):
        rx_specs.append(("rx%02d" % (i + 18), (x, y, NLOS_RX_Z)))
    for i, x in enumerate((3.0, 5.0, 7.0)):
        rx_specs.append(("rx%02d" % (i + 27), (x, 7.7, NLOS_RX_Z)))

    for name, pos in rx_specs:
        nodes[name] = node(name, pos, (1, 0, 0))

    return Scene(room=room, obstacles=racks, nodes=nodes, materials=mats)


def canonical_links() -> list:
    """The 29 measured (tx, rx) pairs: 12 for tx1, 5 for tx2, 12 for tx3."""
    links = []
    links += [("tx1", "rx%02d" % i) for i in range(1, 13)]
    links += [("tx2", "rx%02d" % i) for i in range(13, 18)]
    links += [("tx3", "rx%02d" % i) for i in range(18, 30)]
    return links


# Geometric LoS/NLoS partition of the campaign (verified by the test suite).
CANONICAL_NLOS = {
    ("tx1", "rx10"), ("tx1", "rx11"), ("tx1", "rx12"),
    ("tx3", "rx27"), ("tx3", "rx28"), ("tx3", "rx29"),
}
