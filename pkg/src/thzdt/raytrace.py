"""Deterministic image-method ray tracer for box rooms with box obstacles.

Specular reflections up to order 2 off axis-aligned faces: the six inward
room faces plus the outward faces of every obstacle. Each candidate path is
built from mirror images of the transmitter, validated against the face
rectangles and segment visibility, and scored with free-space spreading at
the carrier frequency plus a flat per-bounce reflection loss taken from the
face material.

``trace`` is the scalar reference implementation (one link, plain Python
over :class:`~thzdt.scene.Surface` objects). The grid sweep in
:mod:`thzdt.kernels` reproduces it cell-for-cell; tests hold the two
implementations together.

Powers are in dB relative to the transmit power (antenna gains of both
ends included, so a 0 dBm transmitter would receive exactly ``power_db``
dBm). Delays are in nanoseconds, angles in degrees with azimuth in
[0, 360) and elevation in [-90, 90].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .constants import C0, DEFAULT_FREQ_HZ, DEFAULT_POWER_FLOOR_DB
from .scene import (
    Node,
    Scene,
    _atomic_write_text,
    direction_to_angles,
    gain_toward,
)


@dataclass(frozen=True)
class Mpc:
    """One multipath component.

    ``bounce_order`` is the reflection count for traced paths and -1 for
    paths estimated from a measurement, where the order is unknown.
    ``dep_az_deg``/``dep_el_deg`` give the departure direction at the
    transmitter; ``points`` holds the reflection points in path order.
    """

    power_db: float
    delay_ns: float
    az_deg: float
    el_deg: float
    bounce_order: int
    dep_az_deg: float = 0.0
    dep_el_deg: float = 0.0
    points: tuple = field(default=())

    def __post_init__(self):
        if not 0.0 <= self.az_deg < 360.0:
            raise ValueError(f"azimuth {self.az_deg} outside [0, 360)")
        if not -90.0 <= self.el_deg <= 90.0:
            raise ValueError(f"elevation {self.el_deg} outside [-90, 90]")
        if self.delay_ns < 0.0:
            raise ValueError(f"negative delay {self.delay_ns}")
        if self.bounce_order < -1:
            raise ValueError(f"bad bounce order {self.bounce_order}")


@dataclass(frozen=True)
class RtFeatures:
    """Ray-traced conditioning features for one link."""

    d_m: float
    p_los_db: float
    tau_los_ns: float
    az_los_deg: float
    el_los_deg: float
    n_paths: int
    los_valid: bool


def free_space_ref_db(freq_hz):
    """Free-space loss at 1 m: 20 log10(4 pi f / c)."""
    return 20.0 * math.log10(4.0 * math.pi * freq_hz / C0)


def pack_boxes(scene: Scene):
    """Obstacle extents as (B, 3) lo / hi arrays for the kernels."""
    if not scene.obstacles:
        z = np.zeros((0, 3))
        return z, z.copy()
    lo = np.array([b.min for b in scene.obstacles], dtype=np.float64)
    hi = np.array([b.max for b in scene.obstacles], dtype=np.float64)
    return lo, hi


def pack_surfaces(scene: Scene):
    """Reflective faces as a tuple of flat arrays for the kernels."""
    surfs = scene.surfaces
    axis = np.array([s.axis for s in surfs], dtype=np.int64)
    coord = np.array([s.coord for s in surfs], dtype=np.float64)
    sign = np.array([s.sign for s in surfs], dtype=np.float64)
    u_lo = np.array([s.u_lo for s in surfs], dtype=np.float64)
    u_hi = np.array([s.u_hi for s in surfs], dtype=np.float64)
    v_lo = np.array([s.v_lo for s in surfs], dtype=np.float64)
    v_hi = np.array([s.v_hi for s in surfs], dtype=np.float64)
    loss = np.array([s.loss_db for s in surfs], dtype=np.float64)
    return axis, coord, sign, u_lo, u_hi, v_lo, v_hi, loss


def los_blocked(scene: Scene, p, q) -> bool:
    """True when the open segment p-q crosses any obstacle interior."""
    b_lo, b_hi = pack_boxes(scene)
    p0 = np.asarray(p, dtype=np.float64).reshape(1, 3)
    p1 = np.asarray(q, dtype=np.float64).reshape(1, 3)
    return bool(kernels.segments_blocked(p0, p1, b_lo, b_hi)[0])


def _mirror(point, surf):
    img = np.array(point, dtype=np.float64)
    img[surf.axis] = 2.0 * surf.coord - img[surf.axis]
    return img


def _hit_on_face(surf, a, b):
    """Intersection of segment a-b with the face plane, or None.

    Requires the crossing parameter strictly inside (0, 1) and the hit
    point inside the face rectangle (closed, small tolerance).
    """
    den = b[surf.axis] - a[surf.axis]
    if den == 0.0:
        return None
    t = (surf.coord - a[surf.axis]) / den
    if not (kernels.EPS_T < t < 1.0 - kernels.EPS_T):
        return None
    hit = a + t * (b - a)
    u, v = surf.u_axis, surf.v_axis
    if not (surf.u_lo - kernels.EPS_B <= hit[u] <= surf.u_hi + kernels.EPS_B):
        return None
    if not (surf.v_lo - kernels.EPS_B <= hit[v] <= surf.v_hi + kernels.EPS_B):
        return None
    return hit


def _front(surf, point) -> bool:
    return surf.sign * (point[surf.axis] - surf.coord) > kernels.EPS_F


def trace(
    scene: Scene,
    tx: Node,
    rx: Node,
    max_order: int = 2,
    freq_hz: float = DEFAULT_FREQ_HZ,
    power_floor_db: float = DEFAULT_POWER_FLOOR_DB,
):
    """All specular paths from tx to rx, sorted by delay.

    Gains of both node patterns are applied (pass a pattern-less probe
    node for an isotropic receiver). Paths below ``power_floor_db`` are
    dropped.
    """
    if not 0 <= max_order <= 2:
        raise ValueError(f"max_order must be 0, 1 or 2, got {max_order}")
    if freq_hz <= 0.0:
        raise ValueError("carrier frequency must be positive")
    txp = np.array(tx.position, dtype=np.float64)
    rxp = np.array(rx.position, dtype=np.float64)
    fspl0 = free_space_ref_db(freq_hz)
    b_lo, b_hi = pack_boxes(scene)

    def blocked(a, b) -> bool:
        return bool(
            kernels.segments_blocked(a.reshape(1, 3), b.reshape(1, 3), b_lo, b_hi)[0]
        )

    paths = []

    def emit(length, refl_points, losses):
        first = refl_points[0] if refl_points else rxp
        last = refl_points[-1] if refl_points else txp
        g_tx = gain_toward(tx, first - txp)
        g_rx = gain_toward(rx, last - rxp)
        power = -(fspl0 + 20.0 * math.log10(length)) + g_tx + g_rx - sum(losses)
        if power < power_floor_db:
            return
        az, el = direction_to_angles(last - rxp)
        dep_az, dep_el = direction_to_angles(first - txp)
        paths.append(
            Mpc(
                power_db=power,
                delay_ns=length / C0 * 1e9,
                az_deg=az,
                el_deg=el,
                bounce_order=len(refl_points),
                dep_az_deg=dep_az,
                dep_el_deg=dep_el,
                points=tuple(tuple(p) for p in refl_points),
            )
        )

    d = float(np.linalg.norm(rxp - txp))
    if d > 0.0 and not blocked(txp, rxp):
        emit(d, [], [])

    surfs = scene.surfaces
    if max_order >= 1:
        for s in surfs:
            if not (_front(s, txp) and _front(s, rxp)):
                continue
            img = _mirror(txp, s)
            hit = _hit_on_face(s, img, rxp)
            if hit is None:
                continue
            if blocked(txp, hit) or blocked(hit, rxp):
                continue
            emit(float(np.linalg.norm(rxp - img)), [hit], [s.loss_db])

    if max_order >= 2:
        for s1 in surfs:
            if not _front(s1, txp):
                continue
            img1 = _mirror(txp, s1)
            for s2 in surfs:
                if s2 is s1 or (s2.axis == s1.axis and s2.coord == s1.coord):
                    continue
                if not _front(s2, rxp):
                    continue
                img2 = _mirror(img1, s2)
                hit2 = _hit_on_face(s2, img2, rxp)
                if hit2 is None:
                    continue
                if not _front(s1, hit2):
                    continue
                hit1 = _hit_on_face(s1, img1, hit2)
                if hit1 is None:
                    continue
                if not _front(s2, hit1):
                    continue
                if blocked(txp, hit1) or blocked(hit1, hit2) or blocked(hit2, rxp):
                    continue
                emit(
                    float(np.linalg.norm(rxp - img2)),
                    [hit1, hit2],
                    [s1.loss_db, s2.loss_db],
                )

    paths.sort(key=lambda p: p.delay_ns)
    return paths


def rt_features(paths, tx: Node, rx: Node) -> RtFeatures:
    """Condense a traced path list into conditioning features.

    When no direct path survived, the four direct-path fields are zero and
    ``los_valid`` is False; callers substitute a statistical fallback.
    """
    d = float(
        np.linalg.norm(np.array(rx.position) - np.array(tx.position))
    )
    los = next((p for p in paths if p.bounce_order == 0), None)
    if los is None:
        return RtFeatures(d, 0.0, 0.0, 0.0, 0.0, len(paths), False)
    return RtFeatures(
        d, los.power_db, los.delay_ns, los.az_deg, los.el_deg, len(paths), True
    )


def sweep_scene(
    scene: Scene,
    tx: Node,
    cells,
    max_order: int = 2,
    freq_hz: float = DEFAULT_FREQ_HZ,
    power_floor_db: float = DEFAULT_POWER_FLOOR_DB,
    order_offsets=(0.0, 0.0, 0.0),
    aim_at_cell: bool = True,
    use_tx_pattern: bool = True,
):
    """Run the grid-sweep kernel for one transmitter over many cells.

    Returns the kernel's tuple of per-cell arrays: path count, total
    linear power, strongest-path power/delay/azimuth/elevation, direct
    block flag and the direct path's power/delay/azimuth/elevation.
    Receiver cells are isotropic probes. ``order_offsets`` are power
    corrections in dB added per bounce order (calibration output).
    """
    if not 0 <= max_order <= 2:
        raise ValueError(f"max_order must be 0, 1 or 2, got {max_order}")
    cells = np.ascontiguousarray(np.asarray(cells, dtype=np.float64))
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise ValueError("cells must have shape (M, 3)")
    off = np.asarray(order_offsets, dtype=np.float64)
    if off.shape != (3,):
        raise ValueError("order_offsets must have length 3")
    s_pack = pack_surfaces(scene)
    b_lo, b_hi = pack_boxes(scene)
    pat = tx.pattern if use_tx_pattern else None
    if pat is None:
        iso, g0, haz, hel, flo = True, 0.0, 1.0, 1.0, -1.0
    else:
        iso = False
        g0 = pat.boresight_gain_dbi
        haz = pat.hpbw_az_deg
        hel = pat.hpbw_el_deg
        flo = pat.sidelobe_floor_db
    bs_az, bs_el = direction_to_angles(np.array(tx.boresight))
    return kernels.sweep_cells(
        cells,
        np.asarray(tx.position, dtype=np.float64),
        *s_pack,
        b_lo,
        b_hi,
        iso, float(g0), float(haz), float(hel), float(flo),
        bool(aim_at_cell), float(bs_az), float(bs_el),
        int(max_order),
        float(free_space_ref_db(freq_hz)),
        float(power_floor_db),
        float(off[0]), float(off[1]), float(off[2]),
        C0,
    )


PATH_CSV_FIELDS = ["tx", "rx", "bounce_order", "power_db", "delay_ns", "az_deg", "el_deg"]


def save_paths_csv(path, entries, calibrated: bool = False):
    """Write (tx_id, rx_id, Mpc) rows; values at 9 significant digits.

    ``calibrated`` appends a flag column marking powers that already
    include calibration offsets.
    """
    fields = PATH_CSV_FIELDS + (["calibrated"] if calibrated else [])
    lines = [",".join(fields)]
    for tx_id, rx_id, p in entries:
        row = [
            tx_id,
            rx_id,
            str(p.bounce_order),
            "%.9g" % p.power_db,
            "%.9g" % p.delay_ns,
            "%.9g" % p.az_deg,
            "%.9g" % p.el_deg,
        ]
        if calibrated:
            row.append("1")
        lines.append(",".join(row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_paths_csv(path):
    """Read rows written by :func:`save_paths_csv` as (tx, rx, Mpc)."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in PATH_CSV_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            entries.append(
                (
                    row["tx"],
                    row["rx"],
                    Mpc(
                        power_db=float(row["power_db"]),
                        delay_ns=float(row["delay_ns"]),
                        az_deg=float(row["az_deg"]),
                        el_deg=float(row["el_deg"]),
                        bounce_order=int(row["bounce_order"]),
                    ),
                )
            )
    return entries
