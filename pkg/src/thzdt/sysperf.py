"""Radio maps, link budgets, SINR and coverage statistics.

A radio map samples one transmitter's channel on a uniform horizontal
grid of receiver cells at a fixed height: total multipath power (dB
relative to transmit power), the strongest component's delay and
arrival angles, and a direct-path flag. Maps come from two sources
sharing the same grid contract: the calibrated ray sweep ("rt") or the
trained neural field ("inf").

SINR combines one serving map with interferer maps cell by cell in the
linear power domain: transmit power plus map gain for the numerator, the
sum of the interferers plus thermal noise (density + bandwidth + noise
figure) for the denominator. Coverage at a threshold is the fraction of
cells at or above it; sweeping thresholds gives the coverage curve.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import inf as inf_mod
from .constants import DEFAULT_FREQ_HZ, DEFAULT_POWER_FLOOR_DB
from .raytrace import sweep_scene
from .scene import Scene, _atomic_write_text

DEFAULT_CELL_M = 0.25
DEFAULT_MAP_HEIGHT_M = 1.7
MAP_SOURCES = ("rt", "inf")


@dataclass
class RadioMap:
    """Per-cell channel summary on a regular horizontal grid.

    Arrays are indexed ``[ix, iy]``; cell (ix, iy) is centered at
    ``origin + (ix + 0.5, iy + 0.5) * cell_m`` at height ``z_m``.
    """

    tx_id: str
    source: str
    origin: tuple
    cell_m: float
    nx: int
    ny: int
    z_m: float
    p_db: np.ndarray
    tau_ns: np.ndarray
    az_deg: np.ndarray
    el_deg: np.ndarray
    los: np.ndarray

    def __post_init__(self):
        if self.source not in MAP_SOURCES:
            raise ValueError(f"unknown map source {self.source!r}")
        shape = (self.nx, self.ny)
        for name in ("p_db", "tau_ns", "az_deg", "el_deg", "los"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != {shape}")

    def cell_center(self, ix: int, iy: int):
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise IndexError(f"cell ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return (
            self.origin[0] + (ix + 0.5) * self.cell_m,
            self.origin[1] + (iy + 0.5) * self.cell_m,
            self.z_m,
        )

    def same_grid(self, other: "RadioMap") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.origin == other.origin
            and self.cell_m == other.cell_m
            and self.z_m == other.z_m
        )


@dataclass(frozen=True)
class LinkBudget:
    """Scalar budget applied on top of a map's relative power."""

    tx_power_dbm: float = 10.0
    tx_gain_dbi: float = 0.0
    noise_density_dbm_hz: float = -174.0
    bandwidth_hz: float = 20e9
    noise_figure_db: float = 10.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0.0:
            raise ValueError("bandwidth must be positive")

    @property
    def noise_dbm(self) -> float:
        return (
            self.noise_density_dbm_hz
            + 10.0 * math.log10(self.bandwidth_hz)
            + self.noise_figure_db
        )


@dataclass
class Deployment:
    """One serving map plus co-channel interferer maps on the same grid."""

    serving: RadioMap
    interferers: list = field(default_factory=list)

    def __post_init__(self):
        for i, m in enumerate(self.interferers):
            if not self.serving.same_grid(m):
                raise ValueError(f"interferer {i} grid differs from serving grid")


def map_cells(scene: Scene, cell_m: float = DEFAULT_CELL_M, z_m: float = DEFAULT_MAP_HEIGHT_M):
    """Cell centers covering the room floor: (cells (M,3), origin, nx, ny)."""
    if cell_m <= 0.0:
        raise ValueError("cell size must be positive")
    lo, hi = scene.room.min, scene.room.max
    if not lo[2] <= z_m <= hi[2]:
        raise ValueError(f"map height {z_m} outside the room")
    nx = int(math.floor((hi[0] - lo[0]) / cell_m + 1e-9))
    ny = int(math.floor((hi[1] - lo[1]) / cell_m + 1e-9))
    if nx < 1 or ny < 1:
        raise ValueError("cell size larger than the room")
    xs = lo[0] + (np.arange(nx) + 0.5) * cell_m
    ys = lo[1] + (np.arange(ny) + 0.5) * cell_m
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cells = np.stack(
        [gx.reshape(-1), gy.reshape(-1), np.full(nx * ny, float(z_m))], axis=1
    )
    return cells, (float(lo[0]), float(lo[1])), nx, ny


def build_radio_map(
    scene: Scene,
    tx_id: str,
    source: str = "rt",
    model: inf_mod.InfModel = None,
    cell_m: float = DEFAULT_CELL_M,
    z_m: float = DEFAULT_MAP_HEIGHT_M,
    max_order: int = 2,
    order_offsets=None,
    aim_tx: bool = True,
    freq_hz: float = DEFAULT_FREQ_HZ,
    power_floor_db: float = DEFAULT_POWER_FLOOR_DB,
) -> RadioMap:
    """Sweep one transmitter over the floor grid.

    source "rt": summed calibrated traced power per cell, delay/angles of
    the strongest component (cells without any path get the floor power,
    zero delay/angles and a cleared flag). source "inf": the neural field
    evaluated per cell, conditioned on the same sweep; blocked or
    unreachable cells use the model's fallback law. ``aim_tx`` steers the
    transmit beam at each cell in turn; with it off the node's fixed
    boresight applies.
    """
    if source not in MAP_SOURCES:
        raise ValueError(f"unknown map source {source!r}")
    if tx_id not in scene.nodes:
        raise ValueError(f"unknown transmitter {tx_id!r}")
    if source == "inf":
        if model is None:
            raise ValueError("inf maps need a trained model")
        if order_offsets is None:
            order_offsets = model.order_offsets
    if order_offsets is None:
        order_offsets = (0.0, 0.0, 0.0)
    tx = scene.nodes[tx_id]
    cells, origin, nx, ny = map_cells(scene, cell_m, z_m)
    (
        n_paths, total_lin, _p_best, tau_best, az_best, el_best,
        los_ok, p_los, tau_los, az_los, el_los,
    ) = sweep_scene(
        scene,
        tx,
        cells,
        max_order=max_order,
        freq_hz=freq_hz,
        power_floor_db=power_floor_db,
        order_offsets=order_offsets,
        aim_at_cell=aim_tx,
    )
    shape = (nx, ny)
    if source == "rt":
        empty = n_paths == 0
        with np.errstate(divide="ignore"):
            p_sum = 10.0 * np.log10(total_lin)
        p = np.where(empty, power_floor_db, p_sum)
        tau = np.where(empty, 0.0, tau_best)
        az = np.where(empty, 0.0, az_best)
        el = np.where(empty, 0.0, el_best)
        los = los_ok.astype(bool)
    else:
        M = cells.shape[0]
        feats = np.zeros((M, inf_mod.N_RT_FEATURES))
        stats = model.norm
        if not model.ablate_rt:
            for i in range(M):
                if n_paths[i] == 0 or not los_ok[i]:
                    rt = inf_mod.fallback_features(
                        cells[i], tx, model.nlos_fallback, n_paths=int(n_paths[i])
                    )
                else:
                    rt = inf_mod.RtFeatures(
                        d_m=float(np.linalg.norm(cells[i] - np.asarray(tx.position))),
                        p_los_db=float(p_los[i]),
                        tau_los_ns=float(tau_los[i]),
                        az_los_deg=float(az_los[i]),
                        el_los_deg=float(el_los[i]),
                        n_paths=int(n_paths[i]),
                        los_valid=True,
                    )
                feats[i] = inf_mod.rt_feature_vector(rt, stats)
        pos = inf_mod.encode_position(cells, model.encoding_octaves)
        F = np.concatenate([pos, feats], axis=1)
        y = inf_mod.forward_features(model.weights, model.biases, F)
        p_arr, tau_arr, az_arr, el_arr = inf_mod.denormalize_outputs(stats, y)
        p, tau, az, el = p_arr, tau_arr, az_arr, el_arr
        los = los_ok.astype(bool)
    return RadioMap(
        tx_id=tx_id,
        source=source,
        origin=origin,
        cell_m=float(cell_m),
        nx=nx,
        ny=ny,
        z_m=float(z_m),
        p_db=np.asarray(p).reshape(shape),
        tau_ns=np.asarray(tau).reshape(shape),
        az_deg=np.asarray(az).reshape(shape),
        el_deg=np.asarray(el).reshape(shape),
        los=np.asarray(los).reshape(shape),
    )


# --------------------------------------------------------------------------
# SINR and coverage
# --------------------------------------------------------------------------


def _rx_power_dbm(m: RadioMap, budget: LinkBudget):
    return budget.tx_power_dbm + budget.tx_gain_dbi + m.p_db


def sinr_grid(dep: Deployment, budget: LinkBudget):
    """Per-cell SINR in dB, combined in the linear power domain."""
    s_lin = 10.0 ** (_rx_power_dbm(dep.serving, budget) / 10.0)
    denom = np.full_like(s_lin, 10.0 ** (budget.noise_dbm / 10.0))
    for m in dep.interferers:
        denom = denom + 10.0 ** (_rx_power_dbm(m, budget) / 10.0)
    return 10.0 * np.log10(s_lin / denom)


def sinr_db(dep: Deployment, budget: LinkBudget, ix: int, iy: int) -> float:
    """SINR of one cell in dB."""
    if not (0 <= ix < dep.serving.nx and 0 <= iy < dep.serving.ny):
        raise IndexError(
            f"cell ({ix}, {iy}) outside {dep.serving.nx}x{dep.serving.ny} grid"
        )
    s = _rx_power_dbm(dep.serving, budget)[ix, iy]
    n_lin = 10.0 ** (budget.noise_dbm / 10.0)
    i_lin = sum(
        10.0 ** (_rx_power_dbm(m, budget)[ix, iy] / 10.0) for m in dep.interferers
    )
    return 10.0 * math.log10(10.0 ** (s / 10.0) / (i_lin + n_lin))


def coverage_probability(dep: Deployment, budget: LinkBudget, threshold_db: float) -> float:
    """Fraction of cells with SINR at or above the threshold."""
    sinr = sinr_grid(dep, budget)
    return float(np.mean(sinr >= threshold_db))


def coverage_curve(dep: Deployment, budget: LinkBudget, thresholds_db):
    """Coverage at each threshold; thresholds must ascend strictly."""
    t = np.asarray(thresholds_db, dtype=np.float64)
    if t.ndim != 1 or t.shape[0] < 1:
        raise ValueError("need a 1-D threshold list")
    if np.any(np.diff(t) <= 0.0):
        raise ValueError("thresholds must ascend strictly")
    sinr = sinr_grid(dep, budget)
    return np.array([float(np.mean(sinr >= th)) for th in t])


def fade_map(m: RadioMap, sigma_db: float, seed: int) -> RadioMap:
    """Copy of the map with seeded shadow fading on the power plane.

    The multiplier is lognormal in the linear domain, meaning zero-mean
    Gaussian with the given sigma in dB. Sigma 0 reproduces the input.
    Meant for sensitivity studies; the deterministic maps stay the
    default everywhere else.
    """
    if sigma_db < 0.0:
        raise ValueError("fading sigma cannot be negative")
    rng = np.random.default_rng(seed)
    shadow = rng.normal(0.0, sigma_db, size=(m.nx, m.ny))
    return RadioMap(
        tx_id=m.tx_id,
        source=m.source,
        origin=m.origin,
        cell_m=m.cell_m,
        nx=m.nx,
        ny=m.ny,
        z_m=m.z_m,
        p_db=m.p_db + shadow,
        tau_ns=m.tau_ns.copy(),
        az_deg=m.az_deg.copy(),
        el_deg=m.el_deg.copy(),
        los=m.los.copy(),
    )


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

MAP_CSV_FIELDS = ["x", "y", "p_db", "tau_ns", "az_deg", "el_deg", "los"]


def save_radio_map(m: RadioMap, base_path: str):
    """``<base>.json`` header plus ``<base>.csv`` rows in x-major order."""
    base, ext = os.path.splitext(base_path)
    if ext in (".json", ".csv"):
        base_path = base
    csv_name = os.path.basename(base_path) + ".csv"
    header = {
        "tx_id": m.tx_id,
        "source": m.source,
        "origin": list(m.origin),
        "cell_m": m.cell_m,
        "nx": m.nx,
        "ny": m.ny,
        "z_m": m.z_m,
        "cells_file": csv_name,
    }
    _atomic_write_text(
        base_path + ".json", json.dumps(header, indent=2, sort_keys=True) + "\n"
    )
    lines = [",".join(MAP_CSV_FIELDS)]
    for ix in range(m.nx):
        for iy in range(m.ny):
            x, y, _ = m.cell_center(ix, iy)
            lines.append(
                ",".join(
                    [
                        "%.9g" % x,
                        "%.9g" % y,
                        "%.9g" % m.p_db[ix, iy],
                        "%.9g" % m.tau_ns[ix, iy],
                        "%.9g" % m.az_deg[ix, iy],
                        "%.9g" % m.el_deg[ix, iy],
                        "1" if m.los[ix, iy] else "0",
                    ]
                )
            )
    _atomic_write_text(base_path + ".csv", "\n".join(lines) + "\n")


def load_radio_map(json_path: str) -> RadioMap:
    with open(json_path) as fh:
        header = json.load(fh)
    nx, ny = int(header["nx"]), int(header["ny"])
    csv_path = os.path.join(os.path.dirname(json_path), header["cells_file"])
    p = np.zeros((nx, ny))
    tau = np.zeros((nx, ny))
    az = np.zeros((nx, ny))
    el = np.zeros((nx, ny))
    los = np.zeros((nx, ny), dtype=bool)
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if len(rows) != nx * ny:
        raise ValueError(f"{csv_path}: {len(rows)} rows, header implies {nx * ny}")
    for k, row in enumerate(rows):
        ix, iy = divmod(k, ny)
        p[ix, iy] = float(row["p_db"])
        tau[ix, iy] = float(row["tau_ns"])
        az[ix, iy] = float(row["az_deg"])
        el[ix, iy] = float(row["el_deg"])
        los[ix, iy] = row["los"] == "1"
    return RadioMap(
        tx_id=header["tx_id"],
        source=header["source"],
        origin=tuple(header["origin"]),
        cell_m=float(header["cell_m"]),
        nx=nx,
        ny=ny,
        z_m=float(header["z_m"]),
        p_db=p,
        tau_ns=tau,
        az_deg=az,
        el_deg=el,
        los=los,
    )


def save_coverage_csv(path, thresholds_db, coverage):
    lines = ["threshold_db,coverage"]
    for t, c in zip(thresholds_db, coverage):
        lines.append("%.9g,%.9g" % (t, c))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_coverage_csv(path):
    thresholds, coverage = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            thresholds.append(float(row["threshold_db"]))
            coverage.append(float(row["coverage"]))
    return np.array(thresholds), np.array(coverage)
