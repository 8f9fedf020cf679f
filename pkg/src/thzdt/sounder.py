"""Synthetic directional channel sounder.

Emulates a frequency-swept measurement with a mechanically rotated horn on
the receive side: for every (azimuth, elevation) scan direction the complex
channel frequency response is the coherent sum of the traced multipath
components, each weighted by the horn's amplitude gain toward its arrival
direction, plus circularly symmetric complex noise.

Path powers handed in must exclude any receive gain (the sounder applies
the scan horn itself); the tracer produces exactly that when the receive
node is an isotropic probe.

Noise is reproducible: the generator seed is derived from
(seed, tx id, rx id) through SHA-256, so every link gets an independent
stream and repeated runs are identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .constants import C0
from .scene import AntennaPattern, _atomic_write_text, antenna_gain, wrap_delta_deg

DEFAULT_NOISE_DB = -120.0


@dataclass(frozen=True)
class ScanGrid:
    """Rectangular scan raster in azimuth and elevation, degrees.

    Steps must tile the ranges exactly. A full-circle azimuth raster
    (span + step == 360) wraps when searching for angular peaks.
    """

    az_start_deg: float = 0.0
    az_stop_deg: float = 355.0
    az_step_deg: float = 5.0
    el_start_deg: float = -20.0
    el_stop_deg: float = 20.0
    el_step_deg: float = 10.0

    def __post_init__(self):
        for name in ("az", "el"):
            start = getattr(self, f"{name}_start_deg")
            stop = getattr(self, f"{name}_stop_deg")
            step = getattr(self, f"{name}_step_deg")
            if step <= 0.0:
                raise ValueError(f"{name} step must be positive, got {step}")
            if stop < start:
                raise ValueError(f"{name} stop {stop} below start {start}")
            n = (stop - start) / step
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"{name} step {step} does not tile [{start}, {stop}]")
        if self.az_stop_deg - self.az_start_deg + self.az_step_deg > 360.0 + 1e-9:
            raise ValueError("azimuth raster wraps past 360 degrees")

    @property
    def az_deg(self):
        n = int(round((self.az_stop_deg - self.az_start_deg) / self.az_step_deg)) + 1
        return self.az_start_deg + self.az_step_deg * np.arange(n)

    @property
    def el_deg(self):
        n = int(round((self.el_stop_deg - self.el_start_deg) / self.el_step_deg)) + 1
        return self.el_start_deg + self.el_step_deg * np.arange(n)

    @property
    def n_az(self) -> int:
        return self.az_deg.shape[0]

    @property
    def n_el(self) -> int:
        return self.el_deg.shape[0]

    @property
    def full_circle(self) -> bool:
        span = self.az_stop_deg - self.az_start_deg + self.az_step_deg
        return abs(span - 360.0) <= 1e-9

    def to_dict(self) -> dict:
        return {
            "az_start_deg": self.az_start_deg,
            "az_stop_deg": self.az_stop_deg,
            "az_step_deg": self.az_step_deg,
            "el_start_deg": self.el_start_deg,
            "el_stop_deg": self.el_stop_deg,
            "el_step_deg": self.el_step_deg,
        }


@dataclass
class Sounding:
    """One directional sounding: cfr[freq, az, el], complex."""

    tx_id: str
    rx_id: str
    freqs_hz: np.ndarray
    grid: ScanGrid
    cfr: np.ndarray
    rx_pattern: AntennaPattern = None
    noise_power_db: float = DEFAULT_NOISE_DB
    seed: int = 0

    def __post_init__(self):
        shape = (self.freqs_hz.shape[0], self.grid.n_az, self.grid.n_el)
        if self.cfr.shape != shape:
            raise ValueError(f"cfr shape {self.cfr.shape} != {shape}")


def default_freqs(start_hz: float = 290e9, stop_hz: float = 310e9, n: int = 2001):
    """Uniform sweep grid; defaults give a 20 GHz span on 10 MHz points."""
    if n < 2 or stop_hz <= start_hz:
        raise ValueError("need at least two ascending frequencies")
    return np.linspace(start_hz, stop_hz, n)


def _check_uniform(freqs_hz):
    f = np.asarray(freqs_hz, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] < 2:
        raise ValueError("frequency grid must be 1-D with at least 2 points")
    df = np.diff(f)
    if np.any(df <= 0.0) or abs(df.max() - df.min()) > 1e-3:
        raise ValueError("frequency grid must be uniformly ascending")
    return f


def bandwidth_hz(freqs_hz) -> float:
    f = _check_uniform(freqs_hz)
    return float(f[-1] - f[0])


def delay_resolution_s(freqs_hz) -> float:
    """Inverse sweep bandwidth: the delay bin a detector can resolve."""
    return 1.0 / bandwidth_hz(freqs_hz)


def range_resolution_m(freqs_hz) -> float:
    """Delay resolution expressed as one-way distance."""
    return C0 / bandwidth_hz(freqs_hz)


def rng_for_link(seed: int, tx_id: str, rx_id: str) -> np.random.Generator:
    """Independent, reproducible generator per (seed, link)."""
    digest = hashlib.sha256(f"{seed}|{tx_id}|{rx_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def synthesize_cfr(
    paths,
    grid: ScanGrid,
    freqs_hz,
    rx_pattern: AntennaPattern = None,
    noise_power_db: float = DEFAULT_NOISE_DB,
    seed: int = 0,
    tx_id: str = "tx",
    rx_id: str = "rx",
) -> Sounding:
    """Simulate the full scan for one link from a traced path list."""
    freqs = _check_uniform(freqs_hz)
    amps = np.array([10.0 ** (p.power_db / 20.0) for p in paths])
    delays = np.array([p.delay_ns * 1e-9 for p in paths])
    az = np.array([p.az_deg for p in paths])
    el = np.array([p.el_deg for p in paths])
    scan_az = grid.az_deg
    scan_el = grid.el_deg
    if len(paths):
        d_az = wrap_delta_deg(az[:, None] - scan_az[None, :])  # (L, A)
        d_el = el[:, None] - scan_el[None, :]  # (L, E)
        gain_db = antenna_gain(
            rx_pattern, d_az[:, :, None], d_el[:, None, :]
        )  # (L, A, E)
        gains_amp = 10.0 ** (np.asarray(gain_db, dtype=np.float64) / 20.0)
    else:
        gains_amp = np.zeros((0, grid.n_az, grid.n_el))
    cfr = kernels.cfr_accumulate(
        freqs, amps, delays, np.ascontiguousarray(gains_amp)
    )
    if noise_power_db is not None and math.isfinite(noise_power_db):
        sigma = math.sqrt(10.0 ** (noise_power_db / 10.0) / 2.0)
        rng = rng_for_link(seed, tx_id, rx_id)
        noise = rng.standard_normal(cfr.shape) + 1j * rng.standard_normal(cfr.shape)
        cfr = cfr + sigma * noise
    return Sounding(
        tx_id=tx_id,
        rx_id=rx_id,
        freqs_hz=freqs,
        grid=grid,
        cfr=cfr,
        rx_pattern=rx_pattern,
        noise_power_db=noise_power_db,
        seed=seed,
    )


# --------------------------------------------------------------------------
# persistence: JSON header + CSV of interleaved re/im samples
# --------------------------------------------------------------------------


def save_sounding(snd: Sounding, base_path: str) -> None:
    """Write ``<base>.json`` (header) and ``<base>.csv`` (samples).

    Samples are row-major over (freq, az, el), one ``re,im`` pair per line,
    9 significant digits.
    """
    base, ext = os.path.splitext(base_path)
    if ext == ".json":
        base_path = base
    csv_name = os.path.basename(base_path) + ".csv"
    pat = snd.rx_pattern
    header = {
        "tx_id": snd.tx_id,
        "rx_id": snd.rx_id,
        "seed": snd.seed,
        "noise_power_db": snd.noise_power_db,
        "freq_start_hz": float(snd.freqs_hz[0]),
        "freq_stop_hz": float(snd.freqs_hz[-1]),
        "n_freq": int(snd.freqs_hz.shape[0]),
        "grid": snd.grid.to_dict(),
        "rx_pattern": None
        if pat is None
        else {
            "boresight_gain_dbi": pat.boresight_gain_dbi,
            "hpbw_az_deg": pat.hpbw_az_deg,
            "hpbw_el_deg": pat.hpbw_el_deg,
            "sidelobe_floor_db": pat.sidelobe_floor_db,
        },
        "samples_file": csv_name,
        "sample_order": "row-major over (freq, az, el)",
    }
    _atomic_write_text(base_path + ".json", json.dumps(header, indent=2, sort_keys=True) + "\n")
    flat = snd.cfr.reshape(-1)
    lines = ["re,im"]
    lines.extend("%.9g,%.9g" % (z.real, z.imag) for z in flat)
    _atomic_write_text(base_path + ".csv", "\n".join(lines) + "\n")


def load_sounding(json_path: str) -> Sounding:
    with open(json_path) as fh:
        header = json.load(fh)
    grid = ScanGrid(**header["grid"])
    freqs = np.linspace(
        header["freq_start_hz"], header["freq_stop_hz"], header["n_freq"]
    )
    csv_path = os.path.join(os.path.dirname(json_path), header["samples_file"])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        if names != ["re", "im"]:
            raise ValueError(f"{csv_path}: expected re,im columns, got {names}")
        data = np.array([[float(a), float(b)] for a, b in reader])
    expected = header["n_freq"] * grid.n_az * grid.n_el
    if data.shape[0] != expected:
        raise ValueError(
            f"{csv_path}: {data.shape[0]} samples, header implies {expected}"
        )
    cfr = (data[:, 0] + 1j * data[:, 1]).reshape(header["n_freq"], grid.n_az, grid.n_el)
    pat = header.get("rx_pattern")
    return Sounding(
        tx_id=header["tx_id"],
        rx_id=header["rx_id"],
        freqs_hz=freqs,
        grid=grid,
        cfr=cfr,
        rx_pattern=None if pat is None else AntennaPattern(**pat),
        noise_power_db=header["noise_power_db"],
        seed=header["seed"],
    )
