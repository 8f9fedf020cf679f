"""Calibrating the ray tracer against extracted measurements.

Measured and traced paths are paired greedily: among all remaining pairs,
take the one with the lowest weighted squared distance in (delay, azimuth,
elevation), remove both paths, repeat while the best cost stays under the
gate. Azimuth differences wrap. Each matched pair yields a power offset
(measured minus traced, dB).

Calibration only ever shifts traced powers; geometry (delays, angles,
bounce orders) is read-only. Unmatched traced paths get the mean offset of
their bounce order, the global mean when that order has no matches, and
zero when nothing matched at all. Pooling offsets per bounce order across
many links gives a calibration table that transfers to unseen links.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .raytrace import Mpc
from .scene import _atomic_write_text, wrap_delta_deg

GATE_DEFAULT = 12.0


@dataclass(frozen=True)
class MatchWeights:
    """Inverse-square tolerances; defaults: 0.05 ns, 5 deg az, 10 deg el."""

    w_delay: float = 1.0 / 0.05**2
    w_az: float = 1.0 / 5.0**2
    w_el: float = 1.0 / 10.0**2
    gate: float = GATE_DEFAULT

    def __post_init__(self):
        if min(self.w_delay, self.w_az, self.w_el) < 0.0:
            raise ValueError("weights must be non-negative")
        if self.gate <= 0.0:
            raise ValueError("gate must be positive")


@dataclass
class Matching:
    """Pairing between a measured and a traced path list.

    ``pairs`` holds (measured index, traced index, cost); ``offsets_db``
    the per-pair measured-minus-traced power differences, same order.
    """

    pairs: list = field(default_factory=list)
    offsets_db: list = field(default_factory=list)
    unmatched_measured: list = field(default_factory=list)
    unmatched_rt: list = field(default_factory=list)
    weights: MatchWeights = field(default_factory=MatchWeights)

    @property
    def mean_offset_db(self) -> float:
        if not self.offsets_db:
            return 0.0
        return float(np.mean(self.offsets_db))


def pair_cost(measured: Mpc, traced: Mpc, weights: MatchWeights) -> float:
    dt = measured.delay_ns - traced.delay_ns
    da = float(wrap_delta_deg(measured.az_deg - traced.az_deg))
    de = measured.el_deg - traced.el_deg
    return weights.w_delay * dt * dt + weights.w_az * da * da + weights.w_el * de * de


def match_paths(measured, traced, weights: MatchWeights = None) -> Matching:
    """Greedy lowest-cost-first assignment under the gate."""
    if weights is None:
        weights = MatchWeights()
    cost = np.full((len(measured), len(traced)), np.inf)
    for i, m in enumerate(measured):
        for j, r in enumerate(traced):
            cost[i, j] = pair_cost(m, r, weights)
    free_m = set(range(len(measured)))
    free_r = set(range(len(traced)))
    out = Matching(weights=weights)
    while free_m and free_r:
        best = None
        for i in sorted(free_m):
            for j in sorted(free_r):
                c = cost[i, j]
                if c <= weights.gate and (best is None or c < best[0]):
                    best = (c, i, j)
        if best is None:
            break
        c, i, j = best
        free_m.discard(i)
        free_r.discard(j)
        out.pairs.append((i, j, float(c)))
        out.offsets_db.append(measured[i].power_db - traced[j].power_db)
    out.unmatched_measured = sorted(free_m)
    out.unmatched_rt = sorted(free_r)
    return out


def _order_means(matching: Matching, traced):
    by_order = {}
    for (_, j, _), off in zip(matching.pairs, matching.offsets_db):
        by_order.setdefault(traced[j].bounce_order, []).append(off)
    return {k: float(np.mean(v)) for k, v in by_order.items()}


def apply_calibration(traced, matching: Matching) -> list:
    """Traced paths with calibrated powers; geometry untouched.

    Matched paths take their own pair offset; unmatched ones fall back to
    the mean offset of their bounce order, then the global mean, then 0.
    """
    n = len(traced)
    for _, j, _ in matching.pairs:
        if not 0 <= j < n:
            raise ValueError(f"matching references traced path {j} of {n}")
    pair_off = {j: off for (_, j, _), off in zip(matching.pairs, matching.offsets_db)}
    order_mean = _order_means(matching, traced)
    global_mean = matching.mean_offset_db
    out = []
    for j, p in enumerate(traced):
        if j in pair_off:
            off = pair_off[j]
        elif p.bounce_order in order_mean:
            off = order_mean[p.bounce_order]
        else:
            off = global_mean
        out.append(replace(p, power_db=p.power_db + off))
    return out


def calibration_table(matchings_with_traced, max_order: int = 2):
    """Per-bounce-order mean offsets pooled across links.

    Input: iterable of (Matching, traced path list). Returns a float array
    of length ``max_order + 1``; orders without any matched pair take the
    global mean over all pairs (0 when nothing matched anywhere).
    """
    pool = {}
    everything = []
    for matching, traced in matchings_with_traced:
        for (_, j, _), off in zip(matching.pairs, matching.offsets_db):
            pool.setdefault(traced[j].bounce_order, []).append(off)
            everything.append(off)
    global_mean = float(np.mean(everything)) if everything else 0.0
    table = np.full(max_order + 1, global_mean)
    for order, offs in pool.items():
        if 0 <= order <= max_order:
            table[order] = float(np.mean(offs))
    return table


def apply_table(traced, table) -> list:
    """Shift traced powers by the per-order calibration table."""
    table = np.asarray(table, dtype=np.float64)
    out = []
    for p in traced:
        if not 0 <= p.bounce_order < table.shape[0]:
            raise ValueError(f"no table entry for bounce order {p.bounce_order}")
        out.append(replace(p, power_db=p.power_db + float(table[p.bounce_order])))
    return out


OFFSET_POLICY = "pair offset, then bounce-order mean, then global mean"


def save_matching_json(path, matching: Matching):
    doc = {
        "pairs": [
            {"measured": i, "traced": j, "cost": c, "offset_db": off}
            for (i, j, c), off in zip(matching.pairs, matching.offsets_db)
        ],
        "policy": OFFSET_POLICY,
        "unmatched_measured": matching.unmatched_measured,
        "unmatched_rt": matching.unmatched_rt,
        "weights": {
            "w_delay": matching.weights.w_delay,
            "w_az": matching.weights.w_az,
            "w_el": matching.weights.w_el,
            "gate": matching.weights.gate,
        },
    }
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_matching_json(path) -> Matching:
    with open(path) as fh:
        doc = json.load(fh)
    w = MatchWeights(**doc["weights"])
    m = Matching(weights=w)
    for row in doc["pairs"]:
        m.pairs.append((int(row["measured"]), int(row["traced"]), float(row["cost"])))
        m.offsets_db.append(float(row["offset_db"]))
    m.unmatched_measured = [int(i) for i in doc["unmatched_measured"]]
    m.unmatched_rt = [int(i) for i in doc["unmatched_rt"]]
    return m
