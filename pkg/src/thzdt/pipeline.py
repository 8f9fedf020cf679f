"""End-to-end digital-twin pipeline.

Stages, in dependency order:

1. measurement campaign: for every configured link, aim the transmit horn
   at the receiver, trace the link (isotropic probe on the receive side),
   synthesize the scanned sounding, extract multipath components, and
   match them to the traced paths;
2. calibration: pool matched power offsets per bounce order into a table
   that transfers to unseen links;
3. dataset: repeat the measurement at randomly drawn floor positions for
   the mapping transmitter; the power target is the summed extracted
   component power, delay/angle targets come from the strongest
   component, conditioning features from the calibrated tracer with the
   blocked-path distance law as fallback; a small reserved share of the
   budget anchors cells the tracer cannot reach at all;
4. distance fits: direct and blocked alpha/beta laws over every link and
   dataset point with a detection;
5. field training;
6. products: radio maps (calibrated tracer and neural field) plus
   noise-limited coverage curves for the ceiling and rack transmitters.

``run_all`` writes every product with atomic writes and fixed formatting,
so two runs with the same seed produce byte-identical trees.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import inf as inf_mod
from .calib import Matching, calibration_table, match_paths, save_matching_json
from .chanest import (
    PathLossSample,
    extract_mpcs,
    fit_abg,
    save_abg_json,
    save_mpcs_csv,
    save_pl_samples_csv,
    total_path_loss_db,
)
from .constants import DEFAULT_POWER_FLOOR_DB
from .raytrace import rt_features, save_paths_csv, sweep_scene, trace, los_blocked
from .scene import (
    HORN,
    Scene,
    _atomic_write_text,
    aim,
    canonical_links,
    canonical_scene,
    probe_node,
    save_scene,
)
from .sounder import ScanGrid, default_freqs, synthesize_cfr
from .sysperf import (
    Deployment,
    LinkBudget,
    build_radio_map,
    coverage_curve,
    save_coverage_csv,
    save_radio_map,
)

DATASET_MARGIN_M = 0.3


@dataclass
class PipelineConfig:
    seed: int = 7
    max_order: int = 2
    rel_threshold_db: float = 25.0
    min_separation_bins: int = 2
    noise_power_db: float = -120.0
    freq_start_hz: float = 290e9
    freq_stop_hz: float = 310e9
    n_freq: int = 2001
    grid: ScanGrid = field(default_factory=ScanGrid)
    dataset_size: int = 200
    dataset_tx: str = "tx3"
    dataset_height_m: float = 1.7
    fallback_anchors: int = 24
    epochs: int = 1200
    hidden_width: int = 128
    hidden_layers: int = 4
    map_cell_m: float = 0.25
    map_height_m: float = 1.7
    power_floor_db: float = DEFAULT_POWER_FLOOR_DB
    coverage_tx: tuple = ("tx3", "tx1")
    coverage_thresholds: tuple = tuple(float(t) for t in range(-10, 31, 2))

    def freqs(self):
        return default_freqs(self.freq_start_hz, self.freq_stop_hz, self.n_freq)


@dataclass
class LinkMeasurement:
    """Everything one sounded link produces."""

    tx_id: str
    rx_id: str
    position: tuple
    d_m: float
    los: bool
    traced: list
    measured: list
    matching: Matching


def measure_link(scene: Scene, tx_id: str, rx_id: str, cfg: PipelineConfig, position=None) -> LinkMeasurement:
    """Sound one link: aim, trace, synthesize, extract, match.

    ``position`` overrides the receive end (virtual probe points that are
    not scene nodes); otherwise the named node's position is used.
    """
    tx = scene.nodes[tx_id]
    if position is None:
        position = scene.nodes[rx_id].position
    position = tuple(float(v) for v in position)
    tx_aimed = aim(tx, position)
    probe = probe_node(position, name=rx_id)
    traced = trace(
        scene, tx_aimed, probe,
        max_order=cfg.max_order,
        power_floor_db=cfg.power_floor_db,
    )
    snd = synthesize_cfr(
        traced,
        cfg.grid,
        cfg.freqs(),
        rx_pattern=HORN,
        noise_power_db=cfg.noise_power_db,
        seed=cfg.seed,
        tx_id=tx_id,
        rx_id=rx_id,
    )
    measured = extract_mpcs(snd, cfg.rel_threshold_db, cfg.min_separation_bins)
    matching = match_paths(measured, traced)
    d = float(
        np.linalg.norm(np.asarray(position) - np.asarray(tx.position))
    )
    return LinkMeasurement(
        tx_id=tx_id,
        rx_id=rx_id,
        position=position,
        d_m=d,
        los=not los_blocked(scene, tx.position, position),
        traced=traced,
        measured=measured,
        matching=matching,
    )


def run_campaign(scene: Scene, links, cfg: PipelineConfig):
    """Measure every (tx, rx) pair; returns the per-link measurements."""
    return [measure_link(scene, tx_id, rx_id, cfg) for tx_id, rx_id in links]


def pl_samples_from(measurements):
    """Path-loss samples for every measurement with a detection."""
    out = []
    for m in measurements:
        if not m.measured:
            continue
        out.append(
            PathLossSample(
                tx_id=m.tx_id,
                rx_id=m.rx_id,
                d_m=m.d_m,
                pl_db=total_path_loss_db(m.measured),
                los=m.los,
            )
        )
    return out


def draw_dataset_points(scene: Scene, n: int, seed: int, z_m: float):
    """Uniform floor positions, margin off the walls, outside obstacles."""
    rng = np.random.default_rng(seed)
    lo, hi = scene.room.min, scene.room.max
    pts = []
    guard = 0
    while len(pts) < n:
        guard += 1
        if guard > 100 * n:
            raise RuntimeError("rejection sampling stalled; room too cluttered")
        x = rng.uniform(lo[0] + DATASET_MARGIN_M, hi[0] - DATASET_MARGIN_M)
        y = rng.uniform(lo[1] + DATASET_MARGIN_M, hi[1] - DATASET_MARGIN_M)
        p = (float(x), float(y), float(z_m))
        if any(b.contains(p) for b in scene.obstacles):
            continue
        pts.append(p)
    return pts


# Anchor candidates come from their own grid, finer than the radio map,
# because the fully shadowed region can be a ribbon thinner than one map
# cell and the anchors must cover it in both axes.
ANCHOR_GRID_M = 0.125


def fallback_anchor_points(scene: Scene, cfg: PipelineConfig, k: int):
    """Up to ``k`` grid points the tracer cannot reach at all.

    The sounder hears nothing at such points, so the regular dataset
    never covers them; the field only learns the documented blocked-path
    behaviour if a few anchors pin it down. Candidates come from the
    grid-sweep path counts, filtered by the same wall margin and
    obstacle test as the random draws, then thinned evenly.
    """
    if k <= 0:
        return []
    from .sysperf import map_cells

    tx = scene.nodes[cfg.dataset_tx]
    pitch = min(cfg.map_cell_m, ANCHOR_GRID_M)
    cells, _, _, _ = map_cells(scene, pitch, cfg.dataset_height_m)
    n_paths = sweep_scene(
        scene, tx, cells,
        max_order=cfg.max_order,
        power_floor_db=cfg.power_floor_db,
    )[0]
    lo, hi = scene.room.min, scene.room.max
    keep = []
    for pos, n in zip(cells, n_paths):
        if n != 0:
            continue
        p = (float(pos[0]), float(pos[1]), float(pos[2]))
        if not lo[0] + DATASET_MARGIN_M <= p[0] <= hi[0] - DATASET_MARGIN_M:
            continue
        if not lo[1] + DATASET_MARGIN_M <= p[1] <= hi[1] - DATASET_MARGIN_M:
            continue
        if any(b.contains(p) for b in scene.obstacles):
            continue
        keep.append(p)
    if not keep:
        return []
    idx = np.unique(
        np.round(np.linspace(0, len(keep) - 1, min(k, len(keep)))).astype(int)
    )
    return [keep[i] for i in idx]


def fallback_anchor_samples(scene: Scene, cfg: PipelineConfig, abg_nlos, points):
    """Anchor samples whose features and targets are both the fallback."""
    tx = scene.nodes[cfg.dataset_tx]
    samples = []
    for p in points:
        feats = inf_mod.fallback_features(p, tx, abg_nlos)
        samples.append(
            inf_mod.Sample(
                x=p,
                rt=feats,
                target_p_db=feats.p_los_db,
                target_tau_ns=feats.tau_los_ns,
                target_az_deg=feats.az_los_deg,
                target_el_deg=feats.el_los_deg,
            )
        )
    return samples


def build_dataset(scene: Scene, cfg: PipelineConfig, n=None):
    """Sound dataset points until ``n`` carry a detection.

    Draws follow the same uniform-with-margin scheme as
    :func:`draw_dataset_points`. A point whose sounding produces no
    detection at all (fully shadowed, nothing above the noise floor) is
    skipped and replaced by a fresh draw: the twin cannot supervise what
    the instrument cannot see. Returns (measurements, skipped count).
    """
    target = cfg.dataset_size if n is None else n
    rng = np.random.default_rng(cfg.seed)
    lo, hi = scene.room.min, scene.room.max
    measurements = []
    skipped = 0
    guard = 0
    while len(measurements) < target:
        guard += 1
        if guard > 100 * target + 1000:
            raise RuntimeError("dataset sampling stalled; too few detectable points")
        x = rng.uniform(lo[0] + DATASET_MARGIN_M, hi[0] - DATASET_MARGIN_M)
        y = rng.uniform(lo[1] + DATASET_MARGIN_M, hi[1] - DATASET_MARGIN_M)
        p = (float(x), float(y), float(cfg.dataset_height_m))
        if any(b.contains(p) for b in scene.obstacles):
            continue
        m = measure_link(
            scene, cfg.dataset_tx, f"pt{len(measurements):03d}", cfg, position=p
        )
        if not m.measured:
            skipped += 1
            continue
        measurements.append(m)
    return measurements, skipped


def assemble_samples(scene: Scene, measurements, table, abg_nlos, cfg: PipelineConfig):
    """Supervised samples from measured links.

    The power target is the summed component power; delay and angle
    targets come from the strongest component. Conditioning features use
    the calibrated tracer, falling back to the blocked-path distance law
    where the tracer finds no direct path.
    """
    from .calib import apply_table

    tx = scene.nodes[cfg.dataset_tx]
    samples = []
    for m in measurements:
        if not m.measured:
            continue
        calibrated = apply_table(m.traced, table)
        feats = rt_features(
            calibrated, aim(tx, m.position), probe_node(m.position)
        )
        if feats.n_paths == 0:
            feats = inf_mod.fallback_features(m.position, tx, abg_nlos)
        elif not feats.los_valid:
            feats = inf_mod.fallback_features(
                m.position, tx, abg_nlos, n_paths=feats.n_paths
            )
        strongest = m.measured[0]
        samples.append(
            inf_mod.Sample(
                x=m.position,
                rt=feats,
                target_p_db=-total_path_loss_db(m.measured),
                target_tau_ns=strongest.delay_ns,
                target_az_deg=strongest.az_deg,
                target_el_deg=strongest.el_deg,
            )
        )
    return samples


def run_all(out_dir: str, cfg: PipelineConfig = None, scene: Scene = None) -> dict:
    """Execute every stage and write all products under ``out_dir``.

    Returns a summary dict (also written as ``run_summary.json``).
    """
    if cfg is None:
        cfg = PipelineConfig()
    if scene is None:
        scene = canonical_scene()
    os.makedirs(out_dir, exist_ok=True)

    def path(name):
        return os.path.join(out_dir, name)

    save_scene(scene, path("scene.json"))

    # 1. measurement campaign over the configured node links
    links = canonical_links()
    campaign = run_campaign(scene, links, cfg)
    save_paths_csv(
        path("rt_paths.csv"),
        [(m.tx_id, m.rx_id, p) for m in campaign for p in m.traced],
    )
    save_mpcs_csv(
        path("mpcs.csv"),
        [(m.tx_id, m.rx_id, p) for m in campaign for p in m.measured],
    )

    # 2. calibration table pooled over the campaign
    table = calibration_table(
        [(m.matching, m.traced) for m in campaign], max_order=cfg.max_order
    )
    pairs = sum(len(m.matching.pairs) for m in campaign)
    doc = {
        "order_offsets_db": [float(v) for v in table],
        "n_matched_pairs": pairs,
        "links": {
            f"{m.tx_id}-{m.rx_id}": {
                "n_measured": len(m.measured),
                "n_traced": len(m.traced),
                "n_matched": len(m.matching.pairs),
                "mean_offset_db": m.matching.mean_offset_db,
            }
            for m in campaign
        },
    }
    _atomic_write_text(
        path("calibration.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    save_matching_json(
        path("matching_example.json"), campaign[0].matching
    )

    # 3. dataset soundings, reserving part of the budget for anchors at
    #    unreachable cells
    anchor_pts = fallback_anchor_points(
        scene, cfg, min(cfg.fallback_anchors, cfg.dataset_size // 8)
    )
    dataset_meas, skipped = build_dataset(
        scene, cfg, n=cfg.dataset_size - len(anchor_pts)
    )

    # 4. distance fits over campaign plus dataset detections
    pl_samples = pl_samples_from(campaign) + pl_samples_from(dataset_meas)
    save_pl_samples_csv(path("pl_samples.csv"), pl_samples)
    abg_los = fit_abg(pl_samples, "los")
    abg_nlos = fit_abg(pl_samples, "nlos")
    save_abg_json(path("abg_los.json"), abg_los)
    save_abg_json(path("abg_nlos.json"), abg_nlos)

    # 5. training
    samples = assemble_samples(
        scene, dataset_meas, table, abg_nlos, cfg
    ) + fallback_anchor_samples(scene, cfg, abg_nlos, anchor_pts)
    inf_mod.save_dataset_csv(path("dataset.csv"), samples)
    tcfg = inf_mod.TrainConfig(
        epochs=cfg.epochs,
        seed=cfg.seed,
        hidden_width=cfg.hidden_width,
        hidden_layers=cfg.hidden_layers,
    )
    model, history = inf_mod.train(
        samples, tcfg, nlos_fallback=abg_nlos, order_offsets=table
    )
    inf_mod.save_model(model, path("model.json"))
    _atomic_write_text(
        path("loss_history.csv"),
        "epoch,loss\n"
        + "\n".join("%d,%.9g" % (i, v) for i, v in enumerate(history))
        + "\n",
    )

    # 6. maps and coverage
    maps = {}
    for tx_id in cfg.coverage_tx:
        m_rt = build_radio_map(
            scene, tx_id, "rt",
            cell_m=cfg.map_cell_m, z_m=cfg.map_height_m,
            max_order=cfg.max_order, order_offsets=table,
            power_floor_db=cfg.power_floor_db,
        )
        save_radio_map(m_rt, path(f"map_rt_{tx_id}"))
        maps[tx_id] = m_rt
    m_inf = build_radio_map(
        scene, cfg.dataset_tx, "inf", model=model,
        cell_m=cfg.map_cell_m, z_m=cfg.map_height_m,
        max_order=cfg.max_order,
        power_floor_db=cfg.power_floor_db,
    )
    save_radio_map(m_inf, path(f"map_inf_{cfg.dataset_tx}"))

    budget = LinkBudget()
    thresholds = np.asarray(cfg.coverage_thresholds)
    coverage_at_zero = {}
    for tx_id, m in maps.items():
        cov = coverage_curve(Deployment(serving=m), budget, thresholds)
        save_coverage_csv(path(f"coverage_{tx_id}.csv"), thresholds, cov)
        at_zero = cov[np.nonzero(thresholds == 0.0)[0]]
        coverage_at_zero[tx_id] = float(at_zero[0]) if at_zero.size else None

    summary = {
        "seed": cfg.seed,
        "n_links": len(links),
        "n_dataset_points": cfg.dataset_size,
        "n_dataset_detections": len(dataset_meas),
        "n_dataset_skipped": skipped,
        "n_fallback_anchors": len(anchor_pts),
        "n_samples": len(samples),
        "n_matched_pairs": pairs,
        "order_offsets_db": [float(v) for v in table],
        "abg": {
            "los": {"alpha": abg_los.alpha, "beta": abg_los.beta},
            "nlos": {"alpha": abg_nlos.alpha, "beta": abg_nlos.beta},
        },
        "initial_loss": history[0],
        "final_loss": history[-1],
        "coverage_at_0db": coverage_at_zero,
    }
    _atomic_write_text(
        path("run_summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary
