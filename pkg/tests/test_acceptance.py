"""End-to-end acceptance checks.

One test per acceptance criterion, numbered so the report reads top to
bottom. Each test checks its numeric tolerances and its own wall-clock
budget. Expected values are either closed-form (free-space constants,
linear-domain SINR) or recomputed here by an independent oracle
(brute-force assignment, pure-python SINR, Monte Carlo disk fraction).

The pipeline-product tests share the session-scoped ``pipeline_runs``
fixture from conftest, so the two full seeded runs happen once.
"""

import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
from numpy.random import default_rng

from thzdt.calib import MatchWeights, calibration_table, match_paths, pair_cost
from thzdt.chanest import (
    PathLossSample,
    extract_mpcs,
    fit_abg,
    load_abg_json,
    total_path_loss_db,
)
from thzdt.constants import C0
from thzdt.inf import (
    RtFeatures,
    Sample,
    TrainConfig,
    forward,
    grad_check,
    load_dataset_csv,
    load_model,
    predict,
    train,
)
from thzdt.pipeline import PipelineConfig
from thzdt.raytrace import Mpc, trace
from thzdt.scene import HORN, Box, Material, Scene, canonical_scene, probe_node
from thzdt.sounder import (
    ScanGrid,
    bandwidth_hz,
    default_freqs,
    delay_resolution_s,
    range_resolution_m,
    synthesize_cfr,
)
from thzdt.sysperf import (
    Deployment,
    LinkBudget,
    RadioMap,
    build_radio_map,
    coverage_probability,
    load_radio_map,
    sinr_db,
)

# Free-space reference intercept at 300 GHz and 1 m.
BETA_FS = 20.0 * math.log10(4.0 * math.pi * 300e9 / C0)


def planted(power_db, delay_ns, az_deg, el_deg):
    return Mpc(power_db=power_db, delay_ns=delay_ns, az_deg=az_deg,
               el_deg=el_deg, bounce_order=0)


def wrap_abs_deg(a):
    return abs((a + 180.0) % 360.0 - 180.0)


def test_01_sounder_resolution_and_range_accuracy():
    t0 = time.perf_counter()
    freqs = default_freqs()
    assert bandwidth_hz(freqs) == 20e9
    assert delay_resolution_s(freqs) == 5e-11
    assert delay_resolution_s(freqs) * 1e9 == 0.05
    assert range_resolution_m(freqs) == 0.015
    elapsed = time.perf_counter() - t0
    print(f"\n  delay res 0.05 ns, range res 1.5 cm, exact ({elapsed:.3f} s)")
    assert elapsed < 1.0


def test_02_planted_paths_recovered_without_spurious():
    t0 = time.perf_counter()
    grid = ScanGrid()
    freqs = default_freqs()
    n_total = 0
    worst = {"dt": 0.0, "daz": 0.0, "del": 0.0, "dp": 0.0}
    for i in range(20):
        rng = default_rng(100 + i)
        n = int(rng.integers(1, 6))
        bins = [int(rng.integers(80, 161))]
        while len(bins) < n:
            bins.append(bins[-1] + int(rng.integers(4, 31)))
        delays = [(b + float(rng.uniform(-0.2, 0.2))) * 0.05 for b in bins]
        cells = []
        while len(cells) < n:
            c = (int(rng.integers(0, 72)), int(rng.integers(0, 5)))
            daz = abs(c[0] - cells[-1][0]) if cells else 99
            ok = True
            for c2 in cells:
                daz = abs(c[0] - c2[0])
                daz = min(daz, 72 - daz)
                if max(daz, abs(c[1] - c2[1])) < 2:
                    ok = False
                    break
            if ok:
                cells.append(c)
        paths = []
        for tau, (ai, ei) in zip(delays, cells):
            paths.append(planted(float(rng.uniform(-82.0, -70.0)), tau,
                                 grid.az_start_deg + ai * grid.az_step_deg,
                                 grid.el_start_deg + ei * grid.el_step_deg))
        snd = synthesize_cfr(paths, grid, freqs, rx_pattern=HORN,
                             noise_power_db=-120.0, seed=i)
        got = extract_mpcs(snd)
        assert len(got) == len(paths), f"scene {i}: {len(got)} != {len(paths)}"
        for p, g in zip(sorted(paths, key=lambda m: m.delay_ns),
                        sorted(got, key=lambda m: m.delay_ns)):
            dt = abs(g.delay_ns - p.delay_ns)
            daz = wrap_abs_deg(g.az_deg - p.az_deg)
            de = abs(g.el_deg - p.el_deg)
            dp = abs(g.power_db - p.power_db)
            assert dt <= 0.05
            assert daz <= grid.az_step_deg
            assert de <= grid.el_step_deg
            assert dp <= 0.5
            worst = {"dt": max(worst["dt"], dt), "daz": max(worst["daz"], daz),
                     "del": max(worst["del"], de), "dp": max(worst["dp"], dp)}
            n_total += 1
    elapsed = time.perf_counter() - t0
    print(f"\n  {n_total} paths over 20 scenes, worst |dt|={worst['dt']:.2g} ns"
          f" |daz|={worst['daz']:.2g} |del|={worst['del']:.2g}"
          f" |dP|={worst['dp']:.3f} dB ({elapsed:.1f} s)")
    assert elapsed < 30.0


def test_03_path_loss_fit_exact_and_under_noise():
    t0 = time.perf_counter()
    concrete = Material("concrete", 8.0)
    scene = Scene(room=Box((0.0, 0.0, 0.0), (400.0, 400.0, 100.0), concrete),
                  obstacles=[], nodes={}, materials={"concrete": concrete})
    tx = probe_node((200.0, 200.0, 50.0), name="tx")
    samples = []
    for d in np.linspace(1.0, 50.0, 40):
        rx = probe_node((200.0 + float(d), 200.0, 50.0), name="rx")
        pl = total_path_loss_db(trace(scene, tx, rx, max_order=0))
        samples.append(PathLossSample("tx", "rx", float(d), pl, True))
    fit = fit_abg(samples)
    assert abs(fit.alpha - 20.0) <= 1e-6
    assert abs(fit.beta - 81.98) <= 0.01

    hits = 0
    for seed in range(100):
        r = default_rng(seed)
        d = 10.0 ** r.uniform(0.0, 1.7, 50)
        pl = 20.0 * np.log10(d) + BETA_FS + r.normal(0.0, 2.0, 50)
        noisy = [PathLossSample("t", "r", float(di), float(pi), True)
                 for di, pi in zip(d, pl)]
        hits += abs(fit_abg(noisy).alpha - 20.0) <= 1.5
    assert hits >= 95
    elapsed = time.perf_counter() - t0
    print(f"\n  alpha={fit.alpha:.9f} beta={fit.beta:.4f},"
          f" noisy fits in band: {hits}/100 ({elapsed:.1f} s)")
    assert elapsed < 10.0


def brute_force_match(measured, traced, weights):
    """Exact assignment: max pair count, then min total cost, under the gate."""
    admissible = {}
    for i, m in enumerate(measured):
        for j, r in enumerate(traced):
            c = pair_cost(m, r, weights)
            if c <= weights.gate:
                admissible[(i, j)] = c
    best = (0, 0.0, frozenset())

    def rec(i, used, count, cost, chosen):
        nonlocal best
        if i == len(measured):
            if count > best[0] or (count == best[0] and cost < best[1] - 1e-15):
                best = (count, cost, frozenset(chosen))
            return
        rec(i + 1, used, count, cost, chosen)
        for j in range(len(traced)):
            if j not in used and (i, j) in admissible:
                rec(i + 1, used | {j}, count + 1,
                    cost + admissible[(i, j)], chosen + [(i, j)])

    rec(0, frozenset(), 0, 0.0, [])
    return best


def test_04_bias_recovery_and_matching_optimality():
    t0 = time.perf_counter()
    scene = canonical_scene()
    tx = scene.nodes["tx3"]
    matchings = []
    offsets = []
    for p in [(2.0, 2.0, 1.7), (5.0, 4.0, 1.7), (8.0, 6.0, 1.7),
              (3.5, 7.0, 1.7), (6.5, 1.5, 1.7), (1.2, 6.8, 1.7)]:
        traced = trace(scene, tx, probe_node(p), max_order=2)
        if not traced:
            continue
        measured = [replace(m, power_db=m.power_db + 5.0, bounce_order=-1)
                    for m in traced]
        m = match_paths(measured, traced)
        assert len(m.pairs) == len(traced)
        matchings.append((m, traced))
        offsets.extend(m.offsets_db)
    assert len(offsets) >= 5
    mean_off = float(np.mean(offsets))
    assert abs(mean_off - 5.0) <= 0.01
    table = calibration_table(matchings)
    assert np.allclose(table, 5.0, atol=1e-9)

    w = MatchWeights()

    def mk(power_db, delay_ns, az_deg, el_deg):
        return planted(power_db, delay_ns, az_deg % 360.0, el_deg)
    for trial in range(1000):
        rng = default_rng(5000 + trial)
        n = int(rng.integers(1, 7))
        tight = rng.random() < 0.3
        t = float(rng.uniform(5.0, 20.0))
        traced = []
        for _ in range(n):
            traced.append(mk(float(rng.uniform(-95.0, -70.0)), t,
                             float(rng.uniform(0.0, 360.0)),
                             float(rng.uniform(-20.0, 20.0))))
            t += float(rng.uniform(0.1, 0.2) if tight
                       else rng.uniform(1.5, 5.0))
        measured = []
        for p in traced:
            if rng.random() < 0.2:
                continue
            measured.append(mk(p.power_db + float(rng.uniform(-1.0, 1.0)),
                               p.delay_ns + float(rng.uniform(-0.02, 0.02)),
                               p.az_deg + float(rng.uniform(-1.0, 1.0)),
                               p.el_deg + float(rng.uniform(-2.0, 2.0))))
        if rng.random() < 0.3:
            measured.append(mk(-90.0, t + 3.0,
                               float(rng.uniform(0.0, 360.0)), 0.0))
        measured = [measured[i] for i in rng.permutation(len(measured))]

        greedy = match_paths(measured, traced, w)
        g_pairs = frozenset((i, j) for i, j, _ in greedy.pairs)
        g_cost = sum(c for _, _, c in greedy.pairs)
        count, cost, pairs = brute_force_match(measured, traced, w)
        assert len(g_pairs) == count, f"instance {trial}: cardinality"
        assert abs(g_cost - cost) <= 1e-9, f"instance {trial}: total cost"
        assert g_pairs == pairs, f"instance {trial}: pair set"
    elapsed = time.perf_counter() - t0
    print(f"\n  mean offset {mean_off:+.6f} dB over {len(offsets)} pairs,"
          f" greedy == brute force on 1000 instances ({elapsed:.1f} s)")
    assert elapsed < 10.0


def toy_field_samples(n, seed):
    rng = default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.uniform(0.5, 9.5, 3)
        p = float(rng.uniform(-110.0, -80.0))
        tau = float(rng.uniform(5.0, 40.0))
        az = float(rng.uniform(0.0, 360.0))
        el = float(rng.uniform(-30.0, 30.0))
        rt = RtFeatures(d_m=max(float(np.linalg.norm(x)), 0.5),
                        p_los_db=p + 1.0, tau_los_ns=tau, az_los_deg=az,
                        el_los_deg=el, n_paths=1, los_valid=True)
        out.append(Sample(x=tuple(x), rt=rt, target_p_db=p,
                          target_tau_ns=tau, target_az_deg=az,
                          target_el_deg=el))
    return out


def power_rmse(model, samples):
    err = [forward(model, s.x, s.rt).p_db - s.target_p_db for s in samples]
    return float(np.sqrt(np.mean(np.square(err))))


def test_05_field_gradients_training_and_rt_ablation(pipeline_runs):
    run1, _, _ = pipeline_runs
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        samples = toy_field_samples(6, seed)
        model, _ = train(samples, TrainConfig(epochs=5, seed=seed,
                                              hidden_width=16,
                                              hidden_layers=2,
                                              encoding_octaves=1))
        worst = max(worst, grad_check(model, samples))
    assert worst < 1e-4

    samples = load_dataset_csv(str(run1 / "dataset.csv"))
    assert len(samples) == 200
    pcfg = PipelineConfig()
    _, history = train(samples, TrainConfig(epochs=pcfg.epochs,
                                            seed=pcfg.seed,
                                            hidden_width=pcfg.hidden_width,
                                            hidden_layers=pcfg.hidden_layers))
    assert history[-1] <= 0.1 * history[0]

    perm = default_rng(0).permutation(len(samples))
    fit_set = [samples[i] for i in perm[:160]]
    held = [samples[i] for i in perm[160:]]
    cfg = TrainConfig(epochs=400, seed=0, hidden_width=64, hidden_layers=3)
    m_full, _ = train(fit_set, cfg)
    m_abl, _ = train(fit_set, replace(cfg, ablate_rt=True))
    rmse_full = power_rmse(m_full, held)
    rmse_abl = power_rmse(m_abl, held)
    assert rmse_abl > rmse_full
    elapsed = time.perf_counter() - t0
    print(f"\n  grad check worst {worst:.2e}, loss {history[0]:.3g} ->"
          f" {history[-1]:.3g}, held-out power RMSE {rmse_full:.2f} ->"
          f" {rmse_abl:.2f} dB without ray features ({elapsed:.0f} s)")
    assert elapsed < 300.0


def test_06_blocked_points_stay_near_distance_law(pipeline_runs):
    run1, _, _ = pipeline_runs
    t0 = time.perf_counter()
    scene = canonical_scene()
    tx = scene.nodes["tx3"]
    model = load_model(str(run1 / "model.json"))
    law = load_abg_json(str(run1 / "abg_nlos.json"))
    txp = np.asarray(tx.position)
    errs = []
    for x in np.arange(1.6, 8.51, 0.1):
        for y in (7.5, 7.55, 7.6, 7.65, 7.7):
            p = (float(x), float(y), 1.7)
            if any(b.contains(p) for b in scene.obstacles):
                continue
            if trace(scene, tx, probe_node(p), max_order=2):
                continue
            pred = predict(model, scene, tx, p)
            assert math.isfinite(pred.p_db)
            d = float(np.linalg.norm(np.asarray(p) - txp))
            errs.append(abs(pred.p_db - (-law.path_loss_db(d))))
    assert len(errs) > 50
    worst = max(errs)
    assert worst <= 6.0
    elapsed = time.perf_counter() - t0
    print(f"\n  {len(errs)} fully blocked points, worst gap {worst:.2f} dB"
          f" ({elapsed:.0f} s)")
    assert elapsed < 60.0


def flat_map(p_db, tag="m"):
    shape = p_db.shape
    return RadioMap(tx_id=tag, source="rt", origin=(0.0, 0.0), cell_m=1.0,
                    nx=shape[0], ny=shape[1], z_m=1.7, p_db=p_db,
                    tau_ns=np.zeros(shape), az_deg=np.zeros(shape),
                    el_deg=np.zeros(shape), los=np.ones(shape, dtype=bool))


def test_07_sinr_oracle_and_free_space_coverage():
    t0 = time.perf_counter()
    rng = default_rng(2025)
    for _ in range(1000):
        budget = LinkBudget(
            tx_power_dbm=float(rng.uniform(-10.0, 40.0)),
            tx_gain_dbi=float(rng.uniform(0.0, 30.0)),
            noise_density_dbm_hz=float(rng.uniform(-180.0, -160.0)),
            bandwidth_hz=float(10.0 ** rng.uniform(8.0, 10.5)),
            noise_figure_db=float(rng.uniform(0.0, 15.0)),
        )
        serving = flat_map(rng.uniform(-130.0, -60.0, (3, 3)))
        interf = [flat_map(rng.uniform(-130.0, -60.0, (3, 3)))
                  for _ in range(int(rng.integers(0, 4)))]
        ix, iy = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        got = sinr_db(Deployment(serving, interf), budget, ix, iy)

        eirp = budget.tx_power_dbm + budget.tx_gain_dbi
        noise = (budget.noise_density_dbm_hz
                 + 10.0 * math.log10(budget.bandwidth_hz)
                 + budget.noise_figure_db)
        denom = 10.0 ** (noise / 10.0)
        for m in interf:
            denom += 10.0 ** ((eirp + float(m.p_db[ix, iy])) / 10.0)
        want = (10.0 * math.log10(
            10.0 ** ((eirp + float(serving.p_db[ix, iy])) / 10.0) / denom))
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    concrete = Material("concrete", 8.0)
    room = Box((0.0, 0.0, 0.0), (10.0, 8.0, 3.2), concrete)
    scene = Scene(room=room, obstacles=[],
                  nodes={"tx": probe_node((5.0, 4.0, 1.7), name="tx")},
                  materials={"concrete": concrete})
    m = build_radio_map(scene, "tx", cell_m=0.1, z_m=1.7, max_order=0)
    budget = LinkBudget()
    threshold = -20.0
    cov = coverage_probability(Deployment(m), budget, threshold)
    r_star = 10.0 ** ((budget.tx_power_dbm + budget.tx_gain_dbi
                       - budget.noise_dbm - threshold - BETA_FS) / 20.0)
    analytic = math.pi * r_star**2 / (10.0 * 8.0)
    assert abs(cov - analytic) <= 0.02

    mc_rng = default_rng(7)
    pts = mc_rng.uniform((0.0, 0.0), (10.0, 8.0), (100000, 2))
    mc = float(np.mean(np.hypot(pts[:, 0] - 5.0, pts[:, 1] - 4.0) <= r_star))
    sigma3 = 3.0 * math.sqrt(analytic * (1.0 - analytic) / 100000.0)
    assert abs(mc - analytic) <= sigma3
    assert abs(cov - mc) <= sigma3
    elapsed = time.perf_counter() - t0
    print(f"\n  1000 budgets exact, disk coverage map={cov:.5f}"
          f" analytic={analytic:.5f} mc={mc:.5f} ({elapsed:.0f} s)")
    assert elapsed < 60.0


def test_08_ceiling_mount_outcovers_rack_mount(pipeline_runs):
    run1, _, _ = pipeline_runs
    t0 = time.perf_counter()
    budget = LinkBudget()
    cov = {}
    for tx_id in ("tx3", "tx1"):
        m = load_radio_map(str(run1 / f"map_rt_{tx_id}.json"))
        cov[tx_id] = coverage_probability(Deployment(m), budget, 0.0)
    summary = json.loads((run1 / "run_summary.json").read_text())
    for tx_id in ("tx3", "tx1"):
        assert abs(cov[tx_id] - summary["coverage_at_0db"][tx_id]) <= 1e-12
    assert cov["tx3"] > cov["tx1"]
    gap = cov["tx3"] - cov["tx1"]
    assert gap >= 0.10
    elapsed = time.perf_counter() - t0
    print(f"\n  coverage at 0 dB: ceiling {cov['tx3']:.4f} vs rack"
          f" {cov['tx1']:.4f}, gap {100 * gap:.1f} pp ({elapsed:.2f} s)")
    assert elapsed < 120.0


def test_09_seeded_pipeline_is_byte_identical(pipeline_runs):
    run1, run2, elapsed = pipeline_runs
    names1 = sorted(p.name for p in run1.iterdir())
    names2 = sorted(p.name for p in run2.iterdir())
    assert names1 == names2
    assert len(names1) >= 20
    for name in names1:
        b1 = (run1 / name).read_bytes()
        b2 = (run2 / name).read_bytes()
        assert b1 == b2, f"{name} differs between runs"
    print(f"\n  {len(names1)} files byte-identical across two seeded runs"
          f" ({elapsed:.0f} s for both)")
    assert elapsed < 600.0
