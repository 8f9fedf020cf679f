import subprocess
import sys

import numpy as np
import pytest

from thzdt import backend, kernels
from thzdt.raytrace import pack_boxes, pack_surfaces, sweep_scene, trace
from thzdt.scene import aim, canonical_scene, probe_node
from thzdt.sysperf import map_cells

needs_numba = pytest.mark.skipif(
    not backend.NUMBA_AVAILABLE, reason="numba not importable"
)


def _random_segments(rng, m=400):
    p0 = rng.uniform(0, 10, size=(m, 3))
    p1 = rng.uniform(0, 10, size=(m, 3))
    # axis-parallel and degenerate cases on purpose
    p1[: m // 4, 0] = p0[: m // 4, 0]
    p1[m // 4 : m // 2, 1] = p0[m // 4 : m // 2, 1]
    return p0, p1


@needs_numba
def test_segments_blocked_lanes_agree(rng):
    p0, p1 = _random_segments(rng)
    lo = np.array([[2.0, 2.0, 0.0], [6.0, 1.0, 1.0]])
    hi = np.array([[3.0, 4.0, 3.0], [7.5, 5.0, 2.0]])
    a = kernels.segments_blocked_numpy(p0, p1, lo, hi)
    b = kernels.segments_blocked_numba(p0, p1, lo, hi)
    assert np.array_equal(a, np.asarray(b, dtype=bool))


@needs_numba
def test_segments_blocked_no_boxes(rng):
    p0, p1 = _random_segments(rng, 16)
    empty = np.zeros((0, 3))
    a = kernels.segments_blocked_numpy(p0, p1, empty, empty)
    b = kernels.segments_blocked_numba(p0, p1, empty, empty)
    assert not a.any()
    assert not np.asarray(b, dtype=bool).any()


@needs_numba
def test_cfr_accumulate_lanes_agree(rng):
    n_f, n_paths, n_az, n_el = 101, 7, 12, 5
    freqs = np.linspace(290e9, 310e9, n_f)
    amps = rng.uniform(1e-6, 1e-3, n_paths)
    delays = rng.uniform(3e-9, 60e-9, n_paths)
    gains = rng.uniform(0.01, 20.0, size=(n_paths, n_az, n_el))
    a = kernels.cfr_accumulate_numpy(freqs, amps, delays, gains)
    b = np.asarray(kernels.cfr_accumulate_numba(freqs, amps, delays, gains))
    assert a.shape == b.shape == (n_f, n_az, n_el)
    scale = np.abs(a).max()
    assert np.allclose(a, b, atol=1e-10 * scale, rtol=1e-9)


@needs_numba
def test_cfr_accumulate_empty_paths():
    freqs = np.linspace(290e9, 310e9, 11)
    empty = np.zeros(0)
    gains = np.zeros((0, 4, 3))
    a = kernels.cfr_accumulate_numpy(freqs, empty, empty, gains)
    b = np.asarray(kernels.cfr_accumulate_numba(freqs, empty, empty, gains))
    assert np.array_equal(a, b)
    assert (a == 0).all()


@needs_numba
@pytest.mark.parametrize("wrap", [True, False])
def test_local_peak_mask_lanes_agree(rng, wrap):
    pdp = rng.uniform(size=(40, 72, 5))
    # plant plateaus to exercise the >= tie rule
    pdp[10, 3, 2] = pdp[10, 4, 2] = 2.0
    pdp[0, 0, 0] = 3.0
    pdp[39, 71, 4] = 3.0
    a = kernels.local_peak_mask_numpy(pdp, wrap)
    b = np.asarray(kernels.local_peak_mask_numba(pdp, wrap), dtype=bool)
    assert np.array_equal(a, b)
    assert a[10, 3, 2] and a[10, 4, 2]


@needs_numba
def test_local_peak_mask_az_wrap_semantics(rng):
    pdp = rng.uniform(size=(8, 6, 3))
    pdp[4, 0, 1] = 5.0
    pdp[4, 5, 1] = 6.0
    wrapped = kernels.local_peak_mask_numpy(pdp, True)
    flat = kernels.local_peak_mask_numpy(pdp, False)
    # with wrap, column 0 competes against column 5
    assert not wrapped[4, 0, 1]
    assert flat[4, 0, 1]


def _sweep(scene, tx, cells, lane, **kw):
    prev = kernels.sweep_cells
    kernels.sweep_cells = lane
    try:
        return sweep_scene(scene, tx, cells, **kw)
    finally:
        kernels.sweep_cells = prev


@needs_numba
def test_sweep_cells_lanes_agree():
    scene = canonical_scene()
    tx = scene.nodes["tx3"]
    cells, _, _, _ = map_cells(scene, cell_m=0.8, z_m=1.7)
    kw = dict(max_order=2, order_offsets=(-2.0, -1.5, -3.0))
    a = _sweep(scene, tx, cells, kernels.sweep_cells_numpy, **kw)
    b = _sweep(scene, tx, cells, kernels.sweep_cells_numba, **kw)
    n_a, n_b = a[0], b[0]
    assert np.array_equal(np.asarray(n_a), np.asarray(n_b))
    assert np.array_equal(np.asarray(a[6], bool), np.asarray(b[6], bool))
    for i in (1, 2, 3, 4, 5, 7, 8, 9, 10):
        av, bv = np.asarray(a[i], float), np.asarray(b[i], float)
        ok = np.isfinite(av) & np.isfinite(bv)
        assert np.array_equal(np.isfinite(av), np.isfinite(bv))
        assert np.allclose(av[ok], bv[ok], rtol=1e-9, atol=1e-9)


def test_sweep_matches_per_cell_trace():
    scene = canonical_scene()
    tx = scene.nodes["tx3"]
    cells, _, _, _ = map_cells(scene, cell_m=1.0, z_m=1.7)
    offsets = (-2.5, -1.0, -3.5)
    out = sweep_scene(scene, tx, cells, max_order=2, order_offsets=offsets)
    n_paths, total_lin, p_best, tau_best = out[0], out[1], out[2], out[3]
    los_ok, p_los = out[6], out[7]
    for i, cell in enumerate(cells):
        paths = trace(scene, aim(tx, cell), probe_node(cell), max_order=2)
        cal = [p.power_db + offsets[p.bounce_order] for p in paths]
        assert n_paths[i] == len(paths)
        if not paths:
            assert total_lin[i] == 0.0
            assert not los_ok[i]
            continue
        assert total_lin[i] == pytest.approx(
            sum(10.0 ** (c / 10.0) for c in cal), rel=1e-9
        )
        k = int(np.argmax(cal))
        assert p_best[i] == pytest.approx(cal[k], abs=1e-9)
        assert tau_best[i] == pytest.approx(paths[k].delay_ns, abs=1e-9)
        direct = [p for p in paths if p.bounce_order == 0]
        assert bool(los_ok[i]) == bool(direct)
        if direct:
            assert p_los[i] == pytest.approx(
                direct[0].power_db + offsets[0], abs=1e-9
            )


def test_backend_env_flag_forces_numpy():
    code = (
        "from thzdt import backend, kernels\n"
        "print(backend.BACKEND)\n"
        "print(kernels.sweep_cells is kernels.sweep_cells_numpy)\n"
    )
    proc = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "THZDT_BACKEND": "numpy"},
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.split() == ["numpy", "True"]


@needs_numba
def test_default_backend_is_numba():
    assert backend.BACKEND == "numba"
    assert kernels.sweep_cells is kernels.sweep_cells_numba


def test_packing_shapes(scene):
    axis, coord, sign, ulo, uhi, vlo, vhi, loss = pack_surfaces(scene)
    n = len(scene.surfaces)
    for arr in (axis, coord, sign, ulo, uhi, vlo, vhi, loss):
        assert arr.shape == (n,)
    lo, hi = pack_boxes(scene)
    assert lo.shape == (len(scene.obstacles), 3)
    assert hi.shape == lo.shape
