"""Time the hot kernels' two lanes (numba @njit vs pure numpy) on
realistic workloads and print a small table.

Run from the repo root:

    python3 benchmarks/bench_kernels.py

The numba lane is warmed up first so compile time is reported separately
from steady-state timings. Lane outputs are cross-checked before timing;
a disagreement aborts the run.
"""

import time

import numpy as np

from thzdt import kernels
from thzdt.raytrace import pack_boxes, sweep_scene
from thzdt.scene import canonical_scene
from thzdt.sounder import default_freqs
from thzdt.sysperf import map_cells

REPEATS = 5


def best_of(fn, *args, **kwargs):
    best = np.inf
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def check_close(a, b):
    a, b = np.asarray(a), np.asarray(b)
    ok = np.isfinite(a) & np.isfinite(b)
    assert np.array_equal(np.isfinite(a), np.isfinite(b))
    assert np.allclose(a[ok], b[ok], rtol=1e-9, atol=1e-12)


def bench_segments(scene, rng):
    m = 20000
    p0 = rng.uniform((0, 0, 0), (10, 8, 3.2), (m, 3))
    p1 = rng.uniform((0, 0, 0), (10, 8, 3.2), (m, 3))
    lo, hi = pack_boxes(scene)
    args = (p0, p1, lo, hi)
    check_close(kernels.segments_blocked_numpy(*args),
                kernels.segments_blocked_numba(*args))
    return (f"segments_blocked ({m} segs x {lo.shape[0]} boxes)",
            best_of(kernels.segments_blocked_numba, *args),
            best_of(kernels.segments_blocked_numpy, *args))


def bench_cfr(rng):
    freqs = default_freqs()
    n_paths = 24
    amps = rng.uniform(1e-7, 1e-5, n_paths)
    delays = rng.uniform(5e-9, 8e-8, n_paths)
    gains = rng.uniform(0.0, 1.0, (n_paths, 72, 5))
    args = (freqs, amps, delays, gains)
    check_close(kernels.cfr_accumulate_numpy(*args),
                kernels.cfr_accumulate_numba(*args))
    return (f"cfr_accumulate ({freqs.size} freqs x {n_paths} paths x 72x5)",
            best_of(kernels.cfr_accumulate_numba, *args),
            best_of(kernels.cfr_accumulate_numpy, *args))


def bench_peak_mask(rng):
    pdp = rng.uniform(-160.0, -60.0, (2001, 72, 5))
    check_close(kernels.local_peak_mask_numpy(pdp, True),
                kernels.local_peak_mask_numba(pdp, True))
    return ("local_peak_mask (2001x72x5, wrapped az)",
            best_of(kernels.local_peak_mask_numba, pdp, True),
            best_of(kernels.local_peak_mask_numpy, pdp, True))


def bench_sweep(scene):
    tx = scene.nodes["tx3"]
    cells, _, _, _ = map_cells(scene, cell_m=0.25, z_m=1.7)

    def run(lane):
        prev = kernels.sweep_cells
        kernels.sweep_cells = lane
        try:
            return sweep_scene(scene, tx, cells, max_order=2)
        finally:
            kernels.sweep_cells = prev

    a = run(kernels.sweep_cells_numpy)
    b = run(kernels.sweep_cells_numba)
    for x, y in zip(a, b):
        check_close(x, y)
    return (f"sweep_cells ({cells.shape[0]} cells, order 2)",
            best_of(run, kernels.sweep_cells_numba),
            best_of(run, kernels.sweep_cells_numpy))


def main():
    if kernels.sweep_cells_numba is None:
        print("numba is not importable; nothing to compare.")
        return
    scene = canonical_scene()
    rng = np.random.default_rng(0)

    t0 = time.perf_counter()
    lo, hi = pack_boxes(scene)
    kernels.segments_blocked_numba(np.zeros((1, 3)), np.ones((1, 3)), lo, hi)
    kernels.cfr_accumulate_numba(default_freqs()[:8], np.ones(1),
                                 np.full(1, 1e-9), np.ones((1, 2, 2)))
    kernels.local_peak_mask_numba(np.zeros((4, 4, 3)), True)
    sweep_scene(scene, scene.nodes["tx3"], np.array([[5.0, 4.0, 1.7]]))
    warmup = time.perf_counter() - t0
    print(f"jit warmup (compile or cache load): {warmup:.2f} s\n")

    rows = [
        bench_segments(scene, rng),
        bench_cfr(rng),
        bench_peak_mask(rng),
        bench_sweep(scene),
    ]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>9}  {'numpy':>9}  {'ratio':>6}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {1e3 * t_nb:7.2f}ms  {1e3 * t_np:7.2f}ms"
              f"  {t_np / t_nb:5.1f}x")


if __name__ == "__main__":
    main()
