import math

import numpy as np
import pytest

from thzdt.sysperf import (
    Deployment,
    LinkBudget,
    RadioMap,
    build_radio_map,
    coverage_curve,
    coverage_probability,
    fade_map,
    load_coverage_csv,
    load_radio_map,
    map_cells,
    save_coverage_csv,
    save_radio_map,
    sinr_db,
    sinr_grid,
)


def flat_map(p_db, nx=4, ny=3, tx_id="tx", source="rt"):
    shape = (nx, ny)
    return RadioMap(
        tx_id=tx_id, source=source, origin=(0.0, 0.0), cell_m=0.5,
        nx=nx, ny=ny, z_m=1.7,
        p_db=np.full(shape, float(p_db)),
        tau_ns=np.zeros(shape), az_deg=np.zeros(shape),
        el_deg=np.zeros(shape), los=np.ones(shape, dtype=bool),
    )


def test_noise_floor_value():
    b = LinkBudget()
    want = -174.0 + 10.0 * math.log10(20e9) + 10.0
    assert b.noise_dbm == pytest.approx(want, abs=1e-12)
    assert b.noise_dbm == pytest.approx(-60.98970004336019, abs=1e-9)


def test_sinr_noise_only_identity():
    # no interferers: SINR == S - N exactly
    b = LinkBudget()
    dep = Deployment(serving=flat_map(-80.0))
    s_dbm = b.tx_power_dbm + b.tx_gain_dbi - 80.0
    assert sinr_db(dep, b, 0, 0) == pytest.approx(s_dbm - b.noise_dbm, abs=1e-9)


def test_sinr_one_interferer_oracle():
    # hand-computed in the linear domain
    b = LinkBudget()
    dep = Deployment(serving=flat_map(-80.0), interferers=[flat_map(-95.0)])
    s = 10.0 ** ((b.tx_power_dbm - 80.0) / 10.0)
    i = 10.0 ** ((b.tx_power_dbm - 95.0) / 10.0)
    n = 10.0 ** (b.noise_dbm / 10.0)
    want = 10.0 * math.log10(s / (i + n))
    assert sinr_db(dep, b, 2, 1) == pytest.approx(want, rel=1e-12)
    grid = sinr_grid(dep, b)
    assert np.allclose(grid, want, rtol=1e-12)


def test_sinr_noise_matched_interferer_costs_3db():
    # an interferer received exactly at the noise level halves S/(I+N)
    b = LinkBudget()
    noise_gain = b.noise_dbm - b.tx_power_dbm - b.tx_gain_dbi
    dep = Deployment(serving=flat_map(-80.0), interferers=[flat_map(noise_gain)])
    clean = Deployment(serving=flat_map(-80.0))
    drop = sinr_db(clean, b, 0, 0) - sinr_db(dep, b, 0, 0)
    assert drop == pytest.approx(10.0 * math.log10(2.0), abs=1e-9)


def test_sinr_equal_interferer_dominates_noise():
    # serving and interferer at the same level, far above noise: 0 dB
    b = LinkBudget(tx_power_dbm=60.0)
    dep = Deployment(serving=flat_map(-40.0), interferers=[flat_map(-40.0)])
    assert sinr_db(dep, b, 0, 0) == pytest.approx(0.0, abs=1e-6)


def test_sinr_interferer_monotonicity():
    b = LinkBudget()
    base = Deployment(serving=flat_map(-80.0))
    one = Deployment(serving=flat_map(-80.0), interferers=[flat_map(-90.0)])
    two = Deployment(
        serving=flat_map(-80.0),
        interferers=[flat_map(-90.0), flat_map(-88.0)],
    )
    s0 = sinr_db(base, b, 0, 0)
    s1 = sinr_db(one, b, 0, 0)
    s2 = sinr_db(two, b, 0, 0)
    assert s0 > s1 > s2


def test_sinr_out_of_grid():
    dep = Deployment(serving=flat_map(-80.0))
    with pytest.raises(IndexError):
        sinr_db(dep, LinkBudget(), 4, 0)


def test_deployment_grid_mismatch():
    with pytest.raises(ValueError):
        Deployment(serving=flat_map(-80.0), interferers=[flat_map(-90.0, nx=5)])


def test_coverage_probability_counts_cells():
    b = LinkBudget()
    m = flat_map(-80.0)
    m.p_db[0, 0] = -140.0  # push one of twelve cells below threshold
    dep = Deployment(serving=m)
    thr = b.tx_power_dbm - 80.0 - b.noise_dbm - 1.0
    assert coverage_probability(dep, b, thr) == pytest.approx(11.0 / 12.0)


def test_coverage_curve_non_increasing():
    rng = np.random.default_rng(5)
    m = flat_map(-80.0, nx=20, ny=20)
    m.p_db += rng.normal(0.0, 12.0, size=(20, 20))
    dep = Deployment(serving=m)
    t = np.linspace(-20.0, 60.0, 33)
    cov = coverage_curve(dep, LinkBudget(), t)
    assert np.all(np.diff(cov) <= 0.0)
    assert cov[0] >= cov[-1]
    with pytest.raises(ValueError):
        coverage_curve(dep, LinkBudget(), t[::-1])


def test_budget_validation():
    with pytest.raises(ValueError):
        LinkBudget(bandwidth_hz=0.0)


def test_map_cells_layout(scene):
    cells, origin, nx, ny = map_cells(scene, 0.5, 1.7)
    lo, hi = scene.room.min, scene.room.max
    assert origin == (lo[0], lo[1])
    assert nx == int((hi[0] - lo[0]) / 0.5)
    assert ny == int((hi[1] - lo[1]) / 0.5)
    assert cells.shape == (nx * ny, 3)
    # first cell is half a pitch inside the corner; ordering is x-major
    assert np.allclose(cells[0], [lo[0] + 0.25, lo[1] + 0.25, 1.7])
    assert np.allclose(cells[1], [lo[0] + 0.25, lo[1] + 0.75, 1.7])
    with pytest.raises(ValueError):
        map_cells(scene, 0.5, 99.0)
    with pytest.raises(ValueError):
        map_cells(scene, -1.0)


def test_cell_center_round_trip(scene):
    m = build_radio_map(scene, "tx1", cell_m=1.0)
    cells, origin, nx, ny = map_cells(scene, 1.0, m.z_m)
    assert (m.nx, m.ny) == (nx, ny)
    assert np.allclose(m.cell_center(3, 2), cells[3 * ny + 2])
    with pytest.raises(IndexError):
        m.cell_center(nx, 0)


def test_rt_map_matches_floor_on_empty_cells(scene):
    m = build_radio_map(scene, "tx3", cell_m=0.5, power_floor_db=-130.0)
    empty = ~np.isfinite(m.p_db) | (m.p_db <= -130.0 + 1e-9)
    # blocked ribbon behind the racks exists and carries the floor power
    assert empty.any()
    assert np.all(m.p_db[empty] == -130.0)
    assert np.all(m.tau_ns[empty] == 0.0)
    assert not m.los[empty].any()


def test_fade_map_sigma_zero_identity():
    m = flat_map(-80.0)
    f = fade_map(m, 0.0, seed=9)
    assert np.array_equal(f.p_db, m.p_db)
    assert f.p_db is not m.p_db


def test_fade_map_deterministic():
    m = flat_map(-80.0, nx=16, ny=16)
    a = fade_map(m, 4.0, seed=3)
    b = fade_map(m, 4.0, seed=3)
    c = fade_map(m, 4.0, seed=4)
    assert np.array_equal(a.p_db, b.p_db)
    assert not np.array_equal(a.p_db, c.p_db)
    assert np.std(a.p_db - m.p_db) == pytest.approx(4.0, rel=0.2)
    with pytest.raises(ValueError):
        fade_map(m, -1.0, seed=0)


def test_radio_map_round_trip(tmp_path, scene):
    m = build_radio_map(scene, "tx1", cell_m=1.0)
    base = str(tmp_path / "map_tx1")
    save_radio_map(m, base)
    loaded = load_radio_map(base + ".json")
    assert loaded.tx_id == m.tx_id
    assert loaded.source == m.source
    assert loaded.same_grid(m)
    assert np.allclose(loaded.p_db, m.p_db, rtol=1e-8)
    assert np.allclose(loaded.tau_ns, m.tau_ns, rtol=1e-8)
    assert np.array_equal(loaded.los, m.los)


def test_coverage_csv_round_trip(tmp_path):
    t = np.linspace(-10.0, 30.0, 9)
    cov = np.linspace(1.0, 0.0, 9)
    path = str(tmp_path / "coverage.csv")
    save_coverage_csv(path, t, cov)
    t2, c2 = load_coverage_csv(path)
    assert np.allclose(t2, t, rtol=1e-8)
    assert np.allclose(c2, cov, rtol=1e-8)


def test_radio_map_validation():
    with pytest.raises(ValueError):
        flat_map(-80.0, source="guess")
    with pytest.raises(ValueError):
        RadioMap(
            tx_id="t", source="rt", origin=(0.0, 0.0), cell_m=0.5,
            nx=4, ny=3, z_m=1.7,
            p_db=np.zeros((3, 4)), tau_ns=np.zeros((4, 3)),
            az_deg=np.zeros((4, 3)), el_deg=np.zeros((4, 3)),
            los=np.ones((4, 3), dtype=bool),
        )
