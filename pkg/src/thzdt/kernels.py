"""Hot numeric kernels in two lanes: numba ``@njit`` loops and pure numpy.

The dispatched names (``segments_blocked``, ``cfr_accumulate``,
``local_peak_mask``, ``sweep_cells``) bind to one lane at import time, see
:mod:`thzdt.backend`. Both lanes stay importable for comparison tests and
for ``benchmarks/bench_kernels.py``. Lane outputs agree to float tolerance
(not bitwise: summation order differs between loop and BLAS reductions).

Kernel inventory:

``segments_blocked``
    Slab test of M segments against B axis-aligned boxes. A segment is
    blocked only when it dwells in an open box interior; endpoint contact
    and face grazing do not count.
``cfr_accumulate``
    Channel frequency response accumulation over multipath components,
    cfr[f, a, e] = sum_l amp_l * gain[l, a, e] * exp(-j 2 pi f tau_l).
``local_peak_mask``
    26-neighborhood local maxima of a (delay, az, el) power tensor, with
    optional circular wrap along the azimuth axis.
``sweep_cells``
    Image-method sweep of one transmitter over many receiver cells with
    specular reflections up to order 2, visibility checks, Friis power,
    per-bounce material loss, optional transmit-horn pattern (fixed or
    aimed per cell) and per-order calibration offsets. Receiver side is an
    isotropic probe. Returns per-cell aggregate power, strongest-path
    attributes, path count and the direct-path block.
"""

from __future__ import annotations

import math

import numpy as np

from . import backend

# Strict-interior tolerance on segment parameters (dimensionless t).
EPS_T = 1e-12
# Closed-bounds tolerance for reflection points on face rectangles, m.
EPS_B = 1e-9
# Front-side tolerance for reflection orientation checks, m.
EPS_F = 1e-12


# ===========================================================================
# pure numpy lane
# ===========================================================================


def segments_blocked_numpy(p0, p1, box_lo, box_hi):
    """True per segment when it passes through any box interior.

    p0, p1: (M, 3); box_lo, box_hi: (B, 3). Returns (M,) bool.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    if box_lo.shape[0] == 0:
        return np.zeros(p0.shape[0], dtype=bool)
    d = p1 - p0
    p0e = p0[:, None, :]
    de = d[:, None, :]
    lo = box_lo[None, :, :]
    hi = box_hi[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - p0e) / de
        tb = (hi - p0e) / de
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    par = de == 0.0
    inside = (p0e > lo) & (p0e < hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t0 = tmin.max(axis=2)
    t1 = tmax.min(axis=2)
    hit = (t1 - t0 > EPS_T) & (t1 > EPS_T) & (t0 < 1.0 - EPS_T)
    return hit.any(axis=1)


def cfr_accumulate_numpy(freqs_hz, amps, delays_s, gains_amp):
    """Noiseless CFR tensor, complex128 (n_freq, n_az, n_el).

    amps are linear field amplitudes (rx gain excluded), gains_amp the
    per-path linear receive-amplitude gain over the scan grid (L, A, E).
    """
    n_f = freqs_hz.shape[0]
    L, A, E = gains_amp.shape
    if L == 0:
        return np.zeros((n_f, A, E), dtype=np.complex128)
    phase = np.exp(-2j * np.pi * np.outer(freqs_hz, delays_s))
    phase *= amps[None, :]
    out = phase @ gains_amp.reshape(L, A * E).astype(np.complex128)
    return out.reshape(n_f, A, E)


def _neighbor_shift(pdp, di, da, de, wrap_az):
    """pdp shifted so out[n,a,e] = pdp[n+di, a+da, e+de], -inf off the edge."""
    n_d, n_a, n_e = pdp.shape
    x = np.roll(pdp, -da, axis=1) if wrap_az else pdp
    out = np.full_like(pdp, -np.inf)
    nd = slice(max(-di, 0), n_d + min(-di, 0))
    ns = slice(max(di, 0), n_d + min(di, 0))
    ed = slice(max(-de, 0), n_e + min(-de, 0))
    es = slice(max(de, 0), n_e + min(de, 0))
    if wrap_az:
        ad = as_ = slice(0, n_a)
    else:
        ad = slice(max(-da, 0), n_a + min(-da, 0))
        as_ = slice(max(da, 0), n_a + min(da, 0))
    out[nd, ad, ed] = x[ns, as_, es]
    return out


def local_peak_mask_numpy(pdp, wrap_az):
    """Boolean mask of cells >= their full 26-cell neighborhood."""
    pdp = np.asarray(pdp, dtype=np.float64)
    mask = np.ones(pdp.shape, dtype=bool)
    for di in (-1, 0, 1):
        for da in (-1, 0, 1):
            for de in (-1, 0, 1):
                if di == 0 and da == 0 and de == 0:
                    continue
                mask &= pdp >= _neighbor_shift(pdp, di, da, de, wrap_az)
    return mask


def _angles_vec(v):
    """Direction vectors (K, 3) -> (azimuth deg [0,360), elevation deg)."""
    r = np.linalg.norm(v, axis=1)
    r = np.where(r == 0.0, 1.0, r)
    az = np.degrees(np.arctan2(v[:, 1], v[:, 0])) % 360.0
    el = np.degrees(np.arcsin(np.clip(v[:, 2] / r, -1.0, 1.0)))
    return az, el


def _wrap180_vec(d):
    return (d + 180.0) % 360.0 - 180.0


def sweep_cells_numpy(
    cells, tx,
    s_axis, s_coord, s_sign, s_ulo, s_uhi, s_vlo, s_vhi, s_loss,
    b_lo, b_hi,
    tx_iso, tx_g0, tx_haz, tx_hel, tx_floor,
    aim_at_cell, tx_bs_az, tx_bs_el,
    max_order, fspl0_db, floor_db,
    off0, off1, off2, c0,
):
    cells = np.asarray(cells, dtype=np.float64)
    tx = np.asarray(tx, dtype=np.float64)
    M = cells.shape[0]
    S = s_axis.shape[0]
    offsets = (off0, off1, off2)

    n_paths = np.zeros(M, dtype=np.int64)
    total_lin = np.zeros(M)
    p_best = np.full(M, -np.inf)
    tau_best = np.zeros(M)
    az_best = np.zeros(M)
    el_best = np.zeros(M)
    los_ok = np.zeros(M, dtype=bool)
    p_los = np.zeros(M)
    tau_los = np.zeros(M)
    az_los = np.zeros(M)
    el_los = np.zeros(M)

    dvec = cells - tx
    dist = np.linalg.norm(dvec, axis=1)
    if aim_at_cell:
        bs_az, bs_el = _angles_vec(dvec)
    else:
        bs_az = np.full(M, float(tx_bs_az))
        bs_el = np.full(M, float(tx_bs_el))

    def tx_gain(dep, idx):
        if tx_iso:
            return np.zeros(idx.shape[0])
        az, el = _angles_vec(dep)
        daz = _wrap180_vec(az - bs_az[idx])
        del_ = el - bs_el[idx]
        g = tx_g0 - 12.0 * ((daz / tx_haz) ** 2 + (del_ / tx_hel) ** 2)
        return np.maximum(g, tx_g0 + tx_floor)

    def add(idx, p_raw, order, length, arr_vec):
        keep = p_raw >= floor_db
        if not np.any(keep):
            return
        idx = idx[keep]
        p_cal = p_raw[keep] + offsets[order]
        tau = length[keep] / c0 * 1e9
        az, el = _angles_vec(arr_vec[keep])
        n_paths[idx] += 1
        total_lin[idx] += 10.0 ** (p_cal / 10.0)
        upd = p_cal > p_best[idx]
        u = idx[upd]
        p_best[u] = p_cal[upd]
        tau_best[u] = tau[upd]
        az_best[u] = az[upd]
        el_best[u] = el[upd]
        if order == 0:
            los_ok[idx] = True
            p_los[idx] = p_cal
            tau_los[idx] = tau
            az_los[idx] = az
            el_los[idx] = el

    # direct path
    ok = dist > 0.0
    idx = np.nonzero(ok)[0]
    if idx.shape[0]:
        blocked = segments_blocked_numpy(
            np.broadcast_to(tx, (idx.shape[0], 3)), cells[idx], b_lo, b_hi
        )
        idx = idx[~blocked]
    if idx.shape[0]:
        L = dist[idx]
        p_raw = -(fspl0_db + 20.0 * np.log10(L)) + tx_gain(cells[idx] - tx, idx)
        add(idx, p_raw, 0, L, tx[None, :] - cells[idx])

    if max_order >= 1:
        for s in range(S):
            ax = int(s_axis[s])
            sg = s_sign[s]
            c = s_coord[s]
            if sg * (tx[ax] - c) <= EPS_F:
                continue
            img = tx.copy()
            img[ax] = 2.0 * c - tx[ax]
            den = cells[:, ax] - img[ax]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (c - img[ax]) / den
            valid = (
                (sg * (cells[:, ax] - c) > EPS_F)
                & np.isfinite(t)
                & (t > EPS_T)
                & (t < 1.0 - EPS_T)
            )
            if not np.any(valid):
                continue
            with np.errstate(invalid="ignore"):
                R = img[None, :] + t[:, None] * (cells - img[None, :])
            u, v = (ax + 1) % 3, (ax + 2) % 3
            valid &= (R[:, u] >= s_ulo[s] - EPS_B) & (R[:, u] <= s_uhi[s] + EPS_B)
            valid &= (R[:, v] >= s_vlo[s] - EPS_B) & (R[:, v] <= s_vhi[s] + EPS_B)
            idx = np.nonzero(valid)[0]
            if not idx.shape[0]:
                continue
            Ri = R[idx]
            blk = segments_blocked_numpy(
                np.broadcast_to(tx, (idx.shape[0], 3)), Ri, b_lo, b_hi
            )
            blk |= segments_blocked_numpy(Ri, cells[idx], b_lo, b_hi)
            idx = idx[~blk]
            Ri = Ri[~blk]
            if not idx.shape[0]:
                continue
            L = np.linalg.norm(cells[idx] - img[None, :], axis=1)
            p_raw = -(fspl0_db + 20.0 * np.log10(L)) + tx_gain(Ri - tx, idx) - s_loss[s]
            add(idx, p_raw, 1, L, Ri - cells[idx])

    if max_order >= 2:
        for s1 in range(S):
            ax1 = int(s_axis[s1])
            sg1 = s_sign[s1]
            c1 = s_coord[s1]
            if sg1 * (tx[ax1] - c1) <= EPS_F:
                continue
            img1 = tx.copy()
            img1[ax1] = 2.0 * c1 - tx[ax1]
            u1, v1 = (ax1 + 1) % 3, (ax1 + 2) % 3
            for s2 in range(S):
                if s2 == s1:
                    continue
                ax2 = int(s_axis[s2])
                c2 = s_coord[s2]
                if ax2 == ax1 and c2 == c1:
                    continue  # coplanar faces, degenerate double mirror
                sg2 = s_sign[s2]
                img2 = img1.copy()
                img2[ax2] = 2.0 * c2 - img1[ax2]
                den2 = cells[:, ax2] - img2[ax2]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t2 = (c2 - img2[ax2]) / den2
                valid = (
                    (sg2 * (cells[:, ax2] - c2) > EPS_F)
                    & np.isfinite(t2)
                    & (t2 > EPS_T)
                    & (t2 < 1.0 - EPS_T)
                )
                if not np.any(valid):
                    continue
                with np.errstate(invalid="ignore"):
                    R2 = img2[None, :] + t2[:, None] * (cells - img2[None, :])
                u2, v2 = (ax2 + 1) % 3, (ax2 + 2) % 3
                valid &= (R2[:, u2] >= s_ulo[s2] - EPS_B) & (R2[:, u2] <= s_uhi[s2] + EPS_B)
                valid &= (R2[:, v2] >= s_vlo[s2] - EPS_B) & (R2[:, v2] <= s_vhi[s2] + EPS_B)
                idx = np.nonzero(valid)[0]
                if not idx.shape[0]:
                    continue
                R2i = R2[idx]
                den1 = R2i[:, ax1] - img1[ax1]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t1 = (c1 - img1[ax1]) / den1
                good = np.isfinite(t1) & (t1 > EPS_T) & (t1 < 1.0 - EPS_T)
                # reflected leg must sit on the front side of the first face
                good &= sg1 * (R2i[:, ax1] - c1) > EPS_F
                idx = idx[good]
                if not idx.shape[0]:
                    continue
                R2i = R2i[good]
                t1 = t1[good]
                R1 = img1[None, :] + t1[:, None] * (R2i - img1[None, :])
                good = (R1[:, u1] >= s_ulo[s1] - EPS_B) & (R1[:, u1] <= s_uhi[s1] + EPS_B)
                good &= (R1[:, v1] >= s_vlo[s1] - EPS_B) & (R1[:, v1] <= s_vhi[s1] + EPS_B)
                good &= sg2 * (R1[:, ax2] - c2) > EPS_F
                idx = idx[good]
                if not idx.shape[0]:
                    continue
                R1 = R1[good]
                R2i = R2i[good]
                blk = segments_blocked_numpy(
                    np.broadcast_to(tx, (idx.shape[0], 3)), R1, b_lo, b_hi
                )
                blk |= segments_blocked_numpy(R1, R2i, b_lo, b_hi)
                blk |= segments_blocked_numpy(R2i, cells[idx], b_lo, b_hi)
                idx = idx[~blk]
                if not idx.shape[0]:
                    continue
                R1 = R1[~blk]
                R2i = R2i[~blk]
                L = np.linalg.norm(cells[idx] - img2[None, :], axis=1)
                p_raw = (
                    -(fspl0_db + 20.0 * np.log10(L))
                    + tx_gain(R1 - tx, idx)
                    - s_loss[s1]
                    - s_loss[s2]
                )
                add(idx, p_raw, 2, L, R2i - cells[idx])

    return (
        n_paths, total_lin, p_best, tau_best, az_best, el_best,
        los_ok, p_los, tau_los, az_los, el_los,
    )


# ===========================================================================
# numba lane
# ===========================================================================

if backend.NUMBA_AVAILABLE:
    from numba import njit

    _jit = njit(**backend.JIT_OPTIONS)

    @_jit
    def _seg_blocked_one(p0x, p0y, p0z, p1x, p1y, p1z, b_lo, b_hi):
        B = b_lo.shape[0]
        dx = p1x - p0x
        dy = p1y - p0y
        dz = p1z - p0z
        for b in range(B):
            t0 = -np.inf
            t1 = np.inf
            ok = True
            for a in range(3):
                if a == 0:
                    p, d = p0x, dx
                elif a == 1:
                    p, d = p0y, dy
                else:
                    p, d = p0z, dz
                lo = b_lo[b, a]
                hi = b_hi[b, a]
                if d != 0.0:
                    ta = (lo - p) / d
                    tb = (hi - p) / d
                    if ta > tb:
                        ta, tb = tb, ta
                    if ta > t0:
                        t0 = ta
                    if tb < t1:
                        t1 = tb
                    if t0 >= t1:
                        ok = False
                        break
                else:
                    if not (p > lo and p < hi):
                        ok = False
                        break
            if ok and (t1 - t0 > EPS_T) and (t1 > EPS_T) and (t0 < 1.0 - EPS_T):
                return True
        return False

    @_jit
    def segments_blocked_numba(p0, p1, b_lo, b_hi):
        M = p0.shape[0]
        out = np.zeros(M, dtype=np.bool_)
        for m in range(M):
            out[m] = _seg_blocked_one(
                p0[m, 0], p0[m, 1], p0[m, 2],
                p1[m, 0], p1[m, 1], p1[m, 2],
                b_lo, b_hi,
            )
        return out

    @_jit
    def cfr_accumulate_numba(freqs_hz, amps, delays_s, gains_amp):
        n_f = freqs_hz.shape[0]
        L = amps.shape[0]
        A = gains_amp.shape[1]
        E = gains_amp.shape[2]
        out = np.zeros((n_f, A, E), dtype=np.complex128)
        for l in range(L):
            amp = amps[l]
            tau = delays_s[l]
            for k in range(n_f):
                ph = -2.0 * math.pi * freqs_hz[k] * tau
                c = complex(amp * math.cos(ph), amp * math.sin(ph))
                for i in range(A):
                    for j in range(E):
                        out[k, i, j] += c * gains_amp[l, i, j]
        return out

    @_jit
    def local_peak_mask_numba(pdp, wrap_az):
        n_d, n_a, n_e = pdp.shape
        out = np.zeros((n_d, n_a, n_e), dtype=np.bool_)
        for n in range(n_d):
            for a in range(n_a):
                for e in range(n_e):
                    v = pdp[n, a, e]
                    is_max = True
                    for dn in range(-1, 2):
                        nn = n + dn
                        if nn < 0 or nn >= n_d:
                            continue
                        for da in range(-1, 2):
                            aa = a + da
                            if wrap_az:
                                aa = aa % n_a
                            elif aa < 0 or aa >= n_a:
                                continue
                            for de in range(-1, 2):
                                ee = e + de
                                if ee < 0 or ee >= n_e:
                                    continue
                                if dn == 0 and da == 0 and de == 0:
                                    continue
                                if pdp[nn, aa, ee] > v:
                                    is_max = False
                                    break
                            if not is_max:
                                break
                        if not is_max:
                            break
                    out[n, a, e] = is_max
        return out

    @_jit
    def _angles_one(dx, dy, dz):
        r = math.sqrt(dx * dx + dy * dy + dz * dz)
        if r == 0.0:
            return 0.0, 0.0
        az = math.degrees(math.atan2(dy, dx)) % 360.0
        s = dz / r
        if s > 1.0:
            s = 1.0
        elif s < -1.0:
            s = -1.0
        return az, math.degrees(math.asin(s))

    @_jit
    def _txgain_one(depx, depy, depz, bs_az, bs_el, iso, g0, haz, hel, floor):
        if iso:
            return 0.0
        az, el = _angles_one(depx, depy, depz)
        daz = (az - bs_az + 180.0) % 360.0 - 180.0
        de = el - bs_el
        g = g0 - 12.0 * ((daz / haz) ** 2 + (de / hel) ** 2)
        lim = g0 + floor
        if g < lim:
            g = lim
        return g

    @_jit
    def sweep_cells_numba(
        cells, tx,
        s_axis, s_coord, s_sign, s_ulo, s_uhi, s_vlo, s_vhi, s_loss,
        b_lo, b_hi,
        tx_iso, tx_g0, tx_haz, tx_hel, tx_floor,
        aim_at_cell, tx_bs_az, tx_bs_el,
        max_order, fspl0_db, floor_db,
        off0, off1, off2, c0,
    ):
        M = cells.shape[0]
        S = s_axis.shape[0]
        n_paths = np.zeros(M, dtype=np.int64)
        total_lin = np.zeros(M)
        p_best = np.full(M, -np.inf)
        tau_best = np.zeros(M)
        az_best = np.zeros(M)
        el_best = np.zeros(M)
        los_ok = np.zeros(M, dtype=np.bool_)
        p_los = np.zeros(M)
        tau_los = np.zeros(M)
        az_los = np.zeros(M)
        el_los = np.zeros(M)

        txx, txy, txz = tx[0], tx[1], tx[2]
        img1 = np.empty(3)
        img2 = np.empty(3)
        r1 = np.empty(3)
        r2 = np.empty(3)
        cell = np.empty(3)

        for m in range(M):
            cell[0] = cells[m, 0]
            cell[1] = cells[m, 1]
            cell[2] = cells[m, 2]
            dx = cell[0] - txx
            dy = cell[1] - txy
            dz = cell[2] - txz
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            if aim_at_cell:
                bs_az, bs_el = _angles_one(dx, dy, dz)
            else:
                bs_az, bs_el = tx_bs_az, tx_bs_el

            # direct path
            if dist > 0.0 and not _seg_blocked_one(
                txx, txy, txz, cell[0], cell[1], cell[2], b_lo, b_hi
            ):
                g = _txgain_one(dx, dy, dz, bs_az, bs_el, tx_iso, tx_g0, tx_haz, tx_hel, tx_floor)
                p_raw = -(fspl0_db + 20.0 * math.log10(dist)) + g
                if p_raw >= floor_db:
                    p_cal = p_raw + off0
                    tau = dist / c0 * 1e9
                    az, el = _angles_one(-dx, -dy, -dz)
                    n_paths[m] += 1
                    total_lin[m] += 10.0 ** (p_cal / 10.0)
                    if p_cal > p_best[m]:
                        p_best[m] = p_cal
                        tau_best[m] = tau
                        az_best[m] = az
                        el_best[m] = el
                    los_ok[m] = True
                    p_los[m] = p_cal
                    tau_los[m] = tau
                    az_los[m] = az
                    el_los[m] = el

            if max_order >= 1:
                for s in range(S):
                    ax = s_axis[s]
                    sg = s_sign[s]
                    c = s_coord[s]
                    if sg * (tx[ax] - c) <= EPS_F:
                        continue
                    if sg * (cell[ax] - c) <= EPS_F:
                        continue
                    img1[0] = txx
                    img1[1] = txy
                    img1[2] = txz
                    img1[ax] = 2.0 * c - tx[ax]
                    den = cell[ax] - img1[ax]
                    if den == 0.0:
                        continue
                    t = (c - img1[ax]) / den
                    if t <= EPS_T or t >= 1.0 - EPS_T:
                        continue
                    for a in range(3):
                        r1[a] = img1[a] + t * (cell[a] - img1[a])
                    u = (ax + 1) % 3
                    v = (ax + 2) % 3
                    if r1[u] < s_ulo[s] - EPS_B or r1[u] > s_uhi[s] + EPS_B:
                        continue
                    if r1[v] < s_vlo[s] - EPS_B or r1[v] > s_vhi[s] + EPS_B:
                        continue
                    if _seg_blocked_one(txx, txy, txz, r1[0], r1[1], r1[2], b_lo, b_hi):
                        continue
                    if _seg_blocked_one(r1[0], r1[1], r1[2], cell[0], cell[1], cell[2], b_lo, b_hi):
                        continue
                    lx = cell[0] - img1[0]
                    ly = cell[1] - img1[1]
                    lz = cell[2] - img1[2]
                    L = math.sqrt(lx * lx + ly * ly + lz * lz)
                    g = _txgain_one(
                        r1[0] - txx, r1[1] - txy, r1[2] - txz,
                        bs_az, bs_el, tx_iso, tx_g0, tx_haz, tx_hel, tx_floor,
                    )
                    p_raw = -(fspl0_db + 20.0 * math.log10(L)) + g - s_loss[s]
                    if p_raw < floor_db:
                        continue
                    p_cal = p_raw + off1
                    tau = L / c0 * 1e9
                    az, el = _angles_one(r1[0] - cell[0], r1[1] - cell[1], r1[2] - cell[2])
                    n_paths[m] += 1
                    total_lin[m] += 10.0 ** (p_cal / 10.0)
                    if p_cal > p_best[m]:
                        p_best[m] = p_cal
                        tau_best[m] = tau
                        az_best[m] = az
                        el_best[m] = el

            if max_order >= 2:
                for s1 in range(S):
                    ax1 = s_axis[s1]
                    sg1 = s_sign[s1]
                    c1 = s_coord[s1]
                    if sg1 * (tx[ax1] - c1) <= EPS_F:
                        continue
                    img1[0] = txx
                    img1[1] = txy
                    img1[2] = txz
                    img1[ax1] = 2.0 * c1 - tx[ax1]
                    u1 = (ax1 + 1) % 3
                    v1 = (ax1 + 2) % 3
                    for s2 in range(S):
                        if s2 == s1:
                            continue
                        ax2 = s_axis[s2]
                        c2 = s_coord[s2]
                        if ax2 == ax1 and c2 == c1:
                            continue
                        sg2 = s_sign[s2]
                        if sg2 * (cell[ax2] - c2) <= EPS_F:
                            continue
                        img2[0] = img1[0]
                        img2[1] = img1[1]
                        img2[2] = img1[2]
                        img2[ax2] = 2.0 * c2 - img1[ax2]
                        den2 = cell[ax2] - img2[ax2]
                        if den2 == 0.0:
                            continue
                        t2 = (c2 - img2[ax2]) / den2
                        if t2 <= EPS_T or t2 >= 1.0 - EPS_T:
                            continue
                        for a in range(3):
                            r2[a] = img2[a] + t2 * (cell[a] - img2[a])
                        u2 = (ax2 + 1) % 3
                        v2 = (ax2 + 2) % 3
                        if r2[u2] < s_ulo[s2] - EPS_B or r2[u2] > s_uhi[s2] + EPS_B:
                            continue
                        if r2[v2] < s_vlo[s2] - EPS_B or r2[v2] > s_vhi[s2] + EPS_B:
                            continue
                        if sg1 * (r2[ax1] - c1) <= EPS_F:
                            continue
                        den1 = r2[ax1] - img1[ax1]
                        if den1 == 0.0:
                            continue
                        t1 = (c1 - img1[ax1]) / den1
                        if t1 <= EPS_T or t1 >= 1.0 - EPS_T:
                            continue
                        for a in range(3):
                            r1[a] = img1[a] + t1 * (r2[a] - img1[a])
                        if r1[u1] < s_ulo[s1] - EPS_B or r1[u1] > s_uhi[s1] + EPS_B:
                            continue
                        if r1[v1] < s_vlo[s1] - EPS_B or r1[v1] > s_vhi[s1] + EPS_B:
                            continue
                        if sg2 * (r1[ax2] - c2) <= EPS_F:
                            continue
                        if _seg_blocked_one(txx, txy, txz, r1[0], r1[1], r1[2], b_lo, b_hi):
                            continue
                        if _seg_blocked_one(r1[0], r1[1], r1[2], r2[0], r2[1], r2[2], b_lo, b_hi):
                            continue
                        if _seg_blocked_one(r2[0], r2[1], r2[2], cell[0], cell[1], cell[2], b_lo, b_hi):
                            continue
                        lx = cell[0] - img2[0]
                        ly = cell[1] - img2[1]
                        lz = cell[2] - img2[2]
                        L = math.sqrt(lx * lx + ly * ly + lz * lz)
                        g = _txgain_one(
                            r1[0] - txx, r1[1] - txy, r1[2] - txz,
                            bs_az, bs_el, tx_iso, tx_g0, tx_haz, tx_hel, tx_floor,
                        )
                        p_raw = -(fspl0_db + 20.0 * math.log10(L)) + g - s_loss[s1] - s_loss[s2]
                        if p_raw < floor_db:
                            continue
                        p_cal = p_raw + off2
                        tau = L / c0 * 1e9
                        az, el = _angles_one(
                            r2[0] - cell[0], r2[1] - cell[1], r2[2] - cell[2]
                        )
                        n_paths[m] += 1
                        total_lin[m] += 10.0 ** (p_cal / 10.0)
                        if p_cal > p_best[m]:
                            p_best[m] = p_cal
                            tau_best[m] = tau
                            az_best[m] = az
                            el_best[m] = el

        return (
            n_paths, total_lin, p_best, tau_best, az_best, el_best,
            los_ok, p_los, tau_los, az_los, el_los,
        )

else:  # pragma: no cover - numba is a declared dependency
    segments_blocked_numba = None
    cfr_accumulate_numba = None
    local_peak_mask_numba = None
    sweep_cells_numba = None


# ===========================================================================
# dispatch
# ===========================================================================

if backend.BACKEND == "numba":
    segments_blocked = segments_blocked_numba
    cfr_accumulate = cfr_accumulate_numba
    local_peak_mask = local_peak_mask_numba
    sweep_cells = sweep_cells_numba
else:
    segments_blocked = segments_blocked_numpy
    cfr_accumulate = cfr_accumulate_numpy
    local_peak_mask = local_peak_mask_numpy
    sweep_cells = sweep_cells_numpy
