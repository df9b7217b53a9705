"""Compiled inner loops: field velocities, RK4 stepping and streaming braid tracing.

Fields are passed as rows of a float64 table (layout below).  A segment of a
flow is a contiguous block of rows whose velocities are summed.  Every field
is radial in local coordinates ``q = A^{-1}(p - c)`` with ``A`` in SL(2,R), so
its velocity is ``A @ (omega(|q|^2) * (-q2, q1))``.
"""

from __future__ import annotations

import numba as nb
import numpy as np

KIND_BUMP = 0
KIND_TWIST = 1
KIND_GAUGE = 2

# row layout
F_KIND, F_CX, F_CY, F_A, F_B, F_C, F_D, F_P0, F_P1, F_P2, F_P3, F_P4, F_RB, F_TAB = range(14)
ROW_WIDTH = 14

# status bits reported by the tracer
ST_OVERFLOW = 1
ST_ESCAPED = 2
ST_TOO_CLOSE = 4
ST_REFINE = 8
ST_AMBIGUOUS = 16


@nb.njit(cache=True)
def _smoothstep(u):
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


@nb.njit(cache=True)
def _smoothstep_integral(u):
    # integral of the smoothstep from 0 to u
    u2 = u * u
    return u2 * u2 * (2.5 - 3.0 * u + u2)


@nb.njit(cache=True)
def _gauge_parts(row, q1, q2):
    # gauge g (homogeneous of degree 1) of the smoothed disc-cap region and its gradient
    r = np.sqrt(q1 * q1 + q2 * q2)
    if r == 0.0:
        return 0.0, 0.0, 0.0
    R0 = row[F_P1]
    d = row[F_P2]
    a = r / R0
    if not (d > 0.0 and q1 > 0.0):
        return a, q1 / (R0 * r), q2 / (R0 * r)
    p = row[F_P3]
    b = q1 / d
    ap = a**p
    bp = b**p
    S = ap + bp
    g = S ** (1.0 / p)
    w = g / S
    ga = w * ap / a
    return g, ga * q1 / (R0 * r) + w * bp / b / d, ga * q2 / (R0 * r)


@nb.njit(cache=True)
def _angular_velocity(row, s):
    kind = int(row[F_KIND])
    if kind == KIND_BUMP:
        rho2 = row[F_P0]
        if s >= rho2:
            return 0.0
        t = 1.0 - s / rho2
        return -6.0 * row[F_P1] * t * t / rho2
    rw2 = row[F_P1]
    rv2 = row[F_P2]
    if s >= rv2:
        return 0.0
    if s <= rw2:
        return row[F_P0]
    u = (rv2 - s) / (rv2 - rw2)
    return row[F_P0] * _smoothstep(u)


@nb.njit(cache=True)
def _local(row, x, y):
    dx = x - row[F_CX]
    dy = y - row[F_CY]
    return row[F_D] * dx - row[F_B] * dy, -row[F_C] * dx + row[F_A] * dy


@nb.njit(cache=True)
def value_at(fields, lo, hi, x, y):
    """Hamiltonian value, coded independently of the velocity."""
    total = 0.0
    for f in range(lo, hi):
        row = fields[f]
        q1, q2 = _local(row, x, y)
        s = q1 * q1 + q2 * q2
        kind = int(row[F_KIND])
        if kind == KIND_BUMP:
            rho2 = row[F_P0]
            if s < rho2:
                t = 1.0 - s / rho2
                total += row[F_P1] * t * t * t
        elif kind == KIND_TWIST:
            half = 0.5 * row[F_P0]
            rw2 = row[F_P1]
            rv2 = row[F_P2]
            if s < rv2:
                if s <= rw2:
                    total -= half * (0.5 * (rv2 - rw2) + (rw2 - s))
                else:
                    total -= half * (rv2 - rw2) * _smoothstep_integral((rv2 - s) / (rv2 - rw2))
        else:
            amp = row[F_P0]
            k2 = row[F_P4] * row[F_P4]
            g, _gx, _gy = _gauge_parts(row, q1, q2)
            G = g * g
            if G < k2:
                if G <= 1.0:
                    total -= amp * (0.5 * (k2 - 1.0) + (1.0 - G))
                else:
                    total -= amp * (k2 - 1.0) * _smoothstep_integral((k2 - G) / (k2 - 1.0))
    return total


@nb.njit(cache=True)
def velocity_at(fields, lo, hi, x, y):
    vx = 0.0
    vy = 0.0
    for f in range(lo, hi):
        row = fields[f]
        dx = x - row[F_CX]
        dy = y - row[F_CY]
        if dx * dx + dy * dy >= row[F_RB] * row[F_RB]:
            continue
        a = row[F_A]
        b = row[F_B]
        c = row[F_C]
        d = row[F_D]
        q1 = d * dx - b * dy
        q2 = -c * dx + a * dy
        if int(row[F_KIND]) == KIND_GAUGE:
            g, gx, gy = _gauge_parts(row, q1, q2)
            G = g * g
            k2 = row[F_P4] * row[F_P4]
            if G >= k2 or g == 0.0:
                continue
            fp = row[F_P0]
            if G > 1.0:
                fp *= _smoothstep((k2 - G) / (k2 - 1.0))
            # X = J grad H with grad H = F'(G) 2 g grad g
            w1 = -fp * 2.0 * g * gy
            w2 = fp * 2.0 * g * gx
        else:
            om = _angular_velocity(row, q1 * q1 + q2 * q2)
            if om == 0.0:
                continue
            w1 = -om * q2
            w2 = om * q1
        vx += a * w1 + b * w2
        vy += c * w1 + d * w2
    return vx, vy


@nb.njit(cache=True)
def value_field(fields, lo, hi, pts):
    out = np.zeros(pts.shape[0])
    for k in range(pts.shape[0]):
        out[k] = value_at(fields, lo, hi, pts[k, 0], pts[k, 1])
    return out


@nb.njit(cache=True)
def velocity_field(fields, lo, hi, pts):
    out = np.zeros_like(pts)
    for k in range(pts.shape[0]):
        vx, vy = velocity_at(fields, lo, hi, pts[k, 0], pts[k, 1])
        out[k, 0] = vx
        out[k, 1] = vy
    return out


@nb.njit(cache=True)
def rk4_point(fields, lo, hi, x, y, h):
    k1x, k1y = velocity_at(fields, lo, hi, x, y)
    k2x, k2y = velocity_at(fields, lo, hi, x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y = velocity_at(fields, lo, hi, x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y = velocity_at(fields, lo, hi, x + h * k3x, y + h * k3y)
    return (
        x + h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0,
        y + h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0,
    )


@nb.njit(cache=True)
def integrate_record(fields, seg_lo, seg_hi, seg_steps, seg_dur, pts, reps):
    """Positions of ``pts`` at every step of ``reps`` passes through the segments."""
    total = 0
    for s in range(seg_lo.shape[0]):
        total += seg_steps[s]
    total *= reps
    m = pts.shape[0]
    out = np.empty((total + 1, m, 2))
    times = np.empty(total + 1)
    out[0] = pts
    times[0] = 0.0
    k = 0
    t = 0.0
    cur = pts.copy()
    for _ in range(reps):
        for s in range(seg_lo.shape[0]):
            h = seg_dur[s] / seg_steps[s]
            for _j in range(seg_steps[s]):
                for i in range(m):
                    cur[i, 0], cur[i, 1] = rk4_point(
                        fields, seg_lo[s], seg_hi[s], cur[i, 0], cur[i, 1], h
                    )
                k += 1
                t += h
                out[k] = cur
                times[k] = t
    return times, out


@nb.njit(cache=True)
def integrate_final(fields, seg_lo, seg_hi, seg_steps, seg_dur, pts, reps):
    cur = pts.copy()
    m = pts.shape[0]
    for _ in range(reps):
        for s in range(seg_lo.shape[0]):
            h = seg_dur[s] / seg_steps[s]
            for _j in range(seg_steps[s]):
                for i in range(m):
                    cur[i, 0], cur[i, 1] = rk4_point(
                        fields, seg_lo[s], seg_hi[s], cur[i, 0], cur[i, 1], h
                    )
    return cur


# ---------------------------------------------------------------------------
# exact motion for single-field segments
#
# A radial field rotates each point at the fixed rate omega(|q|^2).  A gauge
# twist keeps G fixed and advances the sector area
# Sigma(theta) = 1/2 int R(phi)^2 dphi at the rate F'(G), where R = 1/gauge on
# unit directions.  Sigma is tabulated on [-pi, pi] as a cubic Hermite
# interpolant with exact slopes, and inverted by safeguarded Newton steps.

MODE_STATIC = 0
MODE_ROTATE = 1
MODE_GAUGE = 2


@nb.njit(cache=True)
def _unit_gauge(row, theta):
    p = row[F_P3]
    a = 1.0 / row[F_P1]
    c = np.cos(theta)
    d = row[F_P2]
    if d > 0.0 and c > 0.0:
        return (a**p + (c / d) ** p) ** (1.0 / p)
    return a


@nb.njit(cache=True)
def _sigma_eval(tab, theta):
    # Hermite interpolant of the sector area on the uniform grid over [-pi, pi]
    M = tab.shape[0] - 1
    h = 2.0 * np.pi / M
    x = (theta + np.pi) / h
    j = int(x)
    if j >= M:
        j = M - 1
    if j < 0:
        j = 0
    t = x - j
    t2 = t * t
    t3 = t2 * t
    y0 = tab[j, 0]
    y1 = tab[j + 1, 0]
    d0 = tab[j, 1] * h
    d1 = tab[j + 1, 1] * h
    val = (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * d0 + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * d1
    der = ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * d0 + (-6 * t2 + 6 * t) * y1 + (3 * t2 - 2 * t) * d1) / h
    return val, der


@nb.njit(cache=True)
def _sigma_inverse(tab, target):
    M = tab.shape[0] - 1
    h = 2.0 * np.pi / M
    lo = 0
    hi = M
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tab[mid, 0] <= target:
            lo = mid
        else:
            hi = mid
    a = -np.pi + lo * h
    b = a + h
    span = tab[lo + 1, 0] - tab[lo, 0]
    th = a + h * ((target - tab[lo, 0]) / span if span > 0 else 0.5)
    for _ in range(8):
        v, dv = _sigma_eval(tab, th)
        f = v - target
        if f == 0.0:
            break
        if f > 0:
            b = th
        else:
            a = th
        step = f / dv if dv > 0 else 0.0
        nt = th - step
        if abs(step) < 1e-15:
            th = nt
            break
        if nt <= a or nt >= b:
            nt = 0.5 * (a + b)
        th = nt
    return th


@nb.njit(cache=True)
def _setup_motion(row, tables, x, y, h, par):
    """Per-point motion descriptor for one exact segment; returns the mode."""
    q1, q2 = _local(row, x, y)
    kind = int(row[F_KIND])
    if kind == KIND_GAUGE:
        g, _gx, _gy = _gauge_parts(row, q1, q2)
        G = g * g
        k2 = row[F_P4] * row[F_P4]
        if g == 0.0 or G >= k2:
            return MODE_STATIC
        fp = row[F_P0]
        if G > 1.0:
            fp *= _smoothstep((k2 - G) / (k2 - 1.0))
        if fp == 0.0:
            return MODE_STATIC
        tab = tables[int(row[F_TAB])]
        s0, _d = _sigma_eval(tab, np.arctan2(q2, q1))
        par[0] = G
        par[1] = s0
        par[2] = fp * h
        par[3] = tab[tab.shape[0] - 1, 0]
        return MODE_GAUGE
    om = _angular_velocity(row, q1 * q1 + q2 * q2)
    if om == 0.0:
        return MODE_STATIC
    par[0] = q1
    par[1] = q2
    par[2] = np.cos(om * h)
    par[3] = np.sin(om * h)
    return MODE_ROTATE


@nb.njit(cache=True)
def _advance(row, tables, mode, par, k):
    """World position after step k (k >= 1) of an exact segment; updates rotation state."""
    if mode == MODE_ROTATE:
        c = par[2]
        s = par[3]
        q1 = c * par[0] - s * par[1]
        q2 = s * par[0] + c * par[1]
        par[0] = q1
        par[1] = q2
    else:
        tab = tables[int(row[F_TAB])]
        total = par[3]
        sg = (par[1] + k * par[2]) % total
        th = _sigma_inverse(tab, sg)
        r = np.sqrt(par[0]) / _unit_gauge(row, th)
        q1 = r * np.cos(th)
        q2 = r * np.sin(th)
    return (
        row[F_CX] + row[F_A] * q1 + row[F_B] * q2,
        row[F_CY] + row[F_C] * q1 + row[F_D] * q2,
    )


@nb.njit(cache=True)
def exact_final(fields, tables, seg_lo, seg_hi, seg_dur, pts, reps):
    """Time-one map through exact motion; every segment must hold a single field."""
    cur = pts.copy()
    par = np.empty(4)
    for _ in range(reps):
        for s in range(seg_lo.shape[0]):
            if seg_hi[s] == seg_lo[s]:
                continue
            row = fields[seg_lo[s]]
            for i in range(cur.shape[0]):
                mode = _setup_motion(row, tables, cur[i, 0], cur[i, 1], seg_dur[s], par)
                if mode != MODE_STATIC:
                    cur[i, 0], cur[i, 1] = _advance(row, tables, mode, par, 1)
    return cur


# ---------------------------------------------------------------------------
# streaming braid extraction


@nb.njit(cache=True)
def _pair_min_dist(ax, ay, bx, by):
    # min over s in [0,1] of |a + s (b - a)| for the relative displacement
    ex = bx - ax
    ey = by - ay
    ee = ex * ex + ey * ey
    s = 0.0
    if ee > 0.0:
        s = -(ax * ex + ay * ey) / ee
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    px = ax + s * ex
    py = ay + s * ey
    return np.sqrt(px * px + py * py)


@nb.njit(cache=True)
def linear_step(
    A, B, cw, sw, order, pos_of, out, count, cap, floor, refine_factor, check_refine,
    ev_s, ev_i, ev_j,
):
    """Emit the generators crossed while every strand moves linearly from A to B.

    Updates ``order``/``pos_of`` in place and returns (count, status, min_dist).
    ``ev_*`` are scratch buffers of length n(n-1)/2.
    """
    n = A.shape[0]
    status = 0
    ne = 0
    min_d = 1e300
    disp2 = 0.0
    for i in range(n):
        ddx = B[i, 0] - A[i, 0]
        ddy = B[i, 1] - A[i, 1]
        dd = ddx * ddx + ddy * ddy
        if dd > disp2:
            disp2 = dd
    for i in range(n):
        uai = A[i, 0] * cw + A[i, 1] * sw
        ubi = B[i, 0] * cw + B[i, 1] * sw
        for j in range(i + 1, n):
            d = _pair_min_dist(
                A[i, 0] - A[j, 0], A[i, 1] - A[j, 1], B[i, 0] - B[j, 0], B[i, 1] - B[j, 1]
            )
            if d < min_d:
                min_d = d
            uaj = A[j, 0] * cw + A[j, 1] * sw
            ubj = B[j, 0] * cw + B[j, 1] * sw
            da = uai - uaj
            db = ubi - ubj
            if db == 0.0:
                status |= ST_AMBIGUOUS
            elif da * db < 0.0:
                ev_s[ne] = da / (da - db)
                ev_i[ne] = i
                ev_j[ne] = j
                ne += 1
    if min_d < floor:
        status |= ST_TOO_CLOSE
    if check_refine and min_d < refine_factor * np.sqrt(disp2):
        status |= ST_REFINE
    # insertion sort of the (few) crossing events by time
    for a in range(1, ne):
        s0 = ev_s[a]
        i0 = ev_i[a]
        j0 = ev_j[a]
        b = a - 1
        while b >= 0 and ev_s[b] > s0:
            ev_s[b + 1] = ev_s[b]
            ev_i[b + 1] = ev_i[b]
            ev_j[b + 1] = ev_j[b]
            b -= 1
        ev_s[b + 1] = s0
        ev_i[b + 1] = i0
        ev_j[b + 1] = j0
    for e in range(ne):
        i = ev_i[e]
        j = ev_j[e]
        pi = pos_of[i]
        pj = pos_of[j]
        lo = pi if pi < pj else pj
        hi = pj if pi < pj else pi
        if hi - lo != 1:
            status |= ST_AMBIGUOUS
            continue
        left = order[lo]
        right = order[hi]
        s = ev_s[e]
        vl = -(A[left, 0] + s * (B[left, 0] - A[left, 0])) * sw + (
            A[left, 1] + s * (B[left, 1] - A[left, 1])
        ) * cw
        vr = -(A[right, 0] + s * (B[right, 0] - A[right, 0])) * sw + (
            A[right, 1] + s * (B[right, 1] - A[right, 1])
        ) * cw
        if count >= cap:
            status |= ST_OVERFLOW
        else:
            out[count] = lo + 1 if vl < vr else -(lo + 1)
        count += 1
        order[lo] = right
        order[hi] = left
        pos_of[right] = lo
        pos_of[left] = hi
    return count, status, min_d


@nb.njit(cache=True)
def _initial_order(z, cw, sw, order, pos_of):
    n = z.shape[0]
    u = np.empty(n)
    for i in range(n):
        u[i] = z[i, 0] * cw + z[i, 1] * sw
    idx = np.argsort(u)
    for p in range(n):
        order[p] = idx[p]
        pos_of[idx[p]] = p


@nb.njit(cache=True)
def trace_sample(
    fields,
    tables,
    seg_lo,
    seg_hi,
    seg_steps,
    seg_dur,
    seg_exact,
    seg_disc,
    seg_disc_lo,
    seg_disc_hi,
    x0,
    z,
    checkpoints,
    cw,
    sw,
    floor,
    refine_factor,
    open_out,
    mid_out,
    mid_counts,
    close_out,
    close_counts,
):
    """Trace gamma(g^p; x0) for every p in ``checkpoints`` (sorted, >= 1).

    The opening leg, the middle flow segment and the closing legs are written
    separately; the word for power ``checkpoints[c]`` is
    ``open_out[:n_open] + mid_out[:mid_counts[c]] + close_out[c, :close_counts[c]]``.
    Segments flagged in ``seg_exact`` move points along their exact orbits;
    the others use RK4.  Returns (n_open, status, min_dist).
    """
    n = x0.shape[0]
    cap = mid_out.shape[0]
    leg_cap = open_out.shape[0]
    npairs = max(1, n * (n - 1) // 2)
    ev_s = np.empty(npairs)
    ev_i = np.empty(npairs, dtype=np.int64)
    ev_j = np.empty(npairs, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    pos_of = np.empty(n, dtype=np.int64)
    _initial_order(z, cw, sw, order, pos_of)
    status = 0
    min_d = 1e300

    n_open, st, d = linear_step(
        z, x0, cw, sw, order, pos_of, open_out, 0, leg_cap, floor, refine_factor, False,
        ev_s, ev_i, ev_j,
    )
    status |= st
    if d < min_d:
        min_d = d

    cur = x0.copy()
    nxt = np.empty_like(cur)
    modes = np.zeros(n, dtype=np.int64)
    par = np.zeros((n, 4))
    count = 0
    rep = 0
    ci = 0
    n_ck = checkpoints.shape[0]
    p_max = checkpoints[n_ck - 1]
    tmp_order = np.empty(n, dtype=np.int64)
    tmp_pos = np.empty(n, dtype=np.int64)
    while rep < p_max:
        for s in range(seg_lo.shape[0]):
            # skip segments whose support misses every strand: the flow is exactly the identity
            active = False
            for dd in range(seg_disc_lo[s], seg_disc_hi[s]):
                for i in range(n):
                    ex = cur[i, 0] - seg_disc[dd, 0]
                    ey = cur[i, 1] - seg_disc[dd, 1]
                    if ex * ex + ey * ey < seg_disc[dd, 2] * seg_disc[dd, 2]:
                        active = True
                        break
                if active:
                    break
            if not active:
                continue
            h = seg_dur[s] / seg_steps[s]
            exact = seg_exact[s] != 0
            if exact:
                row = fields[seg_lo[s]]
                moving = False
                for i in range(n):
                    modes[i] = _setup_motion(row, tables, cur[i, 0], cur[i, 1], h, par[i])
                    if modes[i] != MODE_STATIC:
                        moving = True
                if not moving:
                    continue
            for jstep in range(seg_steps[s]):
                for i in range(n):
                    if exact:
                        if modes[i] == MODE_STATIC:
                            nxt[i, 0] = cur[i, 0]
                            nxt[i, 1] = cur[i, 1]
                        else:
                            nxt[i, 0], nxt[i, 1] = _advance(row, tables, modes[i], par[i], jstep + 1)
                    else:
                        nxt[i, 0], nxt[i, 1] = rk4_point(
                            fields, seg_lo[s], seg_hi[s], cur[i, 0], cur[i, 1], h
                        )
                    if nxt[i, 0] * nxt[i, 0] + nxt[i, 1] * nxt[i, 1] >= 1.0:
                        status |= ST_ESCAPED
                count, st, d = linear_step(
                    cur, nxt, cw, sw, order, pos_of, mid_out, count, cap, floor,
                    refine_factor, True, ev_s, ev_i, ev_j,
                )
                status |= st
                if d < min_d:
                    min_d = d
                for i in range(n):
                    cur[i, 0] = nxt[i, 0]
                    cur[i, 1] = nxt[i, 1]
        rep += 1
        if rep == checkpoints[ci]:
            mid_counts[ci] = count
            for i in range(n):
                tmp_order[i] = order[i]
                tmp_pos[i] = pos_of[i]
            nc, st, d = linear_step(
                cur, z, cw, sw, tmp_order, tmp_pos, close_out[ci], 0, leg_cap, floor,
                refine_factor, False, ev_s, ev_i, ev_j,
            )
            close_counts[ci] = nc
            status |= st
            if d < min_d:
                min_d = d
            ci += 1
    return n_open, status, min_d


@nb.njit(cache=True, parallel=True)
def trace_batch(
    fields,
    tables,
    seg_lo,
    seg_hi,
    seg_steps,
    seg_dur,
    seg_exact,
    seg_disc,
    seg_disc_lo,
    seg_disc_hi,
    X,
    z,
    checkpoints,
    cw,
    sw,
    floor,
    refine_factor,
    cap,
):
    N = X.shape[0]
    n = X.shape[1]
    P = checkpoints.shape[0]
    leg_cap = max(1, n * (n - 1) // 2)
    open_out = np.zeros((N, leg_cap), dtype=np.int8)
    open_counts = np.zeros(N, dtype=np.int64)
    mid_out = np.zeros((N, cap), dtype=np.int8)
    mid_counts = np.zeros((N, P), dtype=np.int64)
    close_out = np.zeros((N, P, leg_cap), dtype=np.int8)
    close_counts = np.zeros((N, P), dtype=np.int64)
    status = np.zeros(N, dtype=np.int64)
    min_dist = np.zeros(N)
    for k in nb.prange(N):
        no, st, md = trace_sample(
            fields, tables, seg_lo, seg_hi, seg_steps, seg_dur, seg_exact, seg_disc,
            seg_disc_lo, seg_disc_hi, X[k], z, checkpoints, cw, sw, floor, refine_factor,
            open_out[k], mid_out[k], mid_counts[k], close_out[k], close_counts[k],
        )
        open_counts[k] = no
        status[k] = st
        min_dist[k] = md
    return open_out, open_counts, mid_out, mid_counts, close_out, close_counts, status, min_dist



# ---------------------------------------------------------------------------
# pair turning for the Gauss-type functional


@nb.njit(cache=True)
def _wrap(a):
    while a > np.pi:
        a -= 2.0 * np.pi
    while a < -np.pi:
        a += 2.0 * np.pi
    return a


@nb.njit(cache=True, parallel=True)
def pair_turning_batch(fields, seg_lo, seg_hi, seg_steps, seg_dur, pairs, reps):
    """Total absolute turning (radians) of the chord between each pair of points.

    Returns (turning, max_step_angle) per pair.
    """
    N = pairs.shape[0]
    turning = np.zeros(N)
    max_step = np.zeros(N)
    for k in nb.prange(N):
        ax = pairs[k, 0, 0]
        ay = pairs[k, 0, 1]
        bx = pairs[k, 1, 0]
        by = pairs[k, 1, 1]
        ang = np.arctan2(by - ay, bx - ax)
        tot = 0.0
        mx = 0.0
        for _ in range(reps):
            for s in range(seg_lo.shape[0]):
                h = seg_dur[s] / seg_steps[s]
                for _j in range(seg_steps[s]):
                    ax, ay = rk4_point(fields, seg_lo[s], seg_hi[s], ax, ay, h)
                    bx, by = rk4_point(fields, seg_lo[s], seg_hi[s], bx, by, h)
                    a2 = np.arctan2(by - ay, bx - ax)
                    da = abs(_wrap(a2 - ang))
                    tot += da
                    if da > mx:
                        mx = da
                    ang = a2
        turning[k] = tot
        max_step[k] = mx
    return turning, max_step
