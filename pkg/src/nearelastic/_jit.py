"""Compiled event loops for the particle simulator.

The loops are resumable: whenever a kick buffer runs dry (or the event array
is full) they save their state into the small ``sf``/``si`` arrays and return
a status code, the Python driver refills and calls again. Kicks are read from
``kbuf[edge, side, ptr]``; side 0 is the left wall (xi), side 1 the right
wall (eta).

Geometry tables come from ``WellGraph.geometry``: float columns
(left, right, bottom, top, split) and int columns
(parent, left child, right child, is_leaf).
"""

import math

from numba import njit

DONE = 0
REFILL = 1
GROW = 2
CAP = 3

MODE_BRANCH = 0
MODE_HIT = 1
MODE_FINAL = 2

OUT_NO_DECISION = -1
OUT_CAP = -2


@njit(cache=True, nogil=True)
def apply_kick(gf, gi, e, H, wall_q, kick, eps, cap):
    """Energy update at a wall followed by relocation on the tree.

    Returns (new edge, new energy, cap flag).
    """
    Hn = H - eps * kick
    if gi[e, 3] == 1 and Hn < gf[e, 2]:
        Hn = gf[e, 2]
    if Hn > cap:
        return e, Hn, 1
    en = e
    while True:
        p = gi[en, 0]
        if p >= 0 and Hn >= gf[en, 3]:
            en = p
        elif gi[en, 3] == 0 and Hn < gf[en, 2]:
            if wall_q <= gf[en, 4]:
                en = gi[en, 1]
            else:
                en = gi[en, 2]
        else:
            break
    return en, Hn, 0


@njit(cache=True, nogil=True)
def run_kernel(gf, gi, kbuf, kptr, sf, si, eps, cap, t_end, gdt, n_grid, g_H, g_Hh, g_e, ev, rec_ev):
    """Single trajectory on natural time [0, t_end].

    sf = (H, q, t); si = (edge, direction, n_events, next grid index,
    n_collisions, refill edge, refill side).
    """
    B = kbuf.shape[2]
    nmax = ev.shape[0]
    while True:
        e = si[0]
        d = si[1]
        side = 1 if d > 0 else 0
        if kptr[e, side] >= B:
            si[5] = e
            si[6] = side
            return REFILL
        if rec_ev and si[2] >= nmax:
            return GROW
        H = sf[0]
        q = sf[1]
        t = sf[2]
        wall = gf[e, side]
        dt = abs(wall - q) / math.sqrt(2.0 * H)
        tn = t + dt
        kick = kbuf[e, side, kptr[e, side]]
        kptr[e, side] += 1
        en, Hn, capflag = apply_kick(gf, gi, e, H, wall, kick, eps, cap)
        g = si[3]
        while g < n_grid and g * gdt < tn:
            tg = g * gdt
            g_H[g] = H
            g_Hh[g] = H + (Hn - H) * (tg - t) / dt
            g_e[g] = e
            g += 1
        si[3] = g
        if tn > t_end:
            return DONE
        if capflag:
            return CAP
        if rec_ev:
            k = si[2]
            ev[k, 0] = tn
            ev[k, 1] = side
            ev[k, 2] = kick
            ev[k, 3] = H
            ev[k, 4] = Hn
            ev[k, 5] = e
            si[2] = k + 1
        si[4] += 1
        sf[0] = Hn
        sf[1] = wall
        sf[2] = tn
        si[0] = en
        si[1] = -d


@njit(cache=True, nogil=True)
def batch_kernel(gf, gi, kbuf, kptr, tb, tm, mode, eps, cap, level, t_end, max_coll,
                 e0, H0, q0, d0, n_rep, sf, si, out_i, out_f):
    """Many independent replicas sharing one kick stream, run back to back.

    ``mode`` MODE_BRANCH: stop when a leaf is entered, out_i = leaf index.
    ``mode`` MODE_HIT: stop when the piecewise linear energy reaches
    ``level`` before natural time ``t_end``, out_i = 1 for a hit else 0.
    ``mode`` MODE_FINAL: run to ``t_end``, out_f[:, 0] = interpolated energy.
    Otherwise out_f[:, 0] is the stopping time (rescaled); out_f[:, 1] is the log
    likelihood ratio accumulated from the tilt tables ``tb`` and ``tm``.

    sf = (H, q, t, loglr); si = (replica, edge, direction, n_collisions,
    started, refill edge, refill side).
    """
    B = kbuf.shape[2]
    while si[0] < n_rep:
        r = si[0]
        if si[4] == 0:
            sf[0] = H0
            sf[1] = q0
            sf[2] = 0.0
            sf[3] = 0.0
            si[1] = e0
            si[2] = d0
            si[3] = 0
            si[4] = 1
            if mode == MODE_HIT and H0 >= level:
                out_i[r] = 1
                out_f[r, 0] = 0.0
                out_f[r, 1] = 0.0
                si[0] += 1
                si[4] = 0
                continue
        finished = False
        while not finished:
            e = si[1]
            d = si[2]
            side = 1 if d > 0 else 0
            if kptr[e, side] >= B:
                si[5] = e
                si[6] = side
                return REFILL
            H = sf[0]
            q = sf[1]
            t = sf[2]
            wall = gf[e, side]
            dt = abs(wall - q) / math.sqrt(2.0 * H)
            tn = t + dt
            kick = kbuf[e, side, kptr[e, side]]
            kptr[e, side] += 1
            sf[3] += tb[e, side] * kick + tm[e, side]
            en, Hn, capflag = apply_kick(gf, gi, e, H, wall, kick, eps, cap)
            if mode == MODE_HIT:
                if tn > t_end:
                    Hh = H + (Hn - H) * (t_end - t) / dt
                    out_i[r] = 1 if Hh >= level else 0
                    out_f[r, 0] = t_end * eps
                    finished = True
                elif capflag:
                    out_i[r] = OUT_CAP
                    out_f[r, 0] = tn * eps
                    finished = True
                elif Hn >= level:
                    out_i[r] = 1
                    out_f[r, 0] = tn * eps
                    finished = True
            elif mode == MODE_FINAL:
                if tn > t_end:
                    out_i[r] = 1
                    out_f[r, 0] = H + (Hn - H) * (t_end - t) / dt
                    finished = True
                elif capflag:
                    out_i[r] = OUT_CAP
                    out_f[r, 0] = Hn
                    finished = True
            else:
                if capflag:
                    out_i[r] = OUT_CAP
                    out_f[r, 0] = tn * eps
                    finished = True
                elif gi[en, 3] == 1:
                    out_i[r] = en
                    out_f[r, 0] = tn * eps
                    finished = True
                elif si[3] + 1 >= max_coll:
                    out_i[r] = OUT_NO_DECISION
                    out_f[r, 0] = tn * eps
                    finished = True
            if not finished:
                sf[0] = Hn
                sf[1] = wall
                sf[2] = tn
                si[1] = en
                si[2] = -d
                si[3] += 1
        out_f[r, 1] = sf[3]
        si[0] += 1
        si[4] = 0
    return DONE
