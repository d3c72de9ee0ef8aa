"""Vectorised numpy implementation of the generation kernels.

Mirrors ``_kernels.pyx`` argument for argument. Both consume the same
uniform arrays in the same order, so they produce the same tree; floating
point results agree to the last few ulps (libm vs numpy SIMD ``pow``/``log``).
"""

import numpy as np

FAMILY_ZERO = 0
FAMILY_PARETO = 1
FAMILY_SHIFTED_EXP = 2


def offspring_counts(types, u, row_start, cum, vecs):
    P = types.shape[0]
    Q = vecs.shape[1]
    out = np.empty((P, Q), dtype=np.int64)
    for q in range(row_start.shape[0] - 1):
        sel = np.flatnonzero(types == q)
        if sel.size == 0:
            continue
        lo, hi = row_start[q], row_start[q + 1]
        r = np.searchsorted(cum[lo:hi], u[sel], side="right")
        np.minimum(r, hi - lo - 1, out=r)
        out[sel] = vecs[lo + r]
    return out


def _magnitudes(code, index, scale, u):
    if code == FAMILY_PARETO:
        return scale * np.power(u, -1.0 / index)
    if code == FAMILY_SHIFTED_EXP:
        return scale - np.log(u) / index
    return np.zeros_like(u)


def expand_generation(types, pos, last_event, exceed, counts, u_mag, u_sign,
                      fam_code, fam_index, fam_scale, fam_balance, ray_coef,
                      record_thr, exceed_thr, event_offset):
    P, Q = counts.shape
    heavy = Q - 1
    flat = counts.ravel()
    child_parent = np.repeat(np.repeat(np.arange(P, dtype=np.int64), Q), flat)
    child_type = np.repeat(np.tile(np.arange(Q, dtype=np.int64), P), flat)
    C = child_parent.shape[0]

    disp = np.empty(C, dtype=np.float64)
    for q in range(Q):
        sel = np.flatnonzero(child_type == q)
        if sel.size == 0:
            continue
        mag = _magnitudes(fam_code[q], fam_index[q], fam_scale[q], u_mag[sel])
        sign = np.where(u_sign[sel] < fam_balance[q], 1.0, -1.0)
        disp[sel] = sign * mag

    if ray_coef.shape[0] > 0:
        hsel = np.flatnonzero(child_type == heavy)
        if hsel.size:
            hp = child_parent[hsel]
            is_first = np.ones(hsel.size, dtype=bool)
            is_first[1:] = hp[1:] != hp[:-1]
            first_pos = np.flatnonzero(is_first)
            block = np.cumsum(is_first) - 1
            rank = np.arange(hsel.size) - first_pos[block]
            y = disp[hsel[first_pos]][block]
            disp[hsel] = ray_coef[rank] * y

    child_pos = pos[child_parent] + disp
    absd = np.abs(disp)

    child_last = last_event[child_parent]
    is_ev = (child_type == heavy) & (absd > record_thr)
    ev_idx = np.flatnonzero(is_ev)
    ev_parent = child_last[ev_idx].copy()
    ev_value = disp[ev_idx].copy()
    child_last[ev_idx] = event_offset + np.arange(ev_idx.size, dtype=np.int64)

    child_exceed = exceed[child_parent]
    hit = np.flatnonzero(absd > exceed_thr)
    child_exceed[hit, child_type[hit]] += 1

    return (child_type, child_pos, child_last, child_exceed, child_parent,
            disp, ev_value, ev_parent)


def accumulate_events(ev_parent, leaf_last_event, n_events):
    leaf = leaf_last_event[leaf_last_event >= 0]
    cnt = np.bincount(leaf, minlength=n_events).astype(np.int64)
    for e in range(n_events - 1, -1, -1):
        p = ev_parent[e]
        if p >= 0:
            cnt[p] += cnt[e]
    return cnt
