"""Compiled inner loops for the Gillespie simulator."""
from __future__ import annotations

import numpy as np
from numba import njit

REBUILD_EVERY = 1 << 20


@njit(cache=True, nogil=True)
def tree_build(tree):
    L = tree.shape[0] // 2
    for k in range(L - 1, 0, -1):
        tree[k] = tree[2 * k] + tree[2 * k + 1]


@njit(cache=True, nogil=True)
def tree_set(tree, leaf, val):
    L = tree.shape[0] // 2
    k = leaf + L
    tree[k] = val
    k //= 2
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k //= 2


@njit(cache=True, nogil=True)
def tree_sample(tree, u):
    L = tree.shape[0] // 2
    k = 1
    while k < L:
        left = tree[2 * k]
        if u < left:
            k = 2 * k
        else:
            u -= left
            k = 2 * k + 1
    return k - L


@njit(cache=True, nogil=True)
def fill_tree(tree, idx, rates):
    n = rates.shape[0]
    L = tree.shape[0] // 2
    tree[:] = 0.0
    for x in range(idx.shape[0]):
        for j in range(n):
            tree[L + x * n + j] = rates[j, idx[x]]
    tree_build(tree)


@njit(cache=True, nogil=True)
def leaf_sum(tree, count):
    L = tree.shape[0] // 2
    s = 0.0
    for k in range(count):
        s += tree[L + k]
    return s


@njit(cache=True, nogil=True)
def draw_event(tree, rng, n, disp, a_prob, a_alias):
    """Pick (site, species, displacement) proportional to the activities."""
    total = tree[1]
    while True:
        leaf = tree_sample(tree, rng.random() * total)
        if tree[tree.shape[0] // 2 + leaf] > 0.0:
            break
    u = rng.random() * disp.shape[0]
    col = int(u)
    if col >= disp.shape[0]:
        col = disp.shape[0] - 1
    if u - col >= a_prob[col]:
        col = a_alias[col]
    return leaf // n, leaf % n, disp[col]


@njit(cache=True, nogil=True)
def apply_move(tree, counts, idx, rates, strides, cap, x, i, z):
    """Move one i-particle from x to x+z; returns False on cap overflow."""
    N = counts.shape[0]
    n = counts.shape[1]
    y = (x + z) % N
    if counts[y, i] >= cap:
        return False
    counts[x, i] -= 1
    counts[y, i] += 1
    idx[x] -= strides[i]
    idx[y] += strides[i]
    for j in range(n):
        tree_set(tree, x * n + j, rates[j, idx[x]])
        tree_set(tree, y * n + j, rates[j, idx[y]])
    return True


@njit(cache=True, nogil=True)
def _interval_weight(omega, t0, t1):
    """Integral of exp(-i omega s) over [t0, t1]."""
    d = t1 - t0
    if omega == 0.0:
        return complex(d, 0.0)
    e0 = np.exp(-1j * omega * t0)
    z = -1j * omega * d
    if abs(z) < 1e-3:
        f = 1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    else:
        f = (np.exp(z) - 1.0) / z
    return e0 * d * f


@njit(cache=True, nogil=True)
def run_kernel(counts, idx, rates, strides, cap, disp, a_prob, a_alias, speed, T, grid,
               phi, bw, omega, group, n_groups, pair_a, pair_b, rng, keep_jumps, snap):
    N = counts.shape[0]
    n = counts.shape[1]
    C = phi.shape[0]
    G = grid.shape[0]
    P = pair_a.shape[0]
    L = 1
    while L < N * n:
        L *= 2
    tree = np.zeros(2 * L)
    fill_tree(tree, idx, rates)

    S = np.zeros(C, dtype=np.complex128)
    for c in range(C):
        acc = 0.0 + 0.0j
        for x in range(N):
            acc += phi[c, idx[x]] * bw[c, x]
        S[c] = acc
    I = np.zeros(C)
    tc = np.zeros(C)
    qv = np.zeros(n_groups)
    cross = np.zeros(P)
    dY = np.zeros(n_groups)

    S_rec = np.zeros((G, C), dtype=np.complex128)
    I_rec = np.zeros((G, C))
    qv_rec = np.zeros((G, n_groups))
    cross_rec = np.zeros((G, P))
    snaps = np.zeros((G if snap else 0, N, n), dtype=np.int16)

    cap_j = 1024 if keep_jumps else 1
    jt = np.zeros(cap_j)
    jx = np.zeros(cap_j, dtype=np.int64)
    ji = np.zeros(cap_j, dtype=np.int64)
    jz = np.zeros(cap_j, dtype=np.int64)
    n_jumps = 0

    t = 0.0
    g = 0
    events = 0
    rejected = 0
    drift = 0.0
    while True:
        total = tree[1]
        if total > 0.0:
            t_new = t - np.log(1.0 - rng.random()) / (speed * total)
        else:
            t_new = np.inf
        while g < G and grid[g] <= t_new and grid[g] <= T:
            tg = grid[g]
            for c in range(C):
                I_rec[g, c] = I[c] + (S[c] * _interval_weight(omega[c], tc[c], tg)).real
                S_rec[g, c] = S[c]
            for q in range(n_groups):
                qv_rec[g, q] = qv[q]
            for p in range(P):
                cross_rec[g, p] = cross[p]
            if snap:
                for x in range(N):
                    for j in range(n):
                        snaps[g, x, j] = counts[x, j]
            g += 1
        if t_new > T:
            break
        t = t_new
        x, i, z = draw_event(tree, rng, n, disp, a_prob, a_alias)
        y = (x + z) % N
        old_x = idx[x]
        old_y = idx[y]
        if not apply_move(tree, counts, idx, rates, strides, cap, x, i, z):
            rejected += 1
            continue
        events += 1
        new_x = idx[x]
        new_y = idx[y]
        for q in range(n_groups):
            dY[q] = 0.0
        for c in range(C):
            d = (phi[c, new_x] - phi[c, old_x]) * bw[c, x] + (phi[c, new_y] - phi[c, old_y]) * bw[c, y]
            if d != 0.0:
                I[c] += (S[c] * _interval_weight(omega[c], tc[c], t)).real
                tc[c] = t
                S[c] += d
                if omega[c] == 0.0:
                    dY[group[c]] += d.real
                else:
                    dY[group[c]] += (d * np.exp(-1j * omega[c] * t)).real
        for q in range(n_groups):
            qv[q] += dY[q] * dY[q]
        for p in range(P):
            cross[p] += dY[pair_a[p]] * dY[pair_b[p]]
        if keep_jumps:
            if n_jumps == jt.shape[0]:
                jt = np.concatenate((jt, np.zeros(n_jumps)))
                jx = np.concatenate((jx, np.zeros(n_jumps, dtype=np.int64)))
                ji = np.concatenate((ji, np.zeros(n_jumps, dtype=np.int64)))
                jz = np.concatenate((jz, np.zeros(n_jumps, dtype=np.int64)))
            jt[n_jumps] = t
            jx[n_jumps] = x
            ji[n_jumps] = i
            jz[n_jumps] = z
            n_jumps += 1
        if events % REBUILD_EVERY == 0:
            incremental = tree[1]
            fill_tree(tree, idx, rates)
            if tree[1] > 0.0:
                rel = abs(tree[1] - incremental) / tree[1]
                if rel > drift:
                    drift = rel
    return (S_rec, I_rec, qv_rec, cross_rec, snaps, jt[:n_jumps], jx[:n_jumps], ji[:n_jumps],
            jz[:n_jumps], events, rejected, drift)
