"""Deterministic stencil engine for exact probability-mass evolution on a disc.

The update is a gather: ``new[y] = sum_z p(z) old[y - z]``, accumulated row by
row in a fixed term order.  Rows are independent, so a parallel row loop
gives bit-identical output for any thread count.  Symmetric laws are
accumulated in (z, -z) pairs, which makes the evolution of a centrally
symmetric initial condition bitwise centrally symmetric.
"""
from __future__ import annotations

import os

import numba
import numpy as np

# The TBB layer is probed first by default and warns when the system TBB is
# too old.  Row updates are independent, so any layer gives the same bits.
if numba.config.THREADING_LAYER == "default":
    try:
        from numba.np.ufunc import omppool  # noqa: F401

        numba.config.THREADING_LAYER = "omp"
    except ImportError:
        numba.config.THREADING_LAYER = "workqueue"

from .model import StepLaw


def configure_threads() -> int:
    """Apply LATWALK_THREADS (capped at what numba was started with)."""
    limit = numba.config.NUMBA_NUM_THREADS
    want = os.environ.get("LATWALK_THREADS")
    n = limit if not want else max(1, min(int(want), limit))
    numba.set_num_threads(n)
    return n


def stencil_terms(law: StepLaw):
    """Split the support into (z, -z) pairs of equal weight and singletons.

    Returns arrays (w, dx_a, dy_a, dx_b, dy_b, paired) in a canonical order.
    """
    table = {tuple(z): w for (z, _), w in zip(law.support, law.weights)}
    done = set()
    terms = []
    for z in sorted(table):
        if z in done:
            continue
        neg = (-z[0], -z[1])
        if neg != z and table.get(neg) == table[z]:
            terms.append((float(table[z]), z[0], z[1], neg[0], neg[1], 1))
            done.update((z, neg))
        else:
            terms.append((float(table[z]), z[0], z[1], 0, 0, 0))
            done.add(z)
    arr = np.array(terms, dtype=np.float64)
    return (
        arr[:, 0].copy(),
        arr[:, 1].astype(np.int64),
        arr[:, 2].astype(np.int64),
        arr[:, 3].astype(np.int64),
        arr[:, 4].astype(np.int64),
        arr[:, 5].astype(np.int64),
    )


@numba.njit(cache=True, parallel=True, boundscheck=False)
def _step(cur, nxt, tw, tax, tay, tbx, tby, tpair, jlo, jhi, ilo, ihi, slo, shi):
    for i in numba.prange(ilo, ihi + 1):
        lo = max(jlo[i], slo)
        hi = min(jhi[i], shi)
        if lo > hi:
            continue
        m = hi - lo + 1
        row = nxt[i, lo:hi + 1]
        for j in range(m):
            row[j] = 0.0
        for t in range(tw.shape[0]):
            w = tw[t]
            a = cur[i - tax[t], lo - tay[t]:hi + 1 - tay[t]]
            if tpair[t] == 1:
                b = cur[i - tbx[t], lo - tby[t]:hi + 1 - tby[t]]
                for j in range(m):
                    row[j] += w * (a[j] + b[j])
            else:
                for j in range(m):
                    row[j] += w * a[j]


@numba.njit(cache=True)
def _evolve(cur, nxt, n_steps, t0, tw, tax, tay, tbx, tby, tpair, jlo, jhi, disc_ilo, disc_ihi,
            si, sj, reach_step, leak_i, leak_j, leak_w, kill_i, kill_j, probe_i, probe_j,
            snap_times, snaps, log_rows):
    """Advance ``cur`` by ``n_steps``; times are counted from ``t0``.

    Returns (leak per step, kill log, probe traces, final buffer).  Row k of
    the outputs refers to time t0 + k.  ``log_rows`` caps the per-point kill
    log; beyond it only the per-step killed total is kept (column 0 of the
    marginal array).
    """
    nk = kill_i.shape[0]
    leak = np.zeros(n_steps + 1)
    klog = np.zeros((min(n_steps, log_rows) + 1, nk))
    kmarg = np.zeros(n_steps + 1)
    probes = np.zeros((n_steps + 1, probe_i.shape[0]))
    for p in range(probe_i.shape[0]):
        probes[0, p] = cur[probe_i[p], probe_j[p]]
    s_idx = 0
    while s_idx < snap_times.shape[0] and snap_times[s_idx] == t0:
        snaps[s_idx, :, :] = cur
        s_idx += 1
    for k in range(1, n_steps + 1):
        s = 0.0
        for b in range(leak_w.shape[0]):
            s += cur[leak_i[b], leak_j[b]] * leak_w[b]
        leak[k] = s
        r = reach_step * (t0 + k)
        ilo = max(disc_ilo, si - r)
        ihi = min(disc_ihi, si + r)
        _step(cur, nxt, tw, tax, tay, tbx, tby, tpair, jlo, jhi, ilo, ihi, sj - r, sj + r)
        tot = 0.0
        for a in range(nk):
            v = nxt[kill_i[a], kill_j[a]]
            if k < klog.shape[0]:
                klog[k, a] = v
            tot += v
            nxt[kill_i[a], kill_j[a]] = 0.0
        kmarg[k] = tot
        for p in range(probe_i.shape[0]):
            probes[k, p] = nxt[probe_i[p], probe_j[p]]
        while s_idx < snap_times.shape[0] and snap_times[s_idx] == t0 + k:
            snaps[s_idx, :, :] = nxt
            s_idx += 1
        cur, nxt = nxt, cur
    return leak, klog, kmarg, probes, cur
