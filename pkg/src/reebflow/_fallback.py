"""
Pure numpy implementations of the hot loops.

Each routine performs exactly the floating point operations of its compiled
twin in ``_kernels.pyx`` and in the same order, so both backends return
identical arrays for identical inputs.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def poly2d(C, x, y):
    """Nested Horner evaluation of ``sum C[i, j] x**i y**j``."""
    n = C.shape[0]
    acc = np.zeros_like(x)
    for i in range(n - 1, -1, -1):
        row = np.zeros_like(y)
        for j in range(n - 1, -1, -1):
            row = row * y + C[i, j]
        acc = acc * x + row
    return acc


def _terms(C):
    i, j = np.nonzero(C)
    return list(zip(i.tolist(), j.tolist(), C[i, j].tolist()))


def _sparse(terms, n, a, b):
    """``sum c x**i y**j`` over nonzero terms, powers by repeated products."""
    xp = [np.ones_like(a)]
    yp = [np.ones_like(b)]
    for _ in range(1, n):
        xp.append(xp[-1] * a)
        yp.append(yp[-1] * b)
    acc = np.zeros_like(a)
    for i, j, c in terms:
        acc = acc + c * (xp[i] * yp[j])
    return acc


def advect_rk4(Cx, Cy, x, nsub, h):
    """RK4 for ``x' = (H_y, -H_x)`` with ``nsub[p]`` steps of size ``h[p]`` per path.

    ``Cx``, ``Cy`` are the coefficient matrices of ``H_x`` and ``H_y``; only
    their nonzero entries are visited.  ``x`` is updated in place.
    """
    n = Cx.shape[0]
    tx, ty = _terms(np.asarray(Cx)), _terms(np.asarray(Cy))

    def field(a, b):
        return _sparse(ty, n, a, b), -_sparse(tx, n, a, b)

    nmax = int(nsub.max()) if len(nsub) else 0
    for s in range(nmax):
        idx = np.flatnonzero(nsub > s)
        if len(idx) == 0:
            break
        a, b, hh = x[idx, 0], x[idx, 1], h[idx]
        k1a, k1b = field(a, b)
        a2 = a + 0.5 * hh * k1a
        b2 = b + 0.5 * hh * k1b
        k2a, k2b = field(a2, b2)
        a3 = a + 0.5 * hh * k2a
        b3 = b + 0.5 * hh * k2b
        k3a, k3b = field(a3, b3)
        a4 = a + hh * k3a
        b4 = b + hh * k3b
        k4a, k4b = field(a4, b4)
        x[idx, 0] = a + hh / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        x[idx, 1] = b + hh / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)


def ctmc_run(indptr, indices, cum, q, absorb, state, clock, nxt, done, stopped,
             jumps, record, times, E, U, occ, track):
    """Advance every unfinished path by up to ``E.shape[0]`` jumps (in place).

    ``E`` holds unit exponentials and ``U`` uniforms, both ``(iterations, paths)``.
    """
    K = len(times)
    t_end = times[K - 1]
    n_iter = E.shape[0]
    for it in range(n_iter):
        live = np.flatnonzero(done == 0)
        if len(live) == 0:
            return
        i = state[live]
        qi = q[i]
        iso = qi <= 0
        with np.errstate(divide="ignore"):
            tn = np.where(iso, np.inf, clock[live] + E[it, live] / np.where(iso, 1.0, qi))
        while True:
            nx = nxt[live]
            pend = nx < K
            pend[pend] = times[nx[pend]] < tn[pend]
            if not np.any(pend):
                break
            record[live[pend], nx[pend]] = i[pend]
            nxt[live[pend]] += 1
        if track:
            occ[live, i] += np.minimum(tn, t_end) - clock[live]
        fin = nxt[live] == K
        done[live[fin]] = 1
        go = ~fin
        p = live[go]
        if len(p) == 0:
            continue
        clock[p] = tn[go]
        ii = i[go]
        u = U[it, p]
        a = indptr[ii]
        deg = indptr[ii + 1] - a
        off = np.zeros(len(p), dtype=np.int64)
        dmax = int(deg.max())
        for d in range(dmax - 1):
            adv = (off == d) & (d < deg - 1)
            adv[adv] = u[adv] >= cum[a[adv] + d]
            off[adv] += 1
        j = indices[a + off]
        state[p] = j
        jumps[p] += 1
        ab = absorb[j] == 1
        if np.any(ab):
            pa, ja = p[ab], j[ab]
            for r, (pp, jj) in enumerate(zip(pa, ja)):
                record[pp, nxt[pp]:] = jj
                nxt[pp] = K
                if track:
                    occ[pp, jj] += t_end - clock[pp]
            stopped[pa] = 1
            done[pa] = 1
