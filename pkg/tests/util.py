"""Shared test oracles, kept deliberately independent of the library paths.

The finite-difference gradient oracle and the plain-loop re-evaluators here
are the reference side of every dual-route check; they must stay naive.
"""

import numpy as np


def fd_grad_store(f, store, h=1e-4, indices=None):
    """Central finite differences of scalar f() w.r.t. a ParamStore's values."""
    idx = range(store.values.size) if indices is None else indices
    g = np.zeros_like(store.values)
    for i in idx:
        old = store.values[i]
        store.values[i] = old + h
        fp = f()
        store.values[i] = old - h
        fm = f()
        store.values[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def fd_grad_array(f, x, h=1e-4):
    """Central finite differences of scalar f(x) w.r.t. a plain array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_close_rel(analytic, numeric, rtol=1e-4, floor=1.0):
    """|a - n| <= rtol * (floor + |n|), the spec's relative-gradient gate."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    bound = rtol * (floor + np.abs(numeric))
    worst = np.max(err - bound)
    assert worst <= 0.0, (
        f"gradient mismatch: max violation {worst:.3e}, "
        f"worst err {err.max():.3e} vs bound {bound[np.unravel_index(np.argmax(err - bound), err.shape)]:.3e}"
    )


def point_triangle_distance_reference(p, a, b, c):
    """Exact point-triangle distance by plane projection plus edge minima.

    Independent of the library's Voronoi-region walk: project onto the
    triangle plane, accept if the barycentric coordinates are inside,
    otherwise take the minimum over the three edge segments.
    """
    p, a, b, c = (np.asarray(v, dtype=np.float64) for v in (p, a, b, c))
    n = np.cross(b - a, c - a)
    nn = n @ n
    if nn > 0:
        proj = p - ((p - a) @ n / nn) * n
        # barycentric coordinates of the projection
        v0, v1, v2 = b - a, c - a, proj - a
        d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
        d20, d21 = v2 @ v0, v2 @ v1
        den = d00 * d11 - d01 * d01
        if den > 0:
            v = (d11 * d20 - d01 * d21) / den
            w = (d00 * d21 - d01 * d20) / den
            if v >= 0 and w >= 0 and v + w <= 1:
                return float(np.linalg.norm(p - proj))
    best = np.inf
    for q0, q1 in ((a, b), (b, c), (c, a)):
        d = q1 - q0
        dd = d @ d
        t = 0.0 if dd == 0 else min(1.0, max(0.0, (p - q0) @ d / dd))
        best = min(best, float(np.linalg.norm(p - (q0 + t * d))))
    return best
