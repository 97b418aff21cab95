"""Pure numpy implementations of the hot kernels.

These mirror ``pqlab._ckernels`` exactly (same signatures, same NaN
conventions) and are used when the compiled extension is unavailable or
``PQLAB_BACKEND=python`` is set.
"""
import numpy as np

# Upper bound on the number of (point, node) pairs materialized at once by
# the mollified evaluation.
_CHUNK_PAIRS = 1 << 20


def _accumulate(x, y, H, s, c, order, val, gx, gy, h11, h12, h22, w=None):
    if c == 0.0:
        return
    pos = H > 0.0
    Hs = np.where(pos, np.power(np.where(pos, H, 1.0), 0.5 * s), 0.0)
    if w is None:
        val += c * Hs
    else:
        val += (c * Hs) @ w
    if order < 1:
        return
    Hsafe = np.where(pos, H, 1.0)
    d1 = np.where(pos, c * s * Hs / Hsafe, 0.0)
    if order >= 2:
        # limit of c*s*H^{s/2-1} at H = 0; infinite for s < 2
        at0 = 2.0 * c if s == 2.0 else (0.0 if s > 2.0 else np.inf)
        d1h = np.where(pos, d1, at0)
        d2 = np.where(pos, c * s * (s - 2.0) * Hs / (Hsafe * Hsafe), 0.0)
    if w is None:
        gx += d1 * x
        gy += d1 * y
        if order >= 2:
            h11 += d1h + d2 * x * x
            h12 += d2 * x * y
            h22 += d1h + d2 * y * y
    else:
        gx += (d1 * x) @ w
        gy += (d1 * y) @ w
        if order >= 2:
            h11 += (d1h + d2 * x * x) @ w
            h12 += (d2 * x * y) @ w
            h22 += (d1h + d2 * y * y) @ w


def _pack(val, gx, gy, h11, h12, h22, order):
    out = [val]
    if order >= 1:
        out.append(np.stack([gx, gy], axis=1))
    if order >= 2:
        out.append(np.stack([h11, h12, h22], axis=1))
    return tuple(out)


def pq_eval(z, mu, p, q, a, b, order=2):
    """a*H^{p/2} + b*H^{q/2} with H = mu^2 + |z|^2, plus derivatives.

    Returns ``(value,)``, ``(value, grad)`` or ``(value, grad, hess)`` with
    the Hessian packed as columns (h11, h12, h22).
    """
    z = np.ascontiguousarray(z, dtype=float)
    n = z.shape[0]
    x, y = z[:, 0], z[:, 1]
    H = mu * mu + x * x + y * y
    val = np.zeros(n)
    gx, gy, h11, h12, h22 = (np.zeros(n) for _ in range(5))
    for s, c in ((p, a), (q, b)):
        _accumulate(x, y, H, s, c, order, val, gx, gy, h11, h12, h22)
    return _pack(val, gx, gy, h11, h12, h22, order)


def pq_mollified(z, nodes, weights, mu, p, q, a, b, order=2):
    """Quadrature convolution sum_k w_k f(z - y_k) of the model density."""
    z = np.ascontiguousarray(z, dtype=float)
    nodes = np.ascontiguousarray(nodes, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    n, m = z.shape[0], nodes.shape[0]
    val = np.zeros(n)
    gx, gy, h11, h12, h22 = (np.zeros(n) for _ in range(5))
    step = max(1, _CHUNK_PAIRS // max(m, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        x = z[lo:hi, 0, None] - nodes[None, :, 0]
        y = z[lo:hi, 1, None] - nodes[None, :, 1]
        H = mu * mu + x * x + y * y
        parts = [arr[lo:hi] for arr in (val, gx, gy, h11, h12, h22)]
        for s, c in ((p, a), (q, b)):
            _accumulate(x, y, H, s, c, order, *parts, w=weights)
    return _pack(val, gx, gy, h11, h12, h22, order)


def _locate(pts, x0, y0, h, nx, ny):
    fx = (pts[:, 0] - x0) / h
    fy = (pts[:, 1] - y0) / h
    i = np.floor(fx).astype(np.int64)
    j = np.floor(fy).astype(np.int64)
    # points on the far edge belong to the last cell
    i = np.where((i == nx) & (fx == nx), nx - 1, i)
    j = np.where((j == ny) & (fy == ny), ny - 1, j)
    inside = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
    return fx, fy, i, j, inside


def sample_p1(values, cell_ok, x0, y0, h, pts):
    """Piecewise-linear interpolation on the '/'-split lattice triangulation.

    Points outside every active cell get NaN.
    """
    pts = np.ascontiguousarray(pts, dtype=float)
    nx, ny = cell_ok.shape
    fx, fy, i, j, inside = _locate(pts, x0, y0, h, nx, ny)
    out = np.full(pts.shape[0], np.nan)
    ic, jc = i[inside], j[inside]
    ok = cell_ok[ic, jc].astype(bool)
    idx = np.flatnonzero(inside)[ok]
    ic, jc = ic[ok], jc[ok]
    s = fx[idx] - ic
    t = fy[idx] - jc
    u00 = values[ic, jc]
    u10 = values[ic + 1, jc]
    u01 = values[ic, jc + 1]
    u11 = values[ic + 1, jc + 1]
    lower = s >= t
    out[idx] = np.where(
        lower,
        u00 + s * (u10 - u00) + t * (u11 - u10),
        u00 + t * (u01 - u00) + s * (u11 - u01),
    )
    return out


def _lagrange3(xi):
    return np.stack([0.5 * (xi - 1.0) * (xi - 2.0), -xi * (xi - 2.0),
                     0.5 * xi * (xi - 1.0)], axis=-1)


def sample_q2(values, cell_ok, patch_ok, x0, y0, h, pts):
    """Biquadratic interpolation on 3x3 node patches.

    ``patch_ok[i0, j0]`` flags patches whose nine nodes are all active.  The
    patch nearest the point is preferred; cells with no valid patch fall back
    to :func:`sample_p1`.  Reproduces quadratic polynomials exactly.
    """
    pts = np.ascontiguousarray(pts, dtype=float)
    nx, ny = cell_ok.shape
    fx, fy, i, j, inside = _locate(pts, x0, y0, h, nx, ny)
    out = np.full(pts.shape[0], np.nan)
    good = inside.copy()
    good[inside] = cell_ok[i[inside], j[inside]].astype(bool)
    idx = np.flatnonzero(good)
    ic, jc = i[idx], j[idx]
    s = fx[idx] - ic
    t = fy[idx] - jc
    pi = np.where(s < 0.5, ic - 1, ic)
    pj = np.where(t < 0.5, jc - 1, jc)
    ai = np.where(s < 0.5, ic, ic - 1)
    aj = np.where(t < 0.5, jc, jc - 1)
    mi, mj = patch_ok.shape
    i0 = np.full(idx.size, -1)
    j0 = np.full(idx.size, -1)
    for ci, cj in ((pi, pj), (ai, pj), (pi, aj), (ai, aj)):
        valid = (i0 < 0) & (ci >= 0) & (ci < mi) & (cj >= 0) & (cj < mj)
        valid[valid] = patch_ok[ci[valid], cj[valid]].astype(bool)
        i0 = np.where(valid, ci, i0)
        j0 = np.where(valid, cj, j0)
    has = i0 >= 0
    if has.any():
        k = idx[has]
        lx = _lagrange3(fx[k] - i0[has])
        ly = _lagrange3(fy[k] - j0[has])
        acc = np.zeros(k.size)
        for a in range(3):
            for b in range(3):
                acc += lx[:, a] * ly[:, b] * values[i0[has] + a, j0[has] + b]
        out[k] = acc
    if (~has).any():
        k = idx[~has]
        out[k] = sample_p1(values, cell_ok, x0, y0, h, pts[k])
    return out
