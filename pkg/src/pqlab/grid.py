"""Structured lattice discretization of discs and squares.

Nodes live on a regular ``(n+1) x (n+1)`` lattice covering the domain's
bounding square.  A cell is active when all four corners lie in the closed
domain; every active cell is split along its ``/`` diagonal into two
triangles carrying piecewise-linear fields.  A node is interior when all four
cells around it are active, otherwise (if active) it is a boundary node.
"""
from dataclasses import dataclass
import math

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import maximum_filter, minimum_filter

from . import kernels


class ResolutionTooCoarse(ValueError):
    pass


class EmptySubdomain(ValueError):
    pass


class RadiusOutsideGrid(ValueError):
    pass


class InsufficientMargin(ValueError):
    pass


class EllipticityViolation(ValueError):
    pass


@dataclass(frozen=True)
class Disc:
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    @property
    def extent(self):
        return 2.0 * self.radius

    @property
    def lower_left(self):
        return (self.center[0] - self.radius, self.center[1] - self.radius)

    def contains(self, X, Y):
        r2 = (X - self.center[0]) ** 2 + (Y - self.center[1]) ** 2
        return r2 <= self.radius ** 2 * (1.0 + 1e-12)

    def describe(self):
        return f"disc {self.center[0]!r} {self.center[1]!r} {self.radius!r}"


@dataclass(frozen=True)
class Square:
    origin: tuple = (0.0, 0.0)
    side: float = 1.0

    @property
    def extent(self):
        return self.side

    @property
    def lower_left(self):
        return tuple(self.origin)

    @property
    def center(self):
        return (self.origin[0] + 0.5 * self.side, self.origin[1] + 0.5 * self.side)

    def contains(self, X, Y):
        return np.ones(np.shape(X), dtype=bool)

    def describe(self):
        return f"square {self.origin[0]!r} {self.origin[1]!r} {self.side!r}"


@dataclass(frozen=True)
class Ball:
    """Open subdomain ``|x - center| < radius``."""

    center: tuple
    radius: float

    def contains(self, pts):
        d = pts - np.asarray(self.center)
        return np.einsum("ij,ij->i", d, d) < self.radius ** 2

    @property
    def area(self):
        return math.pi * self.radius ** 2


@dataclass(frozen=True)
class Annulus:
    center: tuple
    r_in: float
    r_out: float

    def contains(self, pts):
        d = pts - np.asarray(self.center)
        r2 = np.einsum("ij,ij->i", d, d)
        return (r2 >= self.r_in ** 2) & (r2 < self.r_out ** 2)

    @property
    def area(self):
        return math.pi * (self.r_out ** 2 - self.r_in ** 2)


@dataclass
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    tri: np.ndarray


def _cell_samples(ci, cj, m, x0, y0, h):
    """Subcell-midpoint samples of the given cells, ``m x m`` per cell.

    Samples on a cell diagonal are split between both triangles with half
    weight each.
    """
    s = (np.arange(m) + 0.5) / m
    S, T = np.meshgrid(s, s, indexing="ij")
    S, T = S.ravel(), T.ravel()
    w = h * h / (m * m)
    lower = S > T
    diag = S == T
    pts, wts, kinds = [], [], []
    for mask, kind in ((lower | diag, 0), (~lower, 1)):
        ss, tt = S[mask], T[mask]
        weight = np.where(diag[mask], 0.5 * w, w)
        px = x0 + (ci[:, None] + ss[None, :]) * h
        py = y0 + (cj[:, None] + tt[None, :]) * h
        pts.append(np.stack([px.ravel(), py.ravel()], axis=1))
        wts.append(np.broadcast_to(weight, px.shape).ravel())
        kinds.append((kind, px.shape))
    return pts, wts, kinds


class Grid:
    def __init__(self, domain, n, h=None):
        if n < 8:
            raise ResolutionTooCoarse(f"resolution n={n} < 8")
        self.domain = domain
        self.n = int(n)
        self.h = float(domain.extent / n if h is None else h)
        self.origin = domain.lower_left
        x = self.origin[0] + self.h * np.arange(n + 1)
        y = self.origin[1] + self.h * np.arange(n + 1)
        self.X, self.Y = np.meshgrid(x, y, indexing="ij")
        inside = domain.contains(self.X, self.Y)
        ca = inside[:-1, :-1] & inside[1:, :-1] & inside[:-1, 1:] & inside[1:, 1:]
        cnt = np.zeros((n + 1, n + 1), dtype=int)
        for a, b in ((0, 0), (1, 0), (0, 1), (1, 1)):
            cnt[a:a + n, b:b + n] += ca
        self.cell_active = ca
        self.node_active = cnt > 0
        self.interior = cnt == 4
        self.boundary = self.node_active & ~self.interior
        if self.node_active.sum() < 9:
            raise ResolutionTooCoarse(f"only {self.node_active.sum()} active nodes")
        self._quad_cache = {}
        self._build_triangles()

    @property
    def shape(self):
        return self.X.shape

    @property
    def center(self):
        return tuple(self.domain.center)

    @property
    def nodes(self):
        """Coordinates of active nodes in lattice (row-major) order."""
        return np.stack([self.X[self.node_active], self.Y[self.node_active]], axis=1)

    @property
    def node_count(self):
        return int(self.node_active.sum())

    def flat(self, i, j):
        return i * (self.n + 1) + j

    def _build_triangles(self):
        ci, cj = np.nonzero(self.cell_active)
        f = self.flat
        k00, k10, k01, k11 = f(ci, cj), f(ci + 1, cj), f(ci, cj + 1), f(ci + 1, cj + 1)
        # triangle 2c is the lower triangle of cell c, 2c+1 the upper one
        tri = np.empty((2 * ci.size, 3), dtype=np.int64)
        tri[0::2] = np.stack([k00, k10, k11], axis=1)
        tri[1::2] = np.stack([k00, k11, k01], axis=1)
        self.cells = np.stack([ci, cj], axis=1)
        self.triangles = tri
        self.tri_area = 0.5 * self.h * self.h
        T = tri.shape[0]
        N = (self.n + 1) ** 2
        inv = 1.0 / self.h
        rows = np.repeat(np.arange(T), 2)
        # lower: dx = (u10 - u00)/h, dy = (u11 - u10)/h
        # upper: dx = (u11 - u01)/h, dy = (u01 - u00)/h
        cx = np.empty((T, 2), dtype=np.int64)
        cy = np.empty((T, 2), dtype=np.int64)
        cx[0::2] = np.stack([k10, k00], axis=1)
        cy[0::2] = np.stack([k11, k10], axis=1)
        cx[1::2] = np.stack([k11, k01], axis=1)
        cy[1::2] = np.stack([k01, k00], axis=1)
        vals = np.tile([inv, -inv], T)
        self.Gx = sp.csr_matrix((vals, (rows, cx.ravel())), shape=(T, N))
        self.Gy = sp.csr_matrix((vals, (rows, cy.ravel())), shape=(T, N))
        xy = np.stack([self.X.ravel(), self.Y.ravel()], axis=1)
        self.centroids = xy[tri].mean(axis=1)
        ok = self.node_active
        p = np.ones((self.n - 1, self.n - 1), dtype=bool)
        for a in range(3):
            for b in range(3):
                p &= ok[a:a + self.n - 1, b:b + self.n - 1]
        self.patch_ok = p

    def enlarged(self, k):
        """Concentric disc grid with ``k`` extra lattice layers (k may be < 0)."""
        if not isinstance(self.domain, Disc):
            raise TypeError("only disc grids can be enlarged")
        d = Disc(self.domain.center, self.domain.radius + k * self.h)
        return Grid(d, self.n + 2 * k, h=self.h)

    def quadrature(self, sub=4, refine=None, sub_fine=32):
        """Sample rule over all active cells.

        ``refine`` is an optional boolean cell mask whose cells use
        ``sub_fine`` subdivisions instead of ``sub``.
        """
        key = (sub, None if refine is None else refine.tobytes(), sub_fine)
        if refine is None and key in self._quad_cache:
            return self._quad_cache[key]
        cell_id = np.arange(len(self.cells))
        ci, cj = self.cells[:, 0], self.cells[:, 1]
        groups = [(np.ones(len(ci), bool), sub)]
        if refine is not None:
            fine = refine[ci, cj]
            groups = [(~fine, sub), (fine, sub_fine)]
        P, W, Tr = [], [], []
        for mask, m in groups:
            if not mask.any():
                continue
            pts, wts, kinds = _cell_samples(ci[mask], cj[mask], m, self.origin[0],
                                            self.origin[1], self.h)
            for pp, ww, (kind, shp) in zip(pts, wts, kinds):
                P.append(pp)
                W.append(ww)
                Tr.append(np.broadcast_to((2 * cell_id[mask] + kind)[:, None], shp).ravel())
        rule = QuadRule(np.concatenate(P), np.concatenate(W), np.concatenate(Tr))
        if refine is None:
            self._quad_cache[key] = rule
        return rule

    def cell_to_node(self, values):
        """Average triangle values onto nodes over the adjacent triangles."""
        values = np.asarray(values, dtype=float)
        N = (self.n + 1) ** 2
        tail = values.shape[1:]
        acc = np.zeros((N,) + tail)
        cnt = np.zeros(N)
        for c in range(3):
            np.add.at(acc, self.triangles[:, c], values)
            np.add.at(cnt, self.triangles[:, c], 1.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = acc / cnt.reshape((N,) + (1,) * len(tail))
        return out.reshape(self.shape + tail)


def build_grid(domain, n):
    """Lattice grid of ``domain`` with spacing ``extent / n``."""
    return Grid(domain, n)


class ScalarField:
    """Nodal values on a grid; NaN at inactive lattice nodes."""

    def __init__(self, grid, values):
        values = np.array(values, dtype=float).reshape(grid.shape)
        values[~grid.node_active] = np.nan
        if not np.all(np.isfinite(values[grid.node_active])):
            raise ValueError("field values must be finite on active nodes")
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid, f):
        vals = np.full(grid.shape, np.nan)
        m = grid.node_active
        vals[m] = f(grid.X[m], grid.Y[m])
        return cls(grid, vals)

    @property
    def flat(self):
        return self.values.ravel()

    def __call__(self, pts, order=1):
        g = self.grid
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = g.cell_active.astype(np.uint8)
        if order == 1:
            return kernels.sample_p1(self.values, ok, g.origin[0], g.origin[1], g.h, pts)
        if order == 2:
            return kernels.sample_q2(self.values, ok, g.patch_ok.astype(np.uint8),
                                     g.origin[0], g.origin[1], g.h, pts)
        raise ValueError(f"unsupported interpolation order {order}")

    def __add__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        v = np.where(self.grid.node_active, self.values + o, np.nan)
        return ScalarField(self.grid, v)

    def __sub__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        return self + (-o)


class CellField:
    """Piecewise-constant values per triangle (scalar or vector)."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)

    def __call__(self, pts=None, rule=None):
        if rule is not None:
            return self.values[rule.tri]
        raise ValueError("cell fields are sampled through a quadrature rule")

    def magnitude(self):
        if self.values.ndim == 1:
            return CellField(self.grid, np.abs(self.values))
        return CellField(self.grid, np.linalg.norm(self.values, axis=1))


def gradient(u):
    """Per-triangle gradient of a nodal field, shape ``(T, 2)``."""
    g = u.grid
    v = np.nan_to_num(u.flat)
    return CellField(g, np.stack([g.Gx @ v, g.Gy @ v], axis=1))


def _sign_change_cells(u):
    v = u.values
    vmin = np.fmin.reduce([v[:-1, :-1], v[1:, :-1], v[:-1, 1:], v[1:, 1:]])
    vmax = np.fmax.reduce([v[:-1, :-1], v[1:, :-1], v[:-1, 1:], v[1:, 1:]])
    vmin = minimum_filter(np.nan_to_num(vmin, nan=np.inf), size=3, mode="nearest")
    vmax = maximum_filter(np.nan_to_num(vmax, nan=-np.inf), size=3, mode="nearest")
    return (vmin <= 0.0) & (vmax >= 0.0) & u.grid.cell_active


def _samples(u, subdomain, order=1, sub=4, refine_sign_change=False, sub_fine=32):
    g = u.grid
    refine = None
    if refine_sign_change and isinstance(u, ScalarField):
        refine = _sign_change_cells(u)
    rule = g.quadrature(sub, refine=refine, sub_fine=sub_fine)
    mask = np.ones(len(rule.weights), bool) if subdomain is None else subdomain.contains(rule.points)
    if not mask.any():
        raise EmptySubdomain(f"no quadrature samples in {subdomain}")
    if isinstance(u, ScalarField):
        vals = u(rule.points[mask], order=order)
    else:
        vals = u.values[rule.tri[mask]]
    return vals, rule.weights[mask], rule.points[mask]


def _abs(vals):
    return np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=1)


def integrate(u, subdomain=None, transform=None, order=1, sub=4,
              refine_sign_change=False, sub_fine=32):
    """Quadrature of ``transform(u)`` over the covered part of ``subdomain``.

    Returns ``(integral, area)`` where ``area`` is the sampled area.
    """
    vals, w, _ = _samples(u, subdomain, order, sub, refine_sign_change, sub_fine)
    if transform is not None:
        vals = transform(vals)
    return float(w @ vals), float(w.sum())


def lp_norm(u, p, subdomain=None, **kw):
    val, _ = integrate(u, subdomain, transform=lambda v: _abs(v) ** p, **kw)
    return val ** (1.0 / p)


def mean_integral(u, subdomain=None, **kw):
    val, area = integrate(u, subdomain, **kw)
    return val / area


def _nodes_in(u, subdomain):
    g = u.grid
    pts = g.nodes
    vals = u.values[g.node_active]
    if subdomain is not None:
        m = subdomain.contains(pts)
        vals = vals[m]
    return vals


def linf_norm(u, subdomain=None, order=1, sub=4):
    """Max of |u| over quadrature samples (and active nodes, for nodal fields)."""
    vals, _, _ = _samples(u, subdomain, order, sub)
    out = float(np.max(_abs(vals)))
    if isinstance(u, ScalarField):
        nv = _nodes_in(u, subdomain)
        if nv.size:
            out = max(out, float(np.max(np.abs(nv))))
    return out


def sup_value(u, subdomain=None, order=1, sub=4):
    """Signed supremum of a nodal field over a subdomain."""
    vals, _, _ = _samples(u, subdomain, order, sub)
    out = float(np.max(vals))
    nv = _nodes_in(u, subdomain)
    if nv.size:
        out = max(out, float(np.max(nv)))
    return out


def circle_sup(u, r, center=None, order=1):
    """max |u| over the circle of radius r, sampled at max(64, 2 pi r / h) angles."""
    c = u.grid.center if center is None else center
    m = max(64, math.ceil(2 * math.pi * r / u.grid.h))
    th = 2 * math.pi * np.arange(m) / m
    pts = np.stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)], axis=1)
    vals = u(pts, order=order)
    if not np.all(np.isfinite(vals)):
        raise RadiusOutsideGrid(f"circle of radius {r} leaves the grid")
    return float(np.max(np.abs(vals)))


def min_circle_sup(u, rho, sigma, samples=64, center=None, order=1):
    """Scan ``samples`` radii (bin midpoints of (rho, sigma)); return (r*, value)."""
    if not 0 < rho < sigma:
        raise ValueError(f"need 0 < rho < sigma, got {rho}, {sigma}")
    if samples < 8:
        raise ValueError("need at least 8 radii")
    radii = rho + (sigma - rho) * (np.arange(samples) + 0.5) / samples
    vals = [circle_sup(u, r, center, order) for r in radii]
    k = int(np.argmin(vals))
    return float(radii[k]), float(vals[k])


def mollify_field(u, eps, target=None, mollifier=None):
    """Nodal convolution ``u * phi_eps`` evaluated on ``target``.

    By default ``target`` is the concentric disc grid shrunk by
    ``ceil(eps / h + sqrt 2)`` layers, enough for every stencil to stay in
    covered cells.  Raises InsufficientMargin when a mollifier
    stencil leaves the covered region of ``u``.
    """
    from .integrand import default_mollifier

    if not eps > 0:
        raise ValueError("eps must be > 0")
    mol = mollifier or default_mollifier()
    g = u.grid
    if target is None:
        k = math.ceil(eps / g.h + math.sqrt(2.0))
        if g.n - 2 * k < 8:
            raise InsufficientMargin("eps-shrunk domain is empty")
        target = g.enlarged(-k)
    nodes, w = mol.rule(eps)
    X = target.nodes
    out = np.empty(len(X))
    step = max(1, (1 << 20) // len(w))
    for lo in range(0, len(X), step):
        pts = (X[lo:lo + step, None, :] - nodes[None]).reshape(-1, 2)
        vals = u(pts).reshape(-1, len(w))
        if not np.all(np.isfinite(vals)):
            raise InsufficientMargin(f"mollifier of radius {eps} leaves the source grid")
        out[lo:lo + step] = vals @ w
    vals = np.full(target.shape, np.nan)
    vals[target.node_active] = out
    return ScalarField(target, vals)


class CoefficientField:
    """Symmetric 2x2 matrix per node with ellipticity bounds [nu, lambda_up]."""

    def __init__(self, grid, a11, a12, a22, nu, lambda_up):
        shp = grid.shape
        self.grid = grid
        self.a11 = np.broadcast_to(np.asarray(a11, dtype=float), shp).copy()
        self.a12 = np.broadcast_to(np.asarray(a12, dtype=float), shp).copy()
        self.a22 = np.broadcast_to(np.asarray(a22, dtype=float), shp).copy()
        self.nu, self.lambda_up = float(nu), float(lambda_up)

    @classmethod
    def diagonal(cls, grid, a11, a22, nu, lambda_up):
        return cls(grid, a11, 0.0, a22, nu, lambda_up)

    @property
    def is_diagonal(self):
        return not np.any(self.a12[self.grid.node_active])

    def eigenvalues(self):
        m = self.grid.node_active
        a, b, c = self.a11[m], self.a12[m], self.a22[m]
        mid, rad = 0.5 * (a + c), np.hypot(0.5 * (a - c), b)
        return mid - rad, mid + rad

    def validate(self, rtol=1e-12):
        lo, hi = self.eigenvalues()
        tol = rtol * self.lambda_up
        if lo.min() < self.nu - tol or hi.max() > self.lambda_up + tol:
            raise EllipticityViolation(
                f"eigenvalues in [{lo.min():.6g}, {hi.max():.6g}] outside "
                f"[{self.nu:.6g}, {self.lambda_up:.6g}]")
        return self


def save_field(u, path):
    """Write a field as text: '#' header rows, then index,x1,x2,value per node."""
    g = u.grid
    idx = np.flatnonzero(g.node_active.ravel())
    lines = ["# pqlab-field v1", f"# domain {g.domain.describe()}", f"# n {g.n}",
             f"# h {g.h!r}", "index,x1,x2,value"]
    X, Y, V = g.X.ravel(), g.Y.ravel(), u.flat
    lines += [f"{k},{X[k]:.17g},{Y[k]:.17g},{V[k]:.17g}" for k in idx]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path):
    header = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) >= 2:
                    header[parts[0]] = parts[1:]
            elif line and not line.startswith("index"):
                rows.append(line.split(","))
    kind, *nums = header["domain"]
    nums = [float(x) for x in nums]
    if kind == "disc":
        domain = Disc((nums[0], nums[1]), nums[2])
    elif kind == "square":
        domain = Square((nums[0], nums[1]), nums[2])
    else:
        raise ValueError(f"unknown domain kind {kind!r}")
    g = Grid(domain, int(header["n"][0]), h=float(header["h"][0]))
    vals = np.full(g.shape, np.nan).ravel()
    for r in rows:
        vals[int(r[0])] = float(r[3])
    return ScalarField(g, vals)
