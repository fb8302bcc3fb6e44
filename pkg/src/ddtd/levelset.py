"""Level-set normalization of generated density fields.

A density field is turned into a level set (``phi = 2 rho - 1``), its zero
contour is extracted (marching squares in 2D, marching tetrahedra in 3D) and
the level set is rebuilt as the exact signed distance to that contour. A
quintic smoothed Heaviside of half-width ``h`` then maps distance back to
density, so the result is exactly 0 or 1 outside a band of width ``2h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from .field import DensityField, Mesh

NO_INTERFACE_DISTANCE = 1e10


@dataclass(frozen=True, eq=False)
class LevelSetField:
    mesh: Mesh
    values: np.ndarray
    has_interface: bool = True

    def grid(self) -> np.ndarray:
        return np.asarray(self.values).reshape(self.mesh.node_shape[::-1])


def density_to_levelset(field: DensityField) -> LevelSetField:
    return LevelSetField(field.mesh, 2.0 * np.clip(field.values, 0.0, 1.0) - 1.0)


def _quintic(s):
    return 0.5 + (15.0 / 16.0) * s - (5.0 / 8.0) * s**3 + (3.0 / 16.0) * s**5


def smoothed_heaviside(phi, h: float):
    """0 below ``-h``, 1 above ``h``, quintic in between. Works elementwise."""
    if not h > 0:
        raise ValueError(f"band half-width must be positive, got {h}")
    phi = np.asarray(phi, dtype=float)
    out = np.where(phi > h, 1.0, 0.0)
    band = np.abs(phi) <= h
    out[band] = _quintic(phi[band] / h)
    return out if out.ndim else float(out)


_S_TABLE = np.linspace(-1.0, 1.0, 4097)
_Q_TABLE = 2.0 * _quintic(_S_TABLE) - 1.0


def _profile_inverse(phi):
    """Invert ``phi = 2 H(s h) - 1`` for ``s`` in [-1, 1].

    Table lookup followed by safeguarded Newton steps; the profile is flat
    at the ends, so those points keep the bracketing table value.
    """
    target = np.clip(np.asarray(phi, dtype=float), -1.0, 1.0)
    s = np.interp(target, _Q_TABLE, _S_TABLE)
    step = _S_TABLE[1] - _S_TABLE[0]
    lo, hi = np.maximum(s - step, -1.0), np.minimum(s + step, 1.0)
    for _ in range(4):
        slope = (15.0 / 8.0) * (1.0 - s * s) ** 2
        ok = slope > 1e-12
        s_new = s - np.where(ok, (2.0 * _quintic(s) - 1.0 - target) / np.where(ok, slope, 1.0), 0.0)
        s = np.clip(s_new, lo, hi)
    return s


def _crossing(pa, pb, va, vb):
    t = va / (va - vb)
    return pa + t[:, None] * (pb - pa)


# -- contour extraction ------------------------------------------------------

def _contour_2d(mesh: Mesh, psi: np.ndarray, positive: np.ndarray):
    """Segments of the zero contour, shape (n_segments, 2, 2)."""
    nx, ny = mesh.dims
    L = mesh.element_length
    P = positive.reshape(ny + 1, nx + 1)
    V = psi.reshape(ny + 1, nx + 1)
    xs = np.arange(nx + 1) * L
    ys = np.arange(ny + 1) * L

    def edge_points(va, vb, pa, pb):
        out = np.full(va.shape + (2,), np.nan)
        hit = (va > 0) != (vb > 0)
        # sign flags, not raw values, decide crossings so phi == 0 counts as void
        a = np.where(hit, va, 0.0)
        b = np.where(hit, vb, 1.0)
        t = np.where(hit, a / np.where(hit, a - b, 1.0), 0.0)
        out[...] = pa + t[..., None] * (pb - pa)
        out[~hit] = np.nan
        return out

    # horizontal edges (i, j)-(i+1, j) and vertical edges (i, j)-(i, j+1)
    Xg, Yg = np.meshgrid(xs, ys)
    nodes = np.stack([Xg, Yg], axis=-1)
    Vs = np.where(P, np.maximum(V, np.finfo(float).tiny), np.minimum(V, 0.0))
    H = edge_points(Vs[:, :-1], Vs[:, 1:], nodes[:, :-1], nodes[:, 1:])
    W = edge_points(Vs[:-1, :], Vs[1:, :], nodes[:-1, :], nodes[1:, :])

    # per cell: bottom, right, top, left
    edges = np.stack([H[:-1, :], W[:, 1:], H[1:, :], W[:, :-1]], axis=2).reshape(-1, 4, 2)
    hit = ~np.isnan(edges[..., 0])
    count = hit.sum(axis=1)

    segs = []
    two = np.flatnonzero(count == 2)
    if two.size:
        idx = np.argsort(~hit[two], axis=1, kind="stable")[:, :2]
        segs.append(np.stack([edges[two, idx[:, 0]], edges[two, idx[:, 1]]], axis=1))
    four = np.flatnonzero(count == 4)
    if four.size:
        corners = np.stack([Vs[:-1, :-1], Vs[:-1, 1:], Vs[1:, 1:], Vs[1:, :-1]], axis=2).reshape(-1, 4)
        center_pos = corners[four].mean(axis=1) > 0
        c00_pos = corners[four, 0] > 0
        isolate_10_01 = center_pos == c00_pos
        e = edges[four]
        first = np.where(isolate_10_01[:, None, None], e[:, [0, 1]], e[:, [0, 3]])
        second = np.where(isolate_10_01[:, None, None], e[:, [3, 2]], e[:, [1, 2]])
        segs.extend([first, second])
    if not segs:
        return np.zeros((0, 2, 2))
    return np.concatenate(segs, axis=0)


_HEX_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
])
# six tetrahedra around the 0-6 diagonal; neighbouring cubes split shared faces identically
_HEX_TETS = np.array([(0, 1, 2, 6), (0, 2, 3, 6), (0, 3, 7, 6), (0, 7, 4, 6), (0, 4, 5, 6), (0, 5, 1, 6)])
_TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _tet_table():
    edge_id = {frozenset(e): i for i, e in enumerate(_TET_EDGES)}
    table = {}
    for mask in range(16):
        pos = [v for v in range(4) if mask >> v & 1]
        neg = [v for v in range(4) if not mask >> v & 1]
        if len(pos) in (0, 4):
            table[mask] = []
        elif len(pos) == 1 or len(neg) == 1:
            lone, others = (pos[0], neg) if len(pos) == 1 else (neg[0], pos)
            table[mask] = [[edge_id[frozenset((lone, o))] for o in others]]
        else:
            (a, b), (c, d) = pos, neg
            ac, ad, bd, bc = (edge_id[frozenset(e)] for e in ((a, c), (a, d), (b, d), (b, c)))
            table[mask] = [[ac, ad, bd], [ac, bd, bc]]
    return table


_TET_TABLE = _tet_table()


def _contour_3d(mesh: Mesh, psi: np.ndarray, positive: np.ndarray):
    """Triangles of the zero contour, shape (n_triangles, 3, 3)."""
    conn = mesh.element_nodes()  # local order matches _HEX_CORNERS
    xyz = mesh.node_coordinates()
    Vs = np.where(positive, np.maximum(psi, np.finfo(float).tiny), np.minimum(psi, 0.0))
    tets = conn[:, _HEX_TETS].reshape(-1, 4)
    pos = positive[tets]
    mask = (pos * (1 << np.arange(4))).sum(axis=1)
    active = (mask != 0) & (mask != 15)
    tets, mask = tets[active], mask[active]
    tris = []
    for m in np.unique(mask):
        sel = tets[mask == m]
        for tri in _TET_TABLE[int(m)]:
            pts = []
            for e in tri:
                a, b = _TET_EDGES[e]
                na, nb = sel[:, a], sel[:, b]
                pts.append(_crossing(xyz[na], xyz[nb], Vs[na], Vs[nb]))
            tris.append(np.stack(pts, axis=1))
    if not tris:
        return np.zeros((0, 3, 3))
    return np.concatenate(tris, axis=0)


def extract_contour(phi: LevelSetField, h: float | None = None) -> np.ndarray:
    """Zero-contour facets: segments in 2D, triangles in 3D.

    Crossings on grid edges are interpolated linearly in ``phi`` when ``h`` is
    None. With ``h`` given, ``phi`` is read as ``2 H(d) - 1`` and crossings are
    interpolated linearly in the recovered distance ``d``; for binary inputs
    the two coincide, and it makes normalization reproduce its own output.
    """
    mesh = phi.mesh
    values = np.asarray(phi.values, dtype=float)
    positive = values > 0
    psi = values if h is None else _profile_inverse(values)
    if mesh.dimensionality == 2:
        return _contour_2d(mesh, psi, positive)
    return _contour_3d(mesh, psi, positive)


def _on_face(points, extent, tol):
    """Boolean ``(n, dim, 2)``: point lies on the low / high face of each axis."""
    return np.stack([np.abs(points) <= tol, np.abs(points - extent) <= tol], axis=-1)


def extend_to_exterior(facets: np.ndarray, mesh: Mesh, length: float) -> np.ndarray:
    """Facets continuing the contour straight past the domain boundary.

    A segment (2D) or triangle edge (3D) ending on a boundary face is
    prolonged outward along its own direction by ``length``, so that nodes
    near the boundary see the interface continue instead of ending there.
    """
    L = mesh.element_length
    extent = np.array(mesh.dims, dtype=float) * L
    tol = 1e-9 * L
    dim = mesh.dimensionality
    if len(facets) == 0:
        return facets[:0]
    if dim == 2:
        starts, ends = [facets[:, 0], facets[:, 1]], [facets[:, 1], facets[:, 0]]
        out = []
        for p, q in zip(starts, ends):
            # extend from q through p when p sits on a face and the segment leaves through it
            direction = p - q
            norm = np.linalg.norm(direction, axis=1)
            face = _on_face(p, extent, tol)
            outward = (face[..., 0] & (direction < -tol)) | (face[..., 1] & (direction > tol))
            sel = outward.any(axis=1) & (norm > 0)
            if sel.any():
                tip = p[sel] + length * direction[sel] / norm[sel, None]
                out.append(np.stack([p[sel], tip], axis=1))
        return np.concatenate(out) if out else facets[:0]
    # 3D: local surface normal from an area-weighted structure tensor of the
    # triangles around each boundary edge (sign-free, robust to slivers)
    cross = np.cross(facets[:, 1] - facets[:, 0], facets[:, 2] - facets[:, 0])
    tensor = np.einsum("ti,tj->tij", cross, cross) / np.maximum(np.linalg.norm(cross, axis=1), 1e-300)[:, None, None]
    tree = cKDTree(facets.mean(axis=1))
    out = []
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a, b = facets[:, i], facets[:, j]
        shared = _on_face(a, extent, tol) & _on_face(b, extent, tol)
        for axis in range(dim):
            for side, sgn in ((0, -1.0), (1, 1.0)):
                sel = np.flatnonzero(shared[:, axis, side] & (np.linalg.norm(b - a, axis=1) > tol))
                if sel.size == 0:
                    continue
                mids = 0.5 * (a[sel] + b[sel])
                near = tree.query_ball_point(mids, 1.5 * L)
                outward = np.zeros(dim)
                outward[axis] = sgn
                for e, nb in zip(sel, near):
                    _, vecs = np.linalg.eigh(tensor[nb].sum(axis=0))
                    normal = vecs[:, -1]
                    direction = outward - (outward @ normal) * normal
                    size = np.linalg.norm(direction)
                    if size < 1e-6:
                        continue
                    shift = length * direction / size
                    out.append([a[e], b[e], b[e] + shift])
                    out.append([a[e], b[e] + shift, a[e] + shift])
    return np.array(out) if out else facets[:0]


# -- distances ---------------------------------------------------------------

def _dist_point_segment(p, a, b):
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(np.where(denom > 0, t, 0.0), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def _dist_point_triangle(p, a, b, c):
    v0, v1, v2 = b - a, c - a, p - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    denom = d00 * d11 - d01 * d01
    ok = denom > 1e-14 * d00 * d11
    safe = np.where(ok, denom, 1.0)
    v = (d11 * d20 - d01 * d21) / safe
    w = (d00 * d21 - d01 * d20) / safe
    inside = ok & (v >= 0) & (w >= 0) & (v + w <= 1)
    n = np.cross(v0, v1)
    nn = np.linalg.norm(n, axis=1)
    plane = np.abs(np.einsum("ij,ij->i", v2, n)) / np.where(nn > 0, nn, 1.0)
    edge = np.minimum(np.minimum(_dist_point_segment(p, a, b), _dist_point_segment(p, b, c)),
                      _dist_point_segment(p, c, a))
    return np.where(inside, plane, edge)


def distance_to_facets(points: np.ndarray, facets: np.ndarray, cutoff: float | None = None):
    """Unsigned distance from each point to the nearest facet.

    Facet centroids go into a KD-tree; the nearest centroid bounds the true
    distance from above, and only facets whose centroid lies within that bound
    plus the largest facet radius are tested exactly. Points certainly farther
    than ``cutoff`` get their centroid distance instead of the exact value.
    """
    centroids = facets.mean(axis=1)
    radius = float(np.max(np.linalg.norm(facets - centroids[:, None, :], axis=2)))
    tree = cKDTree(centroids)
    d0, _ = tree.query(points)
    result = d0.copy()
    todo = np.arange(len(points))
    if cutoff is not None:
        todo = todo[d0 - radius <= cutoff]
    if todo.size == 0:
        return result
    candidates = tree.query_ball_point(points[todo], d0[todo] + radius + 1e-12)
    lengths = np.fromiter((len(c) for c in candidates), dtype=int, count=todo.size)
    pt = np.repeat(todo, lengths)
    fc = np.concatenate([np.asarray(c, dtype=int) for c in candidates])
    if facets.shape[1] == 2:
        d = _dist_point_segment(points[pt], facets[fc, 0], facets[fc, 1])
    else:
        d = _dist_point_triangle(points[pt], facets[fc, 0], facets[fc, 1], facets[fc, 2])
    best = np.full(len(points), np.inf)
    np.minimum.at(best, pt, d)
    result[todo] = best[todo]
    return result


def reinitialize(phi: LevelSetField, h: float | None = None, cutoff: float | None = None) -> LevelSetField:
    """Rebuild ``phi`` as the signed distance to its zero contour.

    Positive where the input is positive. The contour is continued past the
    domain boundary (see :func:`extend_to_exterior`), so nodes
    near the boundary measure distance to the extended interface. A field
    without any sign change inside the domain gets
    ``+-NO_INTERFACE_DISTANCE`` everywhere and ``has_interface=False``.
    ``h`` selects profile-consistent crossing interpolation (see
    :func:`extract_contour`); ``cutoff`` skips exact distances for nodes
    certainly farther than it.
    """
    values = np.asarray(phi.values, dtype=float)
    sign = np.where(values > 0, 1.0, -1.0)
    facets = extract_contour(phi, h)
    if len(facets) == 0:
        return LevelSetField(phi.mesh, sign * NO_INTERFACE_DISTANCE, has_interface=False)
    reach = 2.0 * max(h or 0.0, phi.mesh.element_length)
    facets = np.concatenate([facets, extend_to_exterior(facets, phi.mesh, reach)])
    dist = distance_to_facets(phi.mesh.node_coordinates(), facets, cutoff)
    return LevelSetField(phi.mesh, sign * dist)


def normalize_field(field: DensityField, h: float = 0.01) -> DensityField:
    """Clamp, convert to a level set, reinitialize, and apply the smoothed Heaviside."""
    if not h > 0:
        raise ValueError(f"band half-width must be positive, got {h}")
    dist = reinitialize(density_to_levelset(field), h=h, cutoff=h)
    return DensityField(field.mesh, smoothed_heaviside(dist.values, h))


class LevelSetNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer normalizing rows of nodal densities on ``mesh``."""

    def __init__(self, mesh=None, h=0.01):
        self.mesh = mesh
        self.h = h

    def fit(self, X, y=None):
        if self.mesh is None:
            raise ValueError("LevelSetNormalizer needs a mesh")
        self.n_features_in_ = self.mesh.n_nodes
        return self

    def transform(self, X):
        if self.mesh is None:
            raise ValueError("LevelSetNormalizer needs a mesh")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.mesh.n_nodes:
            raise ValueError(f"rows have {X.shape[1]} entries, mesh has {self.mesh.n_nodes} nodes")
        return np.stack([normalize_field(DensityField(self.mesh, row), self.h).values for row in X])
