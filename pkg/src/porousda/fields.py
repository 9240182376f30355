"""Piecewise-bilinear fields on structured meshes and their quadrature.

Two field types: NodalField is continuous with one value per vertex, DGField
is discontinuous with four corner values per element.  All area integrals use
the same rule everywhere in the package: 2x2 Gauss points on each quadrant of
each element (16 points per element), so that control-volume integrals and
element integrals are built from the identical point set.  Surface integrals
on control-volume faces use the midpoint rule per sub-segment.
"""

import numpy as np

from .mesh import SEG_LOCAL_MID, SEG_NORMAL_AXIS

_G = 0.5 / np.sqrt(3.0)


def basis_values(xi, eta):
    """Bilinear basis on the unit square, corner order SW, SE, NW, NE."""
    xi = np.asarray(xi)
    eta = np.asarray(eta)
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta),
                     (1 - xi) * eta, xi * eta], axis=-1)


def basis_gradients(xi, eta, hx, hy):
    """Physical gradients of the bilinear basis, shape (..., 4, 2)."""
    xi = np.asarray(xi)
    eta = np.asarray(eta)
    dxi = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=-1) / hx
    deta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=-1) / hy
    return np.stack([dxi, deta], axis=-1)


class Quadrature:
    """Per-element quadrature and segment tables bound to one mesh.

    Points are ordered quadrant by quadrant (SW, SE, NW, NE), four Gauss
    points each, so point k belongs to the control volume of local corner
    k // 4.  Weights are uniform: hx*hy/16 per point.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        g = np.array([0.5 - _G, 0.5 + _G])
        quadrants = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        pts = []
        for qx, qy in quadrants:
            for gy in g:
                for gx in g:
                    pts.append(((qx + gx) / 2.0, (qy + gy) / 2.0))
        self.local_points = np.array(pts)                      # (16, 2)
        self.owner_corner = np.repeat(np.arange(4), 4)          # CV owning each point
        self.weight = mesh.hx * mesh.hy / 16.0
        self.phi = basis_values(self.local_points[:, 0], self.local_points[:, 1])
        self.dphi = basis_gradients(self.local_points[:, 0], self.local_points[:, 1],
                                    mesh.hx, mesh.hy)

        # Basis tables at the four CV sub-segment midpoints.
        sm = SEG_LOCAL_MID
        self.seg_phi = basis_values(sm[:, 0], sm[:, 1])         # (4, 4)
        self.seg_dphi = basis_gradients(sm[:, 0], sm[:, 1], mesh.hx, mesh.hy)
        # Gradient component along the segment normal, (type, basis).
        self.seg_dphi_n = np.take_along_axis(
            self.seg_dphi, SEG_NORMAL_AXIS[:, None, None], axis=2)[:, :, 0]

    def global_points(self, elems=None):
        """Quadrature points of the given elements, shape (ne, 16, 2)."""
        origins = self.mesh.element_origins
        if elems is not None:
            origins = origins[elems]
        scale = np.array([self.mesh.hx, self.mesh.hy])
        return origins[:, None, :] + self.local_points[None, :, :] * scale


def quadrature(mesh):
    """Quadrature tables for a mesh, built once and cached on it."""
    quad = getattr(mesh, "_quadrature", None)
    if quad is None:
        quad = Quadrature(mesh)
        mesh._quadrature = quad
    return quad


def locate(mesh, points):
    """Element ids containing the given points.

    Points on an inter-element line are assigned to the lower element id,
    points outside the domain raise.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x < 0) or np.any(x > mesh.Lx) or np.any(y < 0) or np.any(y > mesh.Ly):
        raise ValueError("point outside the mesh domain")
    ix = np.clip(np.ceil(x / mesh.hx).astype(int) - 1, 0, mesh.nx - 1)
    iy = np.clip(np.ceil(y / mesh.hy).astype(int) - 1, 0, mesh.ny - 1)
    return iy * mesh.nx + ix


def _local_coords(mesh, pts, elems):
    origins = mesh.element_origins[elems]
    xi = (pts[:, 0] - origins[:, 0]) / mesh.hx
    eta = (pts[:, 1] - origins[:, 1]) / mesh.hy
    return xi, eta


class NodalField:
    """Continuous piecewise-bilinear field, one value per mesh vertex."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ValueError(f"expected {mesh.n_vertices} nodal values, got {values.shape}")
        self.mesh = mesh
        self.values = values

    @classmethod
    def from_callable(cls, mesh, fn):
        return cls(mesh, fn(mesh.vertices[:, 0], mesh.vertices[:, 1]) * np.ones(mesh.n_vertices))

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_vertices))

    def corner_values(self, elems=None):
        """Values at element corners, shape (ne, 4)."""
        e = self.mesh.elements if elems is None else self.mesh.elements[elems]
        return self.values[e]

    def eval(self, points, elems=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        elems = locate(self.mesh, pts) if elems is None else np.asarray(elems)
        xi, eta = _local_coords(self.mesh, pts, elems)
        phi = basis_values(xi, eta)
        return np.einsum("pc,pc->p", phi, self.values[self.mesh.elements[elems]])

    def grad(self, points, elems=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        elems = locate(self.mesh, pts) if elems is None else np.asarray(elems)
        xi, eta = _local_coords(self.mesh, pts, elems)
        dphi = basis_gradients(xi, eta, self.mesh.hx, self.mesh.hy)
        return np.einsum("pcd,pc->pd", dphi, self.values[self.mesh.elements[elems]])

    def copy(self):
        return NodalField(self.mesh, self.values.copy())


class DGField:
    """Discontinuous piecewise-bilinear field, four corner values per element."""

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_elements, 4):
            raise ValueError(f"expected shape ({mesh.n_elements}, 4), got {values.shape}")
        self.mesh = mesh
        self.values = values

    def eval(self, points, elems=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        elems = locate(self.mesh, pts) if elems is None else np.asarray(elems)
        xi, eta = _local_coords(self.mesh, pts, elems)
        phi = basis_values(xi, eta)
        return np.einsum("pc,pc->p", phi, self.values[elems])

    def grad(self, points, elems=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        elems = locate(self.mesh, pts) if elems is None else np.asarray(elems)
        xi, eta = _local_coords(self.mesh, pts, elems)
        dphi = basis_gradients(xi, eta, self.mesh.hx, self.mesh.hy)
        return np.einsum("pcd,pc->pd", dphi, self.values[elems])


def interp_const(dg, elem):
    """Subquadrant constants of a DG field on one element.

    The piecewise-constant interpolant takes the corner value on each corner's
    quadrant, so the constants are exactly the four corner values, ordered SW,
    SE, NW, NE like the quadrants.
    """
    return dg.values[elem].copy()


# -- L2 norms via the package quadrature ------------------------------------

def _values_at_quadrature(mesh, source, t=None):
    quad = quadrature(mesh)
    if isinstance(source, NodalField):
        return quad.phi @ source.corner_values().T  # (16, ne) -> transpose below
    if isinstance(source, DGField):
        return quad.phi @ source.values.T
    pts = quad.global_points()
    x, y = pts[:, :, 0], pts[:, :, 1]
    vals = source(x, y) if t is None else source(x, y, t)
    # match the memory layout of the field branches so reductions over
    # identical values are bitwise identical regardless of the source kind
    return np.ascontiguousarray(
        np.broadcast_to(np.asarray(vals, dtype=float), x.shape).T)


def l2_norm(field):
    quad = quadrature(field.mesh)
    v = _values_at_quadrature(field.mesh, field)
    return float(np.sqrt(np.sum(v * v) * quad.weight))


def l2_diff(field, other, t=None):
    """L2 norm of (field - other); other is a field or a callable f(x, y[, t])."""
    quad = quadrature(field.mesh)
    a = _values_at_quadrature(field.mesh, field)
    b = _values_at_quadrature(field.mesh, other, t=t)
    d = a - b
    return float(np.sqrt(np.sum(d * d) * quad.weight))


def l2_norm_callable(mesh, fn, t=None):
    quad = quadrature(mesh)
    v = _values_at_quadrature(mesh, fn, t=t)
    return float(np.sqrt(np.sum(v * v) * quad.weight))


def integrate(mesh, source, t=None):
    """Integral of a field or callable over the domain, shared 16-point rule."""
    quad = quadrature(mesh)
    return float(np.sum(_values_at_quadrature(mesh, source, t=t)) * quad.weight)
