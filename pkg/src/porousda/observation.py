"""Sparse measurement lattices and observation streams.

A SparseGrid is a coarse tensor lattice whose points coincide with fine-mesh
vertices (the spacing must be an integer multiple of the mesh spacing in both
directions).  The grid turns a field into raw functional values (point values
by default, coarse-cell averages as an alternative) and reconstructs a
continuous field from such values with coarse bilinear interpolation.  An
ObservationStream is a time-ordered sequence of functional-value vectors with
linear interpolation between records.
"""

import csv

import numpy as np

from . import linalg
from .fields import NodalField, quadrature


class AlignmentError(ValueError):
    """Lattice does not align with the mesh."""


class ObservationGapError(ValueError):
    """Requested time lies outside the stream's span."""


def _axis_ratio(spacing, h, n, axis):
    k = int(round(spacing / h))
    if k < 1 or abs(spacing - k * h) > 1e-9 * max(spacing, h):
        raise AlignmentError(
            f"lattice spacing {spacing} is not an integer multiple of mesh spacing {h} ({axis})")
    if n % k != 0:
        raise AlignmentError(
            f"lattice spacing {spacing} does not tile the domain: {n} cells / {k} per coarse cell")
    return k


class SparseGrid:
    """Coarse measurement lattice aligned with a fine mesh."""

    def __init__(self, mesh, spacing, kind="point"):
        if kind not in ("point", "average"):
            raise ValueError(f"unknown functional kind {kind!r}")
        self.mesh = mesh
        self.spacing = float(spacing)
        self.kind = kind
        self.kx = _axis_ratio(self.spacing, mesh.hx, mesh.nx, "x")
        self.ky = _axis_ratio(self.spacing, mesh.hy, mesh.ny, "y")
        self.ncx = mesh.nx // self.kx
        self.ncy = mesh.ny // self.ky
        self.n_obs = (self.ncx + 1) * (self.ncy + 1)

        ii, jj = np.meshgrid(np.arange(self.ncx + 1), np.arange(self.ncy + 1))
        ii, jj = ii.ravel(), jj.ravel()
        self.point_vertex = (jj * self.ky) * (mesh.nx + 1) + ii * self.kx
        self.points = mesh.vertices[self.point_vertex]
        self._prolong = self._build_prolong()
        self._average = self._build_average() if kind == "average" else None

    # -- operators ---------------------------------------------------------

    def _build_prolong(self):
        """Coarse bilinear basis evaluated at every fine vertex, (nv, n_obs)."""
        mesh = self.mesh
        i = np.arange(mesh.nx + 1)
        j = np.arange(mesh.ny + 1)
        ci = np.minimum(i // self.kx, self.ncx - 1)
        cj = np.minimum(j // self.ky, self.ncy - 1)
        xi = (i - ci * self.kx) / self.kx
        eta = (j - cj * self.ky) / self.ky
        XI, ETA = np.meshgrid(xi, eta)
        CI, CJ = np.meshgrid(ci, cj)
        base = CJ.ravel() * (self.ncx + 1) + CI.ravel()
        cols = np.stack([base, base + 1, base + self.ncx + 1, base + self.ncx + 2], axis=1)
        xl, yl = XI.ravel(), ETA.ravel()
        w = np.stack([(1 - xl) * (1 - yl), xl * (1 - yl), (1 - xl) * yl, xl * yl], axis=1)
        rows = np.repeat(np.arange(mesh.n_vertices), 4)
        return linalg.assemble(rows, cols.ravel(), w.ravel(),
                               (mesh.n_vertices, self.n_obs))

    def _build_average(self):
        """Normalized coarse-CV average functionals as a (n_obs, nv) matrix."""
        mesh = self.mesh
        quad = quadrature(mesh)
        pts = quad.global_points().reshape(-1, 2)
        ox = np.clip(np.round(pts[:, 0] / self.spacing).astype(int), 0, self.ncx)
        oy = np.clip(np.round(pts[:, 1] / self.spacing).astype(int), 0, self.ncy)
        obs = oy * (self.ncx + 1) + ox
        corners = np.repeat(mesh.elements, 16, axis=0)          # (ne*16, 4)
        phi = np.tile(quad.phi, (mesh.n_elements, 1))            # (ne*16, 4)
        rows = np.repeat(obs, 4)
        gamma = linalg.assemble(rows, corners.ravel(), (phi * quad.weight).ravel(),
                                (self.n_obs, mesh.n_vertices))
        row_sums = np.asarray(gamma.sum(axis=1)).ravel()
        inv = 1.0 / row_sums
        return linalg.SparseMatrix(gamma.multiply(inv[:, None]))

    # -- functionals and reconstruction -------------------------------------

    def sample(self, source, t=None):
        """Raw functional values of a field or callable, shape (n_obs,)."""
        if isinstance(source, NodalField):
            if self.kind == "point":
                return source.values[self.point_vertex].copy()
            return self._average @ source.values
        if callable(source):
            if self.kind == "point":
                x, y = self.points[:, 0], self.points[:, 1]
                vals = source(x, y) if t is None else source(x, y, t)
                return np.asarray(vals, dtype=float) * np.ones(self.n_obs)
            field = _field_from_callable(self.mesh, source, t)
            return self._average @ field.values
        values = np.asarray(source, dtype=float)
        if values.shape == (self.mesh.n_vertices,):
            return self.sample(NodalField(self.mesh, values), t)
        raise ValueError("source must be a NodalField, callable, or nodal value array")

    def reconstruct(self, functional_values):
        """Coarse bilinear field from raw functional values."""
        d = np.asarray(functional_values, dtype=float)
        if d.shape != (self.n_obs,):
            raise ValueError(f"expected {self.n_obs} functional values, got {d.shape}")
        return NodalField(self.mesh, self._prolong @ d)

    def interpolate(self, source, t=None):
        """Sparse interpolant of a field: reconstruct(sample(source))."""
        return self.reconstruct(self.sample(source, t=t))

    @property
    def prolong_matrix(self):
        return self._prolong

    def functional_matrix(self):
        """The functionals as a sparse (n_obs, nv) matrix acting on nodal values."""
        if self.kind == "point":
            rows = np.arange(self.n_obs)
            vals = np.ones(self.n_obs)
            return linalg.assemble(rows, self.point_vertex, vals,
                                   (self.n_obs, self.mesh.n_vertices))
        return self._average


def _field_from_callable(mesh, fn, t=None):
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vals = fn(x, y) if t is None else fn(x, y, t)
    return NodalField(mesh, np.asarray(vals, dtype=float) * np.ones(mesh.n_vertices))


class ObservationStream:
    """Strictly time-ordered records of raw functional values."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.values.ndim != 2 \
                or self.values.shape[0] != self.times.shape[0]:
            raise ValueError("times (N,) and values (N, n_obs) must align")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("observation times must be strictly increasing")

    @property
    def n_obs(self):
        return self.values.shape[1]

    def span(self):
        return self.times[0], self.times[-1]

    def interpolate(self, t):
        """Linear interpolation of the functional values at time t."""
        if self.times.size == 0:
            raise ObservationGapError("empty observation stream")
        t0, t1 = self.times[0], self.times[-1]
        if t < t0 or t > t1:
            raise ObservationGapError(
                f"time {t} outside observation span [{t0}, {t1}]")
        idx = np.searchsorted(self.times, t)
        if idx < self.times.size and self.times[idx] == t:
            return self.values[idx].copy()
        lo, hi = idx - 1, idx
        w = (t - self.times[lo]) / (self.times[hi] - self.times[lo])
        return (1.0 - w) * self.values[lo] + w * self.values[hi]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"gamma_{k}" for k in range(self.n_obs)])
            for t, row in zip(self.times, self.values):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "t" \
                    or any(not h.strip().startswith("gamma_") for h in header[1:]):
                raise ValueError(f"not an observation CSV: header {header!r}")
            times, rows = [], []
            for rec in reader:
                if not rec:
                    continue
                times.append(float(rec[0]))
                rows.append([float(v) for v in rec[1:]])
        return cls(np.array(times), np.array(rows))


def interpolate_in_time(stream, t):
    return stream.interpolate(t)
