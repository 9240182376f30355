"""Built-in problem definitions, constitutive laws, and input rasters.

Four example configurations cover the validation ladder: two manufactured
solutions (one with a prescribed velocity closure, one with a decoupled
pressure), a heterogeneous injection/discharge problem driven by raster
permeability, and a saltwater-intrusion setting with tidal forcing at the
injection well.  A diffusion-reaction configuration without advection rounds
these out for range-preservation checks.

The heterogeneous inputs are shipped as deterministic stand-ins: smoothed
seeded noise mapped into a configured log range for permeability, and smooth
compact bumps for wells, sources, and initial pockets.  Published figures of
these fields are pictures only, so runs against them are property-checked,
not curve-matched.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate
from scipy.ndimage import gaussian_filter

from .mesh import DIRICHLET, NEUMANN, build_mesh

DAY = 86400.0

_TINY = np.finfo(float).tiny


def bump(x, y, cx, cy, radius, peak=1.0):
    """Smooth compactly supported bump, value `peak` at the center.

    exp(1 - 1/(1 - s)) with s the squared scaled distance; identically zero
    outside the radius and infinitely differentiable across the edge.
    """
    x = np.asarray(x, dtype=float)
    s = ((x - cx) ** 2 + (np.asarray(y, dtype=float) - cy) ** 2) / radius**2
    with np.errstate(divide="ignore", over="ignore"):
        val = np.exp(1.0 - 1.0 / np.maximum(1.0 - s, _TINY))
    return peak * np.where(s < 1.0, val, 0.0)


def well_total(peak, radius):
    """Exact integral of a bump well, for audit against mesh quadrature."""
    unit, _ = integrate.quad(lambda s: math.exp(1.0 - 1.0 / (1.0 - s)), 0.0, 1.0)
    return peak * math.pi * radius**2 * unit


def quarter_power_viscosity(theta, mu_solvent=0.00108, mu_water=0.001):
    """Koval quarter-power mixing rule; endpoints are the pure viscosities."""
    th = np.clip(theta, 0.0, 1.0)
    return (th / mu_solvent**0.25 + (1.0 - th) / mu_water**0.25) ** -4


class PermeabilityRaster:
    """Cell-centered permeability samples with clamped bilinear lookup.

    File format: one header line `nx ny Lx Ly`, then ny rows of nx values,
    row-major from the bottom row up.
    """

    def __init__(self, values, lengths=(1.0, 1.0)):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("raster values must be a 2-d array")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError("raster values must be finite and positive")
        self.values = values
        self.lengths = (float(lengths[0]), float(lengths[1]))
        self.ny, self.nx = values.shape

    @property
    def value_range(self):
        return float(self.values.min()), float(self.values.max())

    def cell_centers(self):
        Lx, Ly = self.lengths
        xs = (np.arange(self.nx) + 0.5) * Lx / self.nx
        ys = (np.arange(self.ny) + 0.5) * Ly / self.ny
        return xs, ys

    def lookup(self, x, y):
        """Bilinear interpolation on the center lattice, clamped at edges."""
        Lx, Ly = self.lengths
        gx = np.clip(np.asarray(x, dtype=float) / (Lx / self.nx) - 0.5,
                     0.0, self.nx - 1.0)
        gy = np.clip(np.asarray(y, dtype=float) / (Ly / self.ny) - 0.5,
                     0.0, self.ny - 1.0)
        ix = np.minimum(gx.astype(int), self.nx - 2) if self.nx > 1 else np.zeros_like(gx, dtype=int)
        iy = np.minimum(gy.astype(int), self.ny - 2) if self.ny > 1 else np.zeros_like(gy, dtype=int)
        fx = gx - ix
        fy = gy - iy
        if self.nx == 1:
            fx = np.zeros_like(fx)
        if self.ny == 1:
            fy = np.zeros_like(fy)
        v = self.values
        jx = np.minimum(ix + 1, self.nx - 1)
        jy = np.minimum(iy + 1, self.ny - 1)
        return ((1 - fx) * (1 - fy) * v[iy, ix] + fx * (1 - fy) * v[iy, jx]
                + (1 - fx) * fy * v[jy, ix] + fx * fy * v[jy, jx])

    def rescaled_log(self, lo, hi):
        """Affine map in log space sending the value range onto [lo, hi]."""
        vmin, vmax = self.value_range
        ln = np.log(self.values)
        span = math.log(vmax) - math.log(vmin)
        if span == 0.0:
            mapped = np.full_like(ln, math.sqrt(lo * hi))
            return PermeabilityRaster(mapped, self.lengths)
        u = (ln - math.log(vmin)) / span
        return PermeabilityRaster(np.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))),
                                  self.lengths)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.nx} {self.ny} {self.lengths[0]!r} {self.lengths[1]!r}\n")
            for row in self.values:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            head = fh.readline().split()
            if len(head) != 4:
                raise ValueError(f"bad raster header in {path}")
            nx, ny = int(head[0]), int(head[1])
            lengths = (float(head[2]), float(head[3]))
            data = np.loadtxt(fh, dtype=float, ndmin=2)
        if data.shape != (ny, nx):
            raise ValueError(f"raster body {data.shape} does not match header "
                             f"({ny}, {nx}) in {path}")
        return cls(data, lengths)

    @classmethod
    def standin(cls, nx=60, ny=60, lengths=(1.0, 1.0), lo=1e-2, hi=1.0,
                seed=20260814, smoothness=0.12):
        """Deterministic smoothed-noise permeability in a log range."""
        rng = np.random.default_rng(seed)
        noise = gaussian_filter(rng.standard_normal((ny, nx)),
                                sigma=smoothness * max(nx, ny), mode="reflect")
        lsp = noise.max() - noise.min()
        u = (noise - noise.min()) / lsp if lsp > 0 else np.full_like(noise, 0.5)
        return cls(np.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))),
                   lengths)


@dataclass(frozen=True)
class Scenario:
    """Immutable problem definition consumed by the assimilation driver."""

    name: str
    nx: int
    ny: int
    lengths: tuple = (1.0, 1.0)
    edge_tags: object = "all_dirichlet"
    diffusion: object = None            # D(x, y)
    kappa: object = None                # kappa(theta, x, y); None if prescribed
    velocity: object = None             # v(x, y, theta) closure; None if Darcy
    pressure_source: object = None      # g(x, y)
    source: object = None               # f(x, y, t)
    reaction: object = None             # q(x, y)
    theta_dirichlet: object = None      # boundary concentration (x, y, t)
    pressure_dirichlet: object = 0.0
    initial: object = None              # theta_0(x, y)
    exact: object = None                # analytic theta(x, y, t) when known
    exact_pressure: object = None
    dt: float = 0.01
    fine_per_coarse: int = 1
    t_end: float = 1.0
    mu: float = 1.0
    spacing: float = 0.25
    observation_kind: str = "point"
    theta0_policy: str = "zero"
    static_velocity: bool = False
    snapshot_times: tuple = ()
    notes: dict = field(default_factory=dict)

    def build_mesh(self, nx=None, ny=None):
        return build_mesh(nx or self.nx, ny or self.ny, self.lengths[0],
                          self.lengths[1], self.edge_tags)

    def with_overrides(self, **kw):
        return replace(self, **kw)

    @property
    def coarse_dt(self):
        return self.dt * self.fine_per_coarse


def _x_faces_dirichlet(Lx):
    def tag(x, y):
        near = (np.abs(x) < 1e-12) | (np.abs(x - Lx) < 1e-12)
        return np.where(near, DIRICHLET, NEUMANN)
    return tag


def example1(nx=100, t_end=0.5, mu=100.0):
    """Manufactured decaying hump with a concentration-dependent velocity.

    The velocity is prescribed directly as (w, w), w = 1/(1 + theta), so no
    pressure solve is involved; the forcing keeps the exact solution at
    (x - x^2)(y - y^2) e^{-t}.
    """

    def exact(x, y, t):
        return np.exp(-t) * (x - x**2) * (y - y**2)

    def source(x, y, t):
        th = exact(x, y, t)
        dthx = np.exp(-t) * (1.0 - 2.0 * x) * (y - y**2)
        dthy = np.exp(-t) * (x - x**2) * (1.0 - 2.0 * y)
        lap = -2.0 * np.exp(-t) * ((y - y**2) + (x - x**2))
        return -th - lap + (dthx + dthy) / (1.0 + th) ** 2

    def velocity(x, y, theta):
        w = 1.0 / (1.0 + theta)
        return w, w * np.ones_like(np.asarray(x, dtype=float))

    return Scenario(
        name="example1", nx=nx, ny=nx,
        edge_tags="all_dirichlet",
        diffusion=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
        velocity=velocity,
        source=source,
        initial=lambda x, y: (x - x**2) * (y - y**2),
        exact=exact,
        dt=0.002, fine_per_coarse=10, t_end=t_end,
        mu=mu, spacing=0.1, theta0_policy="zero",
        notes={"velocity": "prescribed closure, refreshed every coarse step"},
    )


def example2(nx=50, t_end=2.0, mu=100.0):
    """Decoupled pressure: constant conductivity, exact linear pressure.

    The Darcy velocity is (1, 0) everywhere and is computed once.  The
    manufactured concentration (x - x^2) e^t deliberately leaves [0, 1].
    """

    def exact(x, y, t):
        return np.exp(t) * (x - x**2) * np.ones_like(np.asarray(y, dtype=float))

    def source(x, y, t):
        return np.exp(t) * ((x - x**2) + 2.0 + (1.0 - 2.0 * x)) \
            * np.ones_like(np.asarray(y, dtype=float))

    return Scenario(
        name="example2", nx=nx, ny=nx,
        edge_tags=_x_faces_dirichlet(1.0),
        diffusion=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
        kappa=lambda theta, x, y: np.ones_like(np.asarray(theta, dtype=float)),
        pressure_source=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        source=source,
        pressure_dirichlet=lambda x, y: 1.0 - x,
        initial=lambda x, y: (x - x**2) * np.ones_like(np.asarray(y, dtype=float)),
        exact=exact,
        exact_pressure=lambda x, y: 1.0 - x,
        dt=0.02, fine_per_coarse=1, t_end=t_end,
        mu=mu, spacing=0.1, theta0_policy="zero", static_velocity=True,
        notes={"range": "manufactured concentration exceeds 1 by design"},
    )


def mobility_closure(raster):
    """Concentration-dependent conductivity k(x) (1 - theta + theta/16)^-4."""

    def kappa(theta, x, y):
        th = np.clip(theta, 0.0, 1.0)
        return raster.lookup(x, y) * (1.0 - th + th / 16.0) ** -4

    return kappa


def example3(nx=240, raster=None, seed=20260814, mu=1000.0, spacing=1.0 / 30.0,
             t_end=0.024):
    """Heterogeneous injection/discharge displacement with raster conductivity.

    The published source, log-permeability, and initial-condition profiles are
    pictures, so deterministic stand-ins are generated: a seeded smoothed
    noise raster and smooth bumps for the wells and initial pockets.
    """
    if raster is None:
        k = PermeabilityRaster.standin(nx=60, ny=60, lo=1e-2, hi=1.0, seed=seed)
    elif isinstance(raster, PermeabilityRaster):
        k = raster
    else:
        k = PermeabilityRaster.load(raster)

    def g(x, y):
        return bump(x, y, 0.75, 0.75, 0.08, 50.0) - bump(x, y, 0.25, 0.25, 0.08, 50.0)

    def theta0(x, y):
        return bump(x, y, 0.3, 0.7, 0.25, 0.8) + bump(x, y, 0.7, 0.3, 0.25, 0.8)

    return Scenario(
        name="example3", nx=nx, ny=nx,
        edge_tags="all_dirichlet",
        diffusion=lambda x, y: 0.01 * np.ones_like(np.asarray(x, dtype=float)),
        kappa=mobility_closure(k),
        pressure_source=g,
        initial=theta0,
        dt=0.0004, fine_per_coarse=5, t_end=t_end,
        mu=mu, spacing=spacing, theta0_policy="interpolant",
        snapshot_times=(0.002, 0.012, 0.024),
        notes={"raster": k, "standin": "source, conductivity, and initial "
               "condition are deterministic stand-ins"},
    )


def example4(nx=240, raster=None, seed=20260814, mu=1e-5, spacing=40.0,
             t_end=30.0 * DAY):
    """Saltwater intrusion on a 240 m square with a tidal injection well.

    Conductivity is intrinsic permeability over the quarter-power mixed
    viscosity.  The injection well carries concentration 0.45 sin(B t) + 0.5
    with a one-day period; sink strength feeds both the pressure source and
    the reaction term.  Two initial pockets sit in the upper-left and
    lower-right corners.
    """
    L = 240.0
    if raster is None:
        k = PermeabilityRaster.standin(nx=60, ny=60, lengths=(L, L),
                                       lo=1e-9, hi=1e-7, seed=seed)
    elif isinstance(raster, PermeabilityRaster):
        k = raster.rescaled_log(1e-9, 1e-7)
    else:
        k = PermeabilityRaster.load(raster).rescaled_log(1e-9, 1e-7)

    def kappa(theta, x, y):
        return k.lookup(x, y) / quarter_power_viscosity(theta)

    def q_in(x, y):
        return bump(x, y, 190.0, 190.0, 12.0, 0.0005)

    def q_out(x, y):
        return bump(x, y, 50.0, 50.0, 12.0, 0.002)

    def injected_concentration(t):
        return 0.45 * np.sin(2.0 * np.pi * t / DAY) + 0.5

    return Scenario(
        name="example4", nx=nx, ny=nx, lengths=(L, L),
        edge_tags="all_dirichlet",
        diffusion=lambda x, y: 1e-5 * np.ones_like(np.asarray(x, dtype=float)),
        kappa=kappa,
        pressure_source=lambda x, y: q_in(x, y) - q_out(x, y),
        source=lambda x, y, t: q_in(x, y) * injected_concentration(t),
        reaction=q_out,
        initial=lambda x, y: bump(x, y, 45.0, 195.0, 28.0, 0.9)
                             + bump(x, y, 195.0, 45.0, 28.0, 0.9),
        dt=2.0 * 3600.0, fine_per_coarse=24, t_end=t_end,
        mu=mu, spacing=spacing, theta0_policy="interpolant",
        notes={"raster": k, "wells": {"in": (190.0, 190.0, 12.0, 0.0005),
                                      "out": (50.0, 50.0, 12.0, 0.002)},
               "injected_concentration": injected_concentration},
    )


def diffusion_reaction(nx=20, t_end=1.0, mu=10.0):
    """Advection-free configuration whose data keep every source bound met.

    Time step sits at the positivity limit of the trapezoidal rule for the
    chosen diffusion, so the discrete solution stays inside [0, 1] and the
    range-preservation property can be asserted rather than just reported.
    """

    def source(x, y, t):
        return bump(x, y, 0.5, 0.5, 0.3, 0.25) * (1.0 + 0.8 * np.sin(2.0 * np.pi * t))

    return Scenario(
        name="diffusion_reaction", nx=nx, ny=nx,
        edge_tags="all_dirichlet",
        diffusion=lambda x, y: 0.1 * np.ones_like(np.asarray(x, dtype=float)),
        reaction=lambda x, y: 0.5 * np.ones_like(np.asarray(x, dtype=float)),
        source=source,
        initial=lambda x, y: 0.9 * np.sin(np.pi * x) * np.sin(np.pi * y),
        dt=0.02, fine_per_coarse=5, t_end=t_end,
        mu=mu, spacing=0.1, theta0_policy="interpolant", static_velocity=True,
    )


BUILTIN_SCENARIOS = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
    "diffusion_reaction": diffusion_reaction,
}


def manufactured_forcing(theta, velocity=None, diffusion=1.0, reaction=0.0):
    """Numerical forcing builder f = dtheta/dt - div(D grad theta - v theta) + q theta.

    Derivatives are Richardson-extrapolated central differences of the given
    closed forms.  This is the independent check for hand-derived forcings,
    accurate to roughly 1e-9 on smooth inputs; production scenarios carry
    analytic forcings.
    """
    dfun = diffusion if callable(diffusion) else (lambda x, y: diffusion * np.ones_like(np.asarray(x, dtype=float)))
    qfun = reaction if callable(reaction) else (lambda x, y: reaction * np.ones_like(np.asarray(x, dtype=float)))

    def ddt(x, y, t, e=1e-5):
        d1 = (theta(x, y, t + e) - theta(x, y, t - e)) / (2 * e)
        d2 = (theta(x, y, t + 2 * e) - theta(x, y, t - 2 * e)) / (4 * e)
        return (4 * d1 - d2) / 3.0

    def diffusive(x, y, t, e=1e-4):
        def flux_x(xx, yy):
            return dfun(xx, yy) * (theta(xx + e, yy, t) - theta(xx - e, yy, t)) / (2 * e)

        def flux_y(xx, yy):
            return dfun(xx, yy) * (theta(xx, yy + e, t) - theta(xx, yy - e, t)) / (2 * e)

        div = ((flux_x(x + e, y) - flux_x(x - e, y)) / (2 * e)
               + (flux_y(x, y + e) - flux_y(x, y - e)) / (2 * e))
        return div

    def advective(x, y, t, e=1e-5):
        def mom(xx, yy):
            th = theta(xx, yy, t)
            vx, vy = velocity(xx, yy, th)
            return vx * th, vy * th

        def div(step):
            ax_p, _ = mom(x + step, y)
            ax_m, _ = mom(x - step, y)
            _, ay_p = mom(x, y + step)
            _, ay_m = mom(x, y - step)
            return (ax_p - ax_m + ay_p - ay_m) / (2 * step)

        return (4 * div(e) - div(2 * e)) / 3.0

    def f(x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = ddt(x, y, t) - diffusive(x, y, t) + qfun(x, y) * theta(x, y, t)
        if velocity is not None:
            out = out + advective(x, y, t)
        return out

    return f


ASSUMPTION_KEYS = ("A1", "A2", "A3", "A4", "A5", "A6", "A7")


def assumption_report(scenario, samples=101, time_samples=9):
    """Evaluate the seven model assumptions on a probe lattice.

    Returns {key: (holds, note)}.  A1 initial range in [0, 1]; A2 diffusion
    bounded away from zero; A3 conductivity (or velocity closure) positive
    and bounded; A4-A6 reaction, pressure source, and forcing finite; A7 the
    sign conditions g + 2q >= 0 and g + q >= f >= 0.
    """
    Lx, Ly = scenario.lengths
    xs = np.linspace(0.0, Lx, samples)
    ys = np.linspace(0.0, Ly, samples)
    X, Y = np.meshgrid(xs, ys)
    times = np.linspace(0.0, scenario.t_end, time_samples)
    zeros = np.zeros_like(X)

    def sample(fn, *extra):
        return zeros if fn is None else np.asarray(fn(X, Y, *extra), dtype=float) * np.ones_like(X)

    report = {}
    th0 = sample(scenario.initial)
    a1 = bool(np.all((th0 >= 0.0) & (th0 <= 1.0)))
    note = f"initial range [{th0.min():.4g}, {th0.max():.4g}]"
    if scenario.exact is not None:
        lo = min(sample(scenario.exact, t).min() for t in times)
        hi = max(sample(scenario.exact, t).max() for t in times)
        a1 = a1 and 0.0 <= lo and hi <= 1.0
        note += f", solution range [{lo:.4g}, {hi:.4g}]"
    report["A1"] = (a1, note)
    dv = sample(scenario.diffusion)
    report["A2"] = (bool(np.all(np.isfinite(dv)) and dv.min() > 0.0),
                    f"diffusion range [{dv.min():.4g}, {dv.max():.4g}]")
    if scenario.kappa is not None:
        kmin, kmax = np.inf, -np.inf
        for th in np.linspace(0.0, 1.0, 5):
            kv = np.asarray(scenario.kappa(th, X, Y), dtype=float) * np.ones_like(X)
            kmin, kmax = min(kmin, kv.min()), max(kmax, kv.max())
        report["A3"] = (bool(np.isfinite(kmax) and kmin > 0.0),
                        f"conductivity range [{kmin:.4g}, {kmax:.4g}]")
    elif scenario.velocity is not None:
        vmax = 0.0
        for th in np.linspace(0.0, 1.0, 5):
            vx, vy = scenario.velocity(X, Y, th * np.ones_like(X))
            vmax = max(vmax, float(np.max(np.hypot(vx, vy))))
        report["A3"] = (bool(np.isfinite(vmax)), f"velocity closure |v| <= {vmax:.4g}")
    else:
        report["A3"] = (True, "no advection")
    qv = sample(scenario.reaction)
    report["A4"] = (bool(np.all(np.isfinite(qv))), f"reaction max {qv.max():.4g}")
    gv = sample(scenario.pressure_source)
    report["A5"] = (bool(np.all(np.isfinite(gv))), f"source |g| max {np.abs(gv).max():.4g}")
    fmin, fmax, margin = np.inf, -np.inf, np.inf
    for t in times:
        fv = sample(scenario.source, t)
        fmin, fmax = min(fmin, fv.min()), max(fmax, fv.max())
        margin = min(margin, float(np.min(gv + qv - fv)))
    report["A6"] = (bool(np.isfinite(fmax)), f"forcing range [{fmin:.4g}, {fmax:.4g}]")
    a7 = bool(np.min(gv + 2.0 * qv) >= 0.0 and fmin >= 0.0 and margin >= 0.0)
    report["A7"] = (a7, f"min(g + 2q) = {np.min(gv + 2.0 * qv):.4g}, "
                    f"min f = {fmin:.4g}, min(g + q - f) = {margin:.4g}")
    return report
