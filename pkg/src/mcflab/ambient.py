"""Chart-based Riemannian geometry kernel.

A chart is a coordinate box (some axes possibly periodic) carrying a metric
evaluator ``g(x)``.  Christoffel symbols and the fully lowered Riemann tensor
are obtained from 4th-order central differences of ``g`` with step
``FD_STEP * length_scale``.  Presets also carry closed-form Christoffel and
Riemann evaluators; those are used as oracles in the test-suite and are never
on the production path.

Sign convention: ``R[a, b, c, d] = R(e_a, e_b, e_c, e_d)`` is fully lowered and
normalised so that ``R(u, v, u, v) / (|u|^2 |v|^2 - <u, v>^2)`` is the
sectional curvature of the plane ``u ^ v``.  The unit round sphere therefore
has ``R(u, v, u, v) > 0``.

All evaluators are vectorised: points are arrays of shape ``(..., d)`` and the
results carry the same leading batch shape.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, DomainError, ValidationError

FD_STEP = 1e-3
BOUNDARY_SLACK = 1e-12

# 4th-order central stencils
_D1 = {-2: 1.0 / 12.0, -1: -8.0 / 12.0, 1: 8.0 / 12.0, 2: -1.0 / 12.0}
_D2 = {-2: -1.0 / 12.0, -1: 16.0 / 12.0, 0: -30.0 / 12.0, 1: 16.0 / 12.0, 2: -1.0 / 12.0}

MetricFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AmbientChart:
    """A coordinate domain with a smooth metric field.

    Parameters
    ----------
    dim : int
        Ambient dimension ``d``.
    metric_fn : callable
        Vectorised evaluator ``(..., d) -> (..., d, d)``.
    bounds : sequence of (lo, hi)
        Closed coordinate range per axis; ignored on periodic axes.
    periods : sequence of float or None
        Period of each axis, ``None`` for non-periodic axes.
    kind : str
        Preset tag (``flat``, ``round-sphere``, ``surface-of-revolution``,
        ``warped-3d``, ``eguchi-hanson``, ``product``) or ``user``.
    length_scale : float
        Sets the differencing step.
    """

    dim: int
    metric_fn: MetricFn = field(repr=False)
    bounds: tuple = None
    periods: tuple = None
    kind: str = "user"
    length_scale: float = 1.0
    christoffel_fn: Optional[MetricFn] = field(default=None, repr=False, compare=False)
    riemann_fn: Optional[MetricFn] = field(default=None, repr=False, compare=False)
    label: str = ""

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValidationError("chart dimension must be positive")
        bounds = self.bounds
        if bounds is None:
            bounds = ((-np.inf, np.inf),) * d
        periods = self.periods
        if periods is None:
            periods = (None,) * d
        if len(bounds) != d or len(periods) != d:
            raise ValidationError("bounds and periods must have one entry per axis")
        for p in periods:
            if p is not None and not p > 0:
                raise ValidationError("periods must be positive")
        if not self.length_scale > 0:
            raise ValidationError("length_scale must be positive")
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in bounds))
        object.__setattr__(self, "periods", tuple(None if p is None else float(p) for p in periods))

    # -- coordinates ---------------------------------------------------------

    @property
    def fd_step(self) -> float:
        return FD_STEP * self.length_scale

    @property
    def periodic_axes(self) -> list[int]:
        return [i for i, p in enumerate(self.periods) if p is not None]

    def wrap(self, X):
        """Reduce periodic coordinates into ``[0, period)``."""
        X = np.array(X, dtype=float)
        for i in self.periodic_axes:
            X[..., i] = np.mod(X[..., i], self.periods[i])
        return X

    def displacement(self, A, B):
        """``B - A`` with periodic axes taken to the nearest image."""
        D = np.asarray(B, dtype=float) - np.asarray(A, dtype=float)
        for i in self.periodic_axes:
            p = self.periods[i]
            D[..., i] -= p * np.round(D[..., i] / p)
        return D

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ok = np.all(np.isfinite(X), axis=-1)
        for i, (lo, hi) in enumerate(self.bounds):
            if self.periods[i] is not None:
                continue
            slack = BOUNDARY_SLACK * max(1.0, abs(lo) if np.isfinite(lo) else 1.0, abs(hi) if np.isfinite(hi) else 1.0)
            ok &= (X[..., i] >= lo - slack) & (X[..., i] <= hi + slack)
        return ok

    def check_domain(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise DomainError(f"point has {X.shape[-1]} coordinates, chart has dimension {self.dim}")
        inside = np.atleast_1d(self.contains(X))
        if not np.all(inside):
            first = np.reshape(X, (-1, self.dim))[int(np.argmin(inside.ravel()))]
            raise DomainError(f"point {first} outside chart domain {self.bounds}")

    # -- tensors -------------------------------------------------------------

    def metric(self, X) -> np.ndarray:
        X = self.wrap(X)
        G = np.asarray(self.metric_fn(X), dtype=float)
        if G.shape != X.shape + (self.dim,):
            raise ValidationError(f"metric evaluator returned shape {G.shape}, expected {X.shape + (self.dim,)}")
        return G

    def _check_step(self, X):
        h = self.fd_step
        scale = max(1.0, float(np.max(np.abs(X[np.isfinite(X)]))) if X.size else 1.0)
        if h <= 256 * np.finfo(float).eps * scale:
            raise ConfigurationError(f"differencing step {h:g} underflows at coordinate scale {scale:g}")
        return h

    def _shifted(self, X, offsets):
        """Metric at ``X + sum_k n_k h e_{axis_k}`` for ``offsets = [(axis, n), ...]``."""
        h = self.fd_step
        Y = np.array(X, dtype=float, copy=True)
        for axis, n in offsets:
            Y[..., axis] += n * h
        return self.metric(Y)

    def metric_derivatives(self, X, second: bool = False):
        """Return ``dg[..., c, a, b] = d_c g_ab`` and optionally ``ddg[..., c, e, a, b]``."""
        X = self.wrap(X)
        d = self.dim
        h = self._check_step(X)
        dg = np.empty(X.shape[:-1] + (d, d, d))
        cache = {}

        def g_at(offs):
            key = tuple(sorted(o for o in offs if o[1] != 0))
            if key not in cache:
                cache[key] = self._shifted(X, key)
            return cache[key]

        g0 = g_at([])
        for c in range(d):
            dg[..., c, :, :] = sum(w * (g_at([(c, n)]) - g0) for n, w in _D1.items()) / h
        if not second:
            return dg
        ddg = np.empty(X.shape[:-1] + (d, d, d, d))
        for c in range(d):
            ddg[..., c, c, :, :] = sum(w * (g_at([(c, n)]) - g0) for n, w in _D2.items() if n != 0) / h**2
            for e in range(c + 1, d):
                acc = 0.0
                for (n1, w1), (n2, w2) in itertools.product(_D1.items(), _D1.items()):
                    acc = acc + w1 * w2 * (g_at([(c, n1), (e, n2)]) - g0)
                ddg[..., c, e, :, :] = acc / h**2
                ddg[..., e, c, :, :] = ddg[..., c, e, :, :]
        return dg, ddg

    def christoffel(self, X) -> np.ndarray:
        """Second-kind symbols ``Gamma[..., c, a, b]``."""
        G = self.metric(X)
        dg = self.metric_derivatives(X)
        return _christoffel_from(G, dg)

    def riemann(self, X) -> np.ndarray:
        """Fully lowered ``R[..., a, b, c, d]``."""
        G = self.metric(X)
        dg, ddg = self.metric_derivatives(X, second=True)
        gam = _christoffel_from(G, dg)
        return _riemann_from(G, ddg, gam)

    def geodesic_acceleration(self, X, V) -> np.ndarray:
        """``-Gamma^c_ab v^a v^b`` without forming the full symbol array.

        On degenerate metric points (chart boundaries such as the sphere's
        poles) the minimum-norm acceleration is returned.
        """
        G = self.metric(X)
        dg = self.metric_derivatives(X)
        # lowered: Gamma_{d,ab} v^a v^b = (d_v g)_{db} v^b - 1/2 d_d g(v, v)
        dvg = np.einsum("...cab,...c->...ab", dg, V)
        rhs = np.einsum("...db,...b->...d", dvg, V) - 0.5 * np.einsum("...dab,...a,...b->...d", dg, V, V)
        return -_solve_sym(G, rhs)


def _solve_sym(G, rhs):
    try:
        return np.linalg.solve(G, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        flatG = G.reshape(-1, G.shape[-1], G.shape[-1])
        flatr = rhs.reshape(-1, rhs.shape[-1])
        out = np.array([np.linalg.lstsq(g, r, rcond=None)[0] for g, r in zip(flatG, flatr)])
        return out.reshape(rhs.shape)


def _christoffel_from(G, dg):
    # lowered[d, a, b] = 1/2 (d_a g_bd + d_b g_ad - d_d g_ab), with dg[c, a, b] = d_c g_ab
    low = 0.5 * (np.einsum("...abd->...dab", dg) + np.einsum("...bad->...dab", dg) - dg)
    d = G.shape[-1]
    sol = np.linalg.solve(G, low.reshape(G.shape[:-1] + (d * d,)))
    return sol.reshape(G.shape[:-2] + (d, d, d))


def _riemann_from(G, ddg, gam):
    # second-derivative part: 1/2 (g_ad,bc + g_bc,ad - g_ac,bd - g_bd,ac)
    t1 = np.einsum("...bcad->...abcd", ddg)
    t2 = np.einsum("...adbc->...abcd", ddg)
    t3 = np.einsum("...bdac->...abcd", ddg)
    t4 = np.einsum("...acbd->...abcd", ddg)
    R = 0.5 * (t1 + t2 - t3 - t4)
    glow = np.einsum("...ef,...fad->...ead", G, gam)  # Gamma_{e,ad}
    R += np.einsum("...ebc,...ead->...abcd", gam, glow)
    R -= np.einsum("...ebd,...eac->...abcd", gam, glow)
    return R


# -- public operations -------------------------------------------------------


@dataclass(frozen=True)
class CurvatureData:
    """Metric, Christoffel symbols and lowered Riemann tensor at one point."""

    point: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    riemann: np.ndarray


def metric_at(chart: AmbientChart, x) -> np.ndarray:
    """Metric matrix at ``x``; user-supplied metrics are validated."""
    x = np.asarray(x, dtype=float)
    chart.check_domain(x)
    G = chart.metric(x)
    if chart.kind == "user":
        if not np.allclose(G, np.swapaxes(G, -1, -2), rtol=1e-12, atol=1e-14):
            raise ValidationError("user metric is not symmetric")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ValidationError("user metric is not positive definite") from None
    return G


def christoffel_at(chart: AmbientChart, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    chart.check_domain(x)
    return chart.christoffel(x)


def riemann_at(chart: AmbientChart, x) -> CurvatureData:
    x = np.asarray(x, dtype=float)
    chart.check_domain(x)
    G = chart.metric(x)
    dg, ddg = chart.metric_derivatives(x, second=True)
    gam = _christoffel_from(G, dg)
    return CurvatureData(point=x, g=G, gamma=gam, riemann=_riemann_from(G, ddg, gam))


def sectional_curvature(cdata: CurvatureData, u, v, tol: float = 1e-12) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    G = cdata.g
    uu, vv, uv = u @ G @ u, v @ G @ v, u @ G @ v
    area2 = uu * vv - uv**2
    if area2 <= tol * max(uu * vv, np.finfo(float).tiny):
        raise DegenerateInputError("u and v span a degenerate plane")
    return float(np.einsum("abcd,a,b,c,d->", cdata.riemann, u, v, u, v) / area2)


@dataclass
class GeodesicPath:
    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    exited: bool = False

    @property
    def endpoint(self):
        return self.points[-1]


def default_geodesic_step(chart: AmbientChart) -> float:
    return 2.5e-3 * chart.length_scale


def _rk4(chart, X, V, h):
    a1 = chart.geodesic_acceleration(X, V)
    k1x, k1v = V, a1
    X2, V2 = X + 0.5 * h * k1x, V + 0.5 * h * k1v
    k2x, k2v = V2, chart.geodesic_acceleration(X2, V2)
    X3, V3 = X + 0.5 * h * k2x, V + 0.5 * h * k2v
    k3x, k3v = V3, chart.geodesic_acceleration(X3, V3)
    X4, V4 = X + h * k3x, V + h * k3v
    k4x, k4v = V4, chart.geodesic_acceleration(X4, V4)
    Xn = X + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    Vn = V + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return Xn, Vn


def geodesic_shoot(chart: AmbientChart, x, v, T: float, step: Optional[float] = None) -> GeodesicPath:
    """Integrate ``gamma'' + Gamma(gamma', gamma') = 0`` with fixed-step RK4.

    The path is truncated (``exited=True``) at the last step that stays in
    the chart domain.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    chart.check_domain(x)
    if T < 0:
        raise ValueError("T must be non-negative")
    h0 = default_geodesic_step(chart) if step is None else float(step)
    nsteps = max(1, int(np.ceil(T / h0 - 1e-12))) if T > 0 else 0
    h = T / nsteps if nsteps else 0.0
    times, pts, vels = [0.0], [x.copy()], [v.copy()]
    X, V = x.copy(), v.copy()
    exited = False
    for k in range(nsteps):
        Xn, Vn = _rk4(chart, X, V, h)
        if not chart.contains(Xn) or not np.all(np.isfinite(Vn)):
            exited = True
            break
        X, V = Xn, Vn
        times.append((k + 1) * h)
        pts.append(X.copy())
        vels.append(V.copy())
    return GeodesicPath(np.array(times), np.array(pts), np.array(vels), exited)


def exp_map(chart: AmbientChart, X, V, steps: int = 32) -> np.ndarray:
    """Batched ``exp_X(V)``: RK4 with a fixed number of steps over unit time."""
    X = np.array(X, dtype=float)
    V = np.array(V, dtype=float)
    h = 1.0 / steps
    for _ in range(steps):
        X, V = _rk4(chart, X, V, h)
    return X


# -- presets -----------------------------------------------------------------


def flat(dim: int = 2, periods: Optional[Sequence] = None, length_scale: float = 1.0) -> AmbientChart:
    def g(X):
        return np.broadcast_to(np.eye(dim), X.shape + (dim,)).copy()

    def gam(X):
        return np.zeros(X.shape[:-1] + (dim,) * 3)

    def riem(X):
        return np.zeros(X.shape[:-1] + (dim,) * 4)

    return AmbientChart(dim, g, periods=periods, kind="flat", length_scale=length_scale,
                        christoffel_fn=gam, riemann_fn=riem, label="flat")


def flat_torus() -> AmbientChart:
    chart = flat(2, periods=(2 * np.pi, 2 * np.pi))
    return chart


def round_sphere() -> AmbientChart:
    """Unit sphere in polar coordinates ``(theta, phi)``; ``phi`` is periodic."""

    def g(X):
        th = X[..., 0]
        G = np.zeros(X.shape + (2,))
        G[..., 0, 0] = 1.0
        G[..., 1, 1] = np.sin(th) ** 2
        return G

    def gam(X):
        th = X[..., 0]
        out = np.zeros(X.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = np.cos(th) / np.sin(th)
        return out

    def riem(X):
        return _from_two_dim(np.sin(X[..., 0]) ** 2)

    return AmbientChart(2, g, bounds=((0.0, np.pi), (-np.inf, np.inf)), periods=(None, 2 * np.pi),
                        kind="round-sphere", christoffel_fn=gam, riemann_fn=riem, label="unit round sphere")


def _from_two_dim(r1212):
    out = np.zeros(np.shape(r1212) + (2, 2, 2, 2))
    out[..., 0, 1, 0, 1] = out[..., 1, 0, 1, 0] = r1212
    out[..., 0, 1, 1, 0] = out[..., 1, 0, 0, 1] = -r1212
    return out


@dataclass(frozen=True)
class Profile:
    """A warping profile with its first two derivatives."""

    f: Callable
    df: Callable
    ddf: Callable
    name: str = ""


COSH = Profile(np.cosh, np.sinh, np.cosh, "cosh")


def surface_of_revolution(profile: Profile = COSH, r_max: float = 3.0) -> AmbientChart:
    """``dr^2 + f(r)^2 dtheta^2`` on ``[-r_max, r_max] x S^1``."""
    f, df, ddf = profile.f, profile.df, profile.ddf

    def g(X):
        r = X[..., 0]
        G = np.zeros(X.shape + (2,))
        G[..., 0, 0] = 1.0
        G[..., 1, 1] = f(r) ** 2
        return G

    def gam(X):
        r = X[..., 0]
        out = np.zeros(X.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -f(r) * df(r)
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = df(r) / f(r)
        return out

    def riem(X):
        r = X[..., 0]
        return _from_two_dim(-f(r) * ddf(r))

    return AmbientChart(2, g, bounds=((-r_max, r_max), (-np.inf, np.inf)), periods=(None, 2 * np.pi),
                        kind="surface-of-revolution", christoffel_fn=gam, riemann_fn=riem,
                        label=f"surface of revolution f={profile.name}")


def cosh_surface(r_max: float = 3.0) -> AmbientChart:
    return surface_of_revolution(COSH, r_max)


@dataclass(frozen=True)
class Profile2:
    """A profile ``f(x, y)`` with gradient and Hessian evaluators."""

    f: Callable
    grad: Callable
    hess: Callable
    name: str = ""


def _cc_f(x, y):
    return np.cosh(x) * np.cosh(y)


def _cc_grad(x, y):
    return np.stack([np.sinh(x) * np.cosh(y), np.cosh(x) * np.sinh(y)], axis=-1)


def _cc_hess(x, y):
    fxx = np.cosh(x) * np.cosh(y)
    fxy = np.sinh(x) * np.sinh(y)
    return np.stack([np.stack([fxx, fxy], -1), np.stack([fxy, fxx], -1)], -2)


COSH_COSH = Profile2(_cc_f, _cc_grad, _cc_hess, "cosh(x)cosh(y)")


def warped3d(profile: Profile2 = COSH_COSH, extent: float = 3.0) -> AmbientChart:
    """``dx^2 + dy^2 + f(x, y)^2 dtheta^2`` with coordinates ``(x, y, theta)``."""
    f, grad, hess = profile.f, profile.grad, profile.hess

    def g(X):
        G = np.zeros(X.shape + (3,))
        G[..., 0, 0] = G[..., 1, 1] = 1.0
        G[..., 2, 2] = f(X[..., 0], X[..., 1]) ** 2
        return G

    def gam(X):
        x, y = X[..., 0], X[..., 1]
        fv, gr = f(x, y), grad(x, y)
        out = np.zeros(X.shape[:-1] + (3, 3, 3))
        for a in range(2):
            out[..., a, 2, 2] = -fv * gr[..., a]
            out[..., 2, a, 2] = out[..., 2, 2, a] = gr[..., a] / fv
        return out

    def riem(X):
        x, y = X[..., 0], X[..., 1]
        fv, hs = f(x, y), hess(x, y)
        out = np.zeros(X.shape[:-1] + (3,) * 4)
        for a in range(2):
            for b in range(2):
                val = -fv * hs[..., a, b]
                out[..., a, 2, b, 2] = out[..., 2, a, 2, b] = val
                out[..., a, 2, 2, b] = out[..., 2, a, b, 2] = -val
        return out

    return AmbientChart(3, g, bounds=((-extent, extent), (-extent, extent), (-np.inf, np.inf)),
                        periods=(None, None, 2 * np.pi), kind="warped-3d", christoffel_fn=gam,
                        riemann_fn=riem, label=f"warped product f={profile.name}")


def eguchi_hanson(a: float = 2.0) -> AmbientChart:
    """Eguchi-Hanson metric on a chart around the zero-section sphere.

    Coordinates ``(x1, x2, y1, y2)``: ``x`` is stereographic on the base sphere
    (from the pole opposite to ``x = 0``), ``y`` is Cartesian in the fibre.
    With ``rho = |y|`` and ``W = a / sqrt(a^2 + 4 rho^2)`` the metric is

        W |dy + A J y|^2 + (a^2 / 4W) * 4 |dx|^2 / (1 + |x|^2)^2

    where ``A = 2 (x2 dx1 - x1 dx2) / (1 + |x|^2)`` is the connection one-form
    and ``J`` the quarter turn in the fibre.  ``y = 0`` is the bolt, a round
    sphere of radius ``a / 2``.
    """
    a = float(a)

    def g(X):
        x1, x2, y1, y2 = (X[..., i] for i in range(4))
        q = 1.0 + x1**2 + x2**2
        B = 4.0 / q**2
        W = a / np.sqrt(a**2 + 4.0 * (y1**2 + y2**2))
        A1, A2 = 2.0 * x2 / q, -2.0 * x1 / q
        zero, one = np.zeros_like(x1), np.ones_like(x1)
        D1 = np.stack([-y2 * A1, -y2 * A2, one, zero], axis=-1)
        D2 = np.stack([y1 * A1, y1 * A2, zero, one], axis=-1)
        G = W[..., None, None] * (D1[..., :, None] * D1[..., None, :] + D2[..., :, None] * D2[..., None, :])
        base = (a**2 / 4.0) * B / W
        G[..., 0, 0] += base
        G[..., 1, 1] += base
        return G

    return AmbientChart(4, g, kind="eguchi-hanson", label=f"Eguchi-Hanson a={a:g}")


def product(first: AmbientChart, second: AmbientChart) -> AmbientChart:
    """Riemannian product with block-diagonal metric."""
    d1, d2 = first.dim, second.dim

    def g(X):
        G = np.zeros(X.shape + (d1 + d2,))
        G[..., :d1, :d1] = first.metric_fn(X[..., :d1])
        G[..., d1:, d1:] = second.metric_fn(X[..., d1:])
        return G

    return AmbientChart(d1 + d2, g, bounds=first.bounds + second.bounds, periods=first.periods + second.periods,
                        kind="product", length_scale=min(first.length_scale, second.length_scale),
                        label=f"{first.label} x {second.label}")


def user_chart(dim: int, metric_fn: MetricFn, bounds=None, periods=None, length_scale: float = 1.0) -> AmbientChart:
    return AmbientChart(dim, metric_fn, bounds=bounds, periods=periods, kind="user", length_scale=length_scale)
