"""Squared distance to a reference submanifold and the partial-trace estimate.

``psi = d(p, Sigma)^2``.  Scenarios with Fermi-type coordinates supply psi in
closed form (:class:`ClosedFormDistance`).  Otherwise :class:`NumericalDistance`
projects onto a closed reference curve by damped Gauss-Newton over
``(base parameter, normal offset)``, with the exponential map from
:func:`mcflab.ambient.exp_map`.

The Hessian is the covariant one, ``d_a d_b psi - Gamma^c_ab d_c psi``, raised
by ``g^{-1}``; ``tr_n`` sums the ``n`` smallest eigenvalues of that
endomorphism.  A barrier certificate records the infimum of
``tr_n(Hess psi) / psi`` over a Fermi grid filling the tube of radius
``epsilon1``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .ambient import AmbientChart, exp_map
from .errors import CertificationError, DistanceError, OutOfTubeError, ValidationError
from .submanifold import DiscreteImmersion, _unwrap, frames_at, segment_lengths

DEFAULT_SAFETY = 0.05
REFINE_TOL = 0.02

_D1 = {-2: 1.0 / 12.0, -1: -8.0 / 12.0, 1: 8.0 / 12.0, 2: -1.0 / 12.0}
_D2 = {-2: -1.0 / 12.0, -1: 16.0 / 12.0, 1: 16.0 / 12.0, 2: -1.0 / 12.0}  # centre weight -30/12


# -- distance evaluators -----------------------------------------------------


@dataclass(frozen=True)
class ClosedFormDistance:
    """psi and its coordinate gradient from closed-form expressions."""

    psi: Callable
    grad: Callable
    label: str = ""
    hess_step: float = 1e-3

    def __call__(self, P):
        return self.psi(np.asarray(P, dtype=float))

    def gradient(self, P):
        return self.grad(np.asarray(P, dtype=float))


def radial_distance(axes, label="") -> ClosedFormDistance:
    """``psi = sum of squares of the given coordinates`` (necks of warped products)."""
    axes = list(axes)

    def psi(P):
        return np.sum(P[..., axes] ** 2, axis=-1)

    def grad(P):
        out = np.zeros(P.shape)
        out[..., axes] = 2.0 * P[..., axes]
        return out

    return ClosedFormDistance(psi, grad, label or f"sum of squares of axes {axes}")


def coordinate_offset_distance(axis: int, value: float, period: Optional[float] = None, label="") -> ClosedFormDistance:
    """``psi = (x_axis - value)^2``, nearest image when ``period`` is given."""

    def delta(P):
        dlt = P[..., axis] - value
        if period is not None:
            dlt = dlt - period * np.round(dlt / period)
        return dlt

    def psi(P):
        return delta(P) ** 2

    def grad(P):
        out = np.zeros(P.shape)
        out[..., axis] = 2.0 * delta(P)
        return out

    return ClosedFormDistance(psi, grad, label or f"(x{axis} - {value:g})^2")


def circle_distance(radius: float, label="") -> ClosedFormDistance:
    """Flat plane, ``psi = (|x| - radius)^2``."""

    def psi(P):
        return (np.linalg.norm(P, axis=-1) - radius) ** 2

    def grad(P):
        r = np.linalg.norm(P, axis=-1)
        return (2.0 * (r - radius) / r)[..., None] * P

    return ClosedFormDistance(psi, grad, label or f"distance to circle of radius {radius:g}")


class NumericalDistance:
    """Squared distance to a closed reference curve by Gauss-Newton projection.

    Unknowns are the arclength parameter ``s`` of the foot point and the
    normal offset ``w`` (components in an orthonormal normal frame); the
    residual is ``exp_{sigma(s)}(w . nu(s)) - p`` in chart coordinates.
    """

    hess_step = 1e-2

    def __init__(self, sigma: DiscreteImmersion, exp_steps: int = 16, tol: float = 1e-8,
                 max_iter: int = 50):
        if sigma.n != 1:
            raise ValidationError("numerical distance is implemented for reference curves")
        self.sigma = sigma
        self.chart: AmbientChart = sigma.chart
        self.exp_steps = exp_steps
        self.tol = tol
        self.max_iter = max_iter
        seg = segment_lengths(sigma)
        self.length = math.fsum(seg)
        U, wind = _unwrap(sigma)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        s[-1] = self.length
        Y = U - np.outer(s / self.length, wind)
        Y[-1] = Y[0]
        self._knots = s[:-1]
        self._wind = wind
        self._spline = CubicSpline(s, Y, bc_type="periodic")
        self._dspline = self._spline.derivative()
        self._seed_normals = frames_at(sigma).normals
        self.m = sigma.m

    def base(self, s):
        sm = np.mod(s, self.length)
        pt = self._spline(sm) + np.outer(sm / self.length, self._wind).reshape(np.shape(s) + (-1,))
        tan = self._dspline(sm) + self._wind / self.length
        return pt, tan

    def _normals(self, pt, tan, seeds):
        G = self.chart.metric(pt)
        e = tan / np.sqrt(np.einsum("ka,kab,kb->k", tan, G, tan))[:, None]
        out = []
        basis = [e]
        for a in range(self.m):
            v = seeds[:, a, :]
            for b in basis:
                v = v - np.einsum("ka,kab,kb->k", v, G, b)[:, None] * b
            v = v / np.sqrt(np.einsum("ka,kab,kb->k", v, G, v))[:, None]
            basis.append(v)
            out.append(v)
        return np.stack(out, axis=1)

    def _endpoint(self, s, w, seeds):
        pt, tan = self.base(s)
        nu = self._normals(pt, tan, seeds)
        V = np.einsum("ka,kad->kd", w, nu)
        return exp_map(self.chart, pt, V, steps=self.exp_steps)

    def _residual(self, P, s, w, seeds):
        return self.chart.displacement(P, self._endpoint(s, w, seeds))

    def project(self, P):
        """Return ``(s, w, iterations)`` for every row of ``P``."""
        chart = self.chart
        P = np.atleast_2d(np.asarray(P, dtype=float))
        K, d = P.shape
        X = self.sigma.samples
        rel = chart.displacement(X[None, :, :], P[:, None, :])
        Gs = chart.metric(X)
        dist2 = np.einsum("kja,jab,kjb->kj", rel, Gs, rel)
        k0 = np.argmin(dist2, axis=1)
        seeds = self._seed_normals[k0]
        s = self._knots[k0].copy()
        w = np.einsum("ka,kab,kxb->kx", rel[np.arange(K), k0], Gs[k0], seeds)
        step = 1e-6 * chart.length_scale
        active = np.ones(K, dtype=bool)
        polish = np.zeros(K, dtype=bool)
        it = 0
        F = self._residual(P, s, w, seeds)
        while np.any(active) and it < self.max_iter:
            it += 1
            idx = np.flatnonzero(active)
            q = np.concatenate([s[idx, None], w[idx]], axis=1)
            J = np.empty((len(idx), d, d))
            for j in range(d):
                qp, qm = q.copy(), q.copy()
                qp[:, j] += step
                qm[:, j] -= step
                Fp = self._residual(P[idx], qp[:, 0], qp[:, 1:], seeds[idx])
                Fm = self._residual(P[idx], qm[:, 0], qm[:, 1:], seeds[idx])
                J[:, :, j] = (Fp - Fm) / (2 * step)
            try:
                delta = -np.linalg.solve(J, F[idx][..., None])[..., 0]
            except np.linalg.LinAlgError:
                raise DistanceError("singular Jacobian in distance projection") from None
            lam = np.ones(len(idx))
            f0 = np.linalg.norm(F[idx], axis=1)
            for _ in range(8):
                qn = q + lam[:, None] * delta
                Fn = self._residual(P[idx], qn[:, 0], qn[:, 1:], seeds[idx])
                worse = np.linalg.norm(Fn, axis=1) > f0 * (1 - 1e-4 * lam) + 1e-15
                if not np.any(worse):
                    break
                lam = np.where(worse, 0.5 * lam, lam)
            s[idx], w[idx], F[idx] = qn[:, 0], qn[:, 1:], Fn
            small = np.max(np.abs(lam[:, None] * delta), axis=1) < self.tol
            done = small & polish[idx]
            polish[idx] = small  # one extra iteration after the tolerance is met
            active[idx[done]] = False
        if np.any(active):
            raise DistanceError(f"projection did not converge for {int(active.sum())} point(s) "
                                f"after {self.max_iter} iterations; worst residual "
                                f"{float(np.linalg.norm(F[active], axis=1).max()):.3e}")
        return s, w, it

    def __call__(self, P):
        P = np.asarray(P, dtype=float)
        flat = P.reshape(-1, P.shape[-1])
        _, w, _ = self.project(flat)
        return np.sum(w**2, axis=1).reshape(P.shape[:-1])

    def gradient(self, P):
        P = np.asarray(P, dtype=float)
        return _fd_gradient(self, P, self.hess_step * self.chart.length_scale)


# -- finite differences of psi ------------------------------------------------


def _stencil(d):
    """Offsets (in units of h) used for a 4th-order gradient + Hessian."""
    offs = [tuple([0] * d)]
    for a in range(d):
        for n in (-2, -1, 1, 2):
            o = [0] * d
            o[a] = n
            offs.append(tuple(o))
    for a, b in itertools.combinations(range(d), 2):
        for n1, n2 in itertools.product((-2, -1, 1, 2), repeat=2):
            o = [0] * d
            o[a], o[b] = n1, n2
            offs.append(tuple(o))
    return offs


def _fd_gradient(fn, P, h):
    d = P.shape[-1]
    out = np.zeros(P.shape)
    for a in range(d):
        for n, wgt in _D1.items():
            Q = P.copy()
            Q[..., a] += n * h
            out[..., a] += wgt * fn(Q)
    return out / h


def _fd_grad_hess(fn, P, h):
    """4th-order gradient and coordinate Hessian of ``fn`` at rows of ``P``."""
    P = np.atleast_2d(P)
    K, d = P.shape
    offs = _stencil(d)
    index = {o: i for i, o in enumerate(offs)}
    Q = P[:, None, :] + h * np.asarray(offs, dtype=float)[None, :, :]
    vals = np.asarray(fn(Q.reshape(-1, d)), dtype=float).reshape(K, len(offs))
    f0 = vals[:, 0]
    grad = np.zeros((K, d))
    hess = np.zeros((K, d, d))

    def at(a, n, b=None, n2=None):
        o = [0] * d
        o[a] = n
        if b is not None:
            o[b] = n2
        return vals[:, index[tuple(o)]] - f0

    for a in range(d):
        grad[:, a] = sum(w * at(a, n) for n, w in _D1.items()) / h
        hess[:, a, a] = sum(w * at(a, n) for n, w in _D2.items()) / h**2
    for a, b in itertools.combinations(range(d), 2):
        acc = sum(w1 * w2 * at(a, n1, b, n2) for (n1, w1), (n2, w2) in itertools.product(_D1.items(), repeat=2))
        hess[:, a, b] = hess[:, b, a] = acc / h**2
    return f0, grad, hess


# -- tube and certificate -----------------------------------------------------


@dataclass
class TubularRegion:
    """Reference ``Sigma``, tube radius and the Fermi sample grid of ``U_eps1``."""

    sigma: DiscreteImmersion
    epsilon1: float
    distance: Optional[object] = None
    sample_grid: Optional[np.ndarray] = None
    grid_shape: tuple = ()

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise ValidationError("epsilon1 must be positive")
        if self.distance is None:
            self.distance = NumericalDistance(self.sigma)

    @property
    def chart(self) -> AmbientChart:
        return self.sigma.chart

    @property
    def analytic(self) -> bool:
        return isinstance(self.distance, ClosedFormDistance)

    def psi(self, P) -> np.ndarray:
        return np.asarray(self.distance(np.asarray(P, dtype=float)), dtype=float)


def fermi_grid(region: TubularRegion, base: int = 16, radial: int = 8, angular: int = 8) -> np.ndarray:
    """Points ``exp_{sigma_k}(r u)`` for base samples ``k``, radii ``r <= eps1`` and unit normals ``u``.

    Codimension one uses both normal sides; higher codimension uses ``angular``
    directions in the span of the first two normals.
    """
    sigma = region.sigma
    chart = sigma.chart
    ff = frames_at(sigma)
    flatX = sigma.samples.reshape(-1, chart.dim)
    flatN = ff.normals.reshape((-1,) + ff.normals.shape[-2:])
    count = len(flatX)
    ks = np.unique(np.floor(np.arange(base) * count / base).astype(int))
    if sigma.m == 1:
        dirs = np.stack([flatN[ks, 0], -flatN[ks, 0]], axis=1)
    else:
        ang = 2 * np.pi * np.arange(angular) / angular
        dirs = np.cos(ang)[None, :, None] * flatN[ks, None, 0] + np.sin(ang)[None, :, None] * flatN[ks, None, 1]
    radii = region.epsilon1 * np.arange(1, radial + 1) / radial
    V = radii[None, None, :, None] * dirs[:, :, None, :]
    X0 = np.broadcast_to(flatX[ks][:, None, None, :], V.shape)
    pts = exp_map(chart, X0.reshape(-1, chart.dim), V.reshape(-1, chart.dim), steps=32)
    return chart.wrap(pts)


def build_grid(region: TubularRegion, base: int = 16, radial: int = 8, angular: int = 8) -> TubularRegion:
    region.sample_grid = fermi_grid(region, base, radial, angular)
    region.grid_shape = (base, radial, angular if region.sigma.m > 1 else 2)
    return region


def squared_distance(region: TubularRegion, p):
    """``(psi, gradient)`` at a point; raises when ``p`` is beyond ``2 eps1``."""
    p = np.asarray(p, dtype=float)
    region.chart.check_domain(p)
    psi = float(region.psi(p[None])[0])
    if psi > (2 * region.epsilon1) ** 2:
        raise OutOfTubeError(f"point at distance {math.sqrt(psi):.4g} is outside 2*eps1 = {2 * region.epsilon1:g}")
    grad = np.asarray(region.distance.gradient(p[None]))[0]
    return psi, grad


def _raise_sorted(H, G):
    """Eigenvalues of ``G^{-1} H`` (real: congruent to a symmetric matrix)."""
    L = np.linalg.cholesky(G)
    Linv = np.linalg.inv(L)
    M = Linv @ H @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


def hessian_batch(region: TubularRegion, P):
    """Covariant Hessian (lowered), ``psi`` and sorted endomorphism eigenvalues at rows of ``P``."""
    chart = region.chart
    P = np.atleast_2d(np.asarray(P, dtype=float))
    h = region.distance.hess_step * chart.length_scale
    psi, grad, hess = _fd_grad_hess(region.psi, P, h)
    gam = chart.christoffel(P)
    cov = hess - np.einsum("kcab,kc->kab", gam, grad)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    G = chart.metric(P)
    return psi, cov, G, _raise_sorted(cov, G)


def hessian_psi(region: TubularRegion, p):
    """Endomorphism ``g^{-1} Hess(psi)`` at ``p`` and its sorted eigenvalues."""
    p = np.asarray(p, dtype=float)
    region.chart.check_domain(p)
    _, cov, G, eig = hessian_batch(region, p[None])
    return np.linalg.solve(G[0], cov[0]), eig[0]


def tr_n_smallest(eigenvalues, n: int) -> float:
    """Sum of the ``n`` smallest eigenvalues."""
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    if not 1 <= n <= len(ev):
        raise ValueError(f"n={n} out of range for {len(ev)} eigenvalues")
    return float(np.sum(ev[:n]))


@dataclass
class BarrierCertificate:
    epsilon1: float
    c1: float
    c1_raw: float
    safety: float
    psi_floor: float
    n: int
    points: np.ndarray
    psi: np.ndarray
    trace_n: np.ndarray
    ratio: np.ndarray
    refinements: int = 0
    region: Optional[TubularRegion] = field(default=None, repr=False)
    scenario: str = ""
    forced: bool = False

    @property
    def verdict(self) -> bool:
        return bool(self.c1 > 0)

    def summary(self) -> dict:
        used = np.isfinite(self.ratio)
        return {
            "scenario": self.scenario,
            "epsilon1": self.epsilon1,
            "c1": self.c1,
            "c1_before_safety": self.c1_raw,
            "safety": self.safety,
            "psi_floor": self.psi_floor,
            "n": self.n,
            "grid_points": int(len(self.psi)),
            "grid_points_used": int(used.sum()),
            "refinements": self.refinements,
            "verdict": "pass" if self.verdict else "fail",
            "forced": self.forced,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.points.shape[-1]
            w.writerow([f"x{i}" for i in range(d)] + ["psi", "tr_n_hess_psi", "ratio"])
            for k in range(len(self.psi)):
                w.writerow([repr(float(v)) for v in self.points[k]]
                           + [repr(float(self.psi[k])), repr(float(self.trace_n[k])), repr(float(self.ratio[k]))])


def _evaluate(region, n, floor):
    P = region.sample_grid
    psi, _, _, eig = hessian_batch(region, P)
    bad = ~np.all(np.isfinite(eig), axis=1) | ~np.isfinite(psi)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise CertificationError(f"Hessian evaluation failed at grid point {k}: {P[k]}", index=k)
    trn = np.sum(eig[:, :n], axis=1)
    ratio = np.where(psi >= floor, trn / np.where(psi > 0, psi, 1.0), np.nan)
    return psi, trn, ratio


def certify_barrier(region: TubularRegion, n: int, psi_floor: Optional[float] = None,
                    safety: float = DEFAULT_SAFETY, base: int = 16, radial: int = 8,
                    angular: int = 8, max_refinements: int = 3, scenario: str = "") -> BarrierCertificate:
    """Certify ``tr_n Hess(psi) >= c1 psi`` on the Fermi grid of ``U_eps1``.

    The grid density doubles while the minimum ratio moves by more than 2%
    between consecutive densities.
    """
    if not 0 <= safety < 1:
        raise ValueError("safety must lie in [0, 1)")
    if n != region.sigma.n:
        raise ValueError("n must equal the dimension of the reference submanifold")
    floor = (1e-3 * region.epsilon1) ** 2 if psi_floor is None else float(psi_floor)
    level = 0
    build_grid(region, base, radial, angular)
    psi, trn, ratio = _evaluate(region, n, floor)
    prev = np.nanmin(ratio)
    while level < max_refinements:
        build_grid(region, base * 2 ** (level + 1), radial * 2 ** (level + 1), angular * 2 ** (level + 1))
        psi2, trn2, ratio2 = _evaluate(region, n, floor)
        cur = np.nanmin(ratio2)
        level += 1
        psi, trn, ratio = psi2, trn2, ratio2
        if abs(cur - prev) <= REFINE_TOL * max(abs(prev), 1e-12):
            break
        prev = cur
    c1_raw = float(np.nanmin(ratio))
    c1 = c1_raw - safety * abs(c1_raw)
    return BarrierCertificate(region.epsilon1, c1, c1_raw, safety, floor, n, region.sample_grid.copy(),
                              psi, trn, ratio, level, region, scenario)


def pseudo_certificate(region: TubularRegion, c1: float, scenario: str = "") -> BarrierCertificate:
    """A certificate with a forced constant (negative controls only)."""
    empty = np.zeros((0, region.chart.dim))
    return BarrierCertificate(region.epsilon1, c1, c1, 0.0, 0.0, region.sigma.n, empty, np.zeros(0),
                              np.zeros(0), np.zeros(0), 0, region, scenario, forced=True)
