"""Discrete closed submanifolds: closed polylines (n = 1) and structured grids (n = 2).

Curves are the primary citizen.  Along a curve all derivatives are taken with
respect to metric chord length: with chords ``l+`` and ``l-`` to the next and
previous sample, the three-point non-uniform formulas

    x_s  = (l-^2 d+ - l+^2 d-) / (l+ l- (l+ + l-))
    x_ss = 2 (l- d+ + l+ d-)   / (l+ l- (l+ + l-))

are second order, and exact on regular polygons in flat space.  The covariant
acceleration is ``x_ss + Gamma(e, e)`` with ``e = x_s / |x_s|``; its normal
part is the mean curvature vector.

Surfaces use 5-point stencils along each grid direction (Fornberg weights on
non-periodic edges).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .ambient import AmbientChart
from .errors import DegenerateInputError, FrameError, SingularityError, ValidationError

ORTHO_TOL = 1e-8


@dataclass
class DiscreteImmersion:
    """A sampled closed submanifold in a chart.

    ``samples`` has shape ``(N, d)`` for curves (cyclic adjacency) and
    ``(N1, N2, d)`` for surfaces.  ``periodic`` flags each grid direction of a
    surface; ``param_step`` is the parameter spacing of a surface grid.
    """

    chart: AmbientChart
    samples: np.ndarray
    n: int = 1
    periodic: tuple = (True,)
    param_step: tuple = (1.0,)

    def __post_init__(self):
        self.samples = np.array(self.samples, dtype=float)
        X = self.samples
        if self.n not in (1, 2):
            raise ValidationError("only curves (n=1) and surfaces (n=2) are supported")
        if X.ndim != self.n + 1 or X.shape[-1] != self.chart.dim:
            raise ValidationError(f"samples shape {X.shape} does not match n={self.n}, d={self.chart.dim}")
        if self.n == 1:
            self.periodic = (True,)
            if len(X) < 3:
                raise ValidationError("a closed curve needs at least 3 samples")
        else:
            self.periodic = tuple(bool(p) for p in self.periodic)
            self.param_step = tuple(float(s) for s in self.param_step)
            if len(self.periodic) != 2 or len(self.param_step) != 2:
                raise ValidationError("surface grids need two periodic flags and two parameter steps")
            if min(X.shape[:2]) < 5:
                raise ValidationError("surface grids need at least 5 samples per direction")
        if not np.all(np.isfinite(X)):
            raise ValidationError("samples must be finite")
        self.chart.check_domain(X)
        if self.n == 1:
            step = self.chart.displacement(X, np.roll(X, -1, axis=0))
            if np.any(np.max(np.abs(step), axis=-1) == 0.0):
                raise ValidationError("adjacent samples must be distinct")

    @property
    def m(self) -> int:
        return self.chart.dim - self.n

    @property
    def count(self) -> int:
        return int(np.prod(self.samples.shape[:-1]))

    def with_samples(self, samples) -> "DiscreteImmersion":
        return replace(self, samples=np.array(samples, dtype=float))


@dataclass
class FrameField:
    """Per-sample orthonormal frames and extrinsic curvature.

    Shapes use ``...`` for the sample index (or grid indices):
    ``tangents (..., n, d)``, ``normals (..., m, d)``, ``h (..., m, n, n)``,
    ``H (..., m)``, ``H_vector (..., d)``.
    """

    points: np.ndarray
    metric: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    h: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    H_vector: Optional[np.ndarray] = None

    def inner(self, u, v):
        return np.einsum("...a,...ab,...b->...", u, self.metric, v)

    def orthonormality_residual(self) -> float:
        E = np.concatenate([self.tangents, self.normals], axis=-2)
        gram = np.einsum("...ia,...ab,...jb->...ij", E, self.metric, E)
        return float(np.max(np.abs(gram - np.eye(E.shape[-2]))))


# -- metric helpers ----------------------------------------------------------


def _inner(G, u, v):
    return np.einsum("...a,...ab,...b->...", u, G, v)


def chord_lengths(chart: AmbientChart, X, D):
    """Metric length of displacements ``D`` based at ``X``, metric at the midpoint."""
    Gm = chart.metric(X + 0.5 * D)
    return np.sqrt(np.maximum(_inner(Gm, D, D), 0.0))


def segment_lengths(imm: DiscreteImmersion) -> np.ndarray:
    if imm.n != 1:
        raise ValidationError("segment lengths are defined for curves")
    X = imm.samples
    D = imm.chart.displacement(X, np.roll(X, -1, axis=0))
    return chord_lengths(imm.chart, X, D)


# -- curves ------------------------------------------------------------------


@dataclass
class CurveJet:
    """Arclength derivatives of a closed curve, shared by frames and the flow."""

    points: np.ndarray
    metric: np.ndarray
    chords: np.ndarray       # l_k = |x_{k+1} - x_k|
    weights: np.ndarray      # (l_k + l_{k-1}) / 2
    unit_tangent: np.ndarray
    acceleration: np.ndarray  # x_ss + Gamma(e, e)
    H_vector: np.ndarray


def curve_jet(imm: DiscreteImmersion) -> CurveJet:
    chart = imm.chart
    X = imm.samples
    dp = chart.displacement(X, np.roll(X, -1, axis=0))
    dm = chart.displacement(X, np.roll(X, 1, axis=0))
    lp = chord_lengths(chart, X, dp)
    lm = np.roll(lp, 1)
    if np.min(lp) <= 0.0:
        raise DegenerateInputError("curve has a zero-length segment")
    denom = (lp * lm * (lp + lm))[:, None]
    x_s = (lm[:, None] ** 2 * dp - lp[:, None] ** 2 * dm) / denom
    x_ss = 2.0 * (lm[:, None] * dp + lp[:, None] * dm) / denom
    G = chart.metric(X)
    gam = chart.christoffel(X)
    e = x_s / np.sqrt(_inner(G, x_s, x_s))[:, None]
    acc = x_ss + np.einsum("kcab,ka,kb->kc", gam, e, e)
    H = acc - _inner(G, acc, e)[:, None] * e
    return CurveJet(X, G, lp, 0.5 * (lp + lm), e, acc, H)


def _gram_schmidt(G, vec, basis, tol):
    """Remove ``basis`` components from ``vec`` (metric ``G``); ``None`` if the rest is tiny."""
    w = vec.copy()
    for _ in range(2):  # reorthogonalise once for stability
        for b in basis:
            w = w - (w @ G @ b) * b
    nrm2 = w @ G @ w
    ref = vec @ G @ vec
    if ref <= 0 or nrm2 <= (tol**2) * ref:
        return None
    return w / math.sqrt(nrm2)


def _complete_normals(G, tangents, m, seeds, tol=1e-3):
    basis = list(tangents)
    normals = []
    for s in seeds:
        if len(normals) == m:
            break
        w = _gram_schmidt(G, np.asarray(s, dtype=float), basis, tol)
        if w is not None:
            basis.append(w)
            normals.append(w)
    return normals


def _normal_frames(G, T, m):
    """Normal frames per sample, propagated along the sample order.

    ``G`` is ``(K, d, d)`` and ``T`` is ``(K, n, d)`` (orthonormal tangents).
    Each sample is seeded with the previous sample's normals; when that seed
    degenerates the coordinate axes are used instead.
    """
    K, d = G.shape[0], G.shape[-1]
    axes = list(np.eye(d))
    out = np.empty((K, m, d))
    prev = None
    for k in range(K):
        normals = []
        if prev is not None:
            normals = _complete_normals(G[k], T[k], m, prev, tol=0.3)
        if len(normals) < m:
            normals = _complete_normals(G[k], T[k], m, (prev if prev is not None else []) + axes)
            if len(normals) < m:
                normals = _complete_normals(G[k], T[k], m, axes)
        if len(normals) < m:
            raise FrameError(f"normal frame completion failed at sample {k}")
        if prev is not None and m == 1 and normals[0] @ G[k] @ prev[0] < 0:
            normals[0] = -normals[0]
        out[k] = normals
        prev = list(out[k])
    return out


def _curve_frames(imm: DiscreteImmersion) -> tuple[FrameField, CurveJet]:
    jet = curve_jet(imm)
    T = jet.unit_tangent[:, None, :]
    normals = _normal_frames(jet.metric, T, imm.m) if imm.m > 0 else np.empty((imm.count, 0, imm.chart.dim))
    ff = FrameField(jet.points, jet.metric, T, normals, jet.weights)
    return ff, jet


# -- surfaces ----------------------------------------------------------------

_C1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_C2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def fd_weights(offsets: Sequence[float], order: int) -> np.ndarray:
    """Finite-difference weights at 0 for the given offsets (unit spacing)."""
    x = np.asarray(offsets, dtype=float)
    k = len(x)
    V = np.vander(x, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _grid_derivative(chart, X, axis, order, periodic, step):
    """Derivative of grid coordinates along one grid axis (relative displacements)."""
    N = X.shape[axis]
    out = np.zeros(X.shape)
    if periodic:
        w = _C1 if order == 1 else _C2
        for j, off in enumerate(range(-2, 3)):
            if w[j] == 0.0 or off == 0:
                continue
            out += w[j] * chart.displacement(X, np.roll(X, -off, axis=axis))
        return out / step**order
    for i in range(N):
        lo = min(max(i - 2, 0), N - 5)
        offs = np.arange(lo, lo + 5) - i
        w = fd_weights(offs, order)
        Xi = np.take(X, i, axis=axis)
        acc = np.zeros(Xi.shape)
        for wj, off in zip(w, offs):
            if off != 0:
                acc += wj * chart.displacement(Xi, np.take(X, i + off, axis=axis))
        idx = [slice(None)] * X.ndim
        idx[axis] = i
        out[tuple(idx)] = acc / step**order
    return out


def _grid_mixed(chart, X, periodic, step):
    """Mixed derivative d_u d_v via first derivatives of shifted grids."""
    Xu = _grid_derivative(chart, X, 0, 1, periodic[0], step[0])
    # differentiate the tangent field itself (a vector field, no wrapping needed)
    N = X.shape[1]
    out = np.zeros(X.shape)
    if periodic[1]:
        for j, off in enumerate(range(-2, 3)):
            if _C1[j] != 0.0:
                out += _C1[j] * np.roll(Xu, -off, axis=1)
        return out / step[1]
    for i in range(N):
        lo = min(max(i - 2, 0), N - 5)
        offs = np.arange(lo, lo + 5) - i
        w = fd_weights(offs, 1)
        out[:, i] = sum(wj * Xu[:, i + off] for wj, off in zip(w, offs)) / step[1]
    return out


def _surface_jet(imm: DiscreteImmersion):
    chart, X = imm.chart, imm.samples
    per, st = imm.periodic, imm.param_step
    Xu = _grid_derivative(chart, X, 0, 1, per[0], st[0])
    Xv = _grid_derivative(chart, X, 1, 1, per[1], st[1])
    Xuu = _grid_derivative(chart, X, 0, 2, per[0], st[0])
    Xvv = _grid_derivative(chart, X, 1, 2, per[1], st[1])
    Xuv = _grid_mixed(chart, X, per, st)
    G = chart.metric(X)
    gam = chart.christoffel(X)
    P = np.stack([Xu, Xv], axis=-2)  # (..., 2, d)
    D2 = np.stack([np.stack([Xuu, Xuv], -2), np.stack([Xuv, Xvv], -2)], -3)  # (..., 2, 2, d)
    cov = D2 + np.einsum("...cab,...ia,...jb->...ijc", gam, P, P)
    # Gram-Schmidt of (Xu, Xv): e = Tm @ P
    nu = np.sqrt(_inner(G, Xu, Xu))
    e1 = Xu / nu[..., None]
    w = Xv - _inner(G, Xv, e1)[..., None] * e1
    nw = np.sqrt(_inner(G, w, w))
    e2 = w / nw[..., None]
    Tm = np.zeros(X.shape[:-1] + (2, 2))
    Tm[..., 0, 0] = 1.0 / nu
    Tm[..., 1, 0] = -_inner(G, Xv, e1) / (nu * nw)
    Tm[..., 1, 1] = 1.0 / nw
    area = nu * nw  # sqrt(det induced metric)
    return G, np.stack([e1, e2], -2), Tm, cov, area


def _surface_weights(imm, area):
    wts = area * imm.param_step[0] * imm.param_step[1]
    for ax in range(2):
        if not imm.periodic[ax]:
            idx = [slice(None)] * 2
            for end in (0, -1):
                idx[ax] = end
                wts[tuple(idx)] *= 0.5
    return wts


def _surface_frames(imm: DiscreteImmersion):
    G, E, Tm, cov, area = _surface_jet(imm)
    shape = E.shape[:-2]
    d = imm.chart.dim
    normals = _normal_frames(G.reshape(-1, d, d), E.reshape(-1, 2, d), imm.m).reshape(shape + (imm.m, d))
    ff = FrameField(imm.samples, G, E, normals, _surface_weights(imm, area))
    return ff, (Tm, cov)


# -- public operations -------------------------------------------------------


def frames_at(imm: DiscreteImmersion) -> FrameField:
    """Orthonormal tangent and normal frames at every sample."""
    if imm.n == 1:
        return _curve_frames(imm)[0]
    return _surface_frames(imm)[0]


def second_fundamental_form(imm: DiscreteImmersion, frames: Optional[FrameField] = None) -> FrameField:
    """Fill ``h[..., alpha, i, j] = <nabla_{e_i} e_j, nu_alpha>``."""
    if imm.n == 1:
        ff, jet = _curve_frames(imm)
        if frames is not None:
            ff = replace(frames)
        h = np.einsum("kc,kcb,kab->ka", jet.acceleration, ff.metric, ff.normals)[:, :, None, None]
    else:
        ff, (Tm, cov) = _surface_frames(imm)
        if frames is not None:
            ff = replace(frames)
        # <cov_ab, nu_alpha> then rotate into the orthonormal tangent frame
        proj = np.einsum("...abc,...cd,...xd->...xab", cov, ff.metric, ff.normals)
        h = np.einsum("...ia,...jb,...xab->...xij", Tm, Tm, proj)
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
    ff.h = h
    return ff


def mean_curvature(imm: DiscreteImmersion, frames: Optional[FrameField] = None) -> FrameField:
    """Mean curvature ``H^alpha = sum_i h_{alpha ii}`` and its ambient vector."""
    ff = frames if frames is not None and frames.h is not None else second_fundamental_form(imm, frames)
    ff.H = np.einsum("...xii->...x", ff.h)
    ff.H_vector = np.einsum("...x,...xd->...d", ff.H, ff.normals)
    return ff


def volume(imm: DiscreteImmersion) -> float:
    """Length of a curve (midpoint-metric chords) or area of a surface grid."""
    if imm.n == 1:
        return math.fsum(segment_lengths(imm))
    _, _, _, _, area = _surface_jet(imm)
    return math.fsum(_surface_weights(imm, area).ravel())


def spacing_ratio(imm: DiscreteImmersion) -> float:
    seg = segment_lengths(imm)
    return float(seg.max() / seg.min())


def _unwrap(imm: DiscreteImmersion):
    chart, X = imm.chart, imm.samples
    steps = chart.displacement(X, np.roll(X, -1, axis=0))
    U = X[0] + np.vstack([np.zeros(chart.dim), np.cumsum(steps, axis=0)])
    return U, U[-1] - U[0]  # closing offset is a lattice vector of periods


def resample(imm: DiscreteImmersion, target_count: Optional[int] = None, passes: int = 2) -> DiscreteImmersion:
    """Redistribute curve samples uniformly in metric arclength.

    Coordinates are interpolated with a periodic cubic spline in cumulative
    chord length; the first sample is kept in place.
    """
    if imm.n != 1:
        raise ValidationError("resample is implemented for curves")
    M = imm.count if target_count is None else int(target_count)
    if M < 8:
        raise ValidationError("target_count must be at least 8")
    cur = imm
    for _ in range(passes):
        seg = segment_lengths(cur)
        L = math.fsum(seg)
        if not L > 1e-12 * cur.chart.length_scale:
            raise DegenerateInputError("curve length below tolerance")
        U, wind = _unwrap(cur)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        s[-1] = L
        Y = U - np.outer(s / L, wind)
        Y[-1] = Y[0]
        spline = CubicSpline(s, Y, bc_type="periodic")
        t = L * np.arange(M) / M
        new = spline(t) + np.outer(t / L, wind)
        cur = cur.with_samples(cur.chart.wrap(new))
    return cur


def _segment_distance(P0, P1, Q0, Q1):
    """Euclidean distance between segments ``[P0, P1]`` and ``[Q0, Q1]`` (broadcast)."""
    d1, d2, r = P1 - P0, Q1 - Q0, P0 - Q0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-300, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        t_cl = np.clip(t, 0.0, 1.0)
        s = np.where(t < 0.0, np.clip(-c / a, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / a, 0.0, 1.0), s))
    diff = (P0 + s[..., None] * d1) - (Q0 + t_cl[..., None] * d2)
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


def min_nonadjacent_distance(imm: DiscreteImmersion, chunk: int = 256) -> float:
    """Smallest chart-coordinate distance between non-adjacent segments (O(N^2))."""
    chart, X = imm.chart, imm.samples
    N = len(X)
    D = chart.displacement(X, np.roll(X, -1, axis=0))
    best = np.inf
    idx = np.arange(N)
    for start in range(0, N, chunk):
        i = idx[start:start + chunk]
        rel = chart.displacement(X[i][:, None, :], X[None, :, :])  # nearest image of Q0 relative to P0
        P0 = np.zeros((len(i), 1, chart.dim))
        P1 = D[i][:, None, :]
        Q0 = rel
        Q1 = rel + D[None, :, :]
        dist = _segment_distance(P0, P1, Q0, Q1)
        gap = np.abs(i[:, None] - idx[None, :])
        gap = np.minimum(gap, N - gap)
        dist = np.where(gap <= 1, np.inf, dist)
        best = min(best, float(dist.min()))
    return best


def is_embedded(imm: DiscreteImmersion, rel_tol: float = 1e-6) -> bool:
    if imm.n != 1:
        return True
    coord_seg = np.linalg.norm(imm.chart.displacement(imm.samples, np.roll(imm.samples, -1, axis=0)), axis=-1)
    return min_nonadjacent_distance(imm) > rel_tol * float(coord_seg.min())


def ensure_embedded(imm: DiscreteImmersion, time: Optional[float] = None):
    if not is_embedded(imm):
        raise SingularityError("curve self-intersects", samples=imm.samples.copy(), time=time)


def directed_distance(a: DiscreteImmersion, b: DiscreteImmersion) -> float:
    """``max_{p in a} min_{segments of b}`` distance in the metric at ``p``."""
    chart = a.chart
    P = a.samples
    if b.n != 1:
        rel = chart.displacement(P[:, None, :], b.samples.reshape(-1, chart.dim)[None])
        G = chart.metric(P)[:, None]
        return float(np.sqrt(np.min(_inner(G, rel, rel), axis=1)).max())
    Q = b.samples
    Dq = chart.displacement(Q, np.roll(Q, -1, axis=0))
    # whiten with g(p) = L L^T so every metric product below is Euclidean
    L = np.linalg.cholesky(chart.metric(P))
    r = chart.displacement(P[:, None, :], Q[None, :, :]) @ L  # from p to segment start
    D = Dq[None, :, :] @ L
    dd = np.sum(D * D, axis=-1)
    t = np.clip(-np.sum(r * D, axis=-1) / dd, 0.0, 1.0)
    w = r + t[..., None] * D
    dist2 = np.sum(w * w, axis=-1)
    return float(np.sqrt(np.maximum(dist2.min(axis=1), 0.0)).max())


def hausdorff_distance(a: DiscreteImmersion, b: DiscreteImmersion) -> float:
    if a.n == 2:
        a, b = b, a
    return max(directed_distance(a, b), directed_distance(b, a))


def write_csv(imm: DiscreteImmersion, path, extra: Optional[dict] = None) -> None:
    """One row per sample: coordinates plus optional per-sample columns."""
    X = imm.samples.reshape(-1, imm.chart.dim)
    extra = extra or {}
    cols = [f"x{i}" for i in range(imm.chart.dim)] + list(extra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(X)):
            row = [repr(float(v)) for v in X[k]] + [repr(float(np.ravel(extra[c])[k])) for c in extra]
            w.writerow(row)


# -- constructors ------------------------------------------------------------


def curve_from_function(chart: AmbientChart, fn, count: int) -> DiscreteImmersion:
    """Sample ``fn(u)`` at ``u = 2 pi k / count``."""
    u = 2 * np.pi * np.arange(count) / count
    return DiscreteImmersion(chart, chart.wrap(fn(u)), n=1)
