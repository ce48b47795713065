"""Pointwise strong-stability operator on the normal bundle.

For orthonormal tangents ``e_i`` and normals ``nu_a`` the partial Ricci
operator is ``Rc[a, b] = sum_i R(e_i, nu_a, e_i, nu_b)`` and the shape
quadratic is ``A[a, b] = sum_ij h[a, i, j] h[b, i, j]``.  With the
sphere-positive curvature sign of :mod:`mcflab.ambient` the stability matrix
is ``S = -Rc - A``; a closed geodesic in a surface of Gauss curvature ``K``
gets ``S = -K``.  Strong stability means ``S`` is uniformly positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .ambient import CurvatureData
from .errors import CertificationError
from .submanifold import DiscreteImmersion, FrameField, mean_curvature, segment_lengths

DEFAULT_MARGIN = 1e-4


def partial_ricci(cdata, frames: FrameField) -> np.ndarray:
    """``sum_i R(e_i, nu_a, e_i, nu_b)`` per sample, shape ``(..., m, m)``."""
    R = cdata.riemann if isinstance(cdata, CurvatureData) else np.asarray(cdata)
    E, N = frames.tangents, frames.normals
    Rc = np.einsum("...abcd,...ia,...xb,...ic,...yd->...xy", R, E, N, E, N)
    return 0.5 * (Rc + np.swapaxes(Rc, -1, -2))


def shape_quadratic(frames: FrameField) -> np.ndarray:
    """``sum_ij h_aij h_bij`` per sample; positive semidefinite."""
    h = frames.h
    return np.einsum("...xij,...yij->...xy", h, h)


def stability_operator(riemann, frames: FrameField) -> np.ndarray:
    return -partial_ricci(riemann, frames) - shape_quadratic(frames)


@dataclass
class StabilityCertificate:
    operators: np.ndarray
    eigenvalues: np.ndarray
    c0: float
    margin: float = DEFAULT_MARGIN
    scenario: str = ""
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return bool(self.c0 > self.margin)

    @property
    def smallest(self) -> np.ndarray:
        return self.eigenvalues[..., 0]

    @classmethod
    def merge(cls, parts: Iterable["StabilityCertificate"], scenario: str = "") -> "StabilityCertificate":
        parts = list(parts)
        ops = np.concatenate([p.operators.reshape((-1,) + p.operators.shape[-2:]) for p in parts])
        eig = np.concatenate([p.eigenvalues.reshape((-1, p.eigenvalues.shape[-1])) for p in parts])
        return cls(ops, eig, float(eig[:, 0].min()), parts[0].margin, scenario or parts[0].scenario,
                   sum((p.notes for p in parts), []))

    def summary(self) -> dict:
        eig = self.eigenvalues.reshape(-1, self.eigenvalues.shape[-1])
        return {
            "scenario": self.scenario,
            "c0": self.c0,
            "margin": self.margin,
            "verdict": "strongly-stable" if self.verdict else "not-strongly-stable",
            "samples": int(eig.shape[0]),
            "eigenvalues": eig.tolist(),
            "notes": list(self.notes),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)


def certify_strong_stability(imm: DiscreteImmersion, margin: float = DEFAULT_MARGIN,
                             scenario: str = "", frames: Optional[FrameField] = None) -> StabilityCertificate:
    """Evaluate ``S`` at every sample; ``c0`` is the smallest eigenvalue seen."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    ff = mean_curvature(imm, frames)
    flat_pts = imm.samples.reshape(-1, imm.chart.dim)
    R = imm.chart.riemann(flat_pts)
    bad = ~np.all(np.isfinite(R.reshape(len(flat_pts), -1)), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise CertificationError(f"curvature evaluation failed at sample {k}", index=k)
    R = R.reshape(imm.samples.shape[:-1] + R.shape[-4:])
    S = stability_operator(R, ff)
    eig = np.linalg.eigvalsh(S)
    bad = ~np.all(np.isfinite(eig.reshape(-1, eig.shape[-1])), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise CertificationError(f"stability operator not finite at sample {k}", index=k)
    return StabilityCertificate(S, eig, float(eig[..., 0].min()), margin, scenario)


def second_variation_form(imm: DiscreteImmersion, cert: StabilityCertificate, V: np.ndarray,
                          frames: Optional[FrameField] = None):
    """Discrete second-variation quadratic form on a closed curve.

    ``V`` holds normal-frame components, shape ``(N, m)``.  Returns
    ``(Q, mass)`` with ``Q = sum_k w_k (|nabla^perp V|^2 + V.S.V)`` and
    ``mass = sum_k w_k |V|^2``.  The normal derivative compares ``V`` at
    ``k + 1`` with ``V`` at ``k`` expressed in the ``k + 1`` normal frame.
    """
    ff = frames if frames is not None else mean_curvature(imm)
    G, Nf, w = ff.metric, ff.normals, ff.weights
    nxt = np.roll(np.arange(len(V)), -1)
    seg = segment_lengths(imm)
    # transport: components of nu_b(k) in the frame at k+1
    P = np.einsum("kxa,kab,kyb->kxy", Nf[nxt], G[nxt], Nf)
    dV = (V[nxt] - np.einsum("kxy,ky->kx", P, V)) / seg[:, None]
    grad = np.sum(seg * np.sum(dV**2, axis=1))
    pot = np.sum(w * np.einsum("kx,kxy,ky->k", V, cert.operators, V))
    return float(grad + pot), float(np.sum(w * np.sum(V**2, axis=1)))
