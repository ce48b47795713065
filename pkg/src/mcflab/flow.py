"""Explicit mean curvature flow of closed curves with runtime monitors.

Each step moves every sample by ``dt * H`` (forward Euler) with
``dt = dt_safety * min_chord^2``.  Uniform-arclength resampling runs every
``resample_every`` steps.  Records collect volume, ``sup psi``,
``v = sup e^{c1 t} psi``, the accumulated ``int int |H|^2``, Hausdorff
distance to the reference, ``sup |H|`` and the mass ratio.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .ambient import exp_map
from .barrier import BarrierCertificate
from .errors import DomainError, SingularityError, ValidationError
from .submanifold import (DiscreteImmersion, _inner, curve_jet, ensure_embedded, frames_at,
                          hausdorff_distance, resample, volume, write_csv)

OUTCOMES = ("converged", "extinct", "exited-tube", "exited-domain", "singular", "step-limit")
RECORD_FIELDS = ("t", "volume", "sup_psi", "barrier_v", "dissipation", "hausdorff", "sup_H", "mass_ratio")


@dataclass
class FlowParams:
    dt_safety: float = 0.2
    t_end: float = 10.0
    resample_every: int = 10
    hausdorff_tol: float = 1e-3
    meanH_tol: float = 1e-3
    record_every: int = 1
    converge_records: int = 50
    extinct_fraction: float = 1e-3
    snapshot_every: int = 0
    max_steps: int = 1_000_000

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("dt_safety", "t_end", "hausdorff_tol", "meanH_tol", "extinct_fraction"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.dt_safety > 1:
            raise ValidationError("dt_safety must be <= 1")
        for name in ("resample_every", "record_every", "converge_records", "max_steps"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.snapshot_every < 0:
            raise ValidationError("snapshot_every must be >= 0")


@dataclass
class FlowTrace:
    records: dict = field(default_factory=lambda: {k: [] for k in RECORD_FIELDS})
    snapshots: list = field(default_factory=list)
    outcome: str = "step-limit"
    message: str = ""
    extinction_time: Optional[float] = None
    steps: int = 0
    c1: Optional[float] = None
    epsilon1: Optional[float] = None
    reference_volume: Optional[float] = None
    final: Optional[DiscreteImmersion] = None

    def __getattr__(self, name):
        recs = self.__dict__.get("records")
        if recs is not None and name in recs:
            return np.asarray(recs[name], dtype=float)
        raise AttributeError(name)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.records["t"], dtype=float)

    def append(self, **values):
        for k in RECORD_FIELDS:
            self.records[k].append(float(values[k]))

    def summary(self) -> dict:
        last = {k: (v[-1] if v else None) for k, v in self.records.items()}
        return {
            "outcome": self.outcome,
            "message": self.message,
            "steps": self.steps,
            "records": len(self.records["t"]),
            "extinction_time": self.extinction_time,
            "c1": self.c1,
            "epsilon1": self.epsilon1,
            "final": {k: (None if v is None or not math.isfinite(v) else v) for k, v in last.items()},
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_FIELDS)
            for row in zip(*(self.records[k] for k in RECORD_FIELDS)):
                w.writerow([repr(v) for v in row])

    def write_snapshots(self, directory, prefix: str = "snapshot") -> list:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for i, (t, imm) in enumerate(self.snapshots):
            p = os.path.join(directory, f"{prefix}_{i:04d}.csv")
            write_csv(imm, p, extra={"t": np.full(imm.count, t)})
            paths.append(p)
        return paths


def _advance(imm: DiscreteImmersion, dt: float, jet=None) -> DiscreteImmersion:
    jet = curve_jet(imm) if jet is None else jet
    new = imm.chart.wrap(imm.samples + dt * jet.H_vector)
    if not np.all(imm.chart.contains(new)):
        k = int(np.argmin(imm.chart.contains(new)))
        raise DomainError(f"sample {k} left the chart domain: {new[k]}")
    return DiscreteImmersion(imm.chart, new, n=1)


def max_stable_dt(imm: DiscreteImmersion, dt_safety: float = 1.0) -> float:
    return dt_safety * float(curve_jet(imm).chords.min()) ** 2


def step(imm: DiscreteImmersion, dt: float, dt_safety: float = 1.0) -> DiscreteImmersion:
    """One forward-Euler step ``x <- x + dt H``; verifies embeddedness afterwards."""
    if imm.n != 1:
        raise ValidationError("the flow is implemented for closed curves")
    jet = curve_jet(imm)
    limit = dt_safety * float(jet.chords.min()) ** 2
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValidationError(f"dt={dt:.3e} outside (0, {limit:.3e}]")
    new = _advance(imm, dt, jet)
    ensure_embedded(new)
    return new


class _Monitor:
    """Per-record quantities tied to a certificate (all NaN without one)."""

    def __init__(self, cert: Optional[BarrierCertificate], reference: Optional[DiscreteImmersion]):
        self.cert = cert
        self.region = cert.region if cert is not None else None
        self.reference = reference if reference is not None else (self.region.sigma if self.region else None)
        self.ref_volume = volume(self.reference) if self.reference is not None else None

    def sup_psi(self, imm):
        if self.region is None:
            return math.nan
        return float(np.max(self.region.psi(imm.samples)))

    def hausdorff(self, imm):
        return hausdorff_distance(imm, self.reference) if self.reference is not None else math.nan


def run(imm0: DiscreteImmersion, cert: Optional[BarrierCertificate] = None,
        params: Optional[FlowParams] = None, reference: Optional[DiscreteImmersion] = None) -> FlowTrace:
    """Flow ``imm0`` until convergence, extinction, exit or ``t_end``.

    Without a certificate the tube and barrier columns are NaN and only
    extinction or the time limit can end the run.
    """
    params = params or FlowParams()
    params.validate()
    if imm0.n != 1:
        raise ValidationError("the flow is implemented for closed curves")
    mon = _Monitor(cert, reference)
    c1 = cert.c1 if cert is not None else None
    eps2 = cert.epsilon1**2 if cert is not None else None
    trace = FlowTrace(c1=c1, epsilon1=cert.epsilon1 if cert is not None else None,
                      reference_volume=mon.ref_volume)

    imm = imm0
    V0 = volume(imm)
    psi0 = mon.sup_psi(imm)
    if cert is not None and psi0 > eps2:
        raise ValidationError(f"initial curve leaves the tube: sup psi = {psi0:.4g} > eps1^2 = {eps2:.4g}")
    if mon.ref_volume is not None and not V0 < 2 * mon.ref_volume:
        raise ValidationError(f"initial volume {V0:.6g} is not below twice the reference volume")
    ensure_embedded(imm, 0.0)

    t, diss, nstep, streak = 0.0, 0.0, 0, 0

    def record(jet):
        nonlocal streak
        vol = math.fsum(jet.chords)
        sp = mon.sup_psi(imm)
        hd = mon.hausdorff(imm)
        supH = float(np.sqrt(np.max(_inner(jet.metric, jet.H_vector, jet.H_vector))))
        ratio = vol / mon.ref_volume if mon.ref_volume else math.nan
        v = math.exp(c1 * t) * sp if c1 is not None else math.nan
        trace.append(t=t, volume=vol, sup_psi=sp, barrier_v=v, dissipation=diss, hausdorff=hd,
                     sup_H=supH, mass_ratio=ratio)
        if params.snapshot_every and (len(trace.records["t"]) - 1) % params.snapshot_every == 0:
            trace.snapshots.append((t, imm))
        if hd < params.hausdorff_tol and supH < params.meanH_tol:
            streak += 1
        else:
            streak = 0
        return vol, sp

    jet = curve_jet(imm)
    trace.snapshots.append((0.0, imm))
    record(jet)
    recorded_at = 0
    while True:
        if streak >= params.converge_records:
            trace.outcome = "converged"
            break
        if t >= params.t_end * (1 - 1e-14) or nstep >= params.max_steps:
            trace.outcome = "step-limit"
            break
        dt = params.dt_safety * float(jet.chords.min()) ** 2
        dt = min(dt, params.t_end - t)
        diss += dt * float(np.sum(jet.weights * _inner(jet.metric, jet.H_vector, jet.H_vector)))
        try:
            imm = _advance(imm, dt, jet)
            nstep += 1
            t += dt
            if nstep % params.resample_every == 0:
                imm = resample(imm)
                ensure_embedded(imm, t)
            jet = curve_jet(imm)
        except DomainError as exc:
            trace.outcome, trace.message = "exited-domain", str(exc)
            break
        except SingularityError as exc:
            trace.outcome, trace.message = "singular", f"{exc} at t={t:.6g}"
            trace.snapshots.append((t, imm))
            break
        vol_now = math.fsum(jet.chords)
        extinct = vol_now < params.extinct_fraction * V0
        if extinct or nstep % params.record_every == 0:
            _, sp = record(jet)
            recorded_at = nstep
            if extinct:
                trace.outcome, trace.extinction_time = "extinct", t
                break
            if eps2 is not None and sp > eps2:
                trace.outcome = "exited-tube"
                trace.message = f"sup psi = {sp:.4g} exceeded eps1^2 at t={t:.6g}"
                break
    if trace.outcome in ("converged", "step-limit"):
        try:
            ensure_embedded(imm, t)
        except SingularityError as exc:
            trace.outcome, trace.message = "singular", str(exc)
    if recorded_at != nstep and trace.outcome in ("step-limit", "exited-domain", "singular") and nstep > 0:
        try:
            record(curve_jet(imm))
        except Exception:  # the state that stopped the run may not admit a jet
            pass
    trace.steps = nstep
    trace.final = imm
    if not trace.snapshots or trace.snapshots[-1][1] is not imm:
        trace.snapshots.append((t, imm))
    return trace


# -- monitors -------------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    passed: bool
    values: dict

    def summary(self) -> dict:
        return {"name": self.name, "passed": self.passed, **self.values}


def fitted_decay_rate(times, values, floor: float = 1e-24) -> float:
    """Least-squares rate ``k`` in ``values ~ A e^{-k t}`` over positive entries above ``floor``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = np.isfinite(y) & (y > floor)
    if keep.sum() < 2:
        return math.inf if np.all(np.nan_to_num(y) <= floor) else math.nan
    slope = np.polyfit(t[keep], np.log(y[keep]), 1)[0]
    return float(-slope)


def trapping_check(trace: FlowTrace, cert: BarrierCertificate, slack: float = 0.05) -> CheckReport:
    """``sup psi(t) <= e^{-c1 (t - t0)} sup psi(t0) (1 + slack)`` on every record."""
    t = trace.times
    sp = trace.sup_psi
    bound = np.exp(-cert.c1 * (t - t[0])) * sp[0] * (1 + slack)
    excess = sp - bound
    violations = int(np.sum(excess > 0))
    rate = fitted_decay_rate(t, sp)
    return CheckReport("trapping", violations == 0 and rate >= cert.c1,
                       {"violations": violations, "max_violation": float(max(excess.max(), 0.0)),
                        "fitted_rate": rate, "c1": cert.c1, "slack": slack,
                        "radius_bound_final": float(cert.epsilon1 * math.exp(-cert.c1 * (t[-1] - t[0]) / 2))})


def barrier_monotone_check(trace: FlowTrace, cert: BarrierCertificate, tol: float = 1e-4) -> CheckReport:
    """Largest increase of ``v(t) = sup e^{c1 t} psi`` between consecutive records."""
    v = trace.barrier_v
    inc = float(np.max(np.diff(v), initial=0.0))
    inc = max(inc, 0.0)
    return CheckReport("barrier-monotone", inc < tol, {"max_increment": inc, "tolerance": tol})


def dissipation_check(trace: FlowTrace) -> float:
    """``|V_end - V_0 + int int |H|^2| / V_0``."""
    vol = trace.volume
    return float(abs(vol[-1] - vol[0] + trace.dissipation[-1]) / vol[0])


def nonvanishing_check(trace: FlowTrace, cert: BarrierCertificate, floor: float = 0.9) -> CheckReport:
    """Mass ratio stays above ``floor`` after the first e-folding time ``1 / c1``."""
    t, mr = trace.times, trace.mass_ratio
    late = t >= t[0] + 1.0 / cert.c1
    low = float(mr[late].min()) if np.any(late) else math.nan
    return CheckReport("non-vanishing", bool(np.any(late)) and low >= floor, {"min_mass_ratio": low, "floor": floor})


def monotone_refinement(coarse: CheckReport, fine: CheckReport, factor: float = 1.8) -> bool:
    """The refined run's largest increment shrinks by ``factor`` (two zeros count as a pass)."""
    a, b = coarse.values["max_increment"], fine.values["max_increment"]
    if a == 0.0 and b == 0.0:
        return True
    return b * factor <= a


# -- uniqueness -----------------------------------------------------------------


@dataclass
class UniquenessReport:
    seeds: int
    rng_seed: int
    converged: int
    outcomes: list
    stabilized_away: list
    runs: list

    def summary(self) -> dict:
        return asdict(self)


def random_perturbation(cert: BarrierCertificate, rng: np.random.Generator, modes: int = 3,
                        amplitude=(0.3, 0.8)) -> DiscreteImmersion:
    """Random Fourier normal offset of the reference with ``max |w| = U(amplitude) * eps1``."""
    sigma = cert.region.sigma
    chart = sigma.chart
    N, m = sigma.count, sigma.m
    u = 2 * np.pi * np.arange(N) / N
    w = np.zeros((N, m))
    for a in range(m):
        for k in range(modes + 1):
            ca, sa = rng.normal(size=2)
            w[:, a] += ca * np.cos(k * u) + (sa * np.sin(k * u) if k else 0.0)
    scale = rng.uniform(*amplitude) * cert.epsilon1 / np.max(np.linalg.norm(w, axis=1))
    w *= scale
    nu = frames_at(sigma).normals
    V = np.einsum("ka,kad->kd", w, nu)
    return DiscreteImmersion(chart, chart.wrap(exp_map(chart, sigma.samples, V)), n=1)


def uniqueness_search(cert: BarrierCertificate, seeds: int = 20, rng_seed: int = 0,
                      params: Optional[FlowParams] = None, distance_tol: float = 1e-2) -> UniquenessReport:
    """Flow ``seeds`` random curves in the tube and count those ending near the reference."""
    params = params or FlowParams(hausdorff_tol=distance_tol, meanH_tol=distance_tol, converge_records=10)
    outcomes, away, runs = [], [], []
    converged = 0
    for i in range(seeds):
        rng = np.random.default_rng([rng_seed, i])
        imm0 = random_perturbation(cert, rng)
        entry = {"seed": i}
        try:
            tr = run(imm0, cert, params)
        except Exception as exc:  # individual failures are recorded, not fatal
            outcomes.append("error")
            entry.update(outcome="error", message=str(exc))
            runs.append(entry)
            continue
        fin = tr.summary()["final"]
        near = fin["hausdorff"] is not None and fin["hausdorff"] < distance_tol
        ok = tr.outcome == "converged" and near
        converged += ok
        stalled = fin["sup_H"] is not None and fin["sup_H"] < params.meanH_tol
        if stalled and not near:
            away.append(i)
        outcomes.append(tr.outcome)
        entry.update(outcome=tr.outcome, converged=bool(ok), t=fin["t"], hausdorff=fin["hausdorff"],
                     sup_H=fin["sup_H"], trapping=trapping_check(tr, cert).passed if len(tr.times) > 1 else None)
        runs.append(entry)
    return UniquenessReport(seeds, rng_seed, int(converged), outcomes, away, runs)


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=float)
