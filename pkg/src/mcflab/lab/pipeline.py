"""Certify, flow and compare against scenario expectations; write run artefacts."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import barrier, flow, stability
from ..errors import LabError
from .config import RunConfig
from .scenarios import CATEGORY_LABELS, OPERATIONS, Scenario, eguchi_hanson_reference, get_scenario

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


@dataclass
class Comparison:
    quantity: str
    measured: object
    expected: str
    provenance: str
    category: str
    passed: Optional[bool]  # None: not applicable to these settings
    note: str = ""

    def line(self) -> str:
        state = "n/a" if self.passed is None else ("PASS" if self.passed else "FAIL")
        m = self.measured
        shown = f"{m:.6g}" if isinstance(m, float) else str(m)
        tail = f"  ({self.note})" if self.note else ""
        return (f"{state:4}  [{CATEGORY_LABELS[self.category]}] {self.quantity} = {shown}; "
                f"expected {self.expected} [{self.provenance}]{tail}")


@dataclass
class PipelineResult:
    status: int
    scenario: str
    operations: list
    measurements: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    files: list = field(default_factory=list)
    report: str = ""


class _Run:
    def __init__(self, config: RunConfig, scenario: Scenario):
        self.config = config
        self.sc = scenario
        self.out = os.path.join(config.output, scenario.name)
        os.makedirs(self.out, exist_ok=True)
        self.chart, self.sigma = scenario.build(config.count)
        self.m: dict = {}
        self.files: list = []
        self._barrier: Optional[barrier.BarrierCertificate] = None

    def path(self, name):
        p = os.path.join(self.out, name)
        self.files.append(p)
        return p

    @property
    def epsilon1(self):
        return self.config.epsilon1 if self.config.epsilon1 is not None else self.sc.epsilon1

    # -- operations ------------------------------------------------------------

    def certify_stability(self):
        cert = stability.certify_strong_stability(self.sigma, self.config.margin, self.sc.name)
        self.m["c0"] = cert.c0
        self.m["stability_verdict"] = cert.verdict
        if self.sc.oracle == "eguchi-hanson":
            ref = np.asarray(eguchi_hanson_reference()["eigenvalues"])
            dev = float(np.max(np.abs(cert.eigenvalues - ref)))
            self.m["oracle_max_deviation"] = dev
            cert.notes.append(f"max deviation from the tabulated oracle: {dev:.3e}")
            cert.notes.append("the second chart (rotated by an isometry) has the same metric "
                              "expression, so its samples repeat these values")
        cert.write_json(self.path("stability.json"))
        return cert

    def barrier_certificate(self):
        if self._barrier is None:
            dist = self.sc.distance() if self.sc.distance is not None else None
            region = barrier.TubularRegion(self.sigma, self.epsilon1, dist)
            self._barrier = barrier.certify_barrier(region, self.sigma.n, self.config.psi_floor,
                                                    self.config.safety, scenario=self.sc.name)
        return self._barrier

    def certify_barrier(self):
        cert = self.barrier_certificate()
        self.m["c1"] = cert.c1
        self.m["c1_before_safety"] = cert.c1_raw
        self.m["barrier_verdict"] = cert.verdict
        self.m["epsilon1"] = cert.epsilon1
        cert.write_csv(self.path("barrier_evidence.csv"))
        _dump({**cert.summary(), "rng_seed": self.config.rng_seed, "analytic_psi": self.sc.analytic_psi},
              self.path("barrier.json"))
        return cert

    def flow_certificate(self):
        if "certify-barrier" not in self.sc.operations:
            return None
        cert = self.barrier_certificate()
        if cert.verdict:
            return cert
        if self.sc.pseudo_c1 is None:
            raise LabError("barrier certificate failed and the scenario defines no forced constant")
        return barrier.pseudo_certificate(cert.region, self.sc.pseudo_c1, self.sc.name)

    def flow(self):
        cert = self.flow_certificate()
        params = self.config.flow_params(self.sc.flow_defaults)
        imm0 = self.sc.initial(self.chart, self.config.count or self.sc.count)
        trace = flow.run(imm0, cert, params, reference=self.sigma)
        fin = trace.summary()["final"]
        self.m.update({
            "flow_outcome": trace.outcome,
            "flow_converged": trace.outcome == "converged",
            "extinction_time": trace.extinction_time,
            "dissipation_residual": flow.dissipation_check(trace),
            "final_hausdorff": fin["hausdorff"],
            "final_sup_H": fin["sup_H"],
            "final_mass_ratio": fin["mass_ratio"],
        })
        summary = {"rng_seed": self.config.rng_seed, "params": vars(params), **trace.summary()}
        if cert is not None:
            trap = flow.trapping_check(trace, cert)
            mono = flow.barrier_monotone_check(trace, cert)
            nonv = flow.nonvanishing_check(trace, cert)
            self.m.update({
                "trapping_violations": trap.values["violations"],
                "trapping_passed": trap.passed,
                "fitted_rate": trap.values["fitted_rate"],
                "barrier_max_increment": mono.values["max_increment"],
                "barrier_monotone_passed": mono.passed,
                "nonvanishing": nonv.passed,
            })
            summary["checks"] = [trap.summary(), mono.summary(), nonv.summary()]
            summary["forced_certificate"] = cert.forced
        trace.write_csv(self.path("flow_trace.csv"))
        self.files.extend(trace.write_snapshots(os.path.join(self.out, "snapshots")))
        _dump(summary, self.path("flow.json"))
        return trace

    def uniqueness(self):
        cert = self.flow_certificate()
        params = self.config.flow_params({**self.sc.flow_defaults, "hausdorff_tol": self.config.uniqueness_tol,
                                          "meanH_tol": self.config.uniqueness_tol, "converge_records": 10})
        rep = flow.uniqueness_search(cert, self.config.seeds, self.config.rng_seed, params,
                                     self.config.uniqueness_tol)
        self.m["uniqueness_converged"] = rep.converged
        self.m["uniqueness_fraction"] = rep.converged / rep.seeds
        self.m["uniqueness_stabilized_away"] = len(rep.stabilized_away)
        _dump(rep.summary(), self.path("uniqueness.json"))
        return rep


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def operations_for(config: RunConfig, scenario: Scenario) -> list:
    if config.operation == "all":
        return [op for op in OPERATIONS if op in scenario.operations]
    if config.operation not in scenario.operations:
        raise LabError(f"scenario {scenario.name!r} does not support {config.operation!r}")
    return [config.operation]


def compare(scenario: Scenario, measurements: dict, settings: dict) -> list:
    out = []
    for exp in scenario.expected:
        if exp.quantity not in measurements:
            continue
        measured = measurements[exp.quantity]
        passed = exp.check(measured) if exp.applies(settings) else None
        out.append(Comparison(exp.quantity, measured, exp.describe(), exp.provenance, exp.category, passed, exp.note))
    return out


def render_report(res: PipelineResult, config: RunConfig, scenario: Scenario) -> str:
    lines = [f"scenario: {scenario.name}" + ("  (negative control)" if scenario.negative_control else ""),
             f"operations: {', '.join(res.operations)}",
             f"rng_seed: {config.rng_seed}", ""]
    lines += [c.line() for c in res.comparisons]
    lines += [f"ERROR {e}" for e in res.errors]
    verdict = {EXIT_OK: "all tagged expectations pass", EXIT_FAILED: "some tagged expectations FAIL",
               EXIT_ERROR: "run aborted with errors"}[res.status]
    lines += ["", f"result: {verdict}"]
    return "\n".join(lines) + "\n"


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Run the configured operations; exit status 0 iff every applicable expectation passes."""
    scenario = get_scenario(config.scenario)
    res = PipelineResult(EXIT_OK, scenario.name, [])
    try:
        res.operations = operations_for(config, scenario)
        run = _Run(config, scenario)
    except LabError as exc:
        res.status, res.errors = EXIT_ERROR, [str(exc)]
        res.report = render_report(res, config, scenario)
        return res
    for op in res.operations:
        log.info("%s: %s", scenario.name, op)
        try:
            getattr(run, op.replace("certify-", "certify_"))()
        except (LabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            res.errors.append(f"{op}: {type(exc).__name__}: {exc}")
    res.measurements = run.m
    res.comparisons = compare(scenario, run.m, config.settings(scenario))
    if res.errors:
        res.status = EXIT_ERROR
    elif any(c.passed is False for c in res.comparisons):
        res.status = EXIT_FAILED
    res.files = run.files
    res.report = render_report(res, config, scenario)
    with open(run.path("report.txt"), "w") as fh:
        fh.write(res.report)
    _dump({"scenario": scenario.name, "rng_seed": config.rng_seed, "operations": res.operations,
           "status": res.status, "measurements": run.m, "errors": res.errors,
           "comparisons": [vars(c) for c in res.comparisons]}, run.path("summary.json"))
    res.files = run.files
    return res
