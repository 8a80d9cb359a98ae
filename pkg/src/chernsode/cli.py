"""Command-line front end.

    chernsode <task> <problem.json>     task in {analyze, classify, verify,
                                        push, jets, riemann}
    chernsode selftest

Reads a JSON problem description, dispatches to the library and writes a
JSON report to stdout (all logging goes to stderr).  Exit code 0 means every
check came in under its tolerance, 1 means some check failed, 2 means the
input could not be used; input errors are themselves reported on stdout as
{"error": {"kind", "message", "location"}}.  Reports are byte-identical for
identical inputs: floats are emitted with 17 significant digits and every
sampling step is seeded.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .expressions import (
    DomainError, ParseError, UnknownIdentifier, VarSet, parse, to_string,
)
from .sode import (
    JetPoint1, OracleMismatch, SodeSystem, eval_array, point_batch,
    sample_points, splitting_curvature,
)
from .chern import (
    curvature_components, curvature_oracle_residual, eigenstructure_residual,
    torsion_oracle_residual, verify_characterization,
    verify_structure_identities,
)
from .classify import (
    NotPositiveDefinite, classification_report, first_prolongation_dim,
    holonomy_span, kosambi_invariants,
)
from .natjets import (
    MissingInverse, VerticalAutomorphism, curvature_kernel_dim,
    distribution_span, infinitesimal_equivariance, prolong1,
    push_sode_symbolic, push_sode_value, random_polynomial_field,
    verify_functoriality,
)
from .riemann import (
    MetricField, SingularMetric, cross_check, geodesic_spray,
    hyperbolic_metric_signature, metric_compatibility,
)
from . import selftest as selftest_mod

TASKS = ("analyze", "classify", "verify", "push", "jets", "riemann")


class CliInputError(Exception):
    def __init__(self, kind, message, location=None):
        super().__init__(message)
        self.kind = kind
        self.location = location


# --------------------------------------------------------------------------
# deterministic JSON emitter (17 significant digits for floats)
# --------------------------------------------------------------------------

def _format_float(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("non-finite value in report")
    if x == 0.0:
        return "0"
    return format(x, ".17g")


def emit_json(value, indent=0) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _format_float(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        items = [emit_json(v, indent + 1) for v in value]
        if not items:
            return "[]"
        inner = ",\n".join("  " * (indent + 1) + s for s in items)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        rows = []
        for key, v in value.items():
            rows.append("  " * (indent + 1) + json.dumps(str(key)) + ": "
                        + emit_json(v, indent + 1))
        return "{\n" + ",\n".join(rows) + "\n" + pad + "}"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def serialize_report(report) -> str:
    return emit_json(report) + "\n"


# --------------------------------------------------------------------------
# problem specification
# --------------------------------------------------------------------------

DEFAULT_TOLERANCES = {"identity": 1e-9, "oracle": 1e-10, "rank": 1e-8}


class Problem:
    def __init__(self, raw):
        if not isinstance(raw, dict):
            raise CliInputError("validation", "top level must be an object")
        self.raw = raw
        n = raw.get("dimension")
        if not isinstance(n, int) or n < 1:
            raise CliInputError("validation", "dimension must be a positive "
                                "integer", "dimension")
        self.n = n
        self.vars = self._parse_vars(raw.get("variables"))
        self.system = SodeSystem(vars=self.vars,
                                 F=tuple(self._expr(text, f"F[{i}]")
                                         for i, text in
                                         enumerate(self._strings("F", n))))
        self.metric = self._parse_metric(raw.get("metric"))
        self.U = self._parse_matrix(raw.get("U"), "U")
        self.automorphism = self._parse_automorphism(raw.get("automorphism"))
        self.tolerances = dict(DEFAULT_TOLERANCES)
        for key, val in (raw.get("tolerances") or {}).items():
            if key not in DEFAULT_TOLERANCES:
                raise CliInputError("validation", f"unknown tolerance {key!r}",
                                    "tolerances")
            self.tolerances[key] = float(val)
        self.tasks = raw.get("tasks")
        if self.tasks is not None:
            for name in self.tasks:
                if name not in TASKS:
                    raise CliInputError("validation",
                                        f"unknown task {name!r}", "tasks")
        self.points = self._parse_samples(raw.get("samples"))

    # -- helpers ------------------------------------------------------------

    def _strings(self, key, count, where=None):
        val = self.raw.get(key)
        where = where or key
        if not isinstance(val, list) or len(val) != count \
                or not all(isinstance(s, str) for s in val):
            raise CliInputError("validation",
                                f"{where} must be a list of {count} strings",
                                where)
        return val

    def _expr(self, text, location):
        try:
            return parse(text, self.vars)
        except ParseError as exc:
            raise CliInputError("syntax", str(exc), location)
        except UnknownIdentifier as exc:
            raise CliInputError("syntax", str(exc), location)

    def _parse_vars(self, spec):
        if spec is None:
            return VarSet.default(self.n)
        if spec.get("parameters"):
            # sampling assigns no values to parameters; require numeric F
            raise CliInputError("validation",
                                "parameters are not supported in problem "
                                "files; substitute numeric values",
                                "variables.parameters")
        try:
            return VarSet(time=spec["time"],
                          positions=tuple(spec["positions"]),
                          velocities=tuple(spec["velocities"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliInputError("validation", f"bad variables: {exc}",
                                "variables")

    def _parse_matrix(self, rows, where):
        if rows is None:
            return None
        n = self.n
        if not isinstance(rows, list) or len(rows) != n \
                or any(not isinstance(r, list) or len(r) != n for r in rows):
            raise CliInputError("validation", f"{where} must be {n}x{n}",
                                where)
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                out[i, j] = self._expr(rows[i][j], f"{where}[{i}][{j}]")
        return out

    def _parse_metric(self, rows):
        m = self._parse_matrix(rows, "metric")
        if m is None:
            return None
        try:
            return MetricField(vars=self.vars,
                               g=tuple(tuple(row) for row in m),
                               box=self._box_override())
        except ValueError as exc:
            raise CliInputError("validation", str(exc), "metric")

    def _parse_automorphism(self, spec):
        if spec is None:
            return None
        if not isinstance(spec, dict) or "phi" not in spec:
            raise CliInputError("validation",
                                "automorphism needs a phi list", "automorphism")
        phi = tuple(self._expr(t, f"automorphism.phi[{i}]")
                    for i, t in enumerate(spec["phi"]))
        inverse = None
        if spec.get("inverse") is not None:
            inverse = tuple(self._expr(t, f"automorphism.inverse[{i}]")
                            for i, t in enumerate(spec["inverse"]))
        if len(phi) != self.n or (inverse and len(inverse) != self.n):
            raise CliInputError("validation",
                                f"automorphism needs {self.n} components",
                                "automorphism")
        try:
            return VerticalAutomorphism(vars=self.vars, phi=phi,
                                        inverse=inverse)
        except ValueError as exc:
            raise CliInputError("validation", str(exc), "automorphism")

    def _box_override(self):
        samples = self.raw.get("samples") or {}
        box = samples.get("box") or {}
        out = {}
        for role in ("time", "position", "velocity"):
            if role in box:
                lo, hi = box[role]
                out[role] = (float(lo), float(hi))
        return out

    def _parse_samples(self, spec):
        spec = spec or {}
        mode = spec.get("mode", "random")
        if mode == "explicit":
            pts = spec.get("points")
            if not isinstance(pts, list) or not pts:
                raise CliInputError("validation",
                                    "explicit mode needs a points list",
                                    "samples.points")
            out = []
            n = self.n
            for k, row in enumerate(pts):
                if len(row) != 2 * n + 1:
                    raise CliInputError(
                        "validation",
                        f"point {k} must have {2 * n + 1} entries",
                        f"samples.points[{k}]")
                out.append(JetPoint1(float(row[0]),
                                     tuple(map(float, row[1:1 + n])),
                                     tuple(map(float, row[1 + n:]))))
            return out
        if mode != "random":
            raise CliInputError("validation",
                                f"unknown sampling mode {mode!r}",
                                "samples.mode")
        if "seed" not in spec:
            raise CliInputError("validation",
                                "random sampling requires a seed",
                                "samples.seed")
        count = int(spec.get("count", 25))
        return sample_points(self.vars, count, int(spec["seed"]),
                             self._box_override())


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------

def _array_values(arr, s, points):
    """Expr array -> nested lists with a trailing per-point axis."""
    vals = eval_array(arr, s.vars.names, point_batch(s.vars, points))
    return vals.tolist()


def _point_list(points):
    return [[p.t, list(p.x), list(p.v)] for p in points]


def task_analyze(problem: Problem) -> dict:
    s, pts = problem.system, problem.points
    tol = problem.tolerances
    sc = splitting_curvature(s, check="none")
    comp = curvature_components(s)
    kos = kosambi_invariants(s)
    checks = {
        "torsion_oracle": torsion_oracle_residual(s, pts),
        "curvature_oracle": curvature_oracle_residual(s, pts),
        "eigenstructure": eigenstructure_residual(s, pts),
    }
    report = {
        "points": _point_list(pts),
        "components": {
            "P": _array_values(sc.P, s, pts),
            "T": _array_values(sc.T, s, pts),
            "A": _array_values(comp.A, s, pts),
            "B": _array_values(comp.B, s, pts),
            "R": _array_values(comp.R, s, pts),
        },
        "kosambi": {
            "charpoly_symbolic": [to_string(c) for c in kos.charpoly],
            "charpoly_at_points": _array_values(
                np.asarray(kos.charpoly, dtype=object), s, pts),
        },
        "holonomy_span_per_point": [holonomy_span(s, p, tol["rank"])
                                    for p in pts],
        "checks": {key: {"residual": val, "pass": bool(val <= tol["oracle"])}
                   for key, val in checks.items()},
    }
    report["pass"] = all(c["pass"] for c in report["checks"].values())
    return report


def _condition_dict(result):
    out = {"status": result.status}
    if result.witness:
        w = result.witness
        out["witness"] = {
            "component": w["component"],
            "point": None if w["point"] is None else
            [w["point"].t, list(w["point"].x), list(w["point"].v)],
            "value": w["value"],
        }
    return out


def task_classify(problem: Problem) -> dict:
    s, pts = problem.system, problem.points
    rep = classification_report(s, pts, U=problem.U,
                                rank_tol=problem.tolerances["rank"])
    report = {
        "flags": {name: _condition_dict(res) for name, res in rep.flags.items()},
        "holonomy_span_dim": rep.holonomy_span_dim,
        "unimodular": _condition_dict(rep.unimodular),
    }
    if rep.unimodular_decomposition is not None:
        f0, fi = rep.unimodular_decomposition
        report["unimodular_decomposition"] = {
            "F_0": to_string(f0), "F_i": [to_string(f) for f in fi]}
    passed = True
    if rep.orthogonal_residuals is not None:
        tol = problem.tolerances["identity"]
        report["orthogonal_residuals"] = {
            key: {"residual": val, "pass": bool(val <= tol)}
            for key, val in rep.orthogonal_residuals.items()}
        passed = all(c["pass"] for c in report["orthogonal_residuals"].values())
    report["pass"] = bool(passed)
    return report


def task_verify(problem: Problem) -> dict:
    s, pts = problem.system, problem.points
    tol = problem.tolerances
    residuals = {}
    residuals.update(verify_structure_identities(s, pts))
    residuals["torsion_oracle"] = torsion_oracle_residual(s, pts)
    residuals["curvature_oracle"] = curvature_oracle_residual(s, pts)
    for key, val in verify_characterization(s, pts).items():
        residuals[f"characterization_{key}"] = val
    residuals["eigenstructure"] = eigenstructure_residual(s, pts)
    report = {"points": len(pts), "residuals": {}}
    for key, val in residuals.items():
        limit = tol["oracle"] if "oracle" in key else tol["identity"]
        report["residuals"][key] = {"residual": val, "tolerance": limit,
                                    "pass": bool(val <= limit)}
    report["pass"] = all(c["pass"] for c in report["residuals"].values())
    return report


def task_push(problem: Problem) -> dict:
    if problem.automorphism is None:
        raise CliInputError("validation", "push needs an automorphism",
                            "automorphism")
    s, pts = problem.system, problem.points
    auto = problem.automorphism
    auto.validate(pts)
    tol = problem.tolerances["identity"]
    res = verify_functoriality(auto, s, pts)
    report = {
        "matched_points": [
            {"source": [p.t, list(p.x), list(p.v)],
             "pushed": (lambda q: [q.t, list(q.x), list(q.v)])(prolong1(auto, p)),
             "pushed_value": push_sode_value(auto, s, p).tolist()}
            for p in pts],
        "residuals": {key: {"residual": val, "pass": bool(val <= tol)}
                      for key, val in res.items()},
    }
    if auto.inverse is not None:
        pushed = push_sode_symbolic(auto, s)
        report["pushed_system"] = [to_string(f) for f in pushed.F]
    report["pass"] = all(c["pass"] for c in report["residuals"].values())
    return report


def task_jets(problem: Problem) -> dict:
    s, pts = problem.system, problem.points
    n = s.n
    p = pts[0]
    rank, svals = distribution_span(n, s, p, seed=2024)
    expected = 11 if n == 1 else n * (3 * n * n + 11 * n + 10) // 2
    gap = float(svals[expected - 1] / svals[expected]) \
        if len(svals) > expected and svals[expected] > 0 else float(1e18)
    kernel = curvature_kernel_dim(s, p)
    kernel_expected = 3 * n * (n + 2) * (n + 1) // 2
    equiv = 0.0
    for k in range(10):
        u = random_polynomial_field(s.vars, seed=9000 + k, degree=3)
        equiv = max(equiv, *infinitesimal_equivariance(s, u, pts[k % len(pts)]))
    tol = problem.tolerances["identity"]
    prolongation_dim = first_prolongation_dim(min(n, 4))
    report = {
        "distribution_rank": {"rank": rank, "expected": expected,
                              "svd_gap": gap,
                              "pass": bool(rank == expected)},
        "curvature_kernel": {"dim": kernel, "expected": kernel_expected,
                             "pass": bool(kernel == kernel_expected)},
        "equivariance": {"residual": equiv, "pass": bool(equiv <= tol)},
        "first_prolongation": {"dim": prolongation_dim,
                               "pass": bool(prolongation_dim == 0)},
    }
    report["pass"] = all(block["pass"] for block in report.values()
                         if isinstance(block, dict))
    return report


def task_riemann(problem: Problem) -> dict:
    if problem.metric is None:
        raise CliInputError("validation", "riemann needs a metric", "metric")
    metric = problem.metric
    pts = problem.points
    tol = problem.tolerances
    cross = cross_check(metric, points=pts)
    compat = metric_compatibility(metric, points=pts)
    signature = hyperbolic_metric_signature(metric, points=pts)
    spray = geodesic_spray(metric)
    report = {
        "spray": [to_string(f) for f in spray.F],
        "cross_formulas": {key: {"residual": val,
                                 "pass": bool(val <= tol["identity"])}
                           for key, val in cross.items()},
        "metric_compatibility": {key: {"residual": val,
                                       "pass": bool(val <= tol["identity"])}
                                 for key, val in compat.items()},
        "companion_signature": list(signature),
    }
    report["pass"] = (all(c["pass"] for c in report["cross_formulas"].values())
                      and all(c["pass"] for c in
                              report["metric_compatibility"].values())
                      and signature == (metric.n + 1, metric.n))
    return report


TASK_RUNNERS = {
    "analyze": task_analyze,
    "classify": task_classify,
    "verify": task_verify,
    "push": task_push,
    "jets": task_jets,
    "riemann": task_riemann,
}


def run(spec_path: str, task: str) -> dict:
    """Load a problem file and run one task; returns the report dict."""
    if task not in TASKS:
        raise CliInputError("validation", f"unknown task {task!r}", "task")
    try:
        with open(spec_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise CliInputError("io", str(exc), spec_path)
    except json.JSONDecodeError as exc:
        raise CliInputError("json", str(exc), spec_path)
    problem = Problem(raw)
    if problem.tasks is not None and task not in problem.tasks:
        raise CliInputError("validation",
                            f"task {task!r} not enabled in this problem file",
                            "tasks")
    report = {"task": task, "dimension": problem.n,
              "tolerances": problem.tolerances}
    report.update(TASK_RUNNERS[task](problem))
    return report


def run_selftest() -> dict:
    results = selftest_mod.run_all(serialize_report)
    return {"task": "selftest",
            "criteria": results,
            "pass": all(r["pass"] for r in results)}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chernsode",
        description="Connection, curvature and jet invariants of second-order "
                    "ODE systems.")
    parser.add_argument("task", help="one of %s or selftest" % (TASKS,))
    parser.add_argument("problem", nargs="?",
                        help="JSON problem file (not used by selftest)")
    args = parser.parse_args(argv)

    try:
        if args.task == "selftest":
            report = run_selftest()
        else:
            if args.problem is None:
                raise CliInputError("validation",
                                    f"task {args.task!r} needs a problem file",
                                    "problem")
            report = run(args.problem, args.task)
    except CliInputError as exc:
        sys.stdout.write(serialize_report(
            {"error": {"kind": exc.kind, "message": str(exc),
                       "location": exc.location}}))
        return 2
    except (ParseError, UnknownIdentifier) as exc:
        sys.stdout.write(serialize_report(
            {"error": {"kind": "syntax", "message": str(exc),
                       "location": None}}))
        return 2
    except (DomainError, ZeroDivisionError, SingularMetric,
            NotPositiveDefinite, MissingInverse, OracleMismatch,
            ValueError) as exc:
        kind = "DomainError" if isinstance(exc, ZeroDivisionError) \
            else type(exc).__name__
        sys.stdout.write(serialize_report(
            {"error": {"kind": kind, "message": str(exc), "location": None}}))
        return 2
    except RecursionError:
        sys.stdout.write(serialize_report(
            {"error": {"kind": "validation",
                       "message": "expression too deeply nested",
                       "location": None}}))
        return 2

    sys.stdout.write(serialize_report(report))
    if args.task == "selftest":
        for row in report["criteria"]:
            status = "pass" if row["pass"] else "FAIL"
            print(f"{row['id']:>4}  {status}  {row['name']}", file=sys.stderr)
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
