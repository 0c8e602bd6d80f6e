"""Command-line interface.

Exit codes: 0 on success, 1 when a requested check fails on valid input,
2 on malformed input or bad usage. All delimited and JSON outputs are
byte-stable for a given input.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import catalog
from .basis import assemble_basis
from .bezier import bezier_mesh
from .direction import compute_direction_labeling, validate_labeling
from .mesh import MeshError, TMesh, dumps_canonical, load_mesh, save_doc, validate_regular
from .refine import RefineTrace, refine_batch, resolve_marks
from .svgplot import mesh_svg
from . import verify as checks


def _read_doc(path: str) -> dict:
    if path in catalog.CATALOG:
        return catalog.CATALOG[path]()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise MeshError(f"cannot read mesh document {path}: {err}")


def _write_doc(doc: dict, path: str):
    data = dumps_canonical(doc)
    if path == "-":
        sys.stdout.write(data)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(data)


def _load(path: str, degree: int | None) -> TMesh:
    doc = _read_doc(path)
    if degree is not None:
        if "degree" in doc and doc["degree"] != degree:
            raise MeshError(
                f"document already fixes degree {doc['degree']}, got --p {degree}")
        doc["degree"] = degree
    mesh = load_mesh(doc)
    return mesh


def cmd_check(args) -> int:
    doc = _read_doc(args.input)
    if args.p is not None:
        doc["degree"] = args.p
    mesh = load_mesh(doc)
    report = {"degree": mesh.degree,
              "nodes": len([n for n, e in mesh.node_elems.items() if e]),
              "elements": len(mesh.active_elements()),
              "edges": len(mesh.active_edges()),
              "extraordinary": sorted(mesh.ev_ids)}
    ok = True
    if "edges" not in doc:  # initial mesh: run structural validation
        try:
            validate_regular(mesh)
            report["regular"] = True
        except MeshError as err:
            report["regular"] = False
            report["regular_error"] = str(err)
            ok = False
        labeled = all(mesh.edges[e].di is not None for e in mesh.active_edges())
        if labeled:
            lab = validate_labeling(mesh, kind=args.labeling)
            report["labeling"] = lab
            if lab["status"] != "pass":
                ok = False
        else:
            lab = compute_direction_labeling(mesh)
            # a totally unstructured mesh is a legitimate finding, not an error
            report["labeling"] = {"status": lab["status"],
                                  "classes": lab.get("classes")}
            if lab["status"] == "totally-unstructured":
                report["labeling"]["witnesses"] = lab["witnesses"]
    report["status"] = "ok" if ok else "invalid"
    sys.stdout.write(dumps_canonical(report))
    return 0 if ok else 1


def cmd_refine(args) -> int:
    doc = _read_doc(args.input)
    if args.p is not None:
        if "degree" in doc and doc["degree"] not in (None, args.p):
            raise MeshError(
                f"document already fixes degree {doc['degree']}, got --p {args.p}")
        doc["degree"] = args.p
    mesh = load_mesh(doc)
    if any(mesh.edges[e].di is None for e in mesh.active_edges()):
        lab = compute_direction_labeling(mesh)
        if lab["status"] != "ok":
            raise MeshError("mesh admits no strict direction labeling; "
                            "refinement needs direction indices")
    marks = []
    for spec in args.marks:
        marks.extend(resolve_marks(mesh, spec))
    trace = RefineTrace.from_doc(doc["trace"]) if "trace" in doc else None
    trace = refine_batch(mesh, marks, trace=trace, level_cap=args.level_cap)
    out = save_doc(mesh)
    out["trace"] = trace.to_doc()
    _write_doc(out, args.out)
    return 0


def cmd_bezier(args) -> int:
    mesh = _load(args.input, args.p)
    bm, info = bezier_mesh(mesh)
    out = save_doc(bm)
    out["ext1"] = {str(n): sorted(v) for n, v in sorted(info["ext1"].items())}
    out["sweeps"] = info["sweeps"]
    _write_doc(out, args.out)
    return 0


def cmd_basis(args) -> int:
    mesh = _load(args.input, args.p)
    basis = assemble_basis(mesh)
    rows = []
    if args.eval:
        src = sys.stdin if args.eval == "-" else open(args.eval, "r", encoding="utf-8")
        try:
            for ln, line in enumerate(src, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    fields = dict(tok.split(":", 1) for tok in line.split())
                    qid = int(fields["elem"])
                    u = float(fields["u"])
                    v = float(fields["v"])
                except (KeyError, ValueError):
                    raise MeshError(f"bad eval line {ln}: {line!r}")
                if qid not in mesh.elements or not mesh.elements[qid].active:
                    raise MeshError(f"eval line {ln}: element {qid} is not active")
                if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                    raise MeshError(f"eval line {ln}: coordinates outside [0,1]")
                for fi in basis.by_element.get(qid, []):
                    rows.append((ln, fi, basis.eval(fi, qid, u, v)))
        finally:
            if src is not sys.stdin:
                src.close()
    target = sys.stdout if args.out in (None, "-") else open(args.out, "w",
                                                             encoding="utf-8", newline="")
    try:
        w = csv.writer(target, lineterminator="\n")
        w.writerow(["point", "basis", "value"])
        for ln, fi, val in rows:
            w.writerow([ln, fi, f"{val:.16g}"])
    finally:
        if target is not sys.stdout:
            target.close()
    sys.stderr.write(f"{len(basis)} basis functions\n")
    return 0


_CHECKS = ("quasi-uniformity", "locality", "complexity-ratio",
           "analysis-suitability", "linear-independence", "poly-reproduction",
           "smoothness")


def cmd_verify(args) -> int:
    doc = _read_doc(args.input)
    if args.p is not None:
        doc.setdefault("degree", args.p)
    mesh = load_mesh(doc)
    trace = RefineTrace.from_doc(doc["trace"]) if "trace" in doc else None
    wanted = args.checks.split(",") if args.checks else list(_CHECKS)
    for name in wanted:
        if name not in _CHECKS:
            raise MeshError(f"unknown check {name!r}; pick from {', '.join(_CHECKS)}")

    if any(mesh.edges[e].di is None for e in mesh.active_edges()):
        lab = compute_direction_labeling(mesh)
        if lab["status"] != "ok":
            raise MeshError("mesh admits no strict direction labeling; "
                            "verification needs direction indices")

    outdir = args.outdir
    os.makedirs(outdir, exist_ok=True)
    basis = None
    reports = []
    for name in wanted:
        if name in ("locality", "complexity-ratio"):
            if trace is None:
                reports.append({"check": name, "status": "skipped",
                                "violations": [],
                                "note": "document carries no refinement trace"})
                continue
            rep = (checks.check_locality(trace, mesh) if name == "locality"
                   else checks.check_complexity_ratio(trace))
        elif name == "quasi-uniformity":
            rep = checks.check_quasi_uniformity(mesh)
        elif name == "analysis-suitability":
            rep = checks.check_analysis_suitability(mesh)
        else:
            if basis is None:
                basis = assemble_basis(mesh)
            if name == "linear-independence":
                rep = checks.check_linear_independence(mesh, basis)
            elif name == "smoothness":
                rep = checks.check_smoothness(mesh, basis)
            else:
                try:
                    rep = checks.check_poly_reproduction(mesh, basis)
                except MeshError as err:
                    rep = {"check": name, "status": "skipped", "violations": [],
                           "note": str(err)}
        reports.append(rep)

    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical({"input": os.path.basename(args.input),
                                  "degree": mesh.degree, "reports": reports}))
    with open(os.path.join(outdir, "report.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "status", "violations", "note"])
        for rep in reports:
            w.writerow([rep["check"], rep["status"], len(rep["violations"]),
                        rep.get("note", "")])
    if not args.no_figures:
        from .figures import save_mesh_figure, save_ratio_figure
        save_mesh_figure(mesh, os.path.join(outdir, "mesh_levels.png"))
        if trace is not None and trace.records:
            save_ratio_figure(trace, os.path.join(outdir, "complexity_ratio.png"))

    failed = [r["check"] for r in reports if r["status"] == "fail"]
    for rep in reports:
        sys.stdout.write(f"{rep['check']}: {rep['status']}\n")
    return 1 if failed else 0


def cmd_svg(args) -> int:
    mesh = _load(args.input, args.p)
    data = mesh_svg(mesh, color_by=args.color_by)
    if args.out == "-":
        sys.stdout.write(data)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(data)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tsrefine",
        description="adaptive spline refinement on unstructured quad meshes")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add_common(sp):
        sp.add_argument("input", help="mesh document (JSON path or catalog name)")
        sp.add_argument("--p", type=int, default=None, help="spline degree (odd)")

    sp = sub.add_parser("check", help="validate a mesh document")
    add_common(sp)
    sp.add_argument("--labeling", choices=("strict", "generalized"),
                    default="strict")
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("refine", help="apply refinement marks")
    add_common(sp)
    sp.add_argument("--marks", action="append", required=True,
                    help="edge:<id> | near:<x>,<y> | curve:<x0>,<y0>:<x1>,<y1>")
    sp.add_argument("--level-cap", type=int, default=30)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_refine)

    sp = sub.add_parser("bezier", help="extract the Bezier partition mesh")
    add_common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_bezier)

    sp = sub.add_parser("basis", help="assemble the basis, optionally evaluate")
    add_common(sp)
    sp.add_argument("--eval", default=None,
                    help="file of lines 'elem:<id> u:<float> v:<float>' or -")
    sp.add_argument("--out", default=None, help="CSV output path (default stdout)")
    sp.set_defaults(fn=cmd_basis)

    sp = sub.add_parser("verify", help="run property checks, write a report")
    add_common(sp)
    sp.add_argument("--checks", default=None,
                    help=f"comma list from: {','.join(_CHECKS)}")
    sp.add_argument("--outdir", default="verify-report")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("svg", help="render active edges as SVG")
    add_common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--color-by", choices=("level", "di"), default="level")
    sp.set_defaults(fn=cmd_svg)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except MeshError as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
