"""Command line: ``fovtopo run | validate | certify``.

Exit codes: 0 ok, 2 validation failure (or an uncertified topology for
``certify``), 3 run aborted mid-way.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from ..digraph import build_big_laplacian, build_incidence, certificate_spectrum, is_stability_certified
from .scenario import MODES, ScenarioError, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3


def _load(path):
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return None


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    print(
        f"ok: {sc.n} robots, leader {sc.leader + 1}, {sc.topology.num_edges} edges, "
        f"horizon {sc.horizon:g} s, dt {sc.dt:g} s, mode {sc.mode}"
    )
    return EXIT_OK


def cmd_certify(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    L = build_big_laplacian(build_incidence(sc.topology))
    eig = certificate_spectrum(L)
    ok = is_stability_certified(L)
    edges = ", ".join(f"({i + 1},{j + 1})" for i, j in sc.topology.edges)
    print(f"edges: {edges}")
    print("eigenvalues of sym(L_bar):", np.array2string(eig, precision=6, max_line_width=100))
    print(f"certificate: {'PSD, stability certified' if ok else 'indefinite, not certified'}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_run(args) -> int:
    from .output import emit_outputs
    from .simulate import run

    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    if args.seed is not None and args.seed != sc.seed:
        sc = replace(sc, seed=args.seed)
    log = run(sc, mode=args.mode)
    out = args.out or sc.out_dir
    formats = ("csv", "svg") if args.plots else ("csv",)
    stride = args.stride or sc.csv_stride
    try:
        paths = emit_outputs(log, out, formats, stride)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(f"{log.mode}: {len(log.t)} steps, final F = {log.F[-1]:.3e}, wrote {len(paths)} files to {out}")
    if log.error:
        print(f"aborted: {log.error['message']} (after t = {log.error['t_last_ok']:g} s)", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fovtopo", description="Multi-robot field-of-view topology simulations")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write CSV (and SVG) outputs")
    r.add_argument("scenario")
    r.add_argument("--mode", choices=MODES, help="override the scenario's mode")
    r.add_argument("--out", help="output directory (default: the scenario's output.dir)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--plots", action="store_true", help="also write SVG plots")
    r.add_argument("--stride", type=int, help="write every N-th step to CSV")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse and check a scenario")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("certify", help="print the edge-Laplacian spectrum and stability verdict")
    c.add_argument("scenario")
    c.set_defaults(func=cmd_certify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
