"""Command-line experiment driver.

Every subcommand reads the same configuration (see :mod:`singreg.config`),
writes its artifacts into the output directory and finishes with a
``manifest.txt`` echoing the resolved configuration.  CSV files are
deterministic for a fixed configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from . import potentials as pot
from .config import load_config
from .energy import DiscreteEnergy, read_field, write_field
from .errors import SingregError
from .minimize import homotopy_minimize, minimize, solve_linear_elliptic, write_homotopy_csv
from .qtensor import LOWER, UPPER, matrices_from_components
from .regularity import calibrate, classify_regular, excess, h2_estimate

SUBCOMMANDS = ("minimize", "homotopy", "psi-table", "excess", "classify", "h2", "growth-check", "elliptic", "calibrate")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


class Run:
    """One invocation: configuration, output directory and the list of files written."""

    def __init__(self, cfg, args):
        self.cfg = cfg
        self.args = args
        self.out = cfg.out_dir
        os.makedirs(self.out, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)

    def energy(self):
        cfg = self.cfg
        grid = cfg.grid()
        return DiscreteEnergy(cfg.density(), cfg.potential(), grid)

    def solved_field(self):
        """The field to analyse: ``--field`` if given, otherwise the minimizer of the configured problem."""
        if self.args.field:
            return read_field(self.args.field)
        de = self.energy()
        field, report = minimize(de, self.cfg.boundary_field(de.grid), self.cfg.solve_options())
        write_field(self.path("solution.field"), field)
        report.write_text(self.path("report.txt"))
        return field


# ---------------------------------------------------------------------------
# subcommands


def cmd_minimize(run):
    de = run.energy()
    field, report = minimize(de, run.cfg.boundary_field(de.grid), run.cfg.solve_options())
    write_field(run.path("solution.field"), field)
    report.write_text(run.path("report.txt"))
    run.csv("report.csv", ["key", "value"], report.rows())
    report.write_trace_csv(run.path("trace.csv"))
    return f"{report.status}: energy {report.energy!r}, gradient norm {report.grad_norm:.3e}"


def cmd_homotopy(run):
    de = run.energy()
    stages = homotopy_minimize(de, run.cfg.eta_schedule(), run.cfg.boundary_field(de.grid), run.cfg.solve_options())
    write_homotopy_csv(run.path("homotopy.csv"), stages)
    write_field(run.path("solution.field"), stages[-1].field)
    return f"{len(stages)} stages, final eta {stages[-1].eta!r}"


def psi_table_rows(steps, min_margin, rule=None):
    """``(lambda1, lambda2, psi, |Lambda|_F, newton_iters)`` over diagonal Q-tensors.

    Eigenvalue pairs run over ``(i - c) / (steps - 1)`` with ``c`` chosen so
    that zero is on the grid; pairs whose margin falls below ``min_margin``
    are skipped.
    """
    span = UPPER - LOWER
    offset = round(-LOWER / span * (steps - 1))
    vals = [(i - offset) * span / (steps - 1) for i in range(steps)]
    rows = []
    for l1 in vals:
        for l2 in vals:
            l3 = -l1 - l2
            lam = (l1, l2, l3)
            margin = min(min(lam) - LOWER, UPPER - max(lam))
            if margin < min_margin:
                continue
            q = np.array([l1, 0.0, l2, 0.0, 0.0])
            sol = pot.bm_dual_solve(q, rule)
            frob = float(np.linalg.norm(matrices_from_components(sol.lam)))
            rows.append((l1, l2, sol.psi, frob, sol.iterations))
    return rows


def cmd_psi_table(run):
    d = run.cfg
    rows = psi_table_rows(d.number("diagnostics", "psi_steps", int), d.number("diagnostics", "psi_min_margin"))
    run.csv("psi_table.csv", ["lambda1", "lambda2", "psi", "lambda_frobenius", "newton_iters"], rows)
    return f"{len(rows)} rows"


def cmd_excess(run):
    field = run.solved_field()
    radii = run.cfg.numbers("diagnostics", "radii")
    for i, x in enumerate(run.cfg.centers(field.grid)):
        excess(field, x, radii).to_csv(run.path(f"excess_{i}.csv"))
    return f"excess at {len(run.cfg.centers(field.grid))} centers"


def _classify_args(cfg):
    return dict(
        L=cfg.number("diagnostics", "L"),
        tau=cfg.number("diagnostics", "tau"),
        eta=cfg.number("diagnostics", "eta"),
        r0=cfg.number("diagnostics", "r0"),
        ratio_cap=cfg.number("diagnostics", "ratio_cap"),
    )


def cmd_classify(run):
    field = run.solved_field()
    scales = [int(s) for s in run.cfg.numbers("diagnostics", "box_scales")] or None
    rep = classify_regular(field, run.cfg.potential(), scales=scales, **_classify_args(run.cfg))
    rep.to_csv(run.path("classification.csv"))
    dim = rep.dimension
    run.csv("dimension.csv", ["scale", "count"], list(zip(dim.scales, dim.counts)))
    suspect = int(rep.suspect_mask.sum())
    run.csv(
        "classification_summary.csv",
        ["regular", "suspect", "dimension", "flag"],
        [(int(rep.regular_mask.sum()), suspect, dim.dimension, dim.flag)],
    )
    return f"{suspect} suspect nodes"


def cmd_h2(run):
    field = run.solved_field()
    d = run.cfg
    rep = h2_estimate(
        field,
        d.number("diagnostics", "inner_frac"),
        d.number("diagnostics", "outer_frac"),
        [int(s) for s in d.numbers("diagnostics", "h_steps")],
    )
    rep.to_csv(run.path("h2.csv"))
    return f"stability ratio {rep.stability_ratio!r}"


def cmd_growth_check(run):
    d = run.cfg
    f = d.potential()
    r = d.number("diagnostics", "growth_r")
    raw = d.get("diagnostics", "growth_gamma").strip()
    gamma = 2.0 - 1.0 / r if raw == "auto" else d.number("diagnostics", "growth_gamma")
    oracle = getattr(f, "margin_oracle", None)
    # Sample the shell where the distance to the boundary is at most that of radius r.
    max_margin = (oracle.max_margin * (1.0 - r)) if oracle is not None else np.inf
    rep = pot.check_growth_log(
        f,
        gamma,
        d.number("diagnostics", "growth_c"),
        n_samples=d.number("diagnostics", "growth_samples", int),
        seed=d.seed,
        max_margin=max_margin,
    )
    header = ["gamma", "c_const", "n_samples", "worst_violation", "passed"]
    header += [f"z{i}" for i in range(len(rep.worst_point))] + [f"y{i}" for i in range(len(rep.worst_direction))]
    row = [rep.gamma, rep.c_const, rep.n_samples, rep.worst_violation, rep.passed]
    run.csv("growth.csv", header, [row + list(rep.worst_point) + list(rep.worst_direction)])
    return f"worst violation {rep.worst_violation!r}"


def cmd_elliptic(run):
    cfg = run.cfg
    grid = cfg.grid()
    data = cfg.boundary_field(grid)
    field, resid = solve_linear_elliptic(cfg.coefficient(), grid, data, tol=cfg.number("solver", "tol"))
    write_field(run.path("solution.field"), field)
    gap = float(np.abs(field.values - data.values)[field.interior_mask].max(initial=0.0))
    run.csv("elliptic.csv", ["residual", "max_deviation_from_data"], [(resid, gap)])
    return f"residual {resid:.3e}"


def cmd_calibrate(run):
    field = run.solved_field()
    d = run.cfg
    cal = calibrate(
        field,
        d.potential(),
        d.number("diagnostics", "tau"),
        d.number("diagnostics", "r0"),
        safety=d.number("diagnostics", "calibration_safety"),
    )
    run.csv("calibration.csv", ["key", "value"], sorted(cal.as_dict().items()))
    return f"L={cal.L!r} eta={cal.eta!r} ratio_cap={cal.ratio_cap!r}"


COMMANDS = {
    "minimize": cmd_minimize,
    "homotopy": cmd_homotopy,
    "psi-table": cmd_psi_table,
    "excess": cmd_excess,
    "classify": cmd_classify,
    "h2": cmd_h2,
    "growth-check": cmd_growth_check,
    "elliptic": cmd_elliptic,
    "calibrate": cmd_calibrate,
}


# ---------------------------------------------------------------------------
# entry point


def write_manifest(run, subcommand, elapsed, summary):
    lines = [
        f"subcommand: {subcommand}",
        f"summary: {summary}",
        f"seed: {run.cfg.seed}",
        f"files: {', '.join(run.files)}",
        f"singreg: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"wall_time_s: {elapsed:.3f}",
        "",
        "# resolved configuration",
        run.cfg.to_text(),
    ]
    with open(os.path.join(run.out, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines))


def build_parser():
    parser = argparse.ArgumentParser(prog="singreg", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="random seed (overrides output.seed)")
    parser.add_argument("--threads", type=int, help="limit BLAS/OpenMP threads")
    parser.add_argument("--field", help="analyse this field snapshot instead of solving the configured problem")
    return parser


def run(argv=None):
    """Parse ``argv`` and execute; returns the process exit status."""
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    if args.seed is not None:
        overrides.append(f"output.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        r = Run(cfg, args)
        start = time.perf_counter()
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                summary = COMMANDS[args.subcommand](r)
        else:
            summary = COMMANDS[args.subcommand](r)
        write_manifest(r, args.subcommand, time.perf_counter() - start, summary)
    except (SingregError, ValueError) as exc:
        print(f"singreg: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
