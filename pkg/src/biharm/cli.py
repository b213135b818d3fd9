"""Experiment runner: INI-configured convergence studies from the shell.

``biharm run config.ini`` builds one graded mesh hierarchy per grading
factor, runs the configured pipeline on it, and writes rate tables
(CSV and markdown) plus per-step wall times.  ``biharm compare a.ini
b.ini`` runs two pipelines that differ only in algorithm or force
construction on shared meshes and tabulates the norm differences of
their solutions level by level.  ``biharm corner-exponents --omega r``
prints the corner exponents for an opening angle; ``biharm mesh``
dumps a graded mesh to a text file.

Rate CSVs (rates_<quantity>.csv, comparison.csv) are deterministic:
rerunning a config reproduces them byte for byte.  Wall-clock seconds
are confined to summary.csv and timing.csv, which vary between runs.
"""

import argparse
import concurrent.futures
import configparser
import os
import re
import sys
import time
from dataclasses import dataclass

import numpy as np

from .analysis import diff_norm, markdown_table, rate_table
from .assembly import assemble_load, assemble_stokes_rhs_analytic
from .corners import beta0, solve_alpha0
from .meshing import (
    GradingRule,
    builtin_domain,
    read_mesh,
    refine_hierarchy,
    write_mesh,
)
from .solvers import (
    compare_runs,
    run_psp,
    run_sp,
    solve_poisson,
    solve_stokes,
    stokes_spaces,
)
from .sources import parse_F_spec, parse_f_spec
from .spaces import build_space

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "ComparisonResult",
    "parse_config",
    "run_experiment",
    "run_comparison",
    "main",
]

ALGORITHMS = ("sp", "psp", "stokes_only", "poisson_only")
NORMS = ("L2", "H1", "Linf")
BUILTIN_DOMAINS = ("square", "lshape", "convex_11pi12")

# Quantities each pipeline produces, in report order.
QUANTITIES = {
    "sp": ("phi", "u", "p"),
    "psp": ("w", "phi", "u", "p"),
    "stokes_only": ("u", "p"),
    "poisson_only": ("w",),
}

CONFIG_HELP = """\
Config file schema (INI, one [experiment] section):

  [experiment]
  domain    = square | lshape | convex_11pi12 | path to a mesh file
  algorithm = sp | psp | stokes_only | poisson_only
  k         = 1 | 2 | 3          velocity degree (1 = Mini, 2/3 = Taylor-Hood)
  levels    = J >= 3             finest refinement level
  kappas    = 0.5, 0.1           grading factors in (0, 1/2]; 0.5 = uniform
  f         = const:<value>      scalar load (default const:1)
  F         = int_x | int_y | blend:<eta> | curl_w
                                 force construction; curl_w only with psp
                                 (defaults: curl_w for psp, int_x otherwise)
  norms     = H1, L2, Linf       difference norms (default H1, L2)
  out       = <directory>        output directory (default <config>.out)
  seed      = <integer>          recorded for randomized diagnostics

Outputs under `out`: rates_<quantity>.csv (deterministic), summary.csv
(adds a seconds column), timing.csv (per pipeline step), tables.md.
"""


@dataclass
class ExperimentConfig:
    """One convergence study: domain, pipeline, grading, and outputs."""

    domain: str
    algorithm: str
    k: int
    levels: int
    kappas: tuple = (0.5,)
    f: str = "const:1"
    F: str = ""
    norms: tuple = ("H1", "L2")
    out: str = ""
    seed: int = 0

    def __post_init__(self):
        if not self.domain or not isinstance(self.domain, str):
            raise ValueError("domain must be a builtin name or a mesh file path")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {', '.join(ALGORITHMS)}, "
                f"got {self.algorithm!r}"
            )
        if self.k not in (1, 2, 3):
            raise ValueError(f"k must be 1, 2, or 3, got {self.k!r}")
        if self.levels < 3:
            raise ValueError(
                f"levels must be at least 3 to form rates, got {self.levels!r}"
            )
        self.kappas = tuple(float(kap) for kap in self.kappas)
        if not self.kappas:
            raise ValueError("kappas must be a non-empty list")
        for kap in self.kappas:
            if not 0.0 < kap <= 0.5:
                raise ValueError(f"kappas must lie in (0, 1/2], got {kap!r}")
        if len(set(self.kappas)) != len(self.kappas):
            raise ValueError("kappas contains duplicates")
        self.norms = tuple(self.norms)
        if not self.norms:
            raise ValueError("norms must be a non-empty list")
        for norm in self.norms:
            if norm not in NORMS:
                raise ValueError(
                    f"norms must be drawn from {', '.join(NORMS)}, got {norm!r}"
                )
        self.F = self._resolve_force()
        self.seed = int(self.seed)

    def _resolve_force(self):
        if self.algorithm == "psp":
            if self.F not in ("", "curl_w"):
                raise ValueError(
                    f"F must be curl_w for algorithm psp, got {self.F!r}"
                )
            return "curl_w"
        if self.algorithm == "poisson_only":
            if self.F:
                raise ValueError("F does not apply to algorithm poisson_only")
            return ""
        if self.F == "curl_w":
            raise ValueError("F = curl_w requires algorithm psp")
        return self.F or "int_x"

    @property
    def quantities(self):
        return QUANTITIES[self.algorithm]


@dataclass
class ExperimentResult:
    """Reports per (quantity, norm), step timings, and written files."""

    config: ExperimentConfig
    reports: dict  # (quantity, norm) -> {kappa: ConvergenceReport}
    timings: dict  # kappa -> list over levels of {step: seconds}
    failures: dict  # kappa -> error message for aborted columns
    paths: list


@dataclass
class ComparisonResult:
    """Per-level solution differences between two pipelines."""

    config_a: ExperimentConfig
    config_b: ExperimentConfig
    rows: dict  # kappa -> list of (level, {name: difference norm})
    failures: dict
    paths: list


def _split_list(raw):
    return [tok for tok in raw.replace(",", " ").split() if tok]


def parse_config(path):
    """Read an INI experiment config; defaults `out` to <path stem>.out."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as handle:
        parser.read_file(handle, source=path)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    section = parser["experiment"]
    known = {"domain", "algorithm", "k", "levels", "kappas", "f", "F",
             "norms", "out", "seed"}
    unknown = sorted(key for key in section if key not in known)
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {', '.join(unknown)}")
    for key in ("domain", "algorithm", "k", "levels"):
        if key not in section:
            raise ValueError(f"{path}: missing required key {key}")

    def integer(key, default=None):
        raw = section.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{key} must be an integer, got {raw!r}") from None

    def floats(key, default):
        raw = section.get(key)
        if raw is None:
            return default
        try:
            return tuple(float(tok) for tok in _split_list(raw))
        except ValueError:
            raise ValueError(f"{key} must be numbers, got {raw!r}") from None

    stem = os.path.splitext(path)[0]
    return ExperimentConfig(
        domain=section["domain"].strip(),
        algorithm=section["algorithm"].strip(),
        k=integer("k"),
        levels=integer("levels"),
        kappas=floats("kappas", (0.5,)),
        f=section.get("f", "const:1").strip(),
        F=section.get("F", "").strip(),
        norms=tuple(_split_list(section.get("norms", "H1, L2"))),
        out=section.get("out", stem + ".out").strip(),
        seed=integer("seed", 0),
    )


def _root_mesh(domain):
    """Builtin level-0 mesh, or one read from a mesh file."""
    if domain in BUILTIN_DOMAINS:
        return builtin_domain(domain)[1]
    if os.path.exists(domain):
        return read_mesh(domain)
    raise ValueError(
        f"domain must be one of {', '.join(BUILTIN_DOMAINS)} or a mesh "
        f"file path, got {domain!r}"
    )


def _hierarchy(config, root, kappa):
    rules = {c: GradingRule(kappa) for c in root.domain.graded_corners}
    return refine_hierarchy(root, config.levels, rules)


def _records_from_run(run):
    records = []
    for rec in run.records:
        fields_ = {"phi": rec.phi, "u": rec.u, "p": rec.p}
        if rec.w is not None:
            fields_["w"] = rec.w
        records.append({"level": rec.level, "fields": fields_,
                        "seconds": rec.seconds})
    return records


def _run_column(config, root, kappa):
    """All levels of one kappa column; returns per-level field records."""
    meshes = _hierarchy(config, root, kappa)
    if config.algorithm == "sp":
        source = parse_F_spec(root.domain, config.f, config.F)
        return _records_from_run(
            run_sp(root.domain, None, source, config.k, config.levels,
                   meshes=meshes))
    if config.algorithm == "psp":
        load = parse_f_spec(config.f)
        return _records_from_run(
            run_psp(root.domain, load, config.k, config.levels,
                    meshes=meshes))
    if config.algorithm == "stokes_only":
        source = parse_F_spec(root.domain, config.f, config.F)
        records = []
        for mesh in meshes:
            vspace, pspace = stokes_spaces(mesh, config.k)
            start = time.perf_counter()
            rhs = assemble_stokes_rhs_analytic(vspace, source.F)
            sol = solve_stokes(vspace, pspace, rhs)
            seconds = {"stokes": time.perf_counter() - start}
            records.append({"level": mesh.level,
                            "fields": {"u": sol.u, "p": sol.p},
                            "seconds": seconds})
        return records
    load = parse_f_spec(config.f)
    records = []
    for mesh in meshes:
        space = build_space(mesh, config.k)
        start = time.perf_counter()
        w = solve_poisson(space, assemble_load(space, load))
        seconds = {"poisson_w": time.perf_counter() - start}
        records.append({"level": mesh.level, "fields": {"w": w},
                        "seconds": seconds})
    return records


def _fmt_kappa(kappa):
    return f"{kappa:g}"


def _fmt_diff(diff):
    return "" if diff is None else f"{diff:.6e}"


def _fmt_rate(rate):
    return "" if rate is None else f"{rate:.6f}"


def _write(path, text):
    with open(path, "w") as handle:
        handle.write(text)
    return path


def run_experiment(config, jobs=None):
    """Run every kappa column, compute rate reports, write artifacts.

    A solver failure (singular system, violated invariant) aborts only
    the kappa column it occurred in; the column is dropped from the
    tables and recorded in ``failures``.  Files are written under
    ``config.out`` after all columns finish; with ``out`` empty the
    result is returned without touching the disk.
    """
    root = _root_mesh(config.domain)
    if jobs is None:
        jobs = min(len(config.kappas), os.cpu_count() or 1)
    columns, failures, timings = {}, {}, {}
    if jobs > 1 and len(config.kappas) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {kappa: pool.submit(_run_column, config, root, kappa)
                       for kappa in config.kappas}
            outcomes = {kappa: _outcome(fut) for kappa, fut in futures.items()}
    else:
        outcomes = {}
        for kappa in config.kappas:
            try:
                outcomes[kappa] = (True, _run_column(config, root, kappa))
            except ArithmeticError as exc:
                outcomes[kappa] = (False, str(exc))
    for kappa, (ok, value) in outcomes.items():
        if ok:
            columns[kappa] = value
            timings[kappa] = [rec["seconds"] for rec in value]
        else:
            failures[kappa] = value

    reports = {}
    for quantity in config.quantities:
        for norm in config.norms:
            by_kappa = {}
            for kappa in config.kappas:
                if kappa not in columns:
                    continue
                records = columns[kappa]
                levels = [rec["level"] for rec in records[1:]]
                diffs = [
                    diff_norm(records[i]["fields"][quantity],
                              records[i - 1]["fields"][quantity], norm)
                    for i in range(1, len(records))
                ]
                by_kappa[kappa] = rate_table(quantity, norm, levels, diffs)
            reports[(quantity, norm)] = by_kappa

    paths = []
    if config.out:
        paths = _write_artifacts(config, reports, timings, failures)
    return ExperimentResult(config, reports, timings, failures, paths)


def _outcome(future):
    try:
        return True, future.result()
    except ArithmeticError as exc:
        return False, str(exc)


def _rate_rows(config, reports, quantity):
    rows = []
    for norm in config.norms:
        for kappa in config.kappas:
            report = reports[(quantity, norm)].get(kappa)
            if report is None:
                continue
            for level, diff, rate in report.rows():
                rows.append((norm, kappa, level, diff, rate))
    return rows


def _write_artifacts(config, reports, timings, failures):
    os.makedirs(config.out, exist_ok=True)
    paths = []
    for quantity in config.quantities:
        lines = ["quantity,norm,kappa,level,diff,rate"]
        for norm, kappa, level, diff, rate in _rate_rows(config, reports,
                                                         quantity):
            lines.append(f"{quantity},{norm},{_fmt_kappa(kappa)},{level},"
                         f"{_fmt_diff(diff)},{_fmt_rate(rate)}")
        paths.append(_write(os.path.join(config.out,
                                         f"rates_{quantity}.csv"),
                            "\n".join(lines) + "\n"))

    level_seconds = {
        kappa: [sum(step.values()) for step in steps]
        for kappa, steps in timings.items()
    }
    lines = ["quantity,norm,kappa,level,diff,rate,seconds"]
    for quantity in config.quantities:
        for norm, kappa, level, diff, rate in _rate_rows(config, reports,
                                                         quantity):
            secs = level_seconds[kappa][level]
            lines.append(f"{quantity},{norm},{_fmt_kappa(kappa)},{level},"
                         f"{_fmt_diff(diff)},{_fmt_rate(rate)},{secs:.6f}")
    paths.append(_write(os.path.join(config.out, "summary.csv"),
                        "\n".join(lines) + "\n"))

    lines = ["kappa,level,step,seconds"]
    for kappa in config.kappas:
        for level, steps in enumerate(timings.get(kappa, [])):
            for step, secs in steps.items():
                lines.append(f"{_fmt_kappa(kappa)},{level},{step},"
                             f"{secs:.6f}")
    paths.append(_write(os.path.join(config.out, "timing.csv"),
                        "\n".join(lines) + "\n"))

    paths.append(_write(os.path.join(config.out, "tables.md"),
                        _tables_markdown(config, reports, failures)))
    return paths


def _tables_markdown(config, reports, failures):
    chunks = [f"# {config.domain} / {config.algorithm} / k={config.k}"]
    for quantity in config.quantities:
        for norm in config.norms:
            by_kappa = reports[(quantity, norm)]
            if by_kappa:
                chunks.append(markdown_table(by_kappa,
                                             f"{quantity} in {norm}"))
    if failures:
        lines = ["### skipped kappa columns", ""]
        for kappa in config.kappas:
            if kappa in failures:
                lines.append(f"- kappa={_fmt_kappa(kappa)}: "
                             f"{failures[kappa]}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


_COMPARE_NAMES = ("phi_h1", "phi_l2", "u_h1", "u_l2", "p_l2")
_COMPARE_LABELS = ("phi H1", "phi L2", "u H1", "u L2", "p L2")


def run_comparison(config_a, config_b, out=None):
    """Level-by-level solution differences between two pipelines.

    The configs must agree except possibly in ``algorithm`` and ``F``
    (and ``out``); both must run a full chain (sp or psp).  Each kappa
    column shares one mesh hierarchy between the two runs.  Artifacts
    (comparison.csv, comparison.md) go to ``out`` or config_a's out
    directory; pass out="" to skip writing.
    """
    for name in ("domain", "k", "levels", "kappas", "f", "norms", "seed"):
        va, vb = getattr(config_a, name), getattr(config_b, name)
        if va != vb:
            raise ValueError(
                f"configs must agree on {name}: {va!r} != {vb!r}"
            )
    for config in (config_a, config_b):
        if config.algorithm not in ("sp", "psp"):
            raise ValueError(
                "comparison requires algorithm sp or psp, got "
                f"{config.algorithm!r}"
            )
    root = _root_mesh(config_a.domain)
    rows, failures = {}, {}
    for kappa in config_a.kappas:
        meshes = _hierarchy(config_a, root, kappa)
        try:
            runs = [_full_run(config, root, meshes)
                    for config in (config_a, config_b)]
        except ArithmeticError as exc:
            failures[kappa] = str(exc)
            continue
        rows[kappa] = [
            (level, compare_runs(runs[0], runs[1], level))
            for level in range(1, config_a.levels + 1)
        ]
    if out is None:
        out = config_a.out
    paths = _write_comparison(config_a, config_b, rows, failures,
                              out) if out else []
    return ComparisonResult(config_a, config_b, rows, failures, paths)


def _full_run(config, root, meshes):
    if config.algorithm == "sp":
        source = parse_F_spec(root.domain, config.f, config.F)
        return run_sp(root.domain, None, source, config.k, config.levels,
                      meshes=meshes)
    return run_psp(root.domain, parse_f_spec(config.f), config.k,
                   config.levels, meshes=meshes)


def _write_comparison(config_a, config_b, rows, failures, out):
    os.makedirs(out, exist_ok=True)
    lines = ["kappa,level," + ",".join(_COMPARE_NAMES)]
    for kappa in config_a.kappas:
        for level, diffs in rows.get(kappa, []):
            cells = ",".join(f"{diffs[name]:.6e}" for name in _COMPARE_NAMES)
            lines.append(f"{_fmt_kappa(kappa)},{level},{cells}")
    paths = [_write(os.path.join(out, "comparison.csv"),
                    "\n".join(lines) + "\n")]

    chunks = [f"# {config_a.algorithm} (F={config_a.F}) vs "
              f"{config_b.algorithm} (F={config_b.F}) on {config_a.domain}, "
              f"k={config_a.k}"]
    for kappa in config_a.kappas:
        if kappa not in rows:
            continue
        lines = [f"### differences (kappa={_fmt_kappa(kappa)})", ""]
        lines.append("| j | " + " | ".join(_COMPARE_LABELS) + " |")
        lines.append("|" + " --- |" * (1 + len(_COMPARE_LABELS)))
        for level, diffs in rows[kappa]:
            cells = " | ".join(f"{diffs[name]:.5e}"
                               for name in _COMPARE_NAMES)
            lines.append(f"| {level} | {cells} |")
        chunks.append("\n".join(lines))
    if failures:
        lines = ["### skipped kappa columns", ""]
        for kappa in config_a.kappas:
            if kappa in failures:
                lines.append(f"- kappa={_fmt_kappa(kappa)}: "
                             f"{failures[kappa]}")
        chunks.append("\n".join(lines))
    paths.append(_write(os.path.join(out, "comparison.md"),
                        "\n\n".join(chunks) + "\n"))
    return paths


_PI_FORM = re.compile(
    r"^\s*(\d+(?:\.\d+)?)?\s*pi\s*(?:/\s*(\d+(?:\.\d+)?))?\s*$", re.I)


def parse_omega(text):
    """Opening angle from a decimal or a pi form like 3pi/2 or 11pi/12."""
    match = _PI_FORM.match(text)
    if match:
        num = float(match.group(1)) if match.group(1) else 1.0
        den = float(match.group(2)) if match.group(2) else 1.0
        return num * np.pi / den
    try:
        return float(text)
    except ValueError:
        raise ValueError(
            f"omega must be a number or an expression like 3pi/2, "
            f"got {text!r}"
        ) from None


def _cmd_run(args):
    config = parse_config(args.config)
    if args.out is not None:
        config.out = args.out
    result = run_experiment(config)
    for path in result.paths:
        print(f"wrote {path}")
    tables = _tables_markdown(config, result.reports, result.failures)
    print(tables, end="")
    return 0


def _cmd_compare(args):
    config_a = parse_config(args.config_a)
    config_b = parse_config(args.config_b)
    out = args.out if args.out is not None else config_a.out
    result = run_comparison(config_a, config_b, out=out)
    for path in result.paths:
        print(f"wrote {path}")
    for kappa in config_a.kappas:
        for level, diffs in result.rows.get(kappa, []):
            cells = "  ".join(f"{name}={diffs[name]:.5e}"
                              for name in _COMPARE_NAMES)
            print(f"kappa={_fmt_kappa(kappa)} j={level}  {cells}")
    for kappa, message in result.failures.items():
        print(f"kappa={_fmt_kappa(kappa)} failed: {message}")
    return 0


def _cmd_corner_exponents(args):
    omega = parse_omega(args.omega)
    print(f"omega  = {omega:.15f}")
    print(f"alpha0 = {solve_alpha0(omega):.15f}")
    print(f"beta0  = {beta0(omega):.15f}")
    return 0


def _cmd_mesh(args):
    root = _root_mesh(args.domain)
    rules = {c: GradingRule(args.kappa) for c in root.domain.graded_corners}
    meshes = refine_hierarchy(root, args.levels, rules)
    write_mesh(meshes[-1], args.out)
    final = meshes[-1]
    print(f"wrote {args.out} ({len(final.points)} points, "
          f"{len(final.triangles)} triangles)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="biharm",
        description="Convergence studies for the decoupled biharmonic "
                    "pipelines (Poisson/Stokes chains) on graded meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser(
        "run", help="run a configured convergence study",
        description=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    run_p.add_argument("config", help="INI experiment config")
    run_p.add_argument("--out", help="override the output directory")
    run_p.set_defaults(func=_cmd_run)

    cmp_p = sub.add_parser(
        "compare", help="difference table between two pipeline configs",
        description="Runs both configs (same domain/k/levels/kappas, "
                    "differing only in algorithm or F) on shared meshes "
                    "and tabulates per-level solution differences.")
    cmp_p.add_argument("config_a")
    cmp_p.add_argument("config_b")
    cmp_p.add_argument("--out", help="output directory (default: config_a's)")
    cmp_p.set_defaults(func=_cmd_compare)

    ce_p = sub.add_parser(
        "corner-exponents",
        help="corner singularity exponents for an opening angle",
        description="Prints alpha0 (biharmonic/Stokes corner exponent) "
                    "and beta0 (Laplace exponent pi/omega) in fixed "
                    "15-digit decimal.")
    ce_p.add_argument("--omega", required=True,
                      help="opening angle in radians; accepts 4.71, pi, "
                           "3pi/2, 11pi/12")
    ce_p.set_defaults(func=_cmd_corner_exponents)

    mesh_p = sub.add_parser(
        "mesh", help="write a graded mesh to a text file",
        description="Builds `levels` graded refinements of a builtin "
                    "domain and writes the finest mesh.")
    mesh_p.add_argument("--domain", required=True,
                        help=f"one of {', '.join(BUILTIN_DOMAINS)} or a "
                             "mesh file")
    mesh_p.add_argument("--kappa", type=float, default=0.5,
                        help="grading factor in (0, 1/2] (default 0.5)")
    mesh_p.add_argument("--levels", type=int, default=3,
                        help="number of refinements (default 3)")
    mesh_p.add_argument("--out", required=True, help="output mesh file")
    mesh_p.set_defaults(func=_cmd_mesh)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
